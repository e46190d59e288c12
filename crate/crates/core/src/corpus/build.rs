//! Pair construction for the stem collections and the synthetic corpus.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, DatasetTag, ManifestEntry, PairKind, Split};
use super::synth::{synth_accompaniment, synth_vocal, AccompanimentSpec, SingerProfile};
use crate::audio::{load_wav, pad_or_trim, quantize_pcm16, resample, save_wav_pcm16, AudioBuffer, SAMPLE_RATE, SEGMENT_SECONDS};
use crate::error::{Error, Result};
use crate::pitch::{PitchParams, PitchTrack};
use crate::retune::{cents_off_grid, remix, AutoTuner};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const PARAMS_FILE: &str = "manifest.params.toml";

/// Settings shared by the stem-collection builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    pub pitch: PitchParams,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            pitch: PitchParams::default(),
            val_fraction: 0.1,
            test_fraction: 0.0,
            seed: 0,
        }
    }
}

/// Everything needed to rebuild a manifest's audio; stored next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusParams {
    pub dataset: DatasetTag,
    pub pitch: PitchParams,
    pub seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub synth: Option<SynthCorpusConfig>,
    pub label_check: Option<LabelCheck>,
}

impl CorpusParams {
    pub fn path_for(manifest_path: &Path) -> PathBuf {
        manifest_path.with_file_name(PARAMS_FILE)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Assigns whole sources to splits: `round(n * test_fraction)` to test,
/// `round(n * val_fraction)` to val, the rest (at least one) to train.
pub fn assign_splits(source_ids: &[String], val_fraction: f64, test_fraction: f64, seed: u64) -> Result<BTreeMap<String, Split>> {
    if !(0.0..1.0).contains(&val_fraction) || !(0.0..1.0).contains(&test_fraction) || val_fraction + test_fraction >= 1.0 {
        return Err(Error::InvalidParam(format!(
            "split fractions val={val_fraction} test={test_fraction} must be in [0, 1) and sum below 1"
        )));
    }
    let mut ids: Vec<String> = source_ids.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_test = ((n as f64 * test_fraction).round() as usize).min(n.saturating_sub(1));
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1 + n_test));
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_test {
                Split::Test
            } else if i < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            (id, split)
        })
        .collect())
}

/// Median distance (cents) of the voiced frames from the nearest note.
pub fn median_grid_error(track: &PitchTrack) -> Option<f64> {
    let mut v: Vec<f64> = track.voiced_f0().map(|f| cents_off_grid(f).abs()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[m - 1] + v[m]) } else { v[m] })
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for item in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = item.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Performer tag: first directory under the root, else the file-name
/// prefix before `_`.
fn performer_of(root: &Path, file: &Path) -> String {
    let rel = file.strip_prefix(root).unwrap_or(file);
    let mut parts = rel.components();
    let first = parts.next().map(|c| c.as_os_str().to_string_lossy().into_owned()).unwrap_or_default();
    if parts.next().is_some() {
        return first;
    }
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.split('_').next().unwrap_or(&stem).to_string()
}

fn pair_id_of(root: &Path, file: &Path) -> String {
    let rel = file.strip_prefix(root).unwrap_or(file).with_extension("");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("__")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn to_corpus_rate(buffer: AudioBuffer) -> Result<AudioBuffer> {
    if buffer.sample_rate() == SAMPLE_RATE {
        Ok(buffer)
    } else {
        resample(&buffer, SAMPLE_RATE)
    }
}

fn create_dirs(out_dir: &Path) -> Result<()> {
    for sub in ["negative", "positive"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    Ok(())
}

fn write_pair(out_dir: &Path, id: &str, negative: &AudioBuffer, positive: &AudioBuffer) -> Result<(PathBuf, PathBuf)> {
    let neg = PathBuf::from("negative").join(format!("{id}.wav"));
    let pos = PathBuf::from("positive").join(format!("{id}.wav"));
    save_wav_pcm16(out_dir.join(&neg), negative)?;
    save_wav_pcm16(out_dir.join(&pos), positive)?;
    Ok((neg, pos))
}

fn finish(manifest: &DatasetManifest, params: &CorpusParams) -> Result<()> {
    manifest.validate()?;
    let path = manifest.root.join(MANIFEST_FILE);
    manifest.write_csv(&path)?;
    params.write(CorpusParams::path_for(&path))?;
    info!("wrote {} ({} pairs)", path.display(), manifest.len());
    Ok(())
}

/// Builds vocal pairs from a directory of monophonic recordings.
///
/// Each file is resampled, padded or trimmed to ten seconds and retuned.
/// Unreadable files are skipped with a warning.
pub fn build_d1(vocal_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>, opts: &BuildOptions) -> Result<DatasetManifest> {
    let (vocal_dir, out_dir) = (vocal_dir.as_ref(), out_dir.as_ref());
    let files = wav_files(vocal_dir)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!("{}: no WAV files", vocal_dir.display())));
    }
    create_dirs(out_dir)?;
    let tuner = AutoTuner::new(opts.pitch.clone(), SAMPLE_RATE)?;
    let built: Vec<Option<(String, String, PathBuf, PathBuf)>> = files
        .par_iter()
        .map(|file| {
            let run = || -> Result<_> {
                let v_n = quantize_pcm16(&pad_or_trim(&to_corpus_rate(load_wav(file)?)?, SEGMENT_SECONDS)?);
                let v_p = tuner.process(&v_n)?;
                let id = pair_id_of(vocal_dir, file);
                let (neg, pos) = write_pair(out_dir, &id, &v_n, &v_p)?;
                Ok((id, performer_of(vocal_dir, file), neg, pos))
            };
            run().map_err(|e| warn!("skipping {}: {e}", file.display())).ok()
        })
        .collect();
    let built: Vec<_> = built.into_iter().flatten().collect();
    if built.is_empty() {
        return Err(Error::Dataset(format!("{}: no readable recordings", vocal_dir.display())));
    }
    let performers: Vec<String> = built.iter().map(|b| b.1.clone()).collect();
    let splits = assign_splits(&performers, opts.val_fraction, opts.test_fraction, opts.seed)?;
    let mut manifest = DatasetManifest::new(DatasetTag::D1, out_dir);
    for (pair_id, source_id, negative_path, positive_path) in built {
        manifest.entries.push(ManifestEntry {
            pair_id,
            negative_path,
            positive_path,
            kind: PairKind::VocalPair,
            split: splits[&source_id],
            source_id,
            dataset: DatasetTag::D1,
        });
    }
    finish(&manifest, &params_for(DatasetTag::D1, opts))?;
    Ok(manifest)
}

fn params_for(dataset: DatasetTag, opts: &BuildOptions) -> CorpusParams {
    CorpusParams {
        dataset,
        pitch: opts.pitch.clone(),
        seed: opts.seed,
        val_fraction: opts.val_fraction,
        test_fraction: opts.test_fraction,
        synth: None,
        label_check: None,
    }
}

const ACCOMPANIMENT_STEMS: [&str; 3] = ["drums.wav", "bass.wav", "other.wav"];

/// Vocal and accompaniment of one song directory: `vocals.wav` plus
/// `accompaniment.wav`, or the sum of drums, bass and other.
pub fn load_stems(song_dir: &Path) -> Result<(AudioBuffer, AudioBuffer)> {
    let vocal = to_corpus_rate(load_wav(song_dir.join("vocals.wav"))?)?;
    let acc_path = song_dir.join("accompaniment.wav");
    let accompaniment = if acc_path.exists() {
        to_corpus_rate(load_wav(&acc_path)?)?
    } else {
        let mut sum: Vec<f32> = Vec::new();
        for stem in ACCOMPANIMENT_STEMS {
            let s = to_corpus_rate(load_wav(song_dir.join(stem))?)?;
            if sum.len() < s.len() {
                sum.resize(s.len(), 0.0);
            }
            sum.iter_mut().zip(s.samples()).for_each(|(a, b)| *a += b);
        }
        AudioBuffer::new(sum, SAMPLE_RATE)?
    };
    Ok((vocal, accompaniment))
}

fn song_dirs(stem_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(stem_dir)
        .map_err(|e| Error::io(stem_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Dataset(format!("{}: no song directories", stem_dir.display())));
    }
    Ok(dirs)
}

struct SongPair {
    id: String,
    vocal: (PathBuf, PathBuf),
    song: (PathBuf, PathBuf),
}

fn build_songs(stem_dir: &Path, vocal_out: Option<&Path>, song_out: &Path, opts: &BuildOptions) -> Result<Vec<SongPair>> {
    let dirs = song_dirs(stem_dir)?;
    if let Some(d) = vocal_out {
        create_dirs(d)?;
    }
    create_dirs(song_out)?;
    let tuner = AutoTuner::new(opts.pitch.clone(), SAMPLE_RATE)?;
    let built: Vec<Option<SongPair>> = dirs
        .par_iter()
        .map(|dir| {
            let run = || -> Result<SongPair> {
                let (vocal, accompaniment) = load_stems(dir)?;
                let v_n = quantize_pcm16(&vocal);
                let v_p = tuner.process(&v_n)?;
                let id = pair_id_of(stem_dir, dir);
                let vocal_paths = match vocal_out {
                    Some(d) => write_pair(d, &id, &v_n, &v_p)?,
                    None => Default::default(),
                };
                let x_n = remix(&v_n, &accompaniment)?;
                let x_p = remix(&v_p, &accompaniment)?;
                let song = write_pair(song_out, &id, &x_n, &x_p)?;
                Ok(SongPair {
                    id,
                    vocal: vocal_paths,
                    song,
                })
            };
            run().map_err(|e| warn!("skipping {}: {e}", dir.display())).ok()
        })
        .collect();
    let built: Vec<SongPair> = built.into_iter().flatten().collect();
    if built.is_empty() {
        return Err(Error::Dataset(format!("{}: no complete stem sets", stem_dir.display())));
    }
    Ok(built)
}

fn song_manifest(
    dataset: DatasetTag,
    root: &Path,
    kind: PairKind,
    pairs: &[SongPair],
    splits: &dyn Fn(&str) -> Split,
    vocal: bool,
) -> DatasetManifest {
    let mut m = DatasetManifest::new(dataset, root);
    for p in pairs {
        let (neg, pos) = if vocal { &p.vocal } else { &p.song };
        m.entries.push(ManifestEntry {
            pair_id: p.id.clone(),
            negative_path: neg.clone(),
            positive_path: pos.clone(),
            kind,
            source_id: p.id.clone(),
            split: splits(&p.id),
            dataset,
        });
    }
    m
}

/// Builds vocal pairs (D2, under `out_dir/d2`) and song pairs (D3, under
/// `out_dir/d3`) from a training partition of song stems, split by song.
pub fn build_d2_d3(
    stem_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    opts: &BuildOptions,
) -> Result<(DatasetManifest, DatasetManifest)> {
    let (stem_dir, out_dir) = (stem_dir.as_ref(), out_dir.as_ref());
    let (d2_dir, d3_dir) = (out_dir.join("d2"), out_dir.join("d3"));
    let pairs = build_songs(stem_dir, Some(&d2_dir), &d3_dir, opts)?;
    let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
    let splits = assign_splits(&ids, opts.val_fraction, opts.test_fraction, opts.seed)?;
    let lookup = |id: &str| splits[id];
    let d2 = song_manifest(DatasetTag::D2, &d2_dir, PairKind::VocalPair, &pairs, &lookup, true);
    let d3 = song_manifest(DatasetTag::D3, &d3_dir, PairKind::SongPair, &pairs, &lookup, false);
    finish(&d2, &params_for(DatasetTag::D2, opts))?;
    finish(&d3, &params_for(DatasetTag::D3, opts))?;
    Ok((d2, d3))
}

/// Builds test song pairs from a held-out partition of song stems.
pub fn build_d4(stem_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>, opts: &BuildOptions) -> Result<DatasetManifest> {
    let (stem_dir, out_dir) = (stem_dir.as_ref(), out_dir.as_ref());
    let pairs = build_songs(stem_dir, None, out_dir, opts)?;
    let m = song_manifest(DatasetTag::D4, out_dir, PairKind::SongPair, &pairs, &|_| Split::Test, false);
    let params = CorpusParams {
        val_fraction: 0.0,
        test_fraction: 1.0,
        ..params_for(DatasetTag::D4, opts)
    };
    finish(&m, &params)?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCorpusConfig {
    pub n_pairs: usize,
    pub with_accompaniment: bool,
    pub seed: u64,
    /// Clips sung by each synthetic singer; splits never separate them.
    pub pairs_per_source: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub clip_seconds: f64,
    /// Share of pairs whose positive must sit closer to the note grid.
    pub min_label_agreement: f64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            n_pairs: 300,
            with_accompaniment: true,
            seed: 0,
            pairs_per_source: 5,
            val_fraction: 1.0 / 6.0,
            test_fraction: 1.0 / 6.0,
            clip_seconds: SEGMENT_SECONDS,
            min_label_agreement: 0.95,
        }
    }
}

impl SynthCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs < 2 {
            return Err(Error::InvalidParam("a synthetic corpus needs at least 2 pairs".into()));
        }
        if self.pairs_per_source == 0 || !(self.clip_seconds >= 1.0) {
            return Err(Error::InvalidParam("pairs_per_source >= 1 and clip_seconds >= 1 required".into()));
        }
        Ok(())
    }

    pub fn n_sources(&self) -> usize {
        self.n_pairs.div_ceil(self.pairs_per_source)
    }

    pub fn source_id(&self, pair: usize) -> String {
        format!("singer{:03}", pair / self.pairs_per_source)
    }

    pub fn pair_id(pair: usize) -> String {
        format!("synth{pair:05}")
    }
}

/// Outcome of the pitch-grid comparison between negatives and positives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCheck {
    pub agreeing_pairs: usize,
    pub total_pairs: usize,
    pub median_negative_cents: f64,
    pub median_positive_cents: f64,
}

impl LabelCheck {
    pub fn fraction(&self) -> f64 {
        self.agreeing_pairs as f64 / self.total_pairs.max(1) as f64
    }
}

/// Audio of one synthetic pair. `negative`/`positive` are what gets written
/// (mixtures when accompaniment is on).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub vocal_negative: AudioBuffer,
    pub vocal_positive: AudioBuffer,
    pub negative: AudioBuffer,
    pub positive: AudioBuffer,
    pub negative_grid_cents: Option<f64>,
    pub positive_grid_cents: Option<f64>,
}

fn sub_rng(seed: u64, domain: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 40) | index as u64);
    rng
}

/// Regenerates pair `index` of a synthetic corpus; independent of the
/// other pairs.
pub fn synth_pair(config: &SynthCorpusConfig, pitch: &PitchParams, index: usize) -> Result<SynthPair> {
    let tuner = AutoTuner::new(pitch.clone(), SAMPLE_RATE)?;
    synth_pair_with(config, &tuner, index)
}

fn synth_pair_with(config: &SynthCorpusConfig, tuner: &AutoTuner, index: usize) -> Result<SynthPair> {
    let singer = SingerProfile::random(&mut sub_rng(config.seed, 1, index / config.pairs_per_source));
    let mut rng = sub_rng(config.seed, 2, index);
    let voice = singer.clip(&mut rng, config.clip_seconds);
    let v_n = quantize_pcm16(&synth_vocal(&voice)?);
    let (v_p, neg_track) = tuner.process_with_track(&v_n)?;
    let pos_track = tuner.tracker().track(&v_p)?;
    let (negative, positive) = if config.with_accompaniment {
        let acc_spec = AccompanimentSpec::random(&mut rng, singer.center_midi, config.clip_seconds);
        let acc = synth_accompaniment(&acc_spec)?;
        (quantize_pcm16(&remix(&v_n, &acc)?), quantize_pcm16(&remix(&v_p, &acc)?))
    } else {
        (v_n.clone(), quantize_pcm16(&v_p))
    };
    Ok(SynthPair {
        vocal_negative: v_n,
        vocal_positive: v_p,
        negative,
        positive,
        negative_grid_cents: median_grid_error(&neg_track),
        positive_grid_cents: median_grid_error(&pos_track),
    })
}

fn median_of(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Generates off-key synthetic vocals, retunes them and writes the pairs
/// under `out_dir`. Fails if fewer than `min_label_agreement` of the pairs
/// have a positive measurably closer to the note grid than its negative.
pub fn build_synth_corpus(config: &SynthCorpusConfig, pitch: &PitchParams, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    create_dirs(out_dir)?;
    let tuner = AutoTuner::new(pitch.clone(), SAMPLE_RATE)?;
    let kind = if config.with_accompaniment {
        PairKind::SongPair
    } else {
        PairKind::VocalPair
    };
    let results: Vec<(PathBuf, PathBuf, Option<f64>, Option<f64>)> = (0..config.n_pairs)
        .into_par_iter()
        .map(|i| {
            let pair = synth_pair_with(config, &tuner, i)?;
            let (neg, pos) = write_pair(out_dir, &SynthCorpusConfig::pair_id(i), &pair.negative, &pair.positive)?;
            Ok((neg, pos, pair.negative_grid_cents, pair.positive_grid_cents))
        })
        .collect::<Result<_>>()?;

    let agreeing = results
        .iter()
        .filter(|r| matches!((r.2, r.3), (Some(n), Some(p)) if p < n))
        .count();
    let check = LabelCheck {
        agreeing_pairs: agreeing,
        total_pairs: results.len(),
        median_negative_cents: median_of(results.iter().filter_map(|r| r.2).collect()),
        median_positive_cents: median_of(results.iter().filter_map(|r| r.3).collect()),
    };
    if check.fraction() < config.min_label_agreement {
        return Err(Error::Dataset(format!(
            "label check failed: only {}/{} positives closer to the note grid than their negatives",
            check.agreeing_pairs, check.total_pairs
        )));
    }

    let sources: Vec<String> = (0..config.n_pairs).map(|i| config.source_id(i)).collect();
    let splits = assign_splits(&sources, config.val_fraction, config.test_fraction, config.seed)?;
    let mut manifest = DatasetManifest::new(DatasetTag::Synth, out_dir);
    for (i, (negative_path, positive_path, _, _)) in results.into_iter().enumerate() {
        let source_id = config.source_id(i);
        manifest.entries.push(ManifestEntry {
            pair_id: SynthCorpusConfig::pair_id(i),
            negative_path,
            positive_path,
            kind,
            split: splits[&source_id],
            source_id,
            dataset: DatasetTag::Synth,
        });
    }
    let params = CorpusParams {
        dataset: DatasetTag::Synth,
        pitch: pitch.clone(),
        seed: config.seed,
        val_fraction: config.val_fraction,
        test_fraction: config.test_fraction,
        synth: Some(config.clone()),
        label_check: Some(check),
    };
    finish(&manifest, &params)?;
    Ok(manifest)
}

/// Rebuilds up to `k` randomly chosen positives from the stored parameters
/// and compares them sample-for-sample with the files on disk. Returns the
/// number of pairs checked; song pairs of stem collections are skipped
/// because their accompaniment is not stored.
pub fn verify_regeneration(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<usize> {
    let params = CorpusParams::read(manifest.root.join(PARAMS_FILE))?;
    let tuner = AutoTuner::new(params.pitch.clone(), SAMPLE_RATE)?;
    let mut candidates: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| params.synth.is_some() || e.kind == PairKind::VocalPair)
        .collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    candidates.truncate(k);
    for e in &candidates {
        let on_disk = load_wav(manifest.positive(e))?;
        let rebuilt = match &params.synth {
            Some(cfg) => {
                let index: usize = e
                    .pair_id
                    .trim_start_matches("synth")
                    .parse()
                    .map_err(|_| Error::Dataset(format!("bad synthetic pair id {:?}", e.pair_id)))?;
                let pair = synth_pair_with(cfg, &tuner, index)?;
                if load_wav(manifest.negative(e))? != pair.negative {
                    return Err(Error::Dataset(format!("{}: negative differs from regeneration", e.pair_id)));
                }
                pair.positive
            }
            None => quantize_pcm16(&tuner.process(&load_wav(manifest.negative(e))?)?),
        };
        if on_disk != rebuilt {
            return Err(Error::Dataset(format!("{}: positive differs from regeneration", e.pair_id)));
        }
    }
    Ok(candidates.len())
}
