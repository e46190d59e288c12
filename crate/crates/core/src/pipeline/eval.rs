//! Manifest-level evaluation: one inference pass per song, then threshold
//! sweeps and reports from the cached likelihoods.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detect::{count_above, metrics, song_verdict_with, CountThreshold, Detector, Metrics};
use crate::audio::{load_wav, AudioBuffer};
use crate::augment::{mp3_roundtrip, random_chain, random_kbps, AppliedTransform, AugmentConfig, Mp3Codec};
use crate::corpus::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Clean,
    Mp3,
    RandomProcessing,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Clean => "clean",
            Condition::Mp3 => "mp3",
            Condition::RandomProcessing => "random_processing",
        })
    }
}

/// Cached likelihoods of one evaluated song.
#[derive(Debug, Clone, PartialEq)]
pub struct SongScores {
    pub pair_id: String,
    /// True for the retuned half of a pair.
    pub label: bool,
    pub likelihoods: Vec<f32>,
}

/// The songs of a manifest in evaluation order: for each entry, the
/// negative then the positive.
pub fn manifest_songs(manifest: &DatasetManifest) -> Vec<(String, bool, std::path::PathBuf)> {
    manifest
        .entries
        .iter()
        .flat_map(|e| {
            [
                (e.pair_id.clone(), false, manifest.negative(e)),
                (e.pair_id.clone(), true, manifest.positive(e)),
            ]
        })
        .collect()
}

/// Scores every song, optionally transforming the audio first. The
/// transform receives the song's position in evaluation order.
pub fn score_manifest<F>(detector: &Detector, manifest: &DatasetManifest, transform: F) -> Result<Vec<SongScores>>
where
    F: Fn(usize, AudioBuffer) -> Result<AudioBuffer> + Sync,
{
    manifest_songs(manifest)
        .into_par_iter()
        .enumerate()
        .map(|(i, (pair_id, label, path))| {
            let audio = transform(i, load_wav(&path)?)?;
            Ok(SongScores {
                pair_id,
                label,
                likelihoods: detector.detect_segments(&audio)?,
            })
        })
        .collect()
}

/// One point of a song-level threshold curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: CountThreshold,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: Condition,
    pub segment_threshold: f64,
    /// Whether songs went through the external separator.
    pub separated: bool,
    pub n_songs: usize,
    pub n_segments: usize,
    /// Segment-level metrics (every segment inherits its song's label).
    pub segment: Metrics,
    pub curves: Vec<CurvePoint>,
}

impl EvalReport {
    pub fn precision(&self) -> f64 {
        self.segment.precision
    }

    pub fn recall(&self) -> f64 {
        self.segment.recall
    }

    pub fn accuracy(&self) -> f64 {
        self.segment.accuracy
    }

    /// Curve point with the highest song accuracy (first on ties).
    pub fn best_song_point(&self) -> Option<&CurvePoint> {
        self.curves
            .iter()
            .reduce(|best, p| if p.metrics.accuracy > best.metrics.accuracy { p } else { best })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "condition,level,segment_threshold,count_mode,count_threshold,predicted_positive,total,precision,recall,accuracy,precision_defined\n",
        );
        let row = |out: &mut String, level: &str, mode: &str, thr: &str, m: &Metrics| {
            out.push_str(&format!(
                "{},{level},{:.4},{mode},{thr},{},{},{:.4},{:.4},{:.4},{}\n",
                self.condition,
                self.segment_threshold,
                m.predicted_positive(),
                m.total(),
                m.precision,
                m.recall,
                m.accuracy,
                m.precision_defined
            ));
        };
        row(&mut out, "segment", "", "", &self.segment);
        for p in &self.curves {
            let (mode, thr) = p.threshold.label();
            row(&mut out, "song", mode, &thr, &p.metrics);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Segment-level metrics over cached scores.
pub fn segment_metrics(scores: &[SongScores], tau_seg: f64) -> Result<Metrics> {
    let (pred, labels): (Vec<bool>, Vec<bool>) = scores
        .iter()
        .flat_map(|s| s.likelihoods.iter().map(move |&y| (y as f64 > tau_seg, s.label)))
        .unzip();
    if pred.is_empty() {
        return Err(Error::Dataset("no segments survived the energy gate".into()));
    }
    metrics(&pred, &labels)
}

/// Song-level curve recomputed from cached likelihoods.
pub fn sweep_from_scores(scores: &[SongScores], tau_seg: f64, thresholds: &[CountThreshold]) -> Result<Vec<CurvePoint>> {
    let labels: Vec<bool> = scores.iter().map(|s| s.label).collect();
    let counts: Vec<(usize, usize)> = scores
        .iter()
        .map(|s| (count_above(&s.likelihoods, tau_seg), s.likelihoods.len()))
        .collect();
    thresholds
        .iter()
        .map(|&threshold| {
            threshold.validate()?;
            let pred: Vec<bool> = counts
                .iter()
                .map(|&(above, n)| n > 0 && above >= threshold.resolve(n))
                .collect();
            Ok(CurvePoint {
                threshold,
                metrics: metrics(&pred, &labels)?,
            })
        })
        .collect()
}

/// Same curve computed song by song through [`song_verdict_with`].
pub fn sweep_naive(scores: &[SongScores], tau_seg: f64, thresholds: &[CountThreshold]) -> Result<Vec<CurvePoint>> {
    let labels: Vec<bool> = scores.iter().map(|s| s.label).collect();
    thresholds
        .iter()
        .map(|&threshold| {
            let pred = scores
                .iter()
                .map(|s| Ok(song_verdict_with(&s.likelihoods, tau_seg, threshold)?.is_autotuned))
                .collect::<Result<Vec<bool>>>()?;
            Ok(CurvePoint {
                threshold,
                metrics: metrics(&pred, &labels)?,
            })
        })
        .collect()
}

pub fn report_from_scores(
    scores: &[SongScores],
    condition: Condition,
    tau_seg: f64,
    thresholds: &[CountThreshold],
    separated: bool,
) -> Result<EvalReport> {
    Ok(EvalReport {
        condition,
        segment_threshold: tau_seg,
        separated,
        n_songs: scores.len(),
        n_segments: scores.iter().map(|s| s.likelihoods.len()).sum(),
        segment: segment_metrics(scores, tau_seg)?,
        curves: sweep_from_scores(scores, tau_seg, thresholds)?,
    })
}

/// Clean evaluation of a song-pair manifest over a range of count
/// thresholds, from a single inference pass.
pub fn threshold_sweep(
    detector: &Detector,
    manifest: &DatasetManifest,
    tau_seg: f64,
    thresholds: &[CountThreshold],
) -> Result<(EvalReport, Vec<SongScores>)> {
    let scores = score_manifest(detector, manifest, |_, a| Ok(a))?;
    let report = report_from_scores(&scores, Condition::Clean, tau_seg, thresholds, detector.separator.is_some())?;
    Ok((report, scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessMode {
    Mp3,
    RandomProcessing,
}

/// What was done to one evaluated song.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub pair_id: String,
    pub label: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kbps: Option<u32>,
    pub transforms: Vec<AppliedTransform>,
}

#[derive(Serialize, Deserialize)]
struct ProvenanceFile {
    song: Vec<Provenance>,
}

pub fn write_provenance(path: impl AsRef<Path>, records: &[Provenance]) -> Result<()> {
    let path = path.as_ref();
    let text = toml::to_string(&ProvenanceFile { song: records.to_vec() }).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_provenance(path: impl AsRef<Path>) -> Result<Vec<Provenance>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ProvenanceFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    Ok(file.song)
}

fn song_rng(seed: u64, song: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(song as u64);
    rng
}

/// Degrades every song (MP3 at a random bitrate, or a random processing
/// chain) and evaluates. Each song draws from its own seeded stream, so
/// results do not depend on scheduling.
pub fn robustness_eval(
    detector: &Detector,
    manifest: &DatasetManifest,
    config: &AugmentConfig,
    mode: RobustnessMode,
    codec: Option<&Mp3Codec>,
    tau_seg: f64,
    thresholds: &[CountThreshold],
) -> Result<(EvalReport, Vec<Provenance>)> {
    config.validate()?;
    if mode == RobustnessMode::Mp3 {
        match codec {
            Some(c) if c.is_available() => {}
            Some(c) => {
                return Err(Error::CodecMissing(format!(
                    "MP3 mode needs a working encoder and decoder; `{}` / `{}` not found",
                    c.encode, c.decode
                )))
            }
            None => {
                return Err(Error::CodecMissing(
                    "MP3 mode needs an encoder/decoder (install ffmpeg or lame, or set TUNEDETECT_MP3_ENCODE and TUNEDETECT_MP3_DECODE)"
                        .into(),
                ))
            }
        }
    }
    let songs = manifest_songs(manifest);
    let records: Vec<std::sync::Mutex<Option<Provenance>>> = songs.iter().map(|_| Default::default()).collect();
    let scores = score_manifest(detector, manifest, |i, audio| {
        let mut rng = song_rng(config.seed, i);
        let (out, kbps, transforms) = match mode {
            RobustnessMode::Mp3 => {
                let kbps = random_kbps(config, &mut rng);
                let codec = codec.expect("checked above");
                (mp3_roundtrip(&audio, kbps, codec)?, Some(kbps), Vec::new())
            }
            RobustnessMode::RandomProcessing => {
                let (out, record) = random_chain(&audio, config, &mut rng)?;
                (out, None, record)
            }
        };
        *records[i].lock().unwrap() = Some(Provenance {
            pair_id: songs[i].0.clone(),
            label: songs[i].1,
            kbps,
            transforms,
        });
        Ok(out)
    })?;
    let provenance = records.into_iter().map(|m| m.into_inner().unwrap().expect("every song scored")).collect();
    let condition = match mode {
        RobustnessMode::Mp3 => Condition::Mp3,
        RobustnessMode::RandomProcessing => Condition::RandomProcessing,
    };
    let report = report_from_scores(&scores, condition, tau_seg, thresholds, detector.separator.is_some())?;
    Ok((report, provenance))
}

/// `Count(1..=max)`.
pub fn count_range(max: usize) -> Vec<CountThreshold> {
    (1..=max.max(1)).map(CountThreshold::Count).collect()
}
