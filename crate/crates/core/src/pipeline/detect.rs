//! Segment scoring, song verdicts and detection metrics.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{energy_gate, load_wav, resample, save_wav_pcm16, segment, AudioBuffer, ENERGY_GATE_RATIO, SAMPLE_RATE, SEGMENT_SECONDS};
use crate::augment::run_template;
use crate::error::{Error, Result};
use crate::features::{MelExtractor, MelSpectrogram};
use crate::nn::{Classifier, Embedder};

pub const ENV_SEPARATOR: &str = "TUNEDETECT_SEPARATOR";

/// External vocal separator: a command template with `{input}` and
/// `{output}` placeholders (WAV in, vocal WAV out).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Separator {
    pub command: String,
}

impl Separator {
    pub fn new(command: impl Into<String>) -> Self {
        Self { command: command.into() }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(ENV_SEPARATOR).ok().filter(|c| !c.trim().is_empty()).map(Self::new)
    }

    pub fn separate(&self, song: &AudioBuffer) -> Result<AudioBuffer> {
        let dir = tempfile::Builder::new()
            .prefix("tunedetect-sep")
            .tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input = dir.path().join("mix.wav");
        let output = dir.path().join("vocal.wav");
        save_wav_pcm16(&input, song)?;
        run_template(&self.command, &input, &output, 0)?;
        load_wav(&output)
    }
}

/// Likelihood of one segment that survived the energy gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentScore {
    /// Position of the segment in the song (before gating).
    pub index: usize,
    pub start_s: f64,
    pub likelihood: f32,
}

/// Ten-second segments of `song` that pass the energy gate, as mels.
pub fn song_mels(song: &AudioBuffer, extractor: &MelExtractor, gate_ratio: f64) -> Result<Vec<(usize, MelSpectrogram)>> {
    let song = if song.sample_rate() == SAMPLE_RATE {
        song.clone()
    } else {
        resample(song, SAMPLE_RATE)?
    };
    let segments = energy_gate(segment(&song, SEGMENT_SECONDS, "song")?, gate_ratio)?;
    segments
        .par_iter()
        .map(|s| Ok((s.index, extractor.melspectrogram(&s.buffer)?)))
        .collect()
}

pub struct Detector {
    pub embedder: Embedder<f32>,
    pub classifier: Classifier<f32>,
    pub extractor: MelExtractor,
    pub separator: Option<Separator>,
    pub gate_ratio: f64,
}

impl Detector {
    pub fn new(embedder: Embedder<f32>, classifier: Classifier<f32>) -> Self {
        Self {
            embedder,
            classifier,
            extractor: MelExtractor::default(),
            separator: None,
            gate_ratio: ENERGY_GATE_RATIO,
        }
    }

    pub fn with_separator(mut self, separator: Option<Separator>) -> Self {
        self.separator = separator;
        self
    }

    /// Likelihoods of already-extracted mels, in input order.
    pub fn score_mels(&self, mels: &[&MelSpectrogram]) -> Result<Vec<f32>> {
        if mels.is_empty() {
            return Ok(Vec::new());
        }
        let emb = self.embedder.embed_all(mels)?;
        self.classifier.predict(&emb.concat(), emb.len())
    }

    /// Separates (if configured), segments, gates and scores `song`.
    pub fn detect(&self, song: &AudioBuffer) -> Result<Vec<SegmentScore>> {
        let vocal = match &self.separator {
            Some(sep) => sep.separate(song)?,
            None => song.clone(),
        };
        let mels = song_mels(&vocal, &self.extractor, self.gate_ratio)?;
        let refs: Vec<&MelSpectrogram> = mels.iter().map(|(_, m)| m).collect();
        let probs = self.score_mels(&refs)?;
        Ok(mels
            .iter()
            .zip(probs)
            .map(|(&(index, _), likelihood)| SegmentScore {
                index,
                start_s: index as f64 * SEGMENT_SECONDS,
                likelihood,
            })
            .collect())
    }

    pub fn detect_segments(&self, song: &AudioBuffer) -> Result<Vec<f32>> {
        Ok(self.detect(song)?.into_iter().map(|s| s.likelihood).collect())
    }
}

/// Per-segment likelihoods, in time order; empty when every segment is
/// gated out. Without a separator the input is taken as an isolated vocal.
pub fn detect_segments(
    song: &AudioBuffer,
    embedder: &Embedder<f32>,
    classifier: &Classifier<f32>,
    separator: Option<&Separator>,
) -> Result<Vec<f32>> {
    let detector = Detector {
        embedder: embedder.clone(),
        classifier: classifier.clone(),
        extractor: MelExtractor::default(),
        separator: separator.cloned(),
        gate_ratio: ENERGY_GATE_RATIO,
    };
    detector.detect_segments(song)
}

/// How many segments must be positive for a song to be flagged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum CountThreshold {
    Count(usize),
    /// Share of the song's gated segments, rounded up (at least one).
    Fraction(f64),
}

impl CountThreshold {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CountThreshold::Count(0) => Err(Error::InvalidParam("count threshold must be >= 1".into())),
            CountThreshold::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                Err(Error::InvalidParam(format!("fraction threshold {f} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }

    pub fn resolve(&self, n_segments: usize) -> usize {
        match *self {
            CountThreshold::Count(c) => c,
            CountThreshold::Fraction(f) => ((f * n_segments as f64 - 1e-9).ceil() as usize).max(1),
        }
    }

    pub fn label(&self) -> (&'static str, String) {
        match *self {
            CountThreshold::Count(c) => ("count", c.to_string()),
            CountThreshold::Fraction(f) => ("fraction", format!("{f:.4}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongVerdict {
    pub segment_likelihoods: Vec<f32>,
    pub n_segments: usize,
    pub segment_threshold: f64,
    pub count_threshold: usize,
    pub is_autotuned: bool,
}

pub fn count_above(likelihoods: &[f32], tau_seg: f64) -> usize {
    likelihoods.iter().filter(|&&y| y as f64 > tau_seg).count()
}

/// Flags the song when at least `tau_cnt` segments score above `tau_seg`.
pub fn song_verdict(likelihoods: &[f32], tau_seg: f64, tau_cnt: usize) -> Result<SongVerdict> {
    song_verdict_with(likelihoods, tau_seg, CountThreshold::Count(tau_cnt))
}

pub fn song_verdict_with(likelihoods: &[f32], tau_seg: f64, threshold: CountThreshold) -> Result<SongVerdict> {
    threshold.validate()?;
    if !(0.0..=1.0).contains(&tau_seg) {
        return Err(Error::InvalidParam(format!("segment threshold {tau_seg} outside [0, 1]")));
    }
    let count_threshold = threshold.resolve(likelihoods.len());
    Ok(SongVerdict {
        segment_likelihoods: likelihoods.to_vec(),
        n_segments: likelihoods.len(),
        segment_threshold: tau_seg,
        count_threshold,
        is_autotuned: !likelihoods.is_empty() && count_above(likelihoods, tau_seg) >= count_threshold,
    })
}

/// Confusion counts and percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// False when nothing was predicted positive (precision reported as 0).
    pub precision_defined: bool,
}

impl Metrics {
    pub fn predicted_positive(&self) -> usize {
        self.tp + self.fp
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn metrics(predictions: &[bool], labels: &[bool]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape {
            expected: vec![labels.len()],
            actual: vec![predictions.len()],
        });
    }
    if labels.is_empty() {
        return Err(Error::InvalidParam("metrics need at least one prediction".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    Ok(Metrics {
        tp,
        fp,
        fn_,
        tn,
        precision: pct(tp, tp + fp),
        recall: pct(tp, tp + fn_),
        accuracy: pct(tp + tn, labels.len()),
        precision_defined: tp + fp > 0,
    })
}

/// Writes `segment_index,start_s,likelihood` rows.
pub fn write_segment_csv(path: impl AsRef<Path>, scores: &[SegmentScore]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("segment_index,start_s,likelihood\n");
    for s in scores {
        text.push_str(&format!("{},{:.3},{:.6}\n", s.index, s.start_s, s.likelihood));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
