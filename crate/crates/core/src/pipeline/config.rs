//! TOML configuration for the command-line tool.
//!
//! Every section is optional; missing keys take their defaults. The
//! separator and codec commands can also come from the environment
//! (`TUNEDETECT_SEPARATOR`, `TUNEDETECT_MP3_ENCODE`, `TUNEDETECT_MP3_DECODE`),
//! which takes precedence over the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detect::{CountThreshold, Separator};
use crate::audio::ENERGY_GATE_RATIO;
use crate::augment::{AugmentConfig, Mp3Codec};
use crate::corpus::{BuildOptions, SynthCorpusConfig};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::nn::{ClassifierConfig, EmbedderConfig};
use crate::pitch::PitchParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    Count,
    Fraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub segment_threshold: f64,
    pub count_mode: CountMode,
    /// Song threshold in count mode.
    pub count_threshold: usize,
    /// Song threshold in fraction mode.
    pub fraction_threshold: f64,
    /// Sweep covers counts `1..=max_count` in count mode.
    pub max_count: usize,
    /// Sweep points in fraction mode.
    pub fractions: Vec<f64>,
    pub gate_ratio: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            segment_threshold: 0.5,
            count_mode: CountMode::Count,
            count_threshold: 1,
            fraction_threshold: 0.5,
            max_count: 10,
            fractions: (1..=10).map(|i| i as f64 / 10.0).collect(),
            gate_ratio: ENERGY_GATE_RATIO,
        }
    }
}

impl DetectionConfig {
    pub fn threshold(&self) -> CountThreshold {
        match self.count_mode {
            CountMode::Count => CountThreshold::Count(self.count_threshold),
            CountMode::Fraction => CountThreshold::Fraction(self.fraction_threshold),
        }
    }

    pub fn sweep(&self) -> Vec<CountThreshold> {
        match self.count_mode {
            CountMode::Count => (1..=self.max_count.max(1)).map(CountThreshold::Count).collect(),
            CountMode::Fraction => self.fractions.iter().map(|&f| CountThreshold::Fraction(f)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.segment_threshold) {
            return Err(Error::Config(format!("segment_threshold {} outside [0, 1]", self.segment_threshold)));
        }
        if !(self.gate_ratio > 0.0 && self.gate_ratio < 1.0) {
            return Err(Error::Config(format!("gate_ratio {} outside (0, 1)", self.gate_ratio)));
        }
        self.threshold().validate()?;
        self.sweep().iter().try_for_each(CountThreshold::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub detection: DetectionConfig,
    /// Separator command template (`{input}`, `{output}`).
    pub separator: Option<String>,
    pub mp3: Option<Mp3Codec>,
    pub pitch: PitchParams,
    pub features: FeatureConfig,
    pub embedder: EmbedderConfig,
    pub classifier: ClassifierConfig,
    pub augment: AugmentConfig,
    pub synth: SynthCorpusConfig,
    pub build: BuildOptions,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or defaults), then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Some(sep) = Separator::from_env() {
            self.separator = Some(sep.command);
        }
        if let Some(codec) = Mp3Codec::from_env() {
            self.mp3 = Some(codec);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.detection.validate()?;
        self.embedder.validate()?;
        self.classifier.validate()?;
        self.augment.validate()?;
        self.synth.validate()
    }

    pub fn separator(&self) -> Option<Separator> {
        self.separator.as_ref().map(Separator::new)
    }

    /// Configured codec, else one found on `PATH`.
    pub fn codec(&self) -> Option<Mp3Codec> {
        self.mp3.clone().or_else(Mp3Codec::detect)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        assert_eq!(cfg.embedder.batch_size, 64);
        assert_eq!(cfg.classifier.learning_rate, 1e-5);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = PipelineConfig::from_toml(
            "separator = \"demucs-wrap {input} {output}\"\n[detection]\nsegment_threshold = 0.7\ncount_mode = \"fraction\"\n[embedder]\nmax_epochs = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.detection.segment_threshold, 0.7);
        assert_eq!(cfg.detection.threshold(), CountThreshold::Fraction(0.5));
        assert_eq!(cfg.embedder.max_epochs, 5);
        assert_eq!(cfg.embedder.embedding_dim, 512);
        assert!(cfg.separator().is_some());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_toml("[detection]\nsegment_threshold = 1.5\n").is_err());
        assert!(PipelineConfig::from_toml("[detection]\ncount_threshold = 0\n").is_err());
        assert!(PipelineConfig::from_toml("[augment]\napply_prob = 2.0\n").is_err());
        assert!(PipelineConfig::from_toml("nonsense = [").is_err());
    }
}
