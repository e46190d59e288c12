//! Frame-wise f0 estimation: YIN candidates scored with a Beta prior over
//! thresholds and smoothed by a voiced/unvoiced pitch HMM (PYIN).

mod viterbi;
mod yin;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

pub use viterbi::{safe_ln, viterbi_dense, PitchHmm, PROB_FLOOR};
pub use yin::{yin_frame, YinAnalyzer, YinCandidate};

/// Pitch resolution of the HMM state grid.
pub const CENTS_PER_BIN: f64 = 10.0;

/// Weight given to the global minimum when no trough falls below a threshold.
const NO_TROUGH_PROB: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchParams {
    pub fmin: f64,
    pub fmax: f64,
    pub frame_size: usize,
    pub hop: usize,
    pub n_thresholds: usize,
    pub beta_a: f64,
    pub beta_b: f64,
    pub switch_prob: f64,
    /// Full width of the triangular pitch-transition kernel, in semitones.
    pub max_semitone_step: f64,
}

impl Default for PitchParams {
    fn default() -> Self {
        Self {
            fmin: 65.0,
            fmax: 1047.0,
            frame_size: 2048,
            hop: 256,
            n_thresholds: 100,
            beta_a: 2.0,
            beta_b: 18.0,
            switch_prob: 0.01,
            max_semitone_step: 12.0,
        }
    }
}

impl PitchParams {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let sr = sample_rate as f64;
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if !(self.fmin > 0.0 && self.fmin < self.fmax && self.fmax < sr / 2.0) {
            return bad(format!(
                "need 0 < fmin < fmax < sr/2, got fmin={} fmax={} sr={sr}",
                self.fmin, self.fmax
            ));
        }
        if (self.frame_size as f64) < 2.0 * sr / self.fmin {
            return bad(format!(
                "frame of {} samples holds fewer than two periods of {} Hz",
                self.frame_size, self.fmin
            ));
        }
        if self.hop == 0 || self.n_thresholds == 0 {
            return bad("hop and n_thresholds must be positive".into());
        }
        if !(self.beta_a >= 1.0 && self.beta_b >= 1.0) {
            return bad("beta prior shapes must be >= 1".into());
        }
        if !(self.switch_prob > 0.0 && self.switch_prob < 1.0) {
            return bad("switch_prob must lie in (0, 1)".into());
        }
        if !(self.max_semitone_step >= 0.0) {
            return bad("max_semitone_step must be non-negative".into());
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        (1200.0 * (self.fmax / self.fmin).log2() / CENTS_PER_BIN).floor() as usize + 1
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        self.fmin * 2f64.powf(bin as f64 * CENTS_PER_BIN / 1200.0)
    }

    pub fn frequency_bin(&self, f: f64) -> Option<usize> {
        let b = (1200.0 * (f / self.fmin).log2() / CENTS_PER_BIN).round();
        (b >= 0.0 && (b as usize) < self.n_bins()).then_some(b as usize)
    }

    fn transition_half_width(&self) -> usize {
        (self.max_semitone_step * 100.0 / CENTS_PER_BIN / 2.0).round() as usize
    }

    /// Probability mass of each threshold `(i+1)/n` under the Beta prior.
    pub fn threshold_masses(&self) -> Vec<f64> {
        let n = self.n_thresholds;
        let (a, b) = (self.beta_a, self.beta_b);
        let pdf = |x: f64| x.powf(a - 1.0) * (1.0 - x).powf(b - 1.0);
        let masses: Vec<f64> = (0..n)
            .map(|i| {
                let (lo, hi) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
                let steps = 64;
                let h = (hi - lo) / steps as f64;
                let mut s = pdf(lo) + pdf(hi);
                for k in 1..steps {
                    s += pdf(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
                }
                s * h / 3.0
            })
            .collect();
        let z: f64 = masses.iter().sum();
        masses.iter().map(|m| m / z).collect()
    }
}

/// Dense per-frame pitch contour; `f0 == 0` marks unvoiced frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    pub times: Vec<f64>,
    pub f0: Vec<f64>,
    pub voiced_prob: Vec<f64>,
    pub frame_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn is_voiced(&self, frame: usize) -> bool {
        self.f0[frame] > 0.0
    }

    pub fn voiced_f0(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0.iter().copied().filter(|&f| f > 0.0)
    }

    /// Sample index at the center of `frame`.
    pub fn frame_center(&self, frame: usize) -> usize {
        frame * self.hop
    }

    /// Nearest frame to a sample position.
    pub fn frame_at(&self, sample: f64) -> usize {
        let f = (sample / self.hop as f64).round().max(0.0) as usize;
        f.min(self.len().saturating_sub(1))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time_s", "f0_hz", "voiced_prob"])?;
        for i in 0..self.len() {
            w.write_record([
                format!("{:.6}", self.times[i]),
                format!("{:.4}", self.f0[i]),
                format!("{:.6}", self.voiced_prob[i]),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to(&self, out: &mut impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_s", "f0_hz", "voiced_prob"])?;
        for i in 0..self.len() {
            w.write_record([
                format!("{:.6}", self.times[i]),
                format!("{:.4}", self.f0[i]),
                format!("{:.6}", self.voiced_prob[i]),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))
    }
}

/// Reusable PYIN tracker.
pub struct PyinTracker {
    params: PitchParams,
    sample_rate: u32,
    analyzer: YinAnalyzer,
    masses: Vec<f64>,
    hmm: PitchHmm,
}

impl PyinTracker {
    pub fn new(params: PitchParams, sample_rate: u32) -> Result<Self> {
        params.validate(sample_rate)?;
        let analyzer = YinAnalyzer::new(&params, sample_rate);
        let masses = params.threshold_masses();
        let hmm = PitchHmm::new(
            params.n_bins(),
            params.transition_half_width(),
            params.switch_prob,
        );
        Ok(Self {
            params,
            sample_rate,
            analyzer,
            masses,
            hmm,
        })
    }

    pub fn params(&self) -> &PitchParams {
        &self.params
    }

    /// Candidate frequencies with their threshold-prior probabilities.
    fn frame_probabilities(&self, frame: &[f64]) -> Vec<(f64, f64)> {
        let troughs = self.analyzer.candidates_by_lag(frame);
        if troughs.is_empty() {
            return Vec::new();
        }
        let n = self.params.n_thresholds;
        let mut probs = vec![0.0; troughs.len()];
        let global_min = troughs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.cmnd.total_cmp(&b.1.cmnd))
            .map(|(i, _)| i)
            .unwrap();
        for (i, mass) in self.masses.iter().enumerate() {
            let threshold = (i + 1) as f64 / n as f64;
            match troughs.iter().position(|c| c.cmnd < threshold) {
                Some(k) => probs[k] += mass,
                None => probs[global_min] += NO_TROUGH_PROB * mass,
            }
        }
        troughs
            .iter()
            .zip(probs)
            .filter(|(_, p)| *p > 0.0)
            .map(|(c, p)| (c.frequency(self.sample_rate), p))
            .collect()
    }

    pub fn track(&self, buffer: &AudioBuffer) -> Result<PitchTrack> {
        if buffer.sample_rate() != self.sample_rate {
            return Err(Error::SampleRateMismatch(
                buffer.sample_rate(),
                self.sample_rate,
            ));
        }
        let p = &self.params;
        let x = buffer.samples();
        let mut track = PitchTrack {
            times: Vec::new(),
            f0: Vec::new(),
            voiced_prob: Vec::new(),
            frame_size: p.frame_size,
            hop: p.hop,
            sample_rate: self.sample_rate,
        };
        if x.len() < p.frame_size {
            return Ok(track);
        }
        let n_frames = 1 + x.len() / p.hop;
        let n_bins = p.n_bins();
        let half = p.frame_size / 2;
        let last_start = x.len() - p.frame_size;
        let mut frame = vec![0.0f64; p.frame_size];
        let mut log_emit = Vec::with_capacity(n_frames);
        let mut frame_cands = Vec::with_capacity(n_frames);
        let mut voiced_prob = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            // edge windows are clamped inside the signal rather than padded
            let start = (t * p.hop).saturating_sub(half).min(last_start);
            for (v, &s) in frame.iter_mut().zip(&x[start..start + p.frame_size]) {
                *v = s as f64;
            }
            let cands = self.frame_probabilities(&frame);
            let mut obs = vec![0.0; 2 * n_bins];
            for &(f, prob) in &cands {
                if let Some(b) = p.frequency_bin(f) {
                    obs[b] += prob;
                }
            }
            let vp = obs[..n_bins].iter().sum::<f64>().clamp(0.0, 1.0);
            let unvoiced = (1.0 - vp) / n_bins as f64;
            for o in &mut obs[n_bins..] {
                *o = unvoiced;
            }
            log_emit.push(obs.iter().map(|&o| safe_ln(o)).collect::<Vec<_>>());
            frame_cands.push(cands);
            voiced_prob.push(vp);
        }
        let (states, _) = self.hmm.decode(&log_emit);
        for (t, &s) in states.iter().enumerate() {
            track.times.push((t * p.hop) as f64 / self.sample_rate as f64);
            track.voiced_prob.push(voiced_prob[t]);
            if s >= n_bins {
                track.f0.push(0.0);
                continue;
            }
            // refine the bin center with the strongest nearby candidate
            let center = p.bin_frequency(s);
            let refined = frame_cands[t]
                .iter()
                .filter(|(f, _)| (1200.0 * (f / center).log2()).abs() <= CENTS_PER_BIN)
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|&(f, _)| f)
                .unwrap_or(center);
            track.f0.push(refined.clamp(p.fmin, p.fmax));
        }
        Ok(track)
    }
}

/// Runs PYIN on a mono buffer.
pub fn pyin_track(buffer: &AudioBuffer, params: &PitchParams) -> Result<PitchTrack> {
    PyinTracker::new(params.clone(), buffer.sample_rate())?.track(buffer)
}
