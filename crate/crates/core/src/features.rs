//! Log-mel spectrogram front end.
//!
//! Frames are centered (reflect padding of half a frame on both sides), so a
//! buffer of `N` samples yields `1 + N / hop` frames: 431 frames for ten
//! seconds at 44.1 kHz with a hop of 1024.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const N_MELS: usize = 128;
pub const FRAME_SIZE: usize = 2048;
pub const HOP: usize = 1024;
/// Frames produced for one ten-second segment.
pub const SEGMENT_FRAMES: usize = 431;

const POWER_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MelScale {
    /// `2595 * log10(1 + f / 700)`
    Htk,
    /// Linear below 1 kHz, logarithmic above.
    Slaney,
}

impl MelScale {
    pub fn hz_to_mel(self, hz: f64) -> f64 {
        match self {
            MelScale::Htk => 2595.0 * (1.0 + hz / 700.0).log10(),
            MelScale::Slaney => {
                let f_sp = 200.0 / 3.0;
                let min_log_hz = 1000.0;
                let min_log_mel = min_log_hz / f_sp;
                let logstep = (6.4f64).ln() / 27.0;
                if hz >= min_log_hz {
                    min_log_mel + (hz / min_log_hz).ln() / logstep
                } else {
                    hz / f_sp
                }
            }
        }
    }

    pub fn mel_to_hz(self, mel: f64) -> f64 {
        match self {
            MelScale::Htk => 700.0 * (10f64.powf(mel / 2595.0) - 1.0),
            MelScale::Slaney => {
                let f_sp = 200.0 / 3.0;
                let min_log_hz = 1000.0;
                let min_log_mel = min_log_hz / f_sp;
                let logstep = (6.4f64).ln() / 27.0;
                if mel >= min_log_mel {
                    min_log_hz * (logstep * (mel - min_log_mel)).exp()
                } else {
                    f_sp * mel
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub frame_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Dynamic range kept below the spectrogram maximum, in dB.
    pub top_db: f64,
    pub mel_scale: MelScale,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            frame_size: FRAME_SIZE,
            hop: HOP,
            n_mels: N_MELS,
            fmin: 0.0,
            fmax: SAMPLE_RATE as f64 / 2.0,
            top_db: 80.0,
            mel_scale: MelScale::Htk,
        }
    }
}

impl FeatureConfig {
    pub fn n_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        1 + n_samples / self.hop
    }
}

/// Row-major `frames x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }
}

/// Triangular filters, stored sparsely as `(first_bin, weights)` per mel band.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// Center frequency of every band, in Hz.
    pub centers_hz: Vec<f64>,
    bands: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    /// Dense weight of `bin` in band `mel`.
    pub fn weight(&self, mel: usize, bin: usize) -> f64 {
        let (start, w) = &self.bands[mel];
        if bin < *start || bin >= start + w.len() {
            0.0
        } else {
            w[bin - start]
        }
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        (0..self.n_mels)
            .map(|m| (0..self.n_bins).map(|k| self.weight(m, k)).collect())
            .collect()
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((start, w), o) in self.bands.iter().zip(out.iter_mut()) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Triangular filters with centers equally spaced on the mel axis.
pub fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sr: u32,
    fmin: f64,
    fmax: f64,
    scale: MelScale,
) -> Result<MelFilterbank> {
    if n_mels == 0 || n_fft < 2 {
        return Err(Error::InvalidParam(
            "mel filterbank needs n_mels >= 1 and n_fft >= 2".into(),
        ));
    }
    if !(fmin >= 0.0 && fmax > fmin) {
        return Err(Error::InvalidParam(format!(
            "invalid mel range [{fmin}, {fmax}]"
        )));
    }
    let n_bins = n_fft / 2 + 1;
    let bin_hz = |k: usize| k as f64 * sr as f64 / n_fft as f64;
    let (mlo, mhi) = (scale.hz_to_mel(fmin), scale.hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| scale.mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut bands = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let weights: Vec<(usize, f64)> = (0..n_bins)
            .filter_map(|k| {
                let f = bin_hz(k);
                let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0);
                (w > 0.0).then_some((k, w))
            })
            .collect();
        let band = match (weights.first(), weights.last()) {
            (Some(&(first, _)), Some(&(last, _))) => {
                let mut dense = vec![0.0; last - first + 1];
                for (k, w) in weights {
                    dense[k - first] = w;
                }
                (first, dense)
            }
            _ => (0, Vec::new()),
        };
        bands.push(band);
    }
    Ok(MelFilterbank {
        n_mels,
        n_bins,
        centers_hz: edges[1..=n_mels].to_vec(),
        bands,
    })
}

/// Index into a signal of length `n` under repeated mirror reflection
/// (the sample at the edge is not duplicated).
fn reflect_index(i: isize, n: usize) -> Option<usize> {
    match n {
        0 => None,
        1 => Some(0),
        _ => {
            let period = 2 * (n as isize - 1);
            let mut m = i.rem_euclid(period);
            if m >= n as isize {
                m = period - m;
            }
            Some(m as usize)
        }
    }
}

fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable STFT + mel front end.
pub struct MelExtractor {
    config: FeatureConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: MelFilterbank,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor")
            .field("config", &self.config)
            .finish()
    }
}

impl Default for MelExtractor {
    fn default() -> Self {
        Self::new(FeatureConfig::default()).expect("default feature config is valid")
    }
}

impl MelExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        if config.frame_size < 2 || config.hop == 0 {
            return Err(Error::InvalidParam(
                "frame size must be >= 2 and hop > 0".into(),
            ));
        }
        let filterbank = mel_filterbank(
            config.n_mels,
            config.frame_size,
            config.sample_rate,
            config.fmin,
            config.fmax,
            config.mel_scale,
        )?;
        let fft = FftPlanner::new().plan_fft_forward(config.frame_size);
        Ok(Self {
            window: hann_periodic(config.frame_size),
            fft,
            filterbank,
            config,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Hann-windowed power spectrum of every centered frame (`T x n_fft/2+1`).
    pub fn stft_power(&self, samples: &[f32]) -> Spectrogram {
        let n = samples.len();
        let frame = self.config.frame_size;
        let half = (frame / 2) as isize;
        let n_frames = self.config.n_frames(n);
        let n_bins = self.config.n_bins();
        let mut data = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex::new(0.0, 0.0); frame];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..n_frames {
            let start = (t * self.config.hop) as isize - half;
            for (j, slot) in buf.iter_mut().enumerate() {
                let x = reflect_index(start + j as isize, n)
                    .map(|i| samples[i] as f64)
                    .unwrap_or(0.0);
                *slot = Complex::new(x * self.window[j], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            data.extend(buf[..n_bins].iter().map(|c| c.norm_sqr()));
        }
        Spectrogram {
            frames: n_frames,
            cols: n_bins,
            data,
        }
    }

    /// Mel power in dB, `10 log10(p + 1e-10)`, before range clamping.
    pub fn mel_db(&self, samples: &[f32]) -> Spectrogram {
        let power = self.stft_power(samples);
        let n_mels = self.config.n_mels;
        let mut data = vec![0.0; power.frames * n_mels];
        for t in 0..power.frames {
            let out = &mut data[t * n_mels..(t + 1) * n_mels];
            self.filterbank.apply(power.row(t), out);
            for v in out.iter_mut() {
                *v = 10.0 * (*v + POWER_EPS).log10();
            }
        }
        Spectrogram {
            frames: power.frames,
            cols: n_mels,
            data,
        }
    }

    /// Log-mel spectrogram clamped to `top_db` below its maximum and min-max
    /// scaled to `[0, 1]`. A spectrogram with no dynamic range becomes zeros.
    pub fn melspectrogram(&self, buffer: &AudioBuffer) -> Result<MelSpectrogram> {
        if buffer.sample_rate() != self.config.sample_rate {
            return Err(Error::SampleRateMismatch(
                buffer.sample_rate(),
                self.config.sample_rate,
            ));
        }
        let db = self.mel_db(buffer.samples());
        let max = db.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let floor = max - self.config.top_db;
        let clamped: Vec<f64> = db.data.iter().map(|&v| v.max(floor)).collect();
        let min = clamped.iter().cloned().fold(f64::INFINITY, f64::min);
        let range = max - min;
        let values = clamped
            .iter()
            .map(|&v| {
                if range > 0.0 {
                    ((v - min) / range) as f32
                } else {
                    0.0
                }
            })
            .collect();
        Ok(MelSpectrogram {
            frames: db.frames,
            n_mels: db.cols,
            values,
        })
    }
}

/// Normalized log-mel spectrogram, row-major `frames x n_mels`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: usize,
    pub n_mels: usize,
    pub values: Vec<f32>,
}

impl MelSpectrogram {
    pub fn get(&self, t: usize, m: usize) -> f32 {
        self.values[t * self.n_mels + m]
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }
}

/// Convenience wrapper using the default configuration.
pub fn melspectrogram(buffer: &AudioBuffer) -> Result<MelSpectrogram> {
    MelExtractor::default().melspectrogram(buffer)
}

pub fn stft_power(buffer: &AudioBuffer) -> Spectrogram {
    MelExtractor::default().stft_power(buffer.samples())
}

const CACHE_MAGIC: &[u8; 4] = b"TDML";
const CACHE_VERSION: u32 = 1;

/// Writes a spectrogram cache file.
///
/// Layout, all little-endian: magic `TDML`, `u32` version, `u32` frames,
/// `u32` n_mels, `u32` sample rate, `u32` frame size, `u32` hop,
/// `f32` top_db, then `frames * n_mels` `f32` values row-major.
pub fn write_mel_cache(
    path: impl AsRef<Path>,
    mel: &MelSpectrogram,
    config: &FeatureConfig,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(32);
    header.extend_from_slice(CACHE_MAGIC);
    for v in [
        CACHE_VERSION,
        mel.frames as u32,
        mel.n_mels as u32,
        config.sample_rate,
        config.frame_size as u32,
        config.hop as u32,
    ] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    header.extend_from_slice(&(config.top_db as f32).to_le_bytes());
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    for v in &mel.values {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_mel_cache(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 32];
    r.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[..4] != CACHE_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a mel cache file",
            path.display()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != CACHE_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported cache version {}",
            path.display(),
            word(0)
        )));
    }
    let (frames, n_mels) = (word(1) as usize, word(2) as usize);
    let mut bytes = vec![0u8; frames * n_mels * 4];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(MelSpectrogram {
        frames,
        n_mels,
        values,
    })
}
