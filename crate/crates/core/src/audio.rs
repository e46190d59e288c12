//! Mono audio container, WAV I/O, resampling and the segmenting front end.
//!
//! All internal processing runs on mono `f32` buffers at [`SAMPLE_RATE`].
//! Integer PCM is scaled by `1/32768`, so `-32768` maps to exactly `-1.0`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Working sample rate of every analysis stage.
pub const SAMPLE_RATE: u32 = 44_100;

/// Default segment length in seconds.
pub const SEGMENT_SECONDS: f64 = 10.0;

/// Default energy-gate ratio (0.002 % of the loudest segment).
pub const ENERGY_GATE_RATIO: f64 = 2e-5;

const RESAMPLE_TAPS: usize = 64;
const KAISER_BETA: f64 = 8.0;
const RESAMPLE_ROLLOFF: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParam("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidParam(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    /// Builds a buffer from a generator evaluated at `t = n / sample_rate`.
    pub fn from_fn(len: usize, sample_rate: u32, mut f: impl FnMut(f64) -> f64) -> Self {
        let sr = sample_rate.max(1) as f64;
        let samples = (0..len).map(|n| f(n as f64 / sr) as f32).collect();
        Self {
            samples,
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    /// Clamps every sample into `[-1, 1]`.
    pub fn clip(mut self) -> Self {
        for s in &mut self.samples {
            *s = s.clamp(-1.0, 1.0);
        }
        self
    }

    /// Scales to unit peak when the peak exceeds one; otherwise unchanged.
    pub fn normalize_if_clipping(mut self) -> Self {
        let peak = self.peak();
        if peak > 1.0 {
            let g = 1.0 / peak;
            for s in &mut self.samples {
                *s *= g;
            }
        }
        self
    }

    pub(crate) fn with_samples(&self, samples: Vec<f32>) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a PCM16 or float-32 WAV file and downmixes it to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(Error::Format(format!(
            "{}: {channels} channels (only mono and stereo are supported)",
            path.display()
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: {bits}-bit {fmt:?} samples (expected 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|lr| (lr[0] + lr[1]) * 0.5)
            .collect()
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes a mono 32-bit float WAV.
pub fn save_wav(path: impl AsRef<Path>, buffer: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let path = path.as_ref();
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &buffer.samples {
        writer.write_sample(s)?;
    }
    writer.finalize()?;
    Ok(())
}

fn to_pcm16(s: f32) -> i16 {
    (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Rounds samples to what a PCM16 write followed by a read returns.
pub fn quantize_pcm16(buffer: &AudioBuffer) -> AudioBuffer {
    buffer.with_samples(buffer.samples.iter().map(|&s| to_pcm16(s) as f32 / 32768.0).collect())
}

/// Writes a mono 16-bit PCM WAV (clipping to the representable range).
pub fn save_wav_pcm16(path: impl AsRef<Path>, buffer: &AudioBuffer) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec)?;
    for &s in &buffer.samples {
        writer.write_sample(to_pcm16(s))?;
    }
    writer.finalize()?;
    Ok(())
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

const WINDOW_TABLE_LEN: usize = 4096;

/// Kaiser window sampled on `r in [0, 1]`, read with linear interpolation.
fn kaiser_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let i0_beta = bessel_i0(KAISER_BETA);
        (0..=WINDOW_TABLE_LEN)
            .map(|i| {
                let r = i as f64 / WINDOW_TABLE_LEN as f64;
                bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta
            })
            .collect()
    })
}

fn kaiser(r: f64) -> f64 {
    let table = kaiser_table();
    let pos = r.abs() * WINDOW_TABLE_LEN as f64;
    let i = pos.floor() as usize;
    if i >= WINDOW_TABLE_LEN {
        return table[WINDOW_TABLE_LEN];
    }
    let frac = pos - i as f64;
    table[i] * (1.0 - frac) + table[i + 1] * frac
}

/// Windowed-sinc interpolator reading `src` at positions `j * step`.
///
/// `step` is the number of source samples advanced per output sample. The
/// cutoff follows `min(1, 1/step)` so that decimation stays alias-suppressed.
pub(crate) fn sinc_interpolate(src: &[f32], step: f64, out_len: usize) -> Vec<f32> {
    let half = (RESAMPLE_TAPS / 2) as isize;
    let cutoff = (1.0 / step).min(1.0) * RESAMPLE_ROLLOFF;
    let n = src.len() as isize;
    (0..out_len)
        .map(|j| {
            let t = j as f64 * step;
            let center = t.floor() as isize;
            let mut acc = 0.0f64;
            for k in (center - half + 1).max(0)..=(center + half).min(n - 1) {
                let u = t - k as f64;
                let r = u / half as f64;
                if r.abs() > 1.0 {
                    continue;
                }
                let x = PI * cutoff * u;
                let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
                acc += src[k as usize] as f64 * cutoff * sinc * kaiser(r);
            }
            acc as f32
        })
        .collect()
}

/// Band-limited sample-rate conversion (64-tap Kaiser-windowed sinc).
pub fn resample(buffer: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::InvalidParam("target rate must be positive".into()));
    }
    if target_rate == buffer.sample_rate {
        return Ok(buffer.clone());
    }
    let ratio = target_rate as f64 / buffer.sample_rate as f64;
    let out_len = (buffer.len() as f64 * ratio).round() as usize;
    let samples = sinc_interpolate(&buffer.samples, 1.0 / ratio, out_len);
    Ok(AudioBuffer {
        samples,
        sample_rate: target_rate,
    })
}

/// Truncates or zero-pads at the end to exactly `round(duration_s * sr)` samples.
pub fn pad_or_trim(buffer: &AudioBuffer, duration_s: f64) -> Result<AudioBuffer> {
    if !(duration_s > 0.0) {
        return Err(Error::InvalidParam(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    let n = (duration_s * buffer.sample_rate as f64).round() as usize;
    let mut samples = buffer.samples.clone();
    samples.resize(n, 0.0);
    Ok(buffer.with_samples(samples))
}

/// A fixed-length window of a source track.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub buffer: AudioBuffer,
    pub index: usize,
    pub source_id: String,
    pub energy: f64,
}

/// Splits into consecutive non-overlapping windows of `duration_s`.
///
/// A trailing partial window is zero-padded and kept when it holds at least
/// half a window of content; otherwise it is dropped.
pub fn segment(buffer: &AudioBuffer, duration_s: f64, source_id: &str) -> Result<Vec<Segment>> {
    if !(duration_s > 0.0) {
        return Err(Error::InvalidParam(format!(
            "segment duration must be positive, got {duration_s}"
        )));
    }
    let seg_len = ((duration_s * buffer.sample_rate as f64).round() as usize).max(1);
    let mut out = Vec::new();
    for (index, chunk) in buffer.samples.chunks(seg_len).enumerate() {
        if 2 * chunk.len() < seg_len {
            break;
        }
        let mut samples = chunk.to_vec();
        samples.resize(seg_len, 0.0);
        let seg_buffer = buffer.with_samples(samples);
        let energy = seg_buffer.energy();
        out.push(Segment {
            buffer: seg_buffer,
            index,
            source_id: source_id.to_string(),
            energy,
        });
    }
    Ok(out)
}

/// Drops segments quieter than `ratio` times the loudest segment of the same
/// source. A source whose loudest segment is silent loses every segment.
pub fn energy_gate(segments: Vec<Segment>, ratio: f64) -> Result<Vec<Segment>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParam(format!(
            "energy gate ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let mut max_energy: HashMap<&str, f64> = HashMap::new();
    for s in &segments {
        let e = max_energy.entry(s.source_id.as_str()).or_insert(0.0);
        *e = e.max(s.energy);
    }
    let thresholds: HashMap<String, f64> = max_energy
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    Ok(segments
        .into_iter()
        .filter(|s| {
            let max = thresholds[&s.source_id];
            max > 0.0 && s.energy >= ratio * max
        })
        .collect())
}

/// Equalizes lengths by zero-padding the shorter buffer.
pub(crate) fn zero_pad_pair(a: &[f32], b: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let n = a.len().max(b.len());
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.resize(n, 0.0);
    b.resize(n, 0.0);
    (a, b)
}
