//! Robustness transformations: Gaussian noise, speed change, time shift,
//! MP3 round trip through an external codec, and the random chain.

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, sinc_interpolate, save_wav_pcm16, AudioBuffer};
use crate::error::{Error, Result};

/// Adds `amplitude * N(0, 1)` per sample and clips to `[-1, 1]`.
pub fn add_noise<R: Rng + ?Sized>(buffer: &AudioBuffer, amplitude: f64, rng: &mut R) -> AudioBuffer {
    if amplitude == 0.0 {
        return buffer.clone();
    }
    let out = buffer
        .samples()
        .iter()
        .map(|&s| {
            let g: f64 = StandardNormal.sample(rng);
            (s as f64 + amplitude * g).clamp(-1.0, 1.0) as f32
        })
        .collect();
    buffer.with_samples(out)
}

/// Resampling speed change: tempo and pitch both scale by `factor`.
pub fn change_speed(buffer: &AudioBuffer, factor: f64) -> Result<AudioBuffer> {
    if !(0.5..=2.0).contains(&factor) {
        return Err(Error::InvalidParam(format!(
            "speed factor {factor} outside [0.5, 2]"
        )));
    }
    if factor == 1.0 {
        return Ok(buffer.clone());
    }
    let out_len = (buffer.len() as f64 / factor).round() as usize;
    Ok(buffer.with_samples(sinc_interpolate(buffer.samples(), factor, out_len)))
}

/// Delays (positive) or advances (negative) the content, keeping the length.
pub fn time_shift(buffer: &AudioBuffer, shift_s: f64) -> Result<AudioBuffer> {
    if !shift_s.is_finite() || shift_s.abs() > buffer.duration_s() + 1e-9 {
        return Err(Error::InvalidParam(format!(
            "shift {shift_s} s exceeds buffer duration {} s",
            buffer.duration_s()
        )));
    }
    let n = buffer.len();
    let k = ((shift_s.abs() * buffer.sample_rate() as f64).round() as usize).min(n);
    let x = buffer.samples();
    let mut out = vec![0.0f32; n];
    if shift_s >= 0.0 {
        out[k..].copy_from_slice(&x[..n - k]);
    } else {
        out[..n - k].copy_from_slice(&x[k..]);
    }
    Ok(buffer.with_samples(out))
}

/// External MP3 encoder/decoder command templates.
///
/// Templates are split on whitespace before `{input}`, `{output}` and
/// `{kbps}` are substituted, so paths may contain spaces but the templates
/// themselves cannot use shell quoting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mp3Codec {
    pub encode: String,
    pub decode: String,
}

pub const ENV_MP3_ENCODE: &str = "TUNEDETECT_MP3_ENCODE";
pub const ENV_MP3_DECODE: &str = "TUNEDETECT_MP3_DECODE";

impl Mp3Codec {
    /// ffmpeg templates.
    pub fn ffmpeg() -> Self {
        Self {
            encode: "ffmpeg -nostdin -loglevel error -y -i {input} -codec:a libmp3lame -b:a {kbps}k {output}".into(),
            decode: "ffmpeg -nostdin -loglevel error -y -i {input} -ac 1 -ar 44100 {output}".into(),
        }
    }

    /// lame templates.
    pub fn lame() -> Self {
        Self {
            encode: "lame --quiet --cbr -b {kbps} {input} {output}".into(),
            decode: "lame --quiet --decode {input} {output}".into(),
        }
    }

    /// Reads both templates from the environment.
    pub fn from_env() -> Option<Self> {
        let encode = std::env::var(ENV_MP3_ENCODE).ok()?;
        let decode = std::env::var(ENV_MP3_DECODE).ok()?;
        Some(Self { encode, decode })
    }

    /// Environment templates, else the first of ffmpeg / lame found on PATH.
    pub fn detect() -> Option<Self> {
        Self::from_env()
            .or_else(|| [Self::ffmpeg(), Self::lame()].into_iter().find(|c| c.is_available()))
    }

    pub fn is_available(&self) -> bool {
        [&self.encode, &self.decode]
            .iter()
            .all(|t| t.split_whitespace().next().is_some_and(|p| find_program(p).is_some()))
    }
}

fn find_program(name: &str) -> Option<PathBuf> {
    let path = Path::new(name);
    if path.components().count() > 1 {
        return path.is_file().then(|| path.to_path_buf());
    }
    std::env::split_paths(&std::env::var_os("PATH")?)
        .map(|dir| dir.join(name))
        .find(|p| p.is_file())
}

pub(crate) fn run_template(template: &str, input: &Path, output: &Path, kbps: u32) -> Result<()> {
    let mut parts = template.split_whitespace().map(|tok| {
        tok.replace("{input}", &input.to_string_lossy())
            .replace("{output}", &output.to_string_lossy())
            .replace("{kbps}", &kbps.to_string())
    });
    let program = parts
        .next()
        .ok_or_else(|| Error::Config("empty codec command".into()))?;
    let resolved =
        find_program(&program).ok_or_else(|| Error::CodecMissing(program.clone()))?;
    let result = Command::new(resolved)
        .args(parts)
        .output()
        .map_err(|e| Error::Command(format!("{program}: {e}")))?;
    if !result.status.success() {
        return Err(Error::Command(format!(
            "{program} exited with {}: {}",
            result.status,
            String::from_utf8_lossy(&result.stderr).trim()
        )));
    }
    Ok(())
}

/// Encodes at `kbps`, decodes, and trims or pads back to the input length.
/// Temporary files live in a private directory removed on every path.
pub fn mp3_roundtrip(buffer: &AudioBuffer, kbps: u32, codec: &Mp3Codec) -> Result<AudioBuffer> {
    if !codec.is_available() {
        return Err(Error::CodecMissing(format!(
            "encoder `{}` / decoder `{}` not found",
            codec.encode, codec.decode
        )));
    }
    let dir = tempfile::Builder::new()
        .prefix("tunedetect-mp3")
        .tempdir()
        .map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let wav_in = dir.path().join("in.wav");
    let mp3 = dir.path().join("coded.mp3");
    let wav_out = dir.path().join("out.wav");
    save_wav_pcm16(&wav_in, buffer)?;
    run_template(&codec.encode, &wav_in, &mp3, kbps)?;
    run_template(&codec.decode, &mp3, &wav_out, kbps)?;
    let decoded = load_wav(&wav_out)?;
    if decoded.sample_rate() != buffer.sample_rate() {
        return Err(Error::SampleRateMismatch(
            decoded.sample_rate(),
            buffer.sample_rate(),
        ));
    }
    let mut samples = decoded.into_samples();
    samples.resize(buffer.len(), 0.0);
    Ok(buffer.with_samples(samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Noise,
    Speed,
    Shift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub noise_amp_range: [f64; 2],
    pub speed_range: [f64; 2],
    pub shift_range_s: [f64; 2],
    pub apply_prob: f64,
    pub mp3_kbps_range: [u32; 2],
    pub order: Vec<TransformKind>,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_amp_range: [0.001, 0.015],
            speed_range: [0.80, 1.25],
            shift_range_s: [-0.5, 0.5],
            apply_prob: 0.5,
            mp3_kbps_range: [32, 64],
            order: vec![TransformKind::Noise, TransformKind::Speed, TransformKind::Shift],
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2], what: &str| {
            if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!("{what} range {r:?} is not ordered")))
            }
        };
        ordered(self.noise_amp_range, "noise")?;
        ordered(self.speed_range, "speed")?;
        ordered(self.shift_range_s, "shift")?;
        if self.noise_amp_range[0] < 0.0 {
            return Err(Error::InvalidParam("noise amplitude must be >= 0".into()));
        }
        if self.speed_range[0] < 0.5 || self.speed_range[1] > 2.0 {
            return Err(Error::InvalidParam("speed range must lie in [0.5, 2]".into()));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::InvalidParam("apply_prob must lie in [0, 1]".into()));
        }
        if self.mp3_kbps_range[0] == 0 || self.mp3_kbps_range[0] > self.mp3_kbps_range[1] {
            return Err(Error::InvalidParam("bad mp3 bitrate range".into()));
        }
        Ok(())
    }
}

/// One applied transform with everything needed to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AppliedTransform {
    Noise { amplitude: f64, noise_seed: u64 },
    Speed { factor: f64 },
    Shift { seconds: f64 },
}

impl AppliedTransform {
    pub fn apply(&self, buffer: &AudioBuffer) -> Result<AudioBuffer> {
        match *self {
            AppliedTransform::Noise {
                amplitude,
                noise_seed,
            } => Ok(add_noise(
                buffer,
                amplitude,
                &mut ChaCha8Rng::seed_from_u64(noise_seed),
            )),
            AppliedTransform::Speed { factor } => change_speed(buffer, factor),
            AppliedTransform::Shift { seconds } => {
                time_shift(buffer, seconds.clamp(-buffer.duration_s(), buffer.duration_s()))
            }
        }
    }
}

/// Re-applies a recorded chain.
pub fn apply_chain(buffer: &AudioBuffer, record: &[AppliedTransform]) -> Result<AudioBuffer> {
    record.iter().try_fold(buffer.clone(), |b, t| t.apply(&b))
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

/// Applies each transform independently with `apply_prob`, in the
/// configured order, drawing parameters uniformly from their ranges.
pub fn random_chain<R: Rng + ?Sized>(
    buffer: &AudioBuffer,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<(AudioBuffer, Vec<AppliedTransform>)> {
    config.validate()?;
    let mut record = Vec::new();
    for kind in &config.order {
        // the coin is always drawn so that later decisions do not depend on earlier ones
        let apply = rng.random_bool(config.apply_prob);
        let step = match kind {
            TransformKind::Noise => AppliedTransform::Noise {
                amplitude: uniform(rng, config.noise_amp_range),
                noise_seed: rng.random(),
            },
            TransformKind::Speed => AppliedTransform::Speed {
                factor: uniform(rng, config.speed_range),
            },
            TransformKind::Shift => AppliedTransform::Shift {
                seconds: uniform(rng, config.shift_range_s),
            },
        };
        if apply {
            record.push(step);
        }
    }
    Ok((apply_chain(buffer, &record)?, record))
}

/// Draws an MP3 bitrate uniformly from the configured range.
pub fn random_kbps<R: Rng + ?Sized>(config: &AugmentConfig, rng: &mut R) -> u32 {
    rng.random_range(config.mp3_kbps_range[0]..=config.mp3_kbps_range[1])
}
