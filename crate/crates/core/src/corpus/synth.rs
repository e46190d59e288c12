//! Synthetic singing voice and accompaniment.
//!
//! The voice is a band-limited pulse train following a note melody with
//! glides, vibrato, slow drift and a constant detune, shaped by a spectral
//! tilt and three formant resonators. Every random choice comes from a
//! seeded ChaCha stream, so a spec regenerates bit-identical audio.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioBuffer, SAMPLE_RATE, SEGMENT_SECONDS};
use crate::error::{Error, Result};
use crate::retune::midi_to_hz;

/// One sung note; `midi` is the intended (on-grid) pitch before detune.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteSpec {
    pub start_s: f64,
    pub end_s: f64,
    pub midi: i32,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthVoiceSpec {
    pub duration_s: f64,
    pub sample_rate: u32,
    pub notes: Vec<NoteSpec>,
    /// Portamento length between notes that touch.
    pub glide_s: f64,
    pub vibrato_cents: f64,
    pub vibrato_hz: f64,
    /// Time for vibrato to reach full depth after a note starts.
    pub vibrato_onset_s: f64,
    /// Constant offset from equal temperament.
    pub detune_cents: f64,
    /// Peak deviation of the slow random pitch wander.
    pub drift_cents: f64,
    pub formants_hz: [f64; 3],
    pub formant_bw_hz: [f64; 3],
    pub tilt_hz: f64,
    pub attack_s: f64,
    pub release_s: f64,
    /// Aspiration noise relative to the voiced level.
    pub breath: f64,
    pub peak: f64,
    pub seed: u64,
}

impl Default for SynthVoiceSpec {
    fn default() -> Self {
        Self {
            duration_s: SEGMENT_SECONDS,
            sample_rate: SAMPLE_RATE,
            notes: vec![NoteSpec {
                start_s: 0.0,
                end_s: SEGMENT_SECONDS,
                midi: 69,
                gain: 1.0,
            }],
            glide_s: 0.1,
            vibrato_cents: 0.0,
            vibrato_hz: 5.5,
            vibrato_onset_s: 0.25,
            detune_cents: 0.0,
            drift_cents: 0.0,
            formants_hz: [650.0, 1500.0, 2700.0],
            formant_bw_hz: [80.0, 100.0, 130.0],
            tilt_hz: 900.0,
            attack_s: 0.04,
            release_s: 0.06,
            breath: 0.0,
            peak: 0.6,
            seed: 0,
        }
    }
}

impl SynthVoiceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || self.sample_rate == 0 {
            return Err(Error::InvalidParam("voice needs positive duration and rate".into()));
        }
        if self.detune_cents.abs() > 80.0 {
            return Err(Error::InvalidParam(format!("detune {} outside [-80, 80] cents", self.detune_cents)));
        }
        let swing = self.vibrato_cents.abs() + self.drift_cents.abs() + self.detune_cents.abs();
        for n in &self.notes {
            let lo = midi_to_hz(n.midi) * 2f64.powf(-swing / 1200.0);
            let hi = midi_to_hz(n.midi) * 2f64.powf(swing / 1200.0);
            if lo < 65.0 || hi > 1047.0 {
                return Err(Error::InvalidParam(format!("note {} leaves [65, 1047] Hz", n.midi)));
            }
            if !(n.end_s > n.start_s) {
                return Err(Error::InvalidParam("note must have positive length".into()));
            }
        }
        if self.notes.windows(2).any(|w| w[1].start_s < w[0].end_s - 1e-9) {
            return Err(Error::InvalidParam("notes overlap".into()));
        }
        Ok(())
    }

    /// Instantaneous f0 (Hz) and amplitude envelope at time `t`.
    fn contour(&self, t: f64, drift: &[(f64, f64, f64)]) -> (f64, f64) {
        let idx = self.notes.partition_point(|n| n.start_s <= t);
        if idx == 0 {
            return (midi_to_hz(self.notes.first().map_or(69, |n| n.midi)), 0.0);
        }
        let note = &self.notes[idx - 1];
        let base = |m: i32| midi_to_hz(m).log2() + self.detune_cents / 1200.0;
        let mut log_f = base(note.midi);
        let since = t - note.start_s;
        if idx >= 2 {
            let prev = &self.notes[idx - 2];
            if note.start_s - prev.end_s < 1e-9 && since < self.glide_s {
                let a = since / self.glide_s;
                let smooth = 0.5 - 0.5 * (PI * a).cos();
                log_f = base(prev.midi) * (1.0 - smooth) + log_f * smooth;
            }
        }
        let ramp = (since / self.vibrato_onset_s.max(1e-6)).min(1.0);
        let mut cents = self.vibrato_cents * ramp * (2.0 * PI * self.vibrato_hz * t).sin();
        for &(amp, freq, phase) in drift {
            cents += amp * (2.0 * PI * freq * t + phase).sin();
        }
        let f0 = 2f64.powf(log_f + cents / 1200.0);

        let env = if t >= note.end_s {
            0.0
        } else {
            let legato_in = idx >= 2 && note.start_s - self.notes[idx - 2].end_s < 1e-9;
            let legato_out = self.notes.get(idx).is_some_and(|n| n.start_s - note.end_s < 1e-9);
            let attack = if legato_in { 1.0 } else { (since / self.attack_s).min(1.0) };
            let release = if legato_out {
                1.0
            } else {
                ((note.end_s - t) / self.release_s).min(1.0)
            };
            note.gain * attack.min(release).max(0.0)
        };
        (f0, env)
    }
}

/// Constant-peak-gain band-pass biquad.
struct Resonator {
    b0: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bw: f64, sr: f64) -> Self {
        let w0 = 2.0 * PI * freq / sr;
        let q = freq / bw;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.b0 * (x - self.x2) - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// `(1/N) * sum_{k=1..N} cos(k phi)` in closed form.
fn dirichlet_pulse(phi: f64, n: usize) -> f64 {
    let half = 0.5 * phi;
    let s = half.sin();
    let n_f = n as f64;
    if s.abs() < 1e-9 {
        return 1.0;
    }
    (((n_f + 0.5) * phi).sin() / (2.0 * s) - 0.5) / n_f
}

fn peak_normalize(x: &mut [f64], peak: f64) {
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let g = peak / max;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

/// Renders a voice spec.
pub fn synth_vocal(spec: &SynthVoiceSpec) -> Result<AudioBuffer> {
    spec.validate()?;
    let sr = spec.sample_rate as f64;
    let n = (spec.duration_s * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let drift: Vec<(f64, f64, f64)> = if spec.drift_cents > 0.0 {
        (0..3)
            .map(|_| {
                (
                    spec.drift_cents / 3.0,
                    rng.random_range(0.1..0.7),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    let f_max = spec
        .notes
        .iter()
        .map(|n| midi_to_hz(n.midi))
        .fold(0.0f64, f64::max)
        * 2f64.powf((spec.vibrato_cents.abs() + spec.drift_cents + spec.detune_cents.abs()) / 1200.0);
    let harmonics = ((0.45 * sr / f_max.max(1.0)).floor() as usize).clamp(1, 80);

    let tilt = (-2.0 * PI * spec.tilt_hz / sr).exp();
    let mut tilt_state = 0.0;
    let mut formants: Vec<Resonator> = spec
        .formants_hz
        .iter()
        .zip(&spec.formant_bw_hz)
        .map(|(&f, &bw)| Resonator::new(f, bw, sr))
        .collect();
    let formant_gain = [1.0, 0.7, 0.4];

    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let (f0, env) = spec.contour(t, &drift);
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
        let glottal = dirichlet_pulse(phase, harmonics);
        let noise: f64 = StandardNormal.sample(&mut rng);
        let src = env * (glottal + spec.breath * noise);
        tilt_state = (1.0 - tilt) * src + tilt * tilt_state;
        let mut y = 0.15 * tilt_state;
        for (r, g) in formants.iter_mut().zip(formant_gain) {
            y += g * r.tick(tilt_state);
        }
        out.push(y);
    }
    peak_normalize(&mut out, spec.peak);
    AudioBuffer::new(out.into_iter().map(|v| v as f32).collect(), spec.sample_rate)
}

/// Draws a melody in a major scale around `center_midi`.
pub fn random_melody<R: Rng + ?Sized>(rng: &mut R, center_midi: i32, duration_s: f64) -> Vec<NoteSpec> {
    const MAJOR: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
    let key = center_midi - rng.random_range(0..12);
    let scale: Vec<i32> = (-2..=2)
        .flat_map(|oct| MAJOR.iter().map(move |s| key + 12 * oct + s))
        .filter(|m| (m - center_midi).abs() <= 7)
        .collect();
    let mut pos = scale
        .iter()
        .position(|&m| m >= center_midi)
        .unwrap_or(scale.len() / 2);
    let mut notes = Vec::new();
    let mut t = rng.random_range(0.0..0.3);
    while t < duration_s - 0.35 {
        let dur = rng.random_range(0.3..1.2f64).min(duration_s - t);
        let step: i32 = rng.random_range(-2..=2);
        pos = (pos as i32 + step).clamp(0, scale.len() as i32 - 1) as usize;
        notes.push(NoteSpec {
            start_s: t,
            end_s: t + dur,
            midi: scale[pos],
            gain: rng.random_range(0.7..1.0),
        });
        t += dur;
        if rng.random_bool(0.6) {
            t += rng.random_range(0.05..0.3);
        }
    }
    notes
}

/// Voice characteristics shared by every clip of one synthetic singer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingerProfile {
    pub center_midi: i32,
    pub formants_hz: [f64; 3],
    pub tilt_hz: f64,
    pub vibrato_cents: f64,
    pub vibrato_hz: f64,
    pub breath: f64,
}

impl SingerProfile {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            center_midi: rng.random_range(52..=72),
            formants_hz: [
                rng.random_range(450.0..850.0),
                rng.random_range(1000.0..2000.0),
                rng.random_range(2300.0..3200.0),
            ],
            tilt_hz: rng.random_range(500.0..1500.0),
            vibrato_cents: rng.random_range(20.0..60.0),
            vibrato_hz: rng.random_range(4.5..6.5),
            breath: rng.random_range(0.0..0.03),
        }
    }

    /// A clip by this singer: new melody, off-key by 20-80 cents.
    pub fn clip<R: Rng + ?Sized>(&self, rng: &mut R, duration_s: f64) -> SynthVoiceSpec {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        SynthVoiceSpec {
            duration_s,
            sample_rate: SAMPLE_RATE,
            notes: random_melody(rng, self.center_midi, duration_s),
            glide_s: rng.random_range(0.05..0.15),
            vibrato_cents: (self.vibrato_cents + rng.random_range(-8.0..8.0)).clamp(20.0, 60.0),
            vibrato_hz: (self.vibrato_hz + rng.random_range(-0.4..0.4)).clamp(4.5, 6.5),
            vibrato_onset_s: rng.random_range(0.1..0.4),
            detune_cents: sign * rng.random_range(20.0..80.0),
            drift_cents: rng.random_range(0.0..10.0),
            formants_hz: self.formants_hz.map(|f| f * rng.random_range(0.95..1.05)),
            formant_bw_hz: [80.0, 100.0, 130.0],
            tilt_hz: self.tilt_hz,
            attack_s: rng.random_range(0.02..0.08),
            release_s: rng.random_range(0.04..0.1),
            breath: self.breath,
            peak: rng.random_range(0.4..0.7),
            seed: rng.random(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordSpec {
    pub start_s: f64,
    pub end_s: f64,
    pub midis: Vec<i32>,
}

/// Chord pad plus filtered-noise percussion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccompanimentSpec {
    pub duration_s: f64,
    pub sample_rate: u32,
    pub chords: Vec<ChordSpec>,
    pub pad_gain: f64,
    pub tempo_bpm: f64,
    pub kick_gain: f64,
    pub hat_gain: f64,
    pub seed: u64,
}

impl AccompanimentSpec {
    /// Triads a little below the singer's register.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, center_midi: i32, duration_s: f64) -> Self {
        let root = center_midi - 12 - rng.random_range(0..7);
        let progression = [0, 5, 7, 9, 4, 2];
        let mut chords = Vec::new();
        let mut t = 0.0;
        while t < duration_s {
            let len = rng.random_range(1.8..2.8);
            let r = root + progression[rng.random_range(0..progression.len())];
            let third = if rng.random_bool(0.5) { 4 } else { 3 };
            chords.push(ChordSpec {
                start_s: t,
                end_s: (t + len).min(duration_s),
                midis: vec![r, r + third, r + 7],
            });
            t += len;
        }
        Self {
            duration_s,
            sample_rate: SAMPLE_RATE,
            chords,
            pad_gain: rng.random_range(0.04..0.09),
            tempo_bpm: rng.random_range(80.0..130.0),
            kick_gain: rng.random_range(0.1..0.25),
            hat_gain: rng.random_range(0.02..0.06),
            seed: rng.random(),
        }
    }
}

pub fn synth_accompaniment(spec: &AccompanimentSpec) -> Result<AudioBuffer> {
    let sr = spec.sample_rate as f64;
    let n = (spec.duration_s * sr).round() as usize;
    let mut out = vec![0.0f64; n];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    for chord in &spec.chords {
        let s0 = (chord.start_s * sr) as usize;
        let s1 = ((chord.end_s * sr) as usize).min(n);
        let fade = (0.05 * sr) as usize;
        for &m in &chord.midis {
            let f = midi_to_hz(m);
            let phase0: f64 = rng.random_range(0.0..2.0 * PI);
            for (i, slot) in out[s0..s1].iter_mut().enumerate() {
                let t = i as f64 / sr;
                let env = (i.min(s1 - s0 - i) as f64 / fade as f64).min(1.0);
                let mut v = 0.0;
                for k in 1..=6 {
                    v += (2.0 * PI * f * k as f64 * t + phase0 * k as f64).sin() / k as f64;
                }
                *slot += spec.pad_gain * env * v / 3.0;
            }
        }
    }

    let beat = 60.0 / spec.tempo_bpm;
    let mut t = 0.0;
    let mut hp_prev_x = 0.0;
    let mut hp_prev_y = 0.0;
    let hp = (-2.0 * PI * 6000.0 / sr).exp();
    while t < spec.duration_s {
        let start = (t * sr) as usize;
        // kick: decaying downward sweep
        let mut phase = 0.0;
        for i in 0..((0.25 * sr) as usize).min(n.saturating_sub(start)) {
            let tt = i as f64 / sr;
            let f = 50.0 + 70.0 * (-tt / 0.04).exp();
            phase += 2.0 * PI * f / sr;
            out[start + i] += spec.kick_gain * (-tt / 0.12).exp() * phase.sin();
        }
        // hat on the off-beat: high-passed noise burst
        let hat = ((t + beat / 2.0) * sr) as usize;
        for i in 0..((0.06 * sr) as usize).min(n.saturating_sub(hat)) {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y = hp * (hp_prev_y + x - hp_prev_x);
            hp_prev_x = x;
            hp_prev_y = y;
            out[hat + i] += spec.hat_gain * (-(i as f64 / sr) / 0.02).exp() * y;
        }
        t += beat;
    }
    AudioBuffer::new(out.into_iter().map(|v| v as f32).collect(), spec.sample_rate)
}
