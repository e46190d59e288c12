//! Pitch-correction simulator: PYIN contour, chromatic nearest-note
//! quantization and TD-PSOLA resynthesis, plus the vocal/accompaniment remix.

use crate::audio::{zero_pad_pair, AudioBuffer};
use crate::error::{Error, Result};
use crate::pitch::{PitchParams, PitchTrack, PyinTracker};

/// Spacing of pitch marks in unvoiced regions (10 ms at 44.1 kHz).
pub const UNVOICED_MARK_SECONDS: f64 = 0.01;

/// Largest correction applied to a single frame, in semitones.
pub const MAX_SHIFT_SEMITONES: f64 = 6.0;

/// Maps a frequency to the closest MIDI note (ties round up) and that
/// note's equal-tempered frequency.
pub fn nearest_midi(f0: f64) -> Result<(i32, f64)> {
    if !(f0 > 0.0) || !f0.is_finite() {
        return Err(Error::Domain(format!(
            "frequency must be positive and finite, got {f0}"
        )));
    }
    let midi = (69.0 + 12.0 * (f0 / 440.0).log2() + 0.5).floor() as i32;
    Ok((midi, midi_to_hz(midi)))
}

pub fn midi_to_hz(midi: i32) -> f64 {
    440.0 * 2f64.powf((midi - 69) as f64 / 12.0)
}

/// Distance to the closest equal-tempered pitch, in cents (`[-50, 50]`).
pub fn cents_off_grid(f0: f64) -> f64 {
    let semis = 12.0 * (f0 / 440.0).log2();
    100.0 * (semis - semis.round())
}

/// Per-frame quantization targets aligned with a [`PitchTrack`].
#[derive(Debug, Clone, PartialEq)]
pub struct RetuneTargets {
    pub hop: usize,
    /// Target frequency per frame; `0` for unvoiced frames.
    pub target_f0: Vec<f64>,
    /// `target / source` per frame; `1` for unvoiced frames.
    pub shift_ratio: Vec<f64>,
    /// Source frequency per frame; `0` for unvoiced frames.
    pub source_f0: Vec<f64>,
}

impl RetuneTargets {
    pub fn from_track(track: &PitchTrack) -> Self {
        let max_ratio = 2f64.powf(MAX_SHIFT_SEMITONES / 12.0);
        let mut target_f0 = Vec::with_capacity(track.len());
        let mut shift_ratio = Vec::with_capacity(track.len());
        for &f in &track.f0 {
            match nearest_midi(f) {
                Ok((_, target)) => {
                    target_f0.push(target);
                    shift_ratio.push((target / f).clamp(1.0 / max_ratio, max_ratio));
                }
                Err(_) => {
                    target_f0.push(0.0);
                    shift_ratio.push(1.0);
                }
            }
        }
        Self {
            hop: track.hop,
            target_f0,
            shift_ratio,
            source_f0: track.f0.clone(),
        }
    }

    /// Identity targets: every voiced frame keeps its pitch.
    pub fn identity(track: &PitchTrack) -> Self {
        Self {
            hop: track.hop,
            target_f0: track.f0.clone(),
            shift_ratio: vec![1.0; track.len()],
            source_f0: track.f0.clone(),
        }
    }

    fn len(&self) -> usize {
        self.shift_ratio.len()
    }

    /// Linear interpolation of a per-frame series between frame centers,
    /// ignoring unvoiced neighbours.
    fn interp(&self, series: &[f64], sample: f64) -> Option<f64> {
        if self.len() == 0 {
            return None;
        }
        let pos = (sample / self.hop as f64).max(0.0);
        let i = (pos.floor() as usize).min(self.len() - 1);
        let j = (i + 1).min(self.len() - 1);
        let frac = pos - i as f64;
        let voiced = |k: usize| self.source_f0[k] > 0.0;
        match (voiced(i), voiced(j)) {
            (true, true) => Some(series[i] * (1.0 - frac) + series[j] * frac),
            (true, false) => Some(series[i]),
            (false, true) => Some(series[j]),
            (false, false) => None,
        }
    }

    /// Source period in samples and shift ratio at a sample position, or
    /// `None` in unvoiced regions.
    fn local(&self, sample: f64, sample_rate: u32) -> Option<(f64, f64)> {
        let f0 = self.interp(&self.source_f0, sample)?;
        let ratio = self.interp(&self.shift_ratio, sample)?;
        Some((sample_rate as f64 / f0, ratio))
    }
}

/// Pitch marks, one per period in voiced regions.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMarks {
    pub positions: Vec<usize>,
    pub voiced: Vec<bool>,
}

impl EpochMarks {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn mean_spacing(&self, voiced_only: bool) -> Option<f64> {
        let gaps: Vec<f64> = self
            .positions
            .windows(2)
            .zip(self.voiced.windows(2))
            .filter(|(_, v)| !voiced_only || (v[0] && v[1]))
            .map(|(p, _)| (p[1] - p[0]) as f64)
            .collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }
}

fn argmax_in(x: &[f32], lo: usize, hi: usize) -> usize {
    (lo..hi)
        .max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a)))
        .unwrap_or(lo)
}

/// Places pitch marks on waveform maxima chained at the tracked period;
/// unvoiced stretches get uniform 10 ms marks.
pub fn mark_epochs(buffer: &AudioBuffer, track: &PitchTrack) -> EpochMarks {
    let x = buffer.samples();
    let n = x.len();
    let sr = buffer.sample_rate() as f64;
    let unvoiced_step = ((UNVOICED_MARK_SECONDS * sr).round() as usize).max(1);
    let mut marks = EpochMarks {
        positions: Vec::new(),
        voiced: Vec::new(),
    };
    if n == 0 {
        return marks;
    }
    let period_at = |sample: usize| -> Option<f64> {
        if track.is_empty() {
            return None;
        }
        let f = track.f0[track.frame_at(sample as f64)];
        (f > 0.0).then(|| sr / f)
    };
    let mut last: Option<(usize, Option<f64>)> = None;
    loop {
        let (pos, period) = match last {
            None => match period_at(0) {
                Some(p) => (argmax_in(x, 0, (p.ceil() as usize).min(n)), Some(p)),
                None => (0, None),
            },
            Some((prev, prev_period)) => {
                let probe = prev as f64 + prev_period.unwrap_or(unvoiced_step as f64);
                let probe_i = probe.round() as usize;
                if probe_i >= n {
                    break;
                }
                match period_at(probe_i) {
                    Some(p) => {
                        let reach = if prev_period.is_some() { 0.3 * p } else { 0.5 * p };
                        let min_gap = (0.5 * p).max(1.0);
                        let lo = (probe - reach).max(prev as f64 + min_gap).ceil() as usize;
                        let hi = ((probe + reach).floor() as usize + 1).min(n);
                        if lo >= hi {
                            (probe_i.max(prev + 1), Some(p))
                        } else {
                            (argmax_in(x, lo, hi), Some(p))
                        }
                    }
                    None => (probe_i.max(prev + 1), None),
                }
            }
        };
        if pos >= n {
            break;
        }
        marks.positions.push(pos);
        marks.voiced.push(period.is_some());
        last = Some((pos, period));
    }
    marks
}

/// Asymmetric Hann weight at offset `d` from a mark with the given half widths.
fn grain_weight(d: isize, left: usize, right: usize) -> f64 {
    let (w, span) = if d < 0 { (-d, left) } else { (d, right) };
    if span == 0 || w as usize >= span {
        return if d == 0 { 1.0 } else { 0.0 };
    }
    0.5 * (1.0 + (std::f64::consts::PI * w as f64 / span as f64).cos())
}

/// TD-PSOLA resynthesis at the target pitch.
///
/// Grains span from the previous to the next source mark (two periods,
/// Hann-tapered). In voiced runs, synthesis marks advance by the source
/// period divided by the shift ratio and each receives the nearest source
/// grain; the overlap-add is normalized by the summed window. Samples no
/// voiced grain reaches are copied from the input.
pub fn psola_shift(
    buffer: &AudioBuffer,
    marks: &EpochMarks,
    targets: &RetuneTargets,
) -> AudioBuffer {
    let x = buffer.samples();
    let n = x.len();
    let m = marks.len();
    if m == 0 || n == 0 {
        return buffer.clone();
    }
    let pos = &marks.positions;
    let extent = |k: usize| -> (usize, usize) {
        let left = if k > 0 { pos[k] - pos[k - 1] } else { 0 };
        let right = if k + 1 < m { pos[k + 1] - pos[k] } else { 0 };
        match (left, right) {
            (0, r) => (r, r),
            (l, 0) => (l, l),
            lr => lr,
        }
    };
    let mut acc = vec![0.0f64; n];
    let mut wsum = vec![0.0f64; n];
    let mut voiced_touch = vec![false; n];

    let mut add_grain = |k: usize, center: isize, voiced: bool, acc: &mut [f64], wsum: &mut [f64]| {
        let (left, right) = extent(k);
        let src = pos[k] as isize;
        for d in -(left as isize)..=(right as isize) {
            let (si, di) = (src + d, center + d);
            if si < 0 || si >= n as isize || di < 0 || di >= n as isize {
                continue;
            }
            let w = grain_weight(d, left, right);
            if w <= 0.0 {
                continue;
            }
            acc[di as usize] += w * x[si as usize] as f64;
            wsum[di as usize] += w;
            if voiced {
                voiced_touch[di as usize] = true;
            }
        }
    };

    let mut k = 0;
    while k < m {
        let run_start = k;
        while k < m && marks.voiced[k] == marks.voiced[run_start] {
            k += 1;
        }
        let run = run_start..k;
        if !marks.voiced[run_start] {
            for j in run {
                add_grain(j, pos[j] as isize, false, &mut acc, &mut wsum);
            }
            continue;
        }
        let (first, last) = (pos[run.start] as f64, pos[run.end - 1] as f64);
        let run_pos = &pos[run.clone()];
        let mut t = first;
        while t <= last {
            let idx = run_pos.partition_point(|&p| (p as f64) < t);
            let nearest = match idx {
                0 => 0,
                i if i >= run_pos.len() => run_pos.len() - 1,
                i => {
                    if t - run_pos[i - 1] as f64 <= run_pos[i] as f64 - t {
                        i - 1
                    } else {
                        i
                    }
                }
            };
            let src_k = run.start + nearest;
            add_grain(src_k, t.round() as isize, true, &mut acc, &mut wsum);
            // source spacing of the mark interval containing t
            let seg = run_pos
                .partition_point(|&p| p as f64 <= t)
                .saturating_sub(1)
                .min(run_pos.len().saturating_sub(2));
            let spacing = if run_pos.len() >= 2 {
                (run_pos[seg + 1] - run_pos[seg]) as f64
            } else {
                targets
                    .local(t, buffer.sample_rate())
                    .map_or(extent(src_k).1.max(1) as f64, |(period, _)| period)
            };
            let ratio = targets.local(t, buffer.sample_rate()).map_or(1.0, |(_, r)| r);
            let step = spacing / ratio;
            t += step.max(1.0);
        }
    }

    let out = (0..n)
        .map(|i| {
            if voiced_touch[i] && wsum[i] > 0.0 {
                (acc[i] / wsum[i]) as f32
            } else {
                x[i]
            }
        })
        .collect();
    buffer.with_samples(out)
}

/// Nearest-note pitch correction with instantaneous (per-frame) retuning.
pub struct AutoTuner {
    tracker: PyinTracker,
}

impl AutoTuner {
    pub fn new(params: PitchParams, sample_rate: u32) -> Result<Self> {
        Ok(Self {
            tracker: PyinTracker::new(params, sample_rate)?,
        })
    }

    pub fn tracker(&self) -> &PyinTracker {
        &self.tracker
    }

    pub fn process(&self, vocal: &AudioBuffer) -> Result<AudioBuffer> {
        Ok(self.process_with_track(vocal)?.0)
    }

    /// Also returns the source pitch track.
    pub fn process_with_track(&self, vocal: &AudioBuffer) -> Result<(AudioBuffer, PitchTrack)> {
        let track = self.tracker.track(vocal)?;
        let targets = RetuneTargets::from_track(&track);
        let marks = mark_epochs(vocal, &track);
        Ok((psola_shift(vocal, &marks, &targets), track))
    }
}

/// Retunes a mono vocal with the default pitch parameters.
pub fn autotune(vocal: &AudioBuffer) -> Result<AudioBuffer> {
    AutoTuner::new(PitchParams::default(), vocal.sample_rate())?.process(vocal)
}

/// Sums vocal and accompaniment (zero-padding the shorter) and rescales to
/// unit peak only if the sum clips.
pub fn remix(vocal: &AudioBuffer, accompaniment: &AudioBuffer) -> Result<AudioBuffer> {
    if vocal.sample_rate() != accompaniment.sample_rate() {
        return Err(Error::SampleRateMismatch(
            vocal.sample_rate(),
            accompaniment.sample_rate(),
        ));
    }
    let (v, a) = zero_pad_pair(vocal.samples(), accompaniment.samples());
    let sum = v.iter().zip(&a).map(|(x, y)| x + y).collect();
    Ok(vocal.with_samples(sum).normalize_if_clipping())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;
    use crate::pitch::pyin_track;
    use crate::test_support::{cents, correlation, median, sine};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn contour_tone(seconds: f64, contour: impl Fn(f64) -> f64) -> AudioBuffer {
        let sr = SAMPLE_RATE as f64;
        let mut phase = 0.0f64;
        AudioBuffer::from_fn((seconds * sr) as usize, SAMPLE_RATE, |t| {
            let f = contour(t);
            // a few harmonics so marks and grains see a voice-like waveform
            let s = 0.4 * phase.sin() + 0.15 * (2.0 * phase).sin() + 0.08 * (3.0 * phase).sin();
            phase += 2.0 * PI * f / sr;
            s
        })
    }

    #[test]
    fn nearest_midi_examples() {
        assert_eq!(nearest_midi(440.0).unwrap(), (69, 440.0));
        let (m, f) = nearest_midi(452.0).unwrap();
        assert_eq!((m, f), (69, 440.0));
        let (m, f) = nearest_midi(455.0).unwrap();
        assert_eq!(m, 70);
        assert!((f - 466.1638).abs() < 1e-4);
        assert!(nearest_midi(0.0).is_err());
        assert!(nearest_midi(-3.0).is_err());
        // exact quarter-tone above A4 rounds up
        let tie = 440.0 * 2f64.powf(0.5 / 12.0);
        assert_eq!(nearest_midi(tie).unwrap().0, 70);
    }

    proptest! {
        #[test]
        fn nearest_midi_is_a_fixed_point(f in 20.0f64..5000.0) {
            let (m, t) = nearest_midi(f).unwrap();
            prop_assert_eq!(nearest_midi(t).unwrap(), (m, t));
            prop_assert!((12.0 * (t / f).log2()).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn epochs_follow_period() {
        let p = PitchParams::default();
        for (freq, period) in [(220.0, 44_100.0 / 220.0), (440.0, 44_100.0 / 440.0)] {
            let buf = sine(freq, 1.0, SAMPLE_RATE, 0.5);
            let track = pyin_track(&buf, &p).unwrap();
            let marks = mark_epochs(&buf, &track);
            let mean = marks.mean_spacing(true).unwrap();
            assert!((mean - period).abs() < 1.0, "{freq}: {mean} vs {period}");
            assert!(marks.positions.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn silence_gets_uniform_marks() {
        let buf = AudioBuffer::silence(SAMPLE_RATE as usize, SAMPLE_RATE);
        let track = pyin_track(&buf, &PitchParams::default()).unwrap();
        let marks = mark_epochs(&buf, &track);
        assert!(marks.positions.windows(2).all(|w| w[1] - w[0] == 441));
        assert!(marks.voiced.iter().all(|v| !v));
    }

    #[test]
    fn mark_spacing_stays_in_bounds() {
        let p = PitchParams::default();
        let buf = contour_tone(2.0, |t| if t < 1.0 { 150.0 } else { 600.0 });
        let track = pyin_track(&buf, &p).unwrap();
        let marks = mark_epochs(&buf, &track);
        let sr = SAMPLE_RATE as f64;
        for w in marks.positions.windows(2) {
            let gap = (w[1] - w[0]) as f64;
            assert!(gap >= sr / p.fmax * 0.5 && gap <= sr / p.fmin * 2.0, "gap {gap}");
        }
    }

    #[test]
    fn retunes_220_5_to_a3() {
        let buf = contour_tone(2.0, |_| 220.5);
        let out = autotune(&buf).unwrap();
        let track = pyin_track(&out, &PitchParams::default()).unwrap();
        let med = median(track.voiced_f0().collect());
        assert!(cents(med, 220.0).abs() < 10.0, "median {med}");
    }

    #[test]
    fn on_pitch_input_is_nearly_unchanged() {
        let buf = contour_tone(2.0, |_| 440.0);
        let out = autotune(&buf).unwrap();
        assert!(correlation(buf.samples(), out.samples()) > 0.99);
        let track = pyin_track(&out, &PitchParams::default()).unwrap();
        let med = median(track.voiced_f0().collect());
        assert!(cents(med, 440.0).abs() < 5.0);
    }

    #[test]
    fn silence_passes_through_bit_exact() {
        let buf = AudioBuffer::silence(SAMPLE_RATE as usize, SAMPLE_RATE);
        assert_eq!(autotune(&buf).unwrap(), buf);
    }

    #[test]
    fn unit_ratio_reconstructs_voiced_regions() {
        let buf = contour_tone(1.5, |t| 200.0 * 2f64.powf(0.3 * (2.0 * PI * 5.0 * t).sin() / 12.0));
        let track = pyin_track(&buf, &PitchParams::default()).unwrap();
        let marks = mark_epochs(&buf, &track);
        let out = psola_shift(&buf, &marks, &RetuneTargets::identity(&track));
        let err: f64 = buf
            .samples()
            .iter()
            .zip(out.samples())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>();
        let rel = (err / buf.energy()).sqrt();
        assert!(rel < 1e-2, "relative rms error {rel}");
        assert_eq!(out.len(), buf.len());
    }

    #[test]
    fn empty_marks_copy_input() {
        let buf = sine(300.0, 0.1, SAMPLE_RATE, 0.5);
        let marks = EpochMarks {
            positions: vec![],
            voiced: vec![],
        };
        let track = pyin_track(&buf, &PitchParams::default()).unwrap();
        assert_eq!(psola_shift(&buf, &marks, &RetuneTargets::from_track(&track)), buf);
    }

    #[test]
    fn vibrato_collapses_to_the_note() {
        let buf = contour_tone(2.0, |t| 440.0 * 2f64.powf(50.0 / 1200.0 * (2.0 * PI * 5.0 * t).sin()));
        let out = autotune(&buf).unwrap();
        let track = pyin_track(&out, &PitchParams::default()).unwrap();
        let voiced: Vec<f64> = track.voiced_f0().collect();
        let ok = voiced.iter().filter(|&&f| cents(f, 440.0).abs() < 15.0).count();
        assert!(ok as f64 >= 0.9 * voiced.len() as f64, "{ok}/{}", voiced.len());
    }

    #[test]
    fn glide_lands_on_a4() {
        let buf = contour_tone(2.0, |t| 430.0 + 10.0 * t);
        let out = autotune(&buf).unwrap();
        let track = pyin_track(&out, &PitchParams::default()).unwrap();
        let voiced: Vec<f64> = track.voiced_f0().collect();
        let ok = voiced.iter().filter(|&&f| cents(f, 440.0).abs() < 15.0).count();
        assert!(ok as f64 >= 0.9 * voiced.len() as f64, "{ok}/{}", voiced.len());
    }

    #[test]
    fn retuning_is_idempotent() {
        let buf = contour_tone(2.0, |t| 300.0 * 2f64.powf((30.0 + 40.0 * (2.0 * PI * 4.0 * t).sin()) / 1200.0));
        let once = autotune(&buf).unwrap();
        let twice = autotune(&once).unwrap();
        let p = PitchParams::default();
        let (a, b) = (pyin_track(&once, &p).unwrap(), pyin_track(&twice, &p).unwrap());
        let diffs: Vec<f64> = a
            .f0
            .iter()
            .zip(&b.f0)
            .filter(|(x, y)| **x > 0.0 && **y > 0.0)
            .map(|(x, y)| cents(*x, *y).abs())
            .collect();
        assert!(median(diffs) < 10.0);
        assert!((once.len() as i64 - buf.len() as i64).abs() as f64 <= 2.0 * 44_100.0 / 65.0);
    }

    #[test]
    fn remix_cases() {
        let v = sine(440.0, 0.5, SAMPLE_RATE, 0.6);
        let silent = AudioBuffer::silence(v.len(), SAMPLE_RATE);
        assert_eq!(remix(&v, &silent).unwrap(), v);

        let mixed = remix(&v, &v).unwrap();
        assert!((mixed.peak() - 1.0).abs() < 1e-6);

        let short = sine(220.0, 0.25, SAMPLE_RATE, 0.2);
        let mixed = remix(&short, &silent).unwrap();
        assert_eq!(mixed.len(), silent.len());
        assert!(mixed.energy() > 0.0);

        let other_rate = AudioBuffer::silence(10, 48_000);
        assert!(matches!(remix(&v, &other_rate), Err(Error::SampleRateMismatch(..))));
    }
}
