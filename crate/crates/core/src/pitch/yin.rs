//! YIN difference function and cumulative-mean normalization.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::PitchParams;

/// Resolution at which candidate `d'` values are ranked. Sub-multiples of a
/// clean period otherwise win on rounding noise.
pub const CMND_RESOLUTION: f64 = 1e-4;

/// A period candidate: a local minimum of the normalized difference function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YinCandidate {
    /// Period in (fractional) samples.
    pub lag: f64,
    /// Normalized difference at the refined minimum.
    pub cmnd: f64,
}

impl YinCandidate {
    pub fn frequency(&self, sample_rate: u32) -> f64 {
        sample_rate as f64 / self.lag
    }
}

/// Frame analyzer with cached FFT plans.
pub struct YinAnalyzer {
    frame_size: usize,
    tau_min: usize,
    tau_max: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    fft_len: usize,
}

impl YinAnalyzer {
    pub fn new(params: &PitchParams, sample_rate: u32) -> Self {
        let sr = sample_rate as f64;
        let tau_min = ((sr / params.fmax).floor() as usize).max(1);
        let tau_max = ((sr / params.fmin).ceil() as usize).min(params.frame_size / 2);
        let fft_len = params.frame_size.next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            frame_size: params.frame_size,
            tau_min,
            tau_max,
            fft: planner.plan_fft_forward(fft_len),
            ifft: planner.plan_fft_inverse(fft_len),
            fft_len,
        }
    }

    pub fn lag_range(&self) -> (usize, usize) {
        (self.tau_min, self.tau_max)
    }

    /// Integration window length.
    fn window(&self) -> usize {
        self.frame_size - self.tau_max
    }

    /// Difference function `d(tau)` for `tau` in `0..=tau_max`.
    pub fn difference(&self, frame: &[f64]) -> Vec<f64> {
        assert_eq!(frame.len(), self.frame_size, "frame length mismatch");
        let w = self.window();
        let l = self.fft_len;
        let mut a: Vec<Complex<f64>> = (0..l)
            .map(|i| Complex::new(if i < w { frame[i] } else { 0.0 }, 0.0))
            .collect();
        let mut b: Vec<Complex<f64>> = (0..l)
            .map(|i| Complex::new(if i < frame.len() { frame[i] } else { 0.0 }, 0.0))
            .collect();
        self.fft.process(&mut a);
        self.fft.process(&mut b);
        for (x, y) in a.iter_mut().zip(&b) {
            *x = x.conj() * y;
        }
        self.ifft.process(&mut a);
        let scale = 1.0 / l as f64;

        let mut prefix = Vec::with_capacity(frame.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &x in frame {
            acc += x * x;
            prefix.push(acc);
        }
        let energy = |start: usize| prefix[start + w] - prefix[start];
        let e0 = energy(0);
        (0..=self.tau_max)
            .map(|tau| {
                if tau == 0 {
                    0.0
                } else {
                    (e0 + energy(tau) - 2.0 * a[tau].re * scale).max(0.0)
                }
            })
            .collect()
    }

    /// Cumulative-mean-normalized difference, `d'(0) = 1`.
    pub fn cmnd(&self, frame: &[f64]) -> Vec<f64> {
        normalize(&self.difference(frame))
    }

    /// Every local minimum of `d'` in the admissible lag range, refined by
    /// parabolic interpolation and sorted by ascending `d'` (at
    /// [`CMND_RESOLUTION`]).
    pub fn candidates(&self, frame: &[f64]) -> Vec<YinCandidate> {
        let mut out = self.candidates_by_lag(frame);
        // values closer than the resolution count as ties and go to the shorter lag
        let key = |c: &YinCandidate| (c.cmnd / CMND_RESOLUTION).round() as i64;
        out.sort_by(|a, b| key(a).cmp(&key(b)).then(a.lag.total_cmp(&b.lag)));
        out
    }

    /// Same as [`Self::candidates`] but in ascending lag order.
    ///
    /// The lag offset comes from the parabola through the raw difference
    /// function, which is unbiased for sinusoids; `d'` is evaluated on its
    /// own parabola at that offset.
    pub fn candidates_by_lag(&self, frame: &[f64]) -> Vec<YinCandidate> {
        if frame.iter().all(|&x| x == 0.0) {
            return Vec::new();
        }
        let d = self.difference(frame);
        let c = normalize(&d);
        let mut out = Vec::new();
        for tau in self.tau_min.max(1)..self.tau_max {
            let (a, b, n) = (c[tau - 1], c[tau], c[tau + 1]);
            if !(b < a && b <= n) {
                continue;
            }
            let shift = parabola_vertex(d[tau - 1], d[tau], d[tau + 1])
                .or_else(|| parabola_vertex(a, b, n))
                .unwrap_or(0.0);
            let value = b + 0.5 * (n - a) * shift + 0.5 * (a - 2.0 * b + n) * shift * shift;
            out.push(YinCandidate {
                lag: tau as f64 + shift,
                cmnd: value.max(0.0),
            });
        }
        out
    }
}

fn normalize(d: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(d.len());
    out.push(1.0);
    let mut running = 0.0;
    for (tau, &v) in d.iter().enumerate().skip(1) {
        running += v;
        out.push(if running > 0.0 {
            v * tau as f64 / running
        } else {
            1.0
        });
    }
    out
}

/// Offset of the extremum of the parabola through `(-1, a), (0, b), (1, n)`,
/// if it is a minimum within half a sample.
fn parabola_vertex(a: f64, b: f64, n: f64) -> Option<f64> {
    let denom = a - 2.0 * b + n;
    (denom > 0.0).then(|| (0.5 * (a - n) / denom).clamp(-0.5, 0.5))
}

/// One-shot YIN analysis of a single frame.
pub fn yin_frame(frame: &[f32], params: &PitchParams, sample_rate: u32) -> Vec<YinCandidate> {
    let analyzer = YinAnalyzer::new(params, sample_rate);
    let x: Vec<f64> = frame.iter().map(|&v| v as f64).collect();
    analyzer.candidates(&x)
}
