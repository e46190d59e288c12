//! Independent oracles shared by unit tests.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::AudioBuffer;

pub fn sine(freq: f64, duration_s: f64, sr: u32, amp: f64) -> AudioBuffer {
    let n = (duration_s * sr as f64).round() as usize;
    AudioBuffer::from_fn(n, sr, |t| amp * (2.0 * std::f64::consts::PI * freq * t).sin())
}

/// Frequency of the largest magnitude bin (Hann window, 8x zero padding,
/// parabolic refinement).
pub fn dominant_frequency(buffer: &AudioBuffer) -> f64 {
    let x = buffer.samples();
    let n = x.len();
    let nfft = (n * 8).next_power_of_two();
    let mut data: Vec<Complex<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
            Complex::new(s as f64 * w, 0.0)
        })
        .collect();
    data.resize(nfft, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut data);
    let mags: Vec<f64> = data[..nfft / 2].iter().map(|c| c.norm()).collect();
    let k = mags
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    let (a, b, c) = (mags[k - 1], mags[k], mags[(k + 1).min(mags.len() - 1)]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    (k as f64 + shift) * buffer.sample_rate() as f64 / nfft as f64
}

pub fn cents(f: f64, reference: f64) -> f64 {
    1200.0 * (f / reference).log2()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

pub fn correlation(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len().min(b.len());
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x, y) = (a[i] as f64, b[i] as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa * bb).sqrt()
}
