//! Finite-difference verification of the hand-written backward passes.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::classifier::{bce_loss, Classifier};
use super::embedder::Embedder;
use super::tensor::Parameterized;
use super::triplet::{squared_distance, triplet_loss};

pub const FD_STEP: f64 = 1e-4;

/// Floor on the denominator of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait GradCheck {
    fn n_params(&self) -> usize;
    fn get(&self, i: usize) -> f64;
    fn set(&mut self, i: usize, v: f64);
    fn loss(&self) -> f64;
    fn gradient(&self) -> Vec<f64>;

    /// Whether a finite difference at this point would straddle a kink.
    fn near_kink(&self) -> bool {
        false
    }
}

/// Largest relative error between analytic and central-difference
/// gradients over `n_probe` randomly chosen parameters.
pub fn grad_check<G: GradCheck>(model: &mut G, n_probe: usize, seed: u64) -> f64 {
    let analytic = model.gradient();
    let n = model.n_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in sample(&mut rng, n, n_probe.min(n)) {
        let orig = model.get(i);
        model.set(i, orig + FD_STEP);
        let kink_plus = model.near_kink();
        let plus = model.loss();
        model.set(i, orig - FD_STEP);
        let kink_minus = model.near_kink();
        let minus = model.loss();
        model.set(i, orig);
        if kink_plus || kink_minus {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(err);
    }
    worst
}

fn locate<M: Parameterized<f64>>(model: &M, mut i: usize) -> (usize, usize) {
    for (k, p) in model.params().iter().enumerate() {
        if i < p.len() {
            return (k, i);
        }
        i -= p.len();
    }
    panic!("parameter index out of range");
}

fn get_flat<M: Parameterized<f64>>(model: &M, i: usize) -> f64 {
    let (k, j) = locate(model, i);
    model.params()[k].value[j]
}

fn set_flat<M: Parameterized<f64>>(model: &mut M, i: usize, v: f64) {
    let (k, j) = locate(model, i);
    model.params_mut()[k].value[j] = v;
}

/// Classifier (dense + ReLU layers + sigmoid) under mean BCE.
pub struct ClassifierProbe {
    pub model: Classifier<f64>,
    pub inputs: Vec<f64>,
    pub labels: Vec<f64>,
}

impl GradCheck for ClassifierProbe {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }
    fn get(&self, i: usize) -> f64 {
        get_flat(&self.model, i)
    }
    fn set(&mut self, i: usize, v: f64) {
        set_flat(&mut self.model, i, v)
    }
    fn loss(&self) -> f64 {
        let cache = self.model.forward_cached(&self.inputs, self.labels.len()).unwrap();
        cache.probs.iter().zip(&self.labels).map(|(&y, &t)| bce_loss(y, t)).sum::<f64>() / self.labels.len() as f64
    }
    fn gradient(&self) -> Vec<f64> {
        let cache = self.model.forward_cached(&self.inputs, self.labels.len()).unwrap();
        self.model.backward(&cache, &self.labels).concat()
    }
}

/// Embedder (conv blocks, pooling, head, normalisation) under a fixed
/// linear read-out `<w, embed(x)>`.
pub struct EmbedderProbe {
    pub model: Embedder<f64>,
    pub input: Vec<f64>,
    pub readout: Vec<f64>,
}

impl GradCheck for EmbedderProbe {
    fn n_params(&self) -> usize {
        self.model.n_params()
    }
    fn get(&self, i: usize) -> f64 {
        get_flat(&self.model, i)
    }
    fn set(&mut self, i: usize, v: f64) {
        set_flat(&mut self.model, i, v)
    }
    fn loss(&self) -> f64 {
        let e = self.model.forward(&self.input).unwrap();
        e.iter().zip(&self.readout).map(|(a, b)| a * b).sum()
    }
    fn gradient(&self) -> Vec<f64> {
        let cache = self.model.forward_cached(&self.input).unwrap();
        self.model.backward(&cache, &self.readout).concat()
    }
}

/// Triplet hinge as a function of the anchor.
pub struct TripletProbe {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub margin: f64,
}

/// Points closer than this to the hinge are skipped.
pub const KINK_TOLERANCE: f64 = 1e-3;

impl TripletProbe {
    fn slack(&self) -> f64 {
        squared_distance(&self.anchor, &self.positive) - squared_distance(&self.anchor, &self.negative) + self.margin
    }
}

impl GradCheck for TripletProbe {
    fn n_params(&self) -> usize {
        self.anchor.len()
    }
    fn get(&self, i: usize) -> f64 {
        self.anchor[i]
    }
    fn set(&mut self, i: usize, v: f64) {
        self.anchor[i] = v;
    }
    fn loss(&self) -> f64 {
        triplet_loss(&self.anchor, &self.positive, &self.negative, self.margin)
    }
    fn gradient(&self) -> Vec<f64> {
        if self.slack() <= 0.0 {
            return vec![0.0; self.anchor.len()];
        }
        self.negative.iter().zip(&self.positive).map(|(n, p)| 2.0 * (n - p)).collect()
    }
    fn near_kink(&self) -> bool {
        self.slack().abs() < KINK_TOLERANCE
    }
}
