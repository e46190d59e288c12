//! Fully connected binary classifier on embeddings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{sigmoid, Dense};
use super::tensor::{zero_grads, Grads, Param, Parameterized, Scalar};
use crate::error::{Error, Result};

/// Probability clamp used by the loss and by reported outputs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs between validation checks.
    pub eval_every: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            input_dim: 512,
            hidden_dims: vec![256, 64],
            batch_size: 64,
            learning_rate: 1e-5,
            max_epochs: 3000,
            eval_every: 10,
            patience: 10,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidParam("layer widths must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidParam("batch_size and eval_every must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidParam("learning rate must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-batch activations kept for backward.
pub struct ClassifierCache<T> {
    batch: usize,
    /// Input of each layer (post-ReLU for hidden layers).
    inputs: Vec<Vec<T>>,
    /// Sigmoid outputs, one per row.
    pub probs: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    pub config: ClassifierConfig,
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Classifier<T> {
    pub fn new(config: ClassifierConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut dims = vec![config.input_dim];
        dims.extend(&config.hidden_dims);
        dims.push(1);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(&format!("fc{i}"), w[0], w[1], &mut rng))
            .collect();
        Ok(Self { config, layers })
    }

    pub fn forward_cached(&self, x: &[T], batch: usize) -> Result<ClassifierCache<T>> {
        if x.len() != batch * self.config.input_dim {
            return Err(Error::Shape {
                expected: vec![batch, self.config.input_dim],
                actual: vec![x.len()],
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&cur, batch);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.relu());
            }
            inputs.push(std::mem::replace(&mut cur, y));
        }
        let probs = cur.into_iter().map(sigmoid).collect();
        Ok(ClassifierCache {
            batch,
            inputs,
            probs,
        })
    }

    /// Gradients of the mean binary cross-entropy over the batch.
    pub fn backward(&self, cache: &ClassifierCache<T>, labels: &[T]) -> Grads<T> {
        let mut grads = zero_grads(&self.params());
        let n = T::from_f64(cache.batch as f64);
        let (lo, hi) = (T::from_f64(PROB_EPS), T::from_f64(1.0 - PROB_EPS));
        // d(BCE)/d(logit) = y - t where the clamp is inactive
        let mut d: Vec<T> = cache
            .probs
            .iter()
            .zip(labels)
            .map(|(&y, &t)| if y < lo || y > hi { T::ZERO } else { (y - t) / n })
            .collect();
        for i in (0..self.layers.len()).rev() {
            let x = &cache.inputs[i];
            let (gw, gb) = grads[2 * i..2 * i + 2].split_at_mut(1);
            let mut dx = self.layers[i].backward(x, cache.batch, &d, &mut gw[0], &mut gb[0]);
            if i > 0 {
                // x is the ReLU output of the previous layer
                for (g, &v) in dx.iter_mut().zip(x) {
                    if v <= T::ZERO {
                        *g = T::ZERO;
                    }
                }
            }
            d = dx;
        }
        grads
    }

    /// Likelihood per row, clamped strictly inside (0, 1).
    pub fn predict(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        let (lo, hi) = (T::from_f64(PROB_EPS), T::from_f64(1.0 - PROB_EPS));
        Ok(self
            .forward_cached(x, batch)?
            .probs
            .into_iter()
            .map(|p| if p < lo { lo } else if p > hi { hi } else { p })
            .collect())
    }
}

impl<T: Scalar> Parameterized<T> for Classifier<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

/// Likelihood that an embedding comes from a retuned segment.
pub fn classify(model: &Classifier<f32>, f: &[f32]) -> Result<f32> {
    Ok(model.predict(f, 1)?[0])
}

pub fn bce_loss(y: f64, t: f64) -> f64 {
    let y = y.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -t * y.ln() - (1.0 - t) * (1.0 - y).ln()
}

/// `dL/dy` of [`bce_loss`] (zero where the clamp is active).
pub fn bce_grad(y: f64, t: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&y) {
        return 0.0;
    }
    -t / y + (1.0 - t) / (1.0 - y)
}
