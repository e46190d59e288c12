//! Convolutional embedder: conv blocks, global average pooling, linear head
//! and L2 normalisation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{l2_normalize, l2_normalize_backward, maxpool2, maxpool2_backward, Conv2d, Dense, Dims};
use super::tensor::{zero_grads, Grads, Param, Parameterized, Scalar};
use crate::error::{Error, Result};
use crate::features::{MelSpectrogram, N_MELS, SEGMENT_FRAMES};

/// One conv block: 3x3 convolution, ReLU, 2x2 max pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub input_frames: usize,
    pub input_mels: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub embedding_dim: usize,
    pub l2_normalize: bool,
    pub margin: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        let block = |out_channels, stride| ConvBlock {
            out_channels,
            stride,
        };
        Self {
            input_frames: SEGMENT_FRAMES,
            input_mels: N_MELS,
            // stride 2 up front keeps the first block affordable on a CPU
            conv_blocks: vec![block(16, 2), block(32, 1), block(64, 1), block(128, 1)],
            embedding_dim: 512,
            l2_normalize: true,
            margin: 0.2,
            batch_size: 64,
            learning_rate: 1e-4,
            max_epochs: 60,
            patience: 10,
            seed: 0,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::InvalidParam("embedding_dim must be >= 2".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::InvalidParam("margin must be positive".into()));
        }
        if self.batch_size < 4 {
            return Err(Error::InvalidParam("batch_size must be >= 4".into()));
        }
        if self.conv_blocks.is_empty() || self.conv_blocks.iter().any(|b| b.out_channels == 0 || b.stride == 0) {
            return Err(Error::InvalidParam("conv blocks need channels and stride >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidParam("learning rate must be >= 0".into()));
        }
        let mut d = Dims {
            c: 1,
            h: self.input_frames,
            w: self.input_mels,
        };
        for b in &self.conv_blocks {
            d.h = (d.h - 1) / b.stride + 1;
            d.w = (d.w - 1) / b.stride + 1;
            d.h /= 2;
            d.w /= 2;
            if d.h == 0 || d.w == 0 {
                return Err(Error::InvalidParam(format!(
                    "input {}x{} too small for {} blocks",
                    self.input_frames,
                    self.input_mels,
                    self.conv_blocks.len()
                )));
            }
        }
        Ok(())
    }
}

/// Intermediate values kept from a forward pass for the backward pass.
pub struct EmbedCache<T> {
    /// Input of each conv block.
    inputs: Vec<(Vec<T>, Dims)>,
    /// Pool argmax per block, with the pre-pool map size.
    pool_idx: Vec<(Vec<u32>, usize)>,
    /// Pooled (post-ReLU) output per block; positive entries pass gradient.
    pooled: Vec<Vec<T>>,
    gap: Vec<T>,
    gap_dims: Dims,
    output: Vec<T>,
    norm: T,
}

impl<T> EmbedCache<T> {
    pub fn output(&self) -> &[T] {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedder<T> {
    pub config: EmbedderConfig,
    pub convs: Vec<Conv2d<T>>,
    pub head: Dense<T>,
}

impl<T: Scalar> Embedder<T> {
    pub fn new(config: EmbedderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut in_c = 1;
        let convs = config
            .conv_blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let conv = Conv2d::new(&format!("conv{i}"), in_c, b.out_channels, b.stride, &mut rng);
                in_c = b.out_channels;
                conv
            })
            .collect();
        let head = Dense::new("head", in_c, config.embedding_dim, &mut rng);
        Ok(Self { config, convs, head })
    }

    pub fn input_dims(&self) -> Dims {
        Dims {
            c: 1,
            h: self.config.input_frames,
            w: self.config.input_mels,
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        let d = self.input_dims();
        if len != d.len() {
            return Err(Error::Shape {
                expected: vec![d.h, d.w],
                actual: vec![len],
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &[T]) -> Result<EmbedCache<T>> {
        self.check_input(x.len())?;
        let mut d = self.input_dims();
        let mut cur = x.to_vec();
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut pool_idx = Vec::with_capacity(self.convs.len());
        let mut pooled = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (mut y, yd) = conv.forward(&cur, d);
            y.iter_mut().for_each(|v| *v = v.relu());
            let (p, idx, pd) = maxpool2(&y, yd);
            inputs.push((std::mem::take(&mut cur), d));
            pool_idx.push((idx, yd.len()));
            cur = p.clone();
            pooled.push(p);
            d = pd;
        }
        let area = T::from_f64((d.h * d.w) as f64);
        let gap: Vec<T> = cur
            .chunks(d.h * d.w)
            .map(|plane| plane.iter().copied().sum::<T>() / area)
            .collect();
        let z = self.head.forward(&gap, 1);
        let (output, norm) = if self.config.l2_normalize {
            l2_normalize(&z)
        } else {
            (z, T::ONE)
        };
        Ok(EmbedCache {
            inputs,
            pool_idx,
            pooled,
            gap,
            gap_dims: d,
            output,
            norm,
        })
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_cached(x)?.output)
    }

    /// Gradients of the parameters given `dL/d(embedding)`.
    pub fn backward(&self, cache: &EmbedCache<T>, d_out: &[T]) -> Grads<T> {
        let mut grads = zero_grads(&self.params());
        let n_conv = self.convs.len();
        let dz = if self.config.l2_normalize {
            l2_normalize_backward(&cache.output, cache.norm, d_out)
        } else {
            d_out.to_vec()
        };
        let (gw_head, rest) = grads[2 * n_conv..].split_at_mut(1);
        let dgap = self.head.backward(&cache.gap, 1, &dz, &mut gw_head[0], &mut rest[0]);
        let gd = cache.gap_dims;
        let area = T::from_f64((gd.h * gd.w) as f64);
        let mut dcur: Vec<T> = dgap
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / area, gd.h * gd.w))
            .collect();
        for i in (0..n_conv).rev() {
            // ReLU mask: only positive pooled outputs carry gradient
            for (g, &v) in dcur.iter_mut().zip(&cache.pooled[i]) {
                if v <= T::ZERO {
                    *g = T::ZERO;
                }
            }
            let (idx, pre_len) = &cache.pool_idx[i];
            let dy = maxpool2_backward(&dcur, idx, *pre_len);
            let (x, d) = &cache.inputs[i];
            let (gw, gb) = grads[2 * i..2 * i + 2].split_at_mut(1);
            match self.convs[i].backward(x, *d, &dy, &mut gw[0], &mut gb[0], i > 0) {
                Some(dx) => dcur = dx,
                None => break,
            }
        }
        grads
    }

    pub fn cast<U: Scalar>(&self) -> Embedder<U> {
        let conv = |c: &Conv2d<T>| Conv2d {
            in_c: c.in_c,
            out_c: c.out_c,
            stride: c.stride,
            weight: c.weight.cast(),
            bias: c.bias.cast(),
        };
        Embedder {
            config: self.config.clone(),
            convs: self.convs.iter().map(conv).collect(),
            head: Dense {
                in_dim: self.head.in_dim,
                out_dim: self.head.out_dim,
                weight: self.head.weight.cast(),
                bias: self.head.bias.cast(),
            },
        }
    }
}

impl<T: Scalar> Parameterized<T> for Embedder<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = self.convs.iter().flat_map(|c| [&c.weight, &c.bias]).collect();
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = self
            .convs
            .iter_mut()
            .flat_map(|c| [&mut c.weight, &mut c.bias])
            .collect();
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }
}

impl Embedder<f32> {
    /// Embeds one mel-spectrogram.
    pub fn embed(&self, mel: &MelSpectrogram) -> Result<Vec<f32>> {
        if mel.frames != self.config.input_frames || mel.n_mels != self.config.input_mels {
            return Err(Error::Shape {
                expected: vec![self.config.input_frames, self.config.input_mels],
                actual: vec![mel.frames, mel.n_mels],
            });
        }
        self.forward(&mel.values)
    }

    /// Embeds many inputs; results are in input order.
    pub fn embed_all(&self, mels: &[&MelSpectrogram]) -> Result<Vec<Vec<f32>>> {
        mels.par_iter().map(|m| self.embed(m)).collect()
    }
}

/// Free-function form of [`Embedder::embed`].
pub fn embed(model: &Embedder<f32>, mel: &MelSpectrogram) -> Result<Vec<f32>> {
    model.embed(mel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> EmbedderConfig {
        EmbedderConfig {
            input_frames: 20,
            input_mels: 12,
            conv_blocks: vec![
                ConvBlock {
                    out_channels: 3,
                    stride: 1,
                },
                ConvBlock {
                    out_channels: 4,
                    stride: 1,
                },
            ],
            embedding_dim: 6,
            ..Default::default()
        }
    }

    fn mel_like(len: usize, phase: f64) -> Vec<f32> {
        (0..len).map(|i| (0.5 + 0.5 * (i as f64 * 0.37 + phase).sin()) as f32).collect()
    }

    #[test]
    fn default_model_embeds_full_segment() {
        let model = Embedder::<f32>::new(EmbedderConfig::default()).unwrap();
        let x = mel_like(SEGMENT_FRAMES * N_MELS, 0.0);
        let e = model.forward(&x).unwrap();
        assert_eq!(e.len(), 512);
        let norm: f64 = e.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        assert_eq!(model.forward(&x).unwrap(), e);
        let nudged: Vec<f32> = x.iter().map(|v| v + 1e-6).collect();
        let e2 = model.forward(&nudged).unwrap();
        let dist: f64 = e.iter().zip(&e2).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 1e-3, "{dist}");
    }

    #[test]
    fn rejects_wrong_shape() {
        let model = Embedder::<f32>::new(small_config()).unwrap();
        assert!(matches!(model.forward(&[0.0; 10]), Err(Error::Shape { .. })));
        let mel = MelSpectrogram {
            frames: 3,
            n_mels: 12,
            values: vec![0.0; 36],
        };
        assert!(model.embed(&mel).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(Embedder::<f32>::new(EmbedderConfig {
            embedding_dim: 1,
            ..small_config()
        })
        .is_err());
        assert!(Embedder::<f32>::new(EmbedderConfig {
            input_frames: 3,
            ..small_config()
        })
        .is_err());
    }

    #[test]
    fn backward_shapes_align_with_params() {
        let model = Embedder::<f64>::new(small_config()).unwrap();
        let cfg = &model.config;
        let x: Vec<f64> = mel_like(cfg.input_frames * cfg.input_mels, 1.0).iter().map(|&v| v as f64).collect();
        let cache = model.forward_cached(&x).unwrap();
        let grads = model.backward(&cache, &[1.0; 6]);
        for (g, p) in grads.iter().zip(model.params()) {
            assert_eq!(g.len(), p.len(), "{}", p.name);
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Embedder::<f32>::new(small_config()).unwrap();
        let b = Embedder::<f32>::new(small_config()).unwrap();
        assert_eq!(a, b);
        let c = Embedder::<f32>::new(EmbedderConfig {
            seed: 9,
            ..small_config()
        })
        .unwrap();
        assert_ne!(a, c);
        assert_eq!(a.cast::<f64>().cast::<f32>(), a);
    }
}
