//! Layer kernels with hand-written backward passes.

use rand::Rng;

use super::tensor::{gemm, Mat, Param, Scalar};

/// Spatial size of a single-channel or multi-channel feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const K: usize = 3;

/// 3x3 convolution with zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
    /// `[out_c, in_c * 9]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, in_c: usize, out_c: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = in_c * K * K;
        Self {
            in_c,
            out_c,
            stride: stride.max(1),
            weight: Param::he(format!("{name}.weight"), vec![out_c, fan_in], fan_in, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![out_c]),
        }
    }

    pub fn out_dims(&self, input: Dims) -> Dims {
        Dims {
            c: self.out_c,
            h: (input.h + 2 - K) / self.stride + 1,
            w: (input.w + 2 - K) / self.stride + 1,
        }
    }

    /// Patch matrix `[in_c * 9, ho * wo]`.
    fn im2col(&self, x: &[T], d: Dims, out: Dims) -> Vec<T> {
        let p = out.h * out.w;
        let mut cols = vec![T::ZERO; d.c * K * K * p];
        for c in 0..d.c {
            let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
            for ky in 0..K {
                for kx in 0..K {
                    let row = &mut cols[((c * K + ky) * K + kx) * p..][..p];
                    for oy in 0..out.h {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * d.w..][..d.w];
                        let dst = &mut row[oy * out.w..][..out.w];
                        for (ox, v) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix >= 0 && ix < d.w as isize {
                                *v = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], d: Dims, out: Dims, dx: &mut [T]) {
        let p = out.h * out.w;
        for c in 0..d.c {
            let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
            for ky in 0..K {
                for kx in 0..K {
                    let row = &cols[((c * K + ky) * K + kx) * p..][..p];
                    for oy in 0..out.h {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * d.w..][..d.w];
                        let src = &row[oy * out.w..][..out.w];
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix >= 0 && ix < d.w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Pre-activation output `[out_c, ho, wo]`.
    pub fn forward(&self, x: &[T], d: Dims) -> (Vec<T>, Dims) {
        assert_eq!(d.c, self.in_c, "conv input channels");
        let out = self.out_dims(d);
        let p = out.h * out.w;
        let cols = self.im2col(x, d, out);
        let mut y = vec![T::ZERO; self.out_c * p];
        for (o, row) in y.chunks_mut(p).enumerate() {
            row.fill(self.bias.value[o]);
        }
        gemm(
            Mat::new(&self.weight.value, self.out_c, self.in_c * K * K),
            Mat::new(&cols, self.in_c * K * K, p),
            T::ONE,
            &mut y,
        );
        (y, out)
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(
        &self,
        x: &[T],
        d: Dims,
        dy: &[T],
        gw: &mut [T],
        gb: &mut [T],
        want_dx: bool,
    ) -> Option<Vec<T>> {
        let out = self.out_dims(d);
        let p = out.h * out.w;
        let kk = self.in_c * K * K;
        let cols = self.im2col(x, d, out);
        gemm(Mat::new(dy, self.out_c, p), Mat::t(&cols, kk, p), T::ONE, gw);
        for (o, row) in dy.chunks(p).enumerate() {
            gb[o] += row.iter().copied().sum::<T>();
        }
        if !want_dx {
            return None;
        }
        let mut dcols = vec![T::ZERO; kk * p];
        gemm(
            Mat::t(&self.weight.value, self.out_c, kk),
            Mat::new(dy, self.out_c, p),
            T::ZERO,
            &mut dcols,
        );
        let mut dx = vec![T::ZERO; d.len()];
        self.col2im(&dcols, d, out, &mut dx);
        Some(dx)
    }
}

/// 2x2 max pooling with stride 2 (trailing odd row/column dropped).
/// Returns the pooled map and the flat argmax index of each output.
pub fn maxpool2<T: Scalar>(x: &[T], d: Dims) -> (Vec<T>, Vec<u32>, Dims) {
    let out = Dims {
        c: d.c,
        h: d.h / 2,
        w: d.w / 2,
    };
    let mut y = Vec::with_capacity(out.len());
    let mut idx = Vec::with_capacity(out.len());
    for c in 0..d.c {
        let base = c * d.h * d.w;
        for oy in 0..out.h {
            for ox in 0..out.w {
                let mut best = base + 2 * oy * d.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * d.w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                y.push(x[best]);
                idx.push(best as u32);
            }
        }
    }
    (y, idx, out)
}

pub fn maxpool2_backward<T: Scalar>(dy: &[T], idx: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::ZERO; input_len];
    for (&g, &i) in dy.iter().zip(idx) {
        dx[i as usize] += g;
    }
    dx
}

/// Fully connected layer, `y = W x + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: Param::he(format!("{name}.weight"), vec![out_dim, in_dim], in_dim, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![out_dim]),
        }
    }

    /// Row-major batch `[b, in] -> [b, out]`.
    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        assert_eq!(x.len(), batch * self.in_dim, "dense input size");
        let mut y = Vec::with_capacity(batch * self.out_dim);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(
            Mat::new(x, batch, self.in_dim),
            Mat::t(&self.weight.value, self.out_dim, self.in_dim),
            T::ONE,
            &mut y,
        );
        y
    }

    pub fn backward(&self, x: &[T], batch: usize, dy: &[T], gw: &mut [T], gb: &mut [T]) -> Vec<T> {
        gemm(
            Mat::t(dy, batch, self.out_dim),
            Mat::new(x, batch, self.in_dim),
            T::ONE,
            gw,
        );
        for row in dy.chunks(self.out_dim) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = vec![T::ZERO; batch * self.in_dim];
        gemm(
            Mat::new(dy, batch, self.out_dim),
            Mat::new(&self.weight.value, self.out_dim, self.in_dim),
            T::ZERO,
            &mut dx,
        );
        dx
    }
}

/// `y / ||y||`, guarded against the zero vector.
pub fn l2_normalize<T: Scalar>(z: &[T]) -> (Vec<T>, T) {
    let norm = z.iter().map(|&v| v * v).sum::<T>().sqrt();
    let denom = if norm > T::from_f64(1e-12) { norm } else { T::from_f64(1e-12) };
    (z.iter().map(|&v| v / denom).collect(), denom)
}

pub fn l2_normalize_backward<T: Scalar>(y: &[T], norm: T, dy: &[T]) -> Vec<T> {
    let dot: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    y.iter().zip(dy).map(|(&yi, &gi)| (gi - yi * dot) / norm).collect()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}
