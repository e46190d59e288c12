//! Adam optimiser.

use super::tensor::{Grads, Param, Scalar};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update<T: Scalar>(&mut self, params: &mut [&mut Param<T>], grads: &Grads<T>) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.value.len() {
                let gi = g[i].to_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let step = self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                p.value[i] = T::from_f64(p.value[i].to_f64() - step);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_identity() {
        let mut p = Param::<f32> {
            name: "w".into(),
            shape: vec![3],
            value: vec![0.1, -0.7, 3.0],
        };
        let before = p.clone();
        let mut adam = Adam::new(0.0);
        for _ in 0..5 {
            adam.update(&mut [&mut p], &vec![vec![1.0, -2.0, 0.5]]);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Param::<f64> {
            name: "w".into(),
            shape: vec![2],
            value: vec![1.0, 1.0],
        };
        let mut adam = Adam::new(0.01);
        adam.update(&mut [&mut p], &vec![vec![5.0, -0.1]]);
        assert!((p.value[0] - 0.99).abs() < 1e-6);
        assert!((p.value[1] - 1.01).abs() < 1e-6);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Param::<f64> {
            name: "w".into(),
            shape: vec![1],
            value: vec![4.0],
        };
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let g = vec![vec![2.0 * (p.value[0] - 1.5)]];
            adam.update(&mut [&mut p], &g);
        }
        assert!((p.value[0] - 1.5).abs() < 1e-2);
    }
}
