use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_mismatch, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Adam with decoupled weight decay:
/// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`, where
/// the decay term only applies to blocks flagged in `decay`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub decay: Vec<bool>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, block_lens: &[usize], decay: Vec<bool>) -> Result<Self> {
        if decay.len() != block_lens.len() {
            return Err(shape_mismatch("one decay flag per parameter block"));
        }
        let ok = config.lr >= 0.0
            && (0.0..1.0).contains(&config.beta1)
            && (0.0..1.0).contains(&config.beta2)
            && config.eps > 0.0
            && config.weight_decay >= 0.0;
        if !ok {
            return Err(Error::BadParameter(format!("invalid optimizer settings {config:?}")));
        }
        let zeros = |_| block_lens.iter().map(|&n| alloc::vec![0.0; n]).collect::<Vec<_>>();
        Ok(Self { config, step: 0, m: zeros(()), v: zeros(()), decay })
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        let lens_match = params.len() == self.m.len()
            && grads.len() == self.m.len()
            && params.iter().zip(grads).zip(&self.m).all(|((p, g), m)| p.len() == m.len() && g.len() == m.len());
        if !lens_match {
            return Err(shape_mismatch("parameters, gradients and optimizer state disagree"));
        }
        self.step += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let wd = if self.decay[b] { weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * (m_hat / (libm::sqrt(v_hat) + eps) + wd * p[i]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn run(opt: &mut AdamW, params: &mut [Vec<f64>], grads: &[Vec<f64>]) {
        let mut views: Vec<&mut [f64]> = params.iter_mut().map(|p| p.as_mut_slice()).collect();
        opt.step(&mut views, grads).unwrap();
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg, &[3], vec![true]).unwrap();
        let mut p = vec![vec![1.0, -2.0, 0.5]];
        for _ in 0..10 {
            run(&mut opt, &mut p, &[vec![0.0; 3]]);
        }
        assert_eq!(p[0], vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamWConfig { lr: 0.01, weight_decay: 0.1, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg, &[3, 1], vec![true, false]).unwrap();
        let theta = vec![vec![1.0, -3.0, 0.25], vec![2.0]];
        let grads = vec![vec![0.5, -4.0, 1e-3], vec![-0.7]];
        let mut p = theta.clone();
        run(&mut opt, &mut p, &grads);
        for i in 0..3 {
            let g = grads[0][i];
            let expected = theta[0][i] - 0.01 * g / (g.abs() + 1e-8) - 0.01 * 0.1 * theta[0][i];
            assert!((p[0][i] - expected).abs() < 1e-15);
        }
        let expected = 2.0 - 0.01 * -0.7 / (0.7 + 1e-8);
        assert!((p[1][0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_by_lr_against_its_sign() {
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.0, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg, &[2], vec![true]).unwrap();
        let mut p = vec![vec![0.0, 0.0]];
        let mut last = p[0].clone();
        for _ in 0..500 {
            run(&mut opt, &mut p, &[vec![3.0, -0.2]]);
            let step: Vec<f64> = p[0].iter().zip(&last).map(|(a, b)| a - b).collect();
            last = p[0].clone();
            assert!((step[0] + 0.1).abs() < 1e-6 && (step[1] - 0.1).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut opt = AdamW::new(AdamWConfig::default(), &[2], vec![true]).unwrap();
        let mut p = vec![0.0; 3];
        let err = opt.step(&mut [p.as_mut_slice()], &[vec![0.0; 3]]).unwrap_err();
        assert_eq!(err.code(), "shape-mismatch");
        assert!(AdamW::new(AdamWConfig::default(), &[2], vec![]).is_err());
    }
}
