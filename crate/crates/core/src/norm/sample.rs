//! Per-sample normalizations. No running statistics, so training and
//! inference are the same computation.

use alloc::vec;
use alloc::vec::Vec;

use super::{apply_groups, check_finite, group_backward, group_moments, ForwardCache, NormKind};
use crate::error::{Error, Result};
use crate::numeric::{Batch, ChannelVector};

fn per_sample(batch: &Batch, kind: NormKind, gamma: &ChannelVector, beta: &ChannelVector, eps: f64) -> Result<(Batch, ForwardCache)> {
    if !(eps > 0.0) {
        return Err(Error::BadEpsilon(eps));
    }
    check_finite(batch)?;
    let (n, c, _, _) = batch.shape();
    let groups = if kind == NormKind::Layer { n } else { n * c };
    let (mean, var, _) = group_moments(batch, &kind, &[], groups);
    let cache = ForwardCache {
        kind,
        shape: batch.shape(),
        x_hat: Vec::new(),
        mean,
        var,
        counts: vec![n],
        contexts: Vec::new(),
        eps,
        lambda: vec![1.0],
        batch_stats: true,
    };
    apply_groups(batch, cache, gamma, beta)
}

/// Layer normalization: moments of each sample over `(C, H, W)`.
pub fn ln_forward(batch: &Batch, gamma: &ChannelVector, beta: &ChannelVector, eps: f64) -> Result<Batch> {
    ln_forward_cached(batch, gamma, beta, eps).map(|(b, _)| b)
}

pub fn ln_forward_cached(batch: &Batch, gamma: &ChannelVector, beta: &ChannelVector, eps: f64) -> Result<(Batch, ForwardCache)> {
    per_sample(batch, NormKind::Layer, gamma, beta, eps)
}

/// Instance normalization: moments of each `(sample, channel)` plane over
/// `(H, W)`. With `H = W = 1` every plane is a single value and the output
/// is `beta`.
pub fn in_forward(batch: &Batch, gamma: &ChannelVector, beta: &ChannelVector, eps: f64) -> Result<Batch> {
    in_forward_cached(batch, gamma, beta, eps).map(|(b, _)| b)
}

pub fn in_forward_cached(batch: &Batch, gamma: &ChannelVector, beta: &ChannelVector, eps: f64) -> Result<(Batch, ForwardCache)> {
    per_sample(batch, NormKind::Instance, gamma, beta, eps)
}

pub fn ln_backward(cache: &ForwardCache, grad_out: &Batch, gamma: &ChannelVector) -> Result<(Batch, ChannelVector, ChannelVector)> {
    group_backward(cache, grad_out, gamma)
}

pub fn in_backward(cache: &ForwardCache, grad_out: &Batch, gamma: &ChannelVector) -> Result<(Batch, ChannelVector, ChannelVector)> {
    group_backward(cache, grad_out, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::test_util::*;

    #[test]
    fn constant_samples_give_beta() {
        let b = Batch::new((2, 2, 1, 2), vec![3.0, 3.0, 3.0, 3.0, -1.0, -1.0, -1.0, -1.0]).unwrap();
        let beta = ChannelVector(vec![0.5, -0.25]);
        let out = ln_forward(&b, &ChannelVector::ones(2), &beta, 1e-5).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5, -0.25, -0.25, 0.5, 0.5, -0.25, -0.25]);
    }

    #[test]
    fn layer_norm_standardizes_each_sample() {
        let b = random_batch(1, (4, 3, 2, 2), 2.0);
        let out = ln_forward(&b, &ChannelVector::ones(3), &ChannelVector::zeros(3), 1e-5).unwrap();
        for n in 0..4 {
            let row = &out.data()[n * 12..(n + 1) * 12];
            let m = row.iter().sum::<f64>() / 12.0;
            let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 12.0;
            assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn layer_norm_matches_loop_oracle() {
        let b = random_batch(2, (3, 2, 2, 3), 1.5);
        let gamma = random_channels(1, 2, 1.0);
        let beta = random_channels(2, 2, 0.0);
        let eps = 1e-5;
        let out = ln_forward(&b, &gamma, &beta, eps).unwrap();
        let (n, c, h, w) = b.shape();
        for i in 0..n {
            let mut vals = Vec::new();
            for ch in 0..c {
                for p in 0..h * w {
                    vals.push(b.data()[(i * c + ch) * h * w + p]);
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            for ch in 0..c {
                for p in 0..h * w {
                    let idx = (i * c + ch) * h * w + p;
                    let e = gamma[ch] * (b.data()[idx] - m) / libm::sqrt(v + eps) + beta[ch];
                    assert!((out.data()[idx] - e).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn instance_norm_degenerate_vector_input() {
        let b = random_batch(3, (3, 2, 1, 1), 1.0);
        let beta = ChannelVector(vec![0.7, -0.3]);
        let out = in_forward(&b, &ChannelVector::ones(2), &beta, 1e-5).unwrap();
        for n in 0..3 {
            assert_eq!(&out.data()[n * 2..n * 2 + 2], &[0.7, -0.3]);
        }
    }

    #[test]
    fn instance_norm_planes() {
        let b = random_batch(4, (2, 2, 3, 3), 2.0);
        let out = in_forward(&b, &ChannelVector::ones(2), &ChannelVector::zeros(2), 1e-5).unwrap();
        let gamma = random_channels(5, 2, 1.0);
        let beta = random_channels(6, 2, 0.0);
        let shifted = in_forward(&b, &gamma, &beta, 1e-5).unwrap();
        for n in 0..2 {
            for c in 0..2 {
                let plane = out.plane_of(n, c);
                let m = plane.iter().sum::<f64>() / 9.0;
                let v = plane.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 9.0;
                assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-3);
                // plane-by-plane oracle
                let raw = b.plane_of(n, c);
                let rm = raw.iter().sum::<f64>() / 9.0;
                let rv = raw.iter().map(|x| (x - rm) * (x - rm)).sum::<f64>() / 9.0;
                for (o, x) in shifted.plane_of(n, c).iter().zip(raw) {
                    let e = gamma[c] * (x - rm) / libm::sqrt(rv + 1e-5) + beta[c];
                    assert!((o - e).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for trial in 0..10u64 {
            let shape = (2 + trial as usize % 2, 2, 2, 2);
            let b = random_batch(50 + trial, shape, 1.0);
            let g = random_batch(60 + trial, shape, 1.0);
            let gamma = random_channels(trial, 2, 1.0);
            let beta = random_channels(trial + 7, 2, 0.0);
            for layer in [true, false] {
                let fwd = |x: &[f64]| {
                    let probe = Batch::new(shape, x.to_vec()).unwrap();
                    if layer {
                        ln_forward_cached(&probe, &gamma, &beta, 1e-5).unwrap()
                    } else {
                        in_forward_cached(&probe, &gamma, &beta, 1e-5).unwrap()
                    }
                };
                let (_, cache) = fwd(b.data());
                let (gi, _, _) = if layer { ln_backward(&cache, &g, &gamma) } else { in_backward(&cache, &g, &gamma) }.unwrap();
                let num = numeric_grad(b.data(), 1e-3, |x| dot(fwd(x).0.data(), g.data()));
                assert!(max_rel_err(gi.data(), &num) <= 1e-4, "trial {trial} layer {layer}");
            }
        }
    }
}
