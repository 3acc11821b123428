//! Mixture normalization: every sample is standardized against each mixture
//! component and the results are blended by the sample's posterior,
//! `y = gamma * sum_k p(k|x) / sqrt(lambda_k) * (x - mu_k) / sqrt(var_k + eps) + beta`.
//!
//! In training the component moments are posterior-weighted moments of the
//! batch, normalized by each component's soft count `sum_n p(k|x_n)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{check_finite, update_running, NormState, Phase};
use crate::error::{shape_mismatch, Error, Result};
use crate::gmm::{gmm_posterior, GmmModel, Responsibilities};
use crate::numeric::{Batch, ChannelVector};

/// Components whose soft count in a batch falls below this are treated as
/// absent: no contribution and no running update.
const MIN_SOFT_COUNT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureCache {
    pub input: Batch,
    pub resp: Responsibilities,
    pub mean: Vec<ChannelVector>,
    pub var: Vec<ChannelVector>,
    pub soft_counts: Vec<f64>,
    pub active: Vec<bool>,
    pub eps: f64,
    pub lambda: Vec<f64>,
    pub batch_stats: bool,
}

/// Posteriors from `gmm` on each sample's channel vector, then
/// [`mixture_normalize`].
pub fn mn_forward(batch: &Batch, gmm: &GmmModel, state: &mut NormState, phase: Phase) -> Result<(Batch, MixtureCache)> {
    if gmm.k() != state.k() {
        return Err(Error::WrongArity { expected: state.k(), got: gmm.k() });
    }
    check_finite(batch)?;
    let resp = gmm_posterior(gmm, &batch.spatial_means())?;
    mixture_normalize(batch, &resp, state, phase)
}

/// Mixture normalization with the posteriors supplied by the caller.
pub fn mixture_normalize(batch: &Batch, resp: &Responsibilities, state: &mut NormState, phase: Phase) -> Result<(Batch, MixtureCache)> {
    let (n, c, _, _) = batch.shape();
    let k = state.k();
    if resp.rows() != n || resp.k() != k {
        return Err(shape_mismatch(format!("posteriors {}x{} for {n} samples and K={k}", resp.rows(), resp.k())));
    }
    if c != state.channels() {
        return Err(shape_mismatch("batch channels differ from the state"));
    }
    check_finite(batch)?;
    let hw = batch.plane() as f64;

    let mut soft = vec![0.0; k];
    for i in 0..n {
        for (s, r) in soft.iter_mut().zip(resp.row(i)) {
            *s += r;
        }
    }

    let (mean, var, active) = match phase {
        Phase::Eval => (state.running_mean.clone(), state.running_var.clone(), vec![true; k]),
        Phase::Train => {
            let active: Vec<bool> = soft.iter().map(|&s| s > MIN_SOFT_COUNT).collect();
            let mut mean = vec![ChannelVector::zeros(c); k];
            let mut var = vec![ChannelVector::zeros(c); k];
            for j in (0..k).filter(|&j| active[j]) {
                for i in 0..n {
                    let w = resp.row(i)[j] / soft[j];
                    for ch in 0..c {
                        mean[j][ch] += w * batch.plane_of(i, ch).iter().sum::<f64>() / hw;
                    }
                }
                for i in 0..n {
                    let w = resp.row(i)[j] / soft[j];
                    for ch in 0..c {
                        let m = mean[j][ch];
                        var[j][ch] += w * batch.plane_of(i, ch).iter().map(|x| (x - m) * (x - m)).sum::<f64>() / hw;
                    }
                }
            }
            (mean, var, active)
        }
    };

    let coef: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let a = 1.0 / libm::sqrt(state.lambda[j]);
            var[j].iter().map(|v| a / libm::sqrt(v + state.eps)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(batch.data().len());
    for i in 0..n {
        let r = resp.row(i);
        for ch in 0..c {
            for &x in batch.plane_of(i, ch) {
                let z: f64 = (0..k).filter(|&j| active[j]).map(|j| r[j] * (x - mean[j][ch]) * coef[j][ch]).sum();
                out.push(state.gamma[ch] * z + state.beta[ch]);
            }
        }
    }

    if phase == Phase::Train {
        for j in (0..k).filter(|&j| active[j]) {
            update_running(state, j, &mean[j], &var[j])?;
        }
        state.batches_seen += 1;
    }

    let cache = MixtureCache {
        input: batch.clone(),
        resp: resp.clone(),
        mean,
        var,
        soft_counts: soft,
        active,
        eps: state.eps,
        lambda: state.lambda.clone(),
        batch_stats: phase == Phase::Train,
    };
    Ok((Batch::from_raw(batch.shape(), out)?, cache))
}

/// Gradient of [`mixture_normalize`] with the posteriors held fixed.
///
/// Each component contributes a weighted batch-norm gradient: with sample
/// weights `w_n = p(k|x_n) / soft_k` spread over the sample's positions,
/// `dL/dx += (h - w * sum(h) - w * z * sum(h * z)) / s_k`.
pub fn mixture_backward(cache: &MixtureCache, grad_out: &Batch, gamma: &ChannelVector) -> Result<(Batch, ChannelVector, ChannelVector)> {
    let x = &cache.input;
    x.same_shape(grad_out, "mixture gradient")?;
    let (n, c, _, _) = x.shape();
    let hw = x.plane();
    let k = cache.lambda.len();
    let g = grad_out.data();

    let mut grad_gamma = ChannelVector::zeros(c);
    let mut grad_beta = ChannelVector::zeros(c);
    let mut grad_in = vec![0.0; g.len()];

    for j in (0..k).filter(|&j| cache.active[j]) {
        let a = 1.0 / libm::sqrt(cache.lambda[j]);
        let inv_std: Vec<f64> = cache.var[j].iter().map(|v| 1.0 / libm::sqrt(v + cache.eps)).collect();
        let mut sum_h = vec![0.0; c];
        let mut sum_hz = vec![0.0; c];
        for i in 0..n {
            let r = cache.resp.row(i)[j];
            for ch in 0..c {
                let start = (i * c + ch) * hw;
                for p in start..start + hw {
                    let z = (x.data()[p] - cache.mean[j][ch]) * inv_std[ch];
                    let h = g[p] * gamma[ch] * r * a;
                    grad_gamma[ch] += g[p] * r * a * z;
                    sum_h[ch] += h;
                    sum_hz[ch] += h * z;
                }
            }
        }
        for i in 0..n {
            let r = cache.resp.row(i)[j];
            let w = if cache.batch_stats { r / (cache.soft_counts[j] * hw as f64) } else { 0.0 };
            for ch in 0..c {
                let start = (i * c + ch) * hw;
                for p in start..start + hw {
                    let z = (x.data()[p] - cache.mean[j][ch]) * inv_std[ch];
                    let h = g[p] * gamma[ch] * r * a;
                    grad_in[p] += (h - w * sum_h[ch] - w * z * sum_hz[ch]) * inv_std[ch];
                }
            }
        }
    }
    for i in 0..n {
        for ch in 0..c {
            let start = (i * c + ch) * hw;
            grad_beta[ch] += g[start..start + hw].iter().sum::<f64>();
        }
    }
    Ok((Batch::from_raw(x.shape(), grad_in)?, grad_gamma, grad_beta))
}
