//! Normalization layers.
//!
//! Batch, supervised (per-context), layer and instance normalization are all
//! "standardize within a group, then apply a per-channel affine"; they differ
//! only in how elements are grouped and in the extra per-group scale that
//! supervised normalization applies (`1 / sqrt(lambda_k)`). They share one
//! forward/backward engine in this module. Mixture normalization weights
//! several standardizations per element and lives in [`mixture`].

mod batch;
pub mod mixture;
mod sample;
mod supervised;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use batch::{bn_backward, bn_eval, bn_forward};
pub use mixture::{mixture_backward, mixture_normalize, mn_forward, MixtureCache};
pub use sample::{in_backward, in_forward, in_forward_cached, ln_backward, ln_forward, ln_forward_cached};
pub use supervised::{sbn_backward, sbn_eval, sbn_forward, sbn_forward_eval_unknown, sbn_posteriors};

use crate::error::{shape_mismatch, Error, Result};
use crate::gmm::{GmmModel, VAR_FLOOR};
use crate::numeric::{Batch, ChannelVector};

pub const DEFAULT_EPS: f64 = 1e-5;
/// Retention factor of the running statistics: `r <- alpha * r + (1 - alpha) * batch`.
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Whether a forward pass uses (and updates) batch statistics or the frozen
/// running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Learnable affine parameters, hyperparameters and per-context running
/// statistics of one normalization layer. `K = 1` is plain batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    pub gamma: ChannelVector,
    pub beta: ChannelVector,
    pub eps: f64,
    pub momentum_alpha: f64,
    pub running_mean: Vec<ChannelVector>,
    pub running_var: Vec<ChannelVector>,
    /// Dataset-level context proportions, frozen at construction.
    pub lambda: Vec<f64>,
    pub batches_seen: u64,
}

impl NormState {
    /// Single-context state with `gamma = 1`, `beta = 0`, running mean 0 and
    /// running variance 1.
    pub fn new(channels: usize) -> Self {
        Self::build(channels, vec![1.0])
    }

    pub fn with_contexts(channels: usize, lambda: Vec<f64>) -> Result<Self> {
        let state = Self::build(channels, lambda);
        state.validate()?;
        Ok(state)
    }

    /// State for mixture normalization: one running-statistics slot per
    /// component, with the mixture weights as proportions.
    pub fn for_mixture(channels: usize, gmm: &GmmModel) -> Result<Self> {
        if gmm.dim() != channels {
            return Err(shape_mismatch(format!("mixture has dimension {}, layer {channels} channels", gmm.dim())));
        }
        Self::with_contexts(channels, gmm.weights.clone())
    }

    fn build(channels: usize, lambda: Vec<f64>) -> Self {
        let k = lambda.len();
        Self {
            gamma: ChannelVector::ones(channels),
            beta: ChannelVector::zeros(channels),
            eps: DEFAULT_EPS,
            momentum_alpha: DEFAULT_MOMENTUM,
            running_mean: vec![ChannelVector::zeros(channels); k],
            running_var: vec![ChannelVector::ones(channels); k],
            lambda,
            batches_seen: 0,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_momentum(mut self, alpha: f64) -> Self {
        self.momentum_alpha = alpha;
        self
    }

    pub fn k(&self) -> usize {
        self.lambda.len()
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let k = self.k();
        if k == 0 {
            return Err(Error::BadParameter("normalization state needs at least one context".into()));
        }
        if self.beta.len() != c
            || self.running_mean.len() != k
            || self.running_var.len() != k
            || self.running_mean.iter().chain(&self.running_var).any(|v| v.len() != c)
        {
            return Err(shape_mismatch("normalization state vectors disagree in length"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::BadEpsilon(self.eps));
        }
        if !(0.0..1.0).contains(&self.momentum_alpha) {
            return Err(Error::BadParameter(format!("momentum must be in [0, 1), got {}", self.momentum_alpha)));
        }
        let sum: f64 = self.lambda.iter().sum();
        if self.lambda.iter().any(|l| !(*l > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::BadParameter(format!("lambda must be positive and sum to 1, got {sum}")));
        }
        if self.running_var.iter().flat_map(|v| v.iter()).any(|v| !(*v >= 0.0)) {
            return Err(Error::BadParameter("running variance must be non-negative".into()));
        }
        Ok(())
    }

    /// Diagonal Gaussians from the running statistics with priors `lambda`,
    /// used to route samples whose context is unknown.
    pub fn context_gmm(&self) -> Result<GmmModel> {
        let vars = self.running_var.iter().map(|v| ChannelVector(v.iter().map(|x| x.max(VAR_FLOOR)).collect())).collect();
        GmmModel::new(self.lambda.clone(), self.running_mean.clone(), vars)
    }
}

/// Exponential update of context `k`'s running statistics:
/// `mean_k <- alpha * mean_k + (1 - alpha) * mean`, same for the variance.
pub fn update_running(state: &mut NormState, k: usize, mean: &ChannelVector, var: &ChannelVector) -> Result<()> {
    if k >= state.k() {
        return Err(Error::BadContext { index: k, k: state.k() });
    }
    if mean.len() != state.channels() || var.len() != state.channels() {
        return Err(shape_mismatch("running update with wrong channel count"));
    }
    let a = state.momentum_alpha;
    for (r, m) in state.running_mean[k].iter_mut().zip(mean.iter()) {
        *r = a * *r + (1.0 - a) * m;
    }
    for (r, v) in state.running_var[k].iter_mut().zip(var.iter()) {
        *r = a * *r + (1.0 - a) * v;
    }
    Ok(())
}

/// Which elements share a mean and variance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormKind {
    /// One group per channel (batch norm).
    Batch,
    /// One group per (context, channel).
    Supervised,
    /// One group per sample (layer norm).
    Layer,
    /// One group per (sample, channel) (instance norm).
    Instance,
}

/// What a backward pass needs from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub kind: NormKind,
    pub shape: (usize, usize, usize, usize),
    /// Standardized values before `gamma` and `beta` (including the context scale).
    pub x_hat: Vec<f64>,
    /// Per-group mean and variance used for the standardization.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Samples per context (`N_k`); a single entry `N` for unsupervised kinds.
    pub counts: Vec<usize>,
    /// Context index of every sample (supervised only, otherwise empty).
    pub contexts: Vec<usize>,
    pub eps: f64,
    pub lambda: Vec<f64>,
    /// Statistics came from the batch (so they depend on the input).
    pub batch_stats: bool,
}

impl ForwardCache {
    fn groups(&self) -> usize {
        let (n, c, _, _) = self.shape;
        match self.kind {
            NormKind::Batch => c,
            NormKind::Supervised => self.lambda.len() * c,
            NormKind::Layer => n,
            NormKind::Instance => n * c,
        }
    }

    fn group_of(&self, n: usize, ch: usize) -> usize {
        group_of(&self.kind, &self.contexts, self.shape.1, n, ch)
    }

    fn group_scale(&self, g: usize) -> f64 {
        match self.kind {
            NormKind::Supervised => 1.0 / libm::sqrt(self.lambda[g / self.shape.1]),
            _ => 1.0,
        }
    }
}

fn group_of(kind: &NormKind, contexts: &[usize], channels: usize, n: usize, ch: usize) -> usize {
    match kind {
        NormKind::Batch => ch,
        NormKind::Supervised => contexts[n] * channels + ch,
        NormKind::Layer => n,
        NormKind::Instance => n * channels + ch,
    }
}

fn check_finite(batch: &Batch) -> Result<()> {
    if batch.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("normalization input"));
    }
    Ok(())
}

/// Two-pass mean and biased variance of every group, plus element counts.
fn group_moments(batch: &Batch, kind: &NormKind, contexts: &[usize], groups: usize) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let (n, c, _, _) = batch.shape();
    let hw = batch.plane();
    let mut sum = vec![0.0; groups];
    let mut elems = vec![0usize; groups];
    for i in 0..n {
        for ch in 0..c {
            let g = group_of(kind, contexts, c, i, ch);
            sum[g] += batch.plane_of(i, ch).iter().sum::<f64>();
            elems[g] += hw;
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&elems).map(|(s, &e)| if e > 0 { s / e as f64 } else { 0.0 }).collect();
    let mut sq = vec![0.0; groups];
    for i in 0..n {
        for ch in 0..c {
            let g = group_of(kind, contexts, c, i, ch);
            let m = mean[g];
            sq[g] += batch.plane_of(i, ch).iter().map(|x| (x - m) * (x - m)).sum::<f64>();
        }
    }
    let var = sq.iter().zip(&elems).map(|(s, &e)| if e > 0 { s / e as f64 } else { 0.0 }).collect();
    (mean, var, elems)
}

/// Standardizes each element with its group's statistics, applies the group
/// scale, then `gamma` and `beta`.
fn apply_groups(batch: &Batch, cache_proto: ForwardCache, gamma: &ChannelVector, beta: &ChannelVector) -> Result<(Batch, ForwardCache)> {
    let mut cache = cache_proto;
    let (n, c, _, _) = batch.shape();
    if gamma.len() != c || beta.len() != c {
        return Err(shape_mismatch(format!("affine parameters have {} channels, batch {c}", gamma.len())));
    }
    let hw = batch.plane();
    let groups = cache.groups();
    let inv: Vec<f64> = (0..groups).map(|g| cache.group_scale(g) / libm::sqrt(cache.var[g] + cache.eps)).collect();
    let mut x_hat = Vec::with_capacity(batch.data().len());
    let mut out = Vec::with_capacity(batch.data().len());
    for i in 0..n {
        for ch in 0..c {
            let g = cache.group_of(i, ch);
            let (m, s) = (cache.mean[g], inv[g]);
            for &x in batch.plane_of(i, ch) {
                let z = (x - m) * s;
                x_hat.push(z);
                out.push(gamma[ch] * z + beta[ch]);
            }
        }
    }
    debug_assert_eq!(x_hat.len(), n * c * hw);
    cache.x_hat = x_hat;
    Ok((Batch::from_raw(batch.shape(), out)?, cache))
}

/// Gradient of a grouped standardization followed by the per-channel affine.
///
/// With `z = (x - mean_G) / s_G`, `y = gamma * a_G * z + beta` and
/// `h = dL/dy * gamma * a_G`, batch statistics give
/// `dL/dx = (h - mean_G(h) - z * mean_G(h * z)) / s_G`; frozen statistics give
/// `dL/dx = h / s_G`.
fn group_backward(cache: &ForwardCache, grad_out: &Batch, gamma: &ChannelVector) -> Result<(Batch, ChannelVector, ChannelVector)> {
    if grad_out.shape() != cache.shape {
        return Err(shape_mismatch(format!("gradient {:?} vs forward {:?}", grad_out.shape(), cache.shape)));
    }
    let (n, c, _, _) = cache.shape;
    if gamma.len() != c {
        return Err(shape_mismatch("gamma channel count"));
    }
    let hw = grad_out.plane();
    let groups = cache.groups();
    let scale: Vec<f64> = (0..groups).map(|g| cache.group_scale(g)).collect();
    let inv_std: Vec<f64> = (0..groups).map(|g| 1.0 / libm::sqrt(cache.var[g] + cache.eps)).collect();

    let mut grad_gamma = ChannelVector::zeros(c);
    let mut grad_beta = ChannelVector::zeros(c);
    let mut sum_h = vec![0.0; groups];
    let mut sum_hz = vec![0.0; groups];
    let mut elems = vec![0usize; groups];
    let g_data = grad_out.data();
    for i in 0..n {
        for ch in 0..c {
            let g = cache.group_of(i, ch);
            let start = (i * c + ch) * hw;
            for p in start..start + hw {
                let (dy, xh) = (g_data[p], cache.x_hat[p]);
                grad_beta[ch] += dy;
                grad_gamma[ch] += dy * xh;
                let h = dy * gamma[ch] * scale[g];
                sum_h[g] += h;
                sum_hz[g] += h * xh / scale[g];
            }
            elems[g] += hw;
        }
    }

    let mut grad_in = Vec::with_capacity(g_data.len());
    for i in 0..n {
        for ch in 0..c {
            let g = cache.group_of(i, ch);
            let start = (i * c + ch) * hw;
            let m = elems[g] as f64;
            for p in start..start + hw {
                let h = g_data[p] * gamma[ch] * scale[g];
                let dx = if cache.batch_stats {
                    let z = cache.x_hat[p] / scale[g];
                    (h - sum_h[g] / m - z * sum_hz[g] / m) * inv_std[g]
                } else {
                    h * inv_std[g]
                };
                grad_in.push(dx);
            }
        }
    }
    Ok((Batch::from_raw(cache.shape, grad_in)?, grad_gamma, grad_beta))
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use crate::rng;

    pub fn random_batch(seed: u64, shape: (usize, usize, usize, usize), spread: f64) -> Batch {
        let mut r = rng::seeded(seed, 77);
        let len = shape.0 * shape.1 * shape.2 * shape.3;
        Batch::new(shape, (0..len).map(|_| spread * rng::standard_normal(&mut r) + 0.5).collect()).unwrap()
    }

    pub fn random_channels(seed: u64, c: usize, offset: f64) -> ChannelVector {
        let mut r = rng::seeded(seed, 78);
        ChannelVector((0..c).map(|_| offset + 0.5 * rng::standard_normal(&mut r)).collect())
    }

    /// Central-difference gradient of `f` at `x`.
    pub fn numeric_grad(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                probe[i] = x[i] + step;
                let up = f(&probe);
                probe[i] = x[i] - step;
                let down = f(&probe);
                probe[i] = x[i];
                (up - down) / (2.0 * step)
            })
            .collect()
    }

    pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6)).fold(0.0, f64::max)
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}
