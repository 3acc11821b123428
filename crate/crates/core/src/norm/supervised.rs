//! Supervised batch normalization: samples are grouped by a known context,
//! each group is standardized with its own statistics and scaled by
//! `1 / sqrt(lambda_k)`, where `lambda_k` is the dataset-level share of the
//! context. Running statistics are kept per context.

use alloc::format;
use alloc::vec::Vec;

use super::{apply_groups, check_finite, group_backward, group_moments, update_running, ForwardCache, NormKind, NormState, Phase};
use crate::context::ContextAssignment;
use crate::error::{shape_mismatch, Error, Result};
use crate::gmm::{gmm_posterior, Responsibilities};
use crate::numeric::{Batch, ChannelVector};

fn check_assignment(batch: &Batch, assignment: &ContextAssignment, state: &NormState) -> Result<()> {
    if assignment.k() != state.k() {
        return Err(Error::WrongArity { expected: state.k(), got: assignment.k() });
    }
    if assignment.len() != batch.samples() {
        return Err(shape_mismatch(format!("assignment covers {} samples, batch has {}", assignment.len(), batch.samples())));
    }
    if let Some(&index) = assignment.indices().iter().find(|&&i| i >= state.k()) {
        return Err(Error::BadContext { index, k: state.k() });
    }
    check_finite(batch)
}

fn proto(
    batch: &Batch,
    assignment: &ContextAssignment,
    state: &NormState,
    mean: Vec<f64>,
    var: Vec<f64>,
    batch_stats: bool,
) -> ForwardCache {
    ForwardCache {
        kind: NormKind::Supervised,
        shape: batch.shape(),
        x_hat: Vec::new(),
        mean,
        var,
        counts: assignment.counts(),
        contexts: assignment.indices().to_vec(),
        eps: state.eps,
        lambda: state.lambda.clone(),
        batch_stats,
    }
}

/// `Train`: for every context present in the batch, standardize its samples
/// with the group's moments, scale by `1 / sqrt(lambda_k)`, and update that
/// context's running statistics; absent contexts are left alone.
/// `Eval`: the same transform with each context's running statistics.
pub fn sbn_forward(batch: &Batch, assignment: &ContextAssignment, state: &mut NormState, phase: Phase) -> Result<(Batch, ForwardCache)> {
    if phase == Phase::Eval {
        return sbn_eval(batch, assignment, state);
    }
    check_assignment(batch, assignment, state)?;
    let c = batch.channels();
    let groups = state.k() * c;
    let (mean, var, elems) = group_moments(batch, &NormKind::Supervised, assignment.indices(), groups);
    let out = apply_groups(batch, proto(batch, assignment, state, mean, var, true), &state.gamma, &state.beta)?;
    for k in 0..state.k() {
        if elems[k * c] == 0 {
            continue;
        }
        let range = k * c..(k + 1) * c;
        update_running(state, k, &ChannelVector(out.1.mean[range.clone()].to_vec()), &ChannelVector(out.1.var[range].to_vec()))?;
    }
    state.batches_seen += 1;
    Ok(out)
}

/// Inference with known contexts.
pub fn sbn_eval(batch: &Batch, assignment: &ContextAssignment, state: &NormState) -> Result<(Batch, ForwardCache)> {
    check_assignment(batch, assignment, state)?;
    let mean = state.running_mean.iter().flat_map(|m| m.iter().copied()).collect();
    let var = state.running_var.iter().flat_map(|v| v.iter().copied()).collect();
    apply_groups(batch, proto(batch, assignment, state, mean, var, false), &state.gamma, &state.beta)
}

/// Inference with unknown contexts: every sample gets the posterior-weighted
/// sum of its standardizations under each context's running statistics.
pub fn sbn_forward_eval_unknown(batch: &Batch, state: &NormState, posteriors: &Responsibilities) -> Result<Batch> {
    check_finite(batch)?;
    let (n, c, _, _) = batch.shape();
    if posteriors.rows() != n || posteriors.k() != state.k() {
        return Err(shape_mismatch(format!("posteriors {}x{} for {n} samples and K={}", posteriors.rows(), posteriors.k(), state.k())));
    }
    if c != state.channels() {
        return Err(shape_mismatch("batch channels differ from the state"));
    }
    posteriors.validate(1e-6)?;
    let k = state.k();
    // coef[k][c] = 1 / (sqrt(lambda_k) * sqrt(var_kc + eps))
    let coef: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let a = 1.0 / libm::sqrt(state.lambda[j]);
            state.running_var[j].iter().map(|v| a / libm::sqrt(v + state.eps)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(batch.data().len());
    for i in 0..n {
        let r = posteriors.row(i);
        for ch in 0..c {
            for &x in batch.plane_of(i, ch) {
                let z: f64 = (0..k).map(|j| r[j] * (x - state.running_mean[j][ch]) * coef[j][ch]).sum();
                out.push(state.gamma[ch] * z + state.beta[ch]);
            }
        }
    }
    Batch::from_raw(batch.shape(), out)
}

/// Context posteriors from the running statistics (see
/// [`NormState::context_gmm`]), evaluated on each sample's spatially averaged
/// channel vector.
pub fn sbn_posteriors(batch: &Batch, state: &NormState) -> Result<Responsibilities> {
    gmm_posterior(&state.context_gmm()?, &batch.spatial_means())
}

/// Groupwise batch-norm gradient with the constant `1 / sqrt(lambda_k)` factor.
pub fn sbn_backward(cache: &ForwardCache, grad_out: &Batch, state: &NormState) -> Result<(Batch, ChannelVector, ChannelVector)> {
    group_backward(cache, grad_out, &state.gamma)
}
