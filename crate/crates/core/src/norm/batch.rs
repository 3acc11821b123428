use alloc::vec;
use alloc::vec::Vec;

use super::{apply_groups, check_finite, group_backward, group_moments, update_running, ForwardCache, NormKind, NormState, Phase};
use crate::error::{Error, Result};
use crate::numeric::{Batch, ChannelVector};

fn single_context(state: &NormState) -> Result<()> {
    if state.k() != 1 {
        return Err(Error::WrongArity { expected: 1, got: state.k() });
    }
    Ok(())
}

fn proto(batch: &Batch, state: &NormState, mean: Vec<f64>, var: Vec<f64>, batch_stats: bool) -> ForwardCache {
    ForwardCache {
        kind: NormKind::Batch,
        shape: batch.shape(),
        x_hat: Vec::new(),
        mean,
        var,
        counts: vec![batch.samples()],
        contexts: Vec::new(),
        eps: state.eps,
        lambda: vec![1.0],
        batch_stats,
    }
}

/// Batch normalization. `Train` normalizes with the batch's per-channel
/// moments and folds them into the running statistics; `Eval` normalizes
/// with the running statistics and leaves the state untouched.
pub fn bn_forward(batch: &Batch, state: &mut NormState, phase: Phase) -> Result<(Batch, ForwardCache)> {
    match phase {
        Phase::Eval => bn_eval(batch, state),
        Phase::Train => {
            single_context(state)?;
            check_finite(batch)?;
            let (mean, var, _) = group_moments(batch, &NormKind::Batch, &[], batch.channels());
            let out = apply_groups(batch, proto(batch, state, mean, var, true), &state.gamma, &state.beta)?;
            update_running(state, 0, &ChannelVector(out.1.mean.clone()), &ChannelVector(out.1.var.clone()))?;
            state.batches_seen += 1;
            Ok(out)
        }
    }
}

pub fn bn_eval(batch: &Batch, state: &NormState) -> Result<(Batch, ForwardCache)> {
    single_context(state)?;
    check_finite(batch)?;
    let cache = proto(batch, state, state.running_mean[0].0.clone(), state.running_var[0].0.clone(), false);
    apply_groups(batch, cache, &state.gamma, &state.beta)
}

/// Returns `(grad_in, grad_gamma, grad_beta)`. Caches from `Train` treat
/// the batch moments as functions of the input.
pub fn bn_backward(cache: &ForwardCache, grad_out: &Batch, state: &NormState) -> Result<(Batch, ChannelVector, ChannelVector)> {
    group_backward(cache, grad_out, &state.gamma)
}
