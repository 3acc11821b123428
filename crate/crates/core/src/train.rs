//! Mini-batch training of an [`Mlp`] with per-epoch evaluation.

use alloc::format;
use alloc::vec::Vec;

use crate::context::ContextAssignment;
use crate::error::{shape_mismatch, Error, Result};
use crate::metrics::accuracy;
use crate::model::{argmax_rows, AdamW, AdamWConfig, Mlp};
use crate::numeric::Matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Seeds the order of the mini-batches.
    pub seed: u64,
    /// Evaluate supervised layers with contexts inferred from their running
    /// statistics instead of the supplied assignment.
    pub unknown_contexts_at_eval: bool,
}

/// Training samples. Unlabeled samples (`None`) still enter the
/// normalization statistics of every batch they fall in.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub x: &'a Matrix,
    pub labels: &'a [Option<usize>],
    pub contexts: Option<&'a ContextAssignment>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub x: &'a Matrix,
    pub labels: &'a [usize],
    pub contexts: Option<&'a ContextAssignment>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Counted from 1.
    pub epoch: usize,
    /// Mean loss over the epoch's labeled samples.
    pub train_loss: f64,
    /// Accuracy of the training forward passes on labeled samples.
    pub train_acc: f64,
    pub eval_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochStats>,
    /// Predictions on the evaluation set after the last epoch.
    pub eval_predictions: Vec<usize>,
}

fn validate(model: &Mlp, train: &TrainSet, eval: &EvalSet, cfg: &TrainConfig) -> Result<()> {
    if cfg.epochs == 0 {
        return Err(Error::BadParameter("epochs must be at least 1".into()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::BadParameter(format!("batch size must be at least 2, got {}", cfg.batch_size)));
    }
    if train.labels.len() != train.x.rows || eval.labels.len() != eval.x.rows {
        return Err(shape_mismatch("labels and features differ in length"));
    }
    for (set, n) in [(train.contexts, train.x.rows), (eval.contexts, eval.x.rows)] {
        if let Some(a) = set {
            if a.len() != n {
                return Err(shape_mismatch(format!("context assignment covers {} of {n} samples", a.len())));
            }
        }
    }
    if train.x.cols != model.input_dim() || eval.x.cols != model.input_dim() {
        return Err(shape_mismatch("feature width differs from the model input"));
    }
    Ok(())
}

/// Runs `cfg.epochs` passes of shuffled mini-batches (a trailing batch with
/// fewer than two samples is dropped), one AdamW step per batch, and
/// evaluates on `eval` with running statistics after every epoch.
/// `on_epoch` sees each epoch's statistics as soon as they exist.
pub fn train_model(
    model: &mut Mlp,
    train: &TrainSet,
    eval: &EvalSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats) -> Result<()>,
) -> Result<TrainOutcome> {
    validate(model, train, eval, cfg)?;
    let lens: Vec<usize> = model.param_blocks().iter().map(|b| b.len()).collect();
    let mut opt = AdamW::new(cfg.optimizer, &lens, model.decay_mask())?;
    let mut r = rng::seeded(cfg.seed, 0x7a);
    let mut order: Vec<usize> = (0..train.x.rows).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut predictions = Vec::new();

    for epoch in 1..=cfg.epochs {
        rng::shuffle(&mut r, &mut order);
        let (mut loss_sum, mut correct, mut labeled) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let x = train.x.select_rows(chunk);
            let labels: Vec<Option<usize>> = chunk.iter().map(|&i| train.labels[i]).collect();
            let contexts = train.contexts.map(|a| a.select(chunk));
            let out = model.loss_and_backprop_partial(&x, &labels, contexts.as_ref())?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            let n_labeled = labels.iter().flatten().count();
            loss_sum += out.loss * n_labeled as f64;
            labeled += n_labeled;
            correct += argmax_rows(&out.logits).iter().zip(&labels).filter(|(p, l)| l.is_some_and(|l| l == **p)).count();
            opt.step(&mut model.param_blocks_mut(), &out.grads)?;
        }
        predictions = model.predict(eval.x, eval.contexts, cfg.unknown_contexts_at_eval)?;
        let stats = EpochStats {
            epoch,
            train_loss: if labeled > 0 { loss_sum / labeled as f64 } else { 0.0 },
            train_acc: if labeled > 0 { correct as f64 / labeled as f64 } else { 0.0 },
            eval_acc: accuracy(eval.labels, &predictions),
        };
        on_epoch(&stats)?;
        epochs.push(stats);
    }
    Ok(TrainOutcome { epochs, eval_predictions: predictions })
}
