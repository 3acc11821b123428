//! A small feed-forward classifier for comparing normalization layers.
//!
//! Hidden layers are `affine -> normalization -> ReLU`; the output layer is
//! a plain affine map producing logits. Inputs are vectors, i.e. batches
//! with `H = W = 1`.

mod gradcheck;
mod optim;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use gradcheck::{finite_diff_check, GradReport};
pub use optim::{AdamW, AdamWConfig};

use crate::context::ContextAssignment;
use crate::error::{shape_mismatch, Error, Result};
use crate::gmm::{gmm_fit_em, gmm_posterior, GmmModel};
use crate::norm::{
    bn_backward, bn_forward, in_backward, in_forward_cached, ln_backward, ln_forward_cached, mixture_backward, mixture_normalize,
    sbn_backward, sbn_forward, sbn_forward_eval_unknown, sbn_posteriors, ForwardCache, MixtureCache, NormState, Phase, DEFAULT_EPS,
    DEFAULT_MOMENTUM,
};
use crate::numeric::{Batch, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormType {
    Batch,
    Layer,
    Instance,
    Mixture,
    Supervised,
}

impl NormType {
    pub fn name(self) -> &'static str {
        match self {
            NormType::Batch => "bn",
            NormType::Layer => "ln",
            NormType::Instance => "in",
            NormType::Mixture => "mn",
            NormType::Supervised => "sbn",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [NormType::Batch, NormType::Layer, NormType::Instance, NormType::Mixture, NormType::Supervised]
            .into_iter()
            .find(|t| t.name() == name)
    }
}

/// Normalization attached to a hidden layer. Layer and instance norm only
/// use `gamma`, `beta` and `eps` from the state. Mixture layers carry the
/// mixture fitted on their inputs by [`Mlp::fit_mixtures`].
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub kind: NormType,
    pub state: NormState,
    pub gmm: Option<GmmModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub norm: Option<Norm>,
    pub relu: bool,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weights.cols
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    /// Running statistics, contexts supplied by the caller.
    Eval,
    /// Running statistics, contexts inferred from each supervised layer's
    /// running statistics.
    EvalUnknown,
}

/// Normalization choice for every hidden layer of a new model.
#[derive(Debug, Clone, PartialEq)]
pub enum NormChoice {
    None,
    Batch,
    Layer,
    Instance,
    Supervised {
        lambda: Vec<f64>,
    },
    /// Placeholder until [`Mlp::fit_mixtures`] runs.
    Mixture {
        components: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub norm: NormChoice,
    pub eps: f64,
    pub momentum_alpha: f64,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>, classes: usize, norm: NormChoice, seed: u64) -> Self {
        Self { input_dim, hidden, classes, norm, eps: DEFAULT_EPS, momentum_alpha: DEFAULT_MOMENTUM, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub class_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NormCache {
    Group(ForwardCache),
    Mixture(MixtureCache),
    /// Inference without known contexts; not differentiable here.
    Unknown,
}

/// Forward-pass record of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    pub input: Matrix,
    pub norm: Option<NormCache>,
    /// Layer output before the ReLU.
    pub output: Matrix,
}

/// Loss, per-block gradients (in [`Mlp::param_blocks`] order) and the logits
/// they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Backprop {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
    pub logits: Matrix,
}

impl Mlp {
    /// He-initialized weights (`N(0, 2 / fan_in)`), zero biases, `gamma = 1`
    /// and `beta = 0`.
    pub fn new(config: &MlpConfig) -> Result<Self> {
        if config.input_dim == 0 || config.classes == 0 || config.hidden.contains(&0) {
            return Err(Error::BadParameter("layer widths must be positive".into()));
        }
        let mut r = rng::seeded(config.seed, 0x11);
        let mut widths = vec![config.input_dim];
        widths.extend_from_slice(&config.hidden);
        widths.push(config.classes);
        let last = widths.len() - 2;
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = libm::sqrt(2.0 / fan_in as f64);
            let weights = (0..fan_in * fan_out).map(|_| std * rng::standard_normal(&mut r)).collect();
            let hidden = l < last;
            let norm = if hidden { make_norm(&config.norm, fan_out, config.eps, config.momentum_alpha)? } else { None };
            layers.push(Dense { weights: Matrix::new(fan_out, fan_in, weights)?, bias: vec![0.0; fan_out], norm, relu: hidden });
        }
        Ok(Self { layers, class_count: config.classes })
    }

    /// Checks that layer widths chain and parameter shapes agree.
    pub fn from_layers(layers: Vec<Dense>, class_count: usize) -> Result<Self> {
        let model = Self { layers, class_count };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::BadParameter("model has no layers".into()));
        };
        if last.outputs() != self.class_count {
            return Err(shape_mismatch(format!("final width {} but {} classes", last.outputs(), self.class_count)));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(shape_mismatch(format!("layer {l} bias length")));
            }
            if l > 0 && self.layers[l - 1].outputs() != layer.inputs() {
                return Err(shape_mismatch(format!(
                    "layer {l} takes {} inputs after width {}",
                    layer.inputs(),
                    self.layers[l - 1].outputs()
                )));
            }
            if let Some(norm) = &layer.norm {
                if norm.state.channels() != layer.outputs() {
                    return Err(shape_mismatch(format!("layer {l} normalization width")));
                }
                norm.state.validate()?;
                if let Some(g) = &norm.gmm {
                    if g.k() != norm.state.k() || g.dim() != layer.outputs() {
                        return Err(shape_mismatch(format!("layer {l} mixture shape")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    fn needs_contexts(&self) -> bool {
        self.layers.iter().any(|l| matches!(&l.norm, Some(n) if n.kind == NormType::Supervised))
    }

    /// Fits a diagonal mixture with `components` components to the inputs of
    /// every mixture layer, front to back, using `x` propagated through the
    /// layers already fitted. Runs once before training.
    pub fn fit_mixtures(&mut self, x: &Matrix, components: usize, seed: u64) -> Result<()> {
        let mut h = x.clone();
        for l in 0..self.layers.len() {
            let pre = affine(&h, &self.layers[l].weights, &self.layers[l].bias)?;
            let layer = &mut self.layers[l];
            if let Some(norm) = layer.norm.as_mut().filter(|n| n.kind == NormType::Mixture) {
                let gmm = gmm_fit_em(&pre, components, 200, 1e-8, seed.wrapping_add(l as u64))?;
                norm.state = NormState::for_mixture(pre.cols, &gmm)?.with_eps(norm.state.eps).with_momentum(norm.state.momentum_alpha);
                norm.gmm = Some(gmm);
            }
            let (out, _) = apply_layer_norm(layer, pre, None, Mode::Train, true)?;
            h = out;
        }
        Ok(())
    }

    /// Logits and per-layer caches. `Train` uses batch statistics and
    /// updates running statistics; the other modes leave the model unchanged.
    pub fn forward(&mut self, x: &Matrix, assignment: Option<&ContextAssignment>, mode: Mode) -> Result<(Matrix, Vec<LayerCache>)> {
        if x.cols != self.input_dim() {
            return Err(shape_mismatch(format!("input has {} features, model expects {}", x.cols, self.input_dim())));
        }
        if x.rows == 0 {
            return Err(Error::EmptySelection);
        }
        if mode != Mode::EvalUnknown && self.needs_contexts() && assignment.is_none() {
            return Err(Error::MissingContexts);
        }
        if let Some(a) = assignment {
            if a.len() != x.rows {
                return Err(shape_mismatch(format!("assignment covers {} samples, batch has {}", a.len(), x.rows)));
            }
        }
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let pre = affine(&h, &layer.weights, &layer.bias)?;
            let (output, norm) = apply_layer_norm(layer, pre, assignment, mode, false)?;
            let mut out = output.clone();
            if layer.relu {
                for v in &mut out.data {
                    *v = v.max(0.0);
                }
            }
            caches.push(LayerCache { input: core::mem::replace(&mut h, out), norm, output });
        }
        Ok((h, caches))
    }

    /// Inference logits without touching the model.
    pub fn predict_logits(&self, x: &Matrix, assignment: Option<&ContextAssignment>, unknown_contexts: bool) -> Result<Matrix> {
        let mode = if unknown_contexts { Mode::EvalUnknown } else { Mode::Eval };
        self.clone().forward(x, assignment, mode).map(|(logits, _)| logits)
    }

    pub fn predict(&self, x: &Matrix, assignment: Option<&ContextAssignment>, unknown_contexts: bool) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_logits(x, assignment, unknown_contexts)?))
    }

    /// Mean softmax cross-entropy over the batch and its gradient with
    /// respect to every parameter block, from a `Train` forward pass.
    /// Weight decay is not part of the loss; [`AdamW`] applies it.
    pub fn loss_and_backprop(&mut self, x: &Matrix, labels: &[usize], assignment: Option<&ContextAssignment>) -> Result<Backprop> {
        let partial: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
        self.loss_and_backprop_partial(x, &partial, assignment)
    }

    /// As [`Mlp::loss_and_backprop`], but unlabeled samples (`None`) only
    /// take part in the normalization statistics; the loss averages over the
    /// labeled ones.
    pub fn loss_and_backprop_partial(
        &mut self,
        x: &Matrix,
        labels: &[Option<usize>],
        assignment: Option<&ContextAssignment>,
    ) -> Result<Backprop> {
        if labels.len() != x.rows {
            return Err(shape_mismatch(format!("{} labels for {} samples", labels.len(), x.rows)));
        }
        if let Some(&label) = labels.iter().flatten().find(|&&l| l >= self.class_count) {
            return Err(Error::BadLabel { label, classes: self.class_count });
        }
        let (logits, caches) = self.forward(x, assignment, Mode::Train)?;
        let (loss, grad_logits) = cross_entropy(&logits, labels);
        let grads = self.backward(&caches, grad_logits)?;
        Ok(Backprop { loss, grads, logits })
    }

    /// Loss only, from a `Train` forward pass on a copy of the model.
    pub fn loss(&self, x: &Matrix, labels: &[usize], assignment: Option<&ContextAssignment>) -> Result<f64> {
        let partial: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
        let (logits, _) = self.clone().forward(x, assignment, Mode::Train)?;
        Ok(cross_entropy(&logits, &partial).0)
    }

    fn backward(&self, caches: &[LayerCache], grad_logits: Matrix) -> Result<Vec<Vec<f64>>> {
        let mut blocks: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        let mut g = grad_logits;
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            if layer.relu {
                for (v, &o) in g.data.iter_mut().zip(&cache.output.data) {
                    if o <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            let mut layer_blocks = Vec::with_capacity(4);
            let mut norm_blocks = Vec::new();
            if let (Some(norm), Some(nc)) = (&layer.norm, &cache.norm) {
                let up = Batch::from_matrix(&g)?;
                let (gi, gg, gb) = match nc {
                    NormCache::Group(fc) => match norm.kind {
                        NormType::Batch => bn_backward(fc, &up, &norm.state)?,
                        NormType::Supervised => sbn_backward(fc, &up, &norm.state)?,
                        NormType::Layer => ln_backward(fc, &up, &norm.state.gamma)?,
                        NormType::Instance => in_backward(fc, &up, &norm.state.gamma)?,
                        NormType::Mixture => return Err(Error::BadParameter("mixture layer with a group cache".into())),
                    },
                    NormCache::Mixture(mc) => mixture_backward(mc, &up, &norm.state.gamma)?,
                    NormCache::Unknown => return Err(Error::BadParameter("no gradient through unknown-context inference".into())),
                };
                g = gi.to_matrix();
                norm_blocks.push(gg.0);
                norm_blocks.push(gb.0);
            }
            let (n, out, inp) = (g.rows, layer.outputs(), layer.inputs());
            let mut gw = vec![0.0; out * inp];
            let mut gbias = vec![0.0; out];
            let mut gx = Matrix::zeros(n, inp);
            for s in 0..n {
                let xs = cache.input.row(s);
                let gs = g.row(s);
                let gxs = gx.row_mut(s);
                for o in 0..out {
                    let go = gs[o];
                    if go == 0.0 {
                        continue;
                    }
                    gbias[o] += go;
                    let wrow = layer.weights.row(o);
                    let gwrow = &mut gw[o * inp..(o + 1) * inp];
                    for i in 0..inp {
                        gwrow[i] += go * xs[i];
                        gxs[i] += go * wrow[i];
                    }
                }
            }
            layer_blocks.push(gw);
            layer_blocks.push(gbias);
            layer_blocks.extend(norm_blocks);
            blocks.push(layer_blocks);
            g = gx;
        }
        Ok(blocks.into_iter().rev().flatten().collect())
    }

    /// Parameter blocks in a fixed order: per layer `weights`, `bias`, then
    /// `gamma` and `beta` when the layer is normalized.
    pub fn param_blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            out.push(&layer.weights.data);
            out.push(&layer.bias);
            if let Some(n) = &layer.norm {
                out.push(&n.state.gamma);
                out.push(&n.state.beta);
            }
        }
        out
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.weights.data);
            out.push(&mut layer.bias);
            if let Some(n) = &mut layer.norm {
                out.push(&mut n.state.gamma.0);
                out.push(&mut n.state.beta.0);
            }
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(format!("layer{l}.weights"));
            out.push(format!("layer{l}.bias"));
            if layer.norm.is_some() {
                out.push(format!("layer{l}.gamma"));
                out.push(format!("layer{l}.beta"));
            }
        }
        out
    }

    /// Which blocks take weight decay: weights and biases do, `gamma` and
    /// `beta` do not.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend([true, true]);
            if layer.norm.is_some() {
                out.extend([false, false]);
            }
        }
        out
    }

    pub fn set_params(&mut self, params: &[Vec<f64>]) -> Result<()> {
        let mut blocks = self.param_blocks_mut();
        if blocks.len() != params.len() || blocks.iter().zip(params).any(|(b, p)| b.len() != p.len()) {
            return Err(shape_mismatch("parameter blocks do not match the model"));
        }
        for (b, p) in blocks.iter_mut().zip(params) {
            b.copy_from_slice(p);
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<Vec<f64>> {
        self.param_blocks().into_iter().map(<[f64]>::to_vec).collect()
    }
}

fn make_norm(choice: &NormChoice, width: usize, eps: f64, alpha: f64) -> Result<Option<Norm>> {
    let plain = |kind| Some(Norm { kind, state: NormState::new(width).with_eps(eps).with_momentum(alpha), gmm: None });
    let norm = match choice {
        NormChoice::None => None,
        NormChoice::Batch => plain(NormType::Batch),
        NormChoice::Layer => plain(NormType::Layer),
        NormChoice::Instance => plain(NormType::Instance),
        NormChoice::Mixture { components } => {
            if *components == 0 {
                return Err(Error::BadParameter("mixture needs at least one component".into()));
            }
            plain(NormType::Mixture)
        }
        NormChoice::Supervised { lambda } => Some(Norm {
            kind: NormType::Supervised,
            state: NormState::with_contexts(width, lambda.clone())?.with_eps(eps).with_momentum(alpha),
            gmm: None,
        }),
    };
    if let Some(n) = &norm {
        n.state.validate()?;
    }
    Ok(norm)
}

/// Applies the layer's normalization (if any) to its pre-activations.
/// `scratch` runs `Train` on a copy of the state so nothing is updated.
fn apply_layer_norm(
    layer: &mut Dense,
    pre: Matrix,
    assignment: Option<&ContextAssignment>,
    mode: Mode,
    scratch: bool,
) -> Result<(Matrix, Option<NormCache>)> {
    let Some(norm) = layer.norm.as_mut() else {
        return Ok((pre, None));
    };
    let batch = Batch::from_matrix(&pre)?;
    let mut scratch_state;
    let state = if scratch {
        scratch_state = norm.state.clone();
        &mut scratch_state
    } else {
        &mut norm.state
    };
    let phase = if mode == Mode::Train { Phase::Train } else { Phase::Eval };
    let (out, cache) = match norm.kind {
        NormType::Batch => {
            let (o, c) = bn_forward(&batch, state, phase)?;
            (o, NormCache::Group(c))
        }
        NormType::Layer => {
            let (o, c) = ln_forward_cached(&batch, &state.gamma, &state.beta, state.eps)?;
            (o, NormCache::Group(c))
        }
        NormType::Instance => {
            let (o, c) = in_forward_cached(&batch, &state.gamma, &state.beta, state.eps)?;
            (o, NormCache::Group(c))
        }
        NormType::Mixture => {
            let gmm = norm.gmm.as_ref().ok_or_else(|| Error::BadParameter("mixture layer has no fitted mixture".into()))?;
            let resp = gmm_posterior(gmm, &pre)?;
            let (o, c) = mixture_normalize(&batch, &resp, state, phase)?;
            (o, NormCache::Mixture(c))
        }
        NormType::Supervised => match (mode, assignment) {
            (Mode::EvalUnknown, _) => {
                let resp = sbn_posteriors(&batch, state)?;
                (sbn_forward_eval_unknown(&batch, state, &resp)?, NormCache::Unknown)
            }
            (_, Some(a)) => {
                let (o, c) = sbn_forward(&batch, a, state, phase)?;
                (o, NormCache::Group(c))
            }
            (_, None) => return Err(Error::MissingContexts),
        },
    };
    Ok((out.to_matrix(), Some(cache)))
}

/// `x W^T + b`.
fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    if x.cols != w.cols {
        return Err(shape_mismatch(format!("affine input width {} vs {}", x.cols, w.cols)));
    }
    let mut out = Matrix::zeros(x.rows, w.rows);
    for s in 0..x.rows {
        let xs = x.row(s);
        for (o, v) in out.row_mut(s).iter_mut().enumerate() {
            *v = b[o] + w.row(o).iter().zip(xs).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    Ok(out)
}

/// Mean cross-entropy over labeled rows and its gradient with respect to the
/// logits. With no labeled rows the loss and gradient are zero.
pub fn cross_entropy(logits: &Matrix, labels: &[Option<usize>]) -> (f64, Matrix) {
    let labeled = labels.iter().flatten().count();
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    if labeled == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / labeled as f64;
    let mut loss = 0.0;
    for (s, label) in labels.iter().enumerate() {
        let Some(label) = *label else { continue };
        let row = logits.row(s);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| libm::exp(v - max)).sum();
        let log_z = max + libm::log(sum);
        loss += log_z - row[label];
        for (c, g) in grad.row_mut(s).iter_mut().enumerate() {
            *g = scale * (libm::exp(row[c] - log_z) - if c == label { 1.0 } else { 0.0 });
        }
    }
    (loss * scale, grad)
}

/// Index of the largest entry of each row (first one on ties).
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.rows_iter().map(|row| row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })).collect()
}
