//! Synthetic datasets with controllable heterogeneity.
//!
//! Samples are Gaussian with unit isotropic noise. Class means sit at a fixed
//! offset from their context's center, and the same class offsets are reused
//! in every context, so a class looks the same relative to its context but
//! has different absolute statistics across contexts.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_mismatch, Error, Result};
use crate::numeric::{squared_distance, Matrix};
use crate::rng;

/// Distance of each class mean from the origin in [`gen_domain_shift`].
pub const DOMAIN_CLASS_MARGIN: f64 = 3.0;

const PACKING_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub generator: String,
    pub k_true: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub class_labels: Vec<usize>,
    /// Ground-truth context of every sample, when known.
    pub context_labels: Option<Vec<usize>>,
    pub class_count: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        class_labels: Vec<usize>,
        context_labels: Option<Vec<usize>>,
        class_count: usize,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if class_labels.len() != features.rows {
            return Err(shape_mismatch(format!("{} labels for {} samples", class_labels.len(), features.rows)));
        }
        if let Some(ctx) = &context_labels {
            if ctx.len() != features.rows {
                return Err(shape_mismatch(format!("{} context labels for {} samples", ctx.len(), features.rows)));
            }
        }
        if let Some(&label) = class_labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::BadLabel { label, classes: class_count });
        }
        if features.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self { features, class_labels, context_labels, class_count, meta })
    }

    pub fn len(&self) -> usize {
        self.features.rows
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            class_labels: rows.iter().map(|&r| self.class_labels[r]).collect(),
            context_labels: self.context_labels.as_ref().map(|c| rows.iter().map(|&r| c[r]).collect()),
            class_count: self.class_count,
            meta: self.meta.clone(),
        }
    }

    /// Rows of `self` followed by rows of `other`. Context labels survive
    /// only if both sides have them.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() {
            return Err(shape_mismatch("datasets differ in dimension"));
        }
        let mut features = self.features.clone();
        features.data.extend_from_slice(&other.features.data);
        features.rows += other.features.rows;
        let context_labels = match (&self.context_labels, &other.context_labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Dataset::new(
            features,
            self.class_labels.iter().chain(&other.class_labels).copied().collect(),
            context_labels,
            self.class_count.max(other.class_count),
            self.meta.clone(),
        )
    }
}

/// Class mean offsets of length `margin`: classes take turns on the positive
/// and negative side of successive axes; when there are more than `2 * dim`
/// classes, later rounds move further out.
pub fn class_offsets(classes: usize, dim: usize, margin: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let mut v = vec![0.0; dim];
            let round = c / (2 * dim);
            let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
            v[(c / 2) % dim] = sign * margin * (1 + round) as f64;
            v
        })
        .collect()
}

fn check_counts(pairs: &[(&str, usize)]) -> Result<()> {
    for (name, v) in pairs {
        if *v == 0 {
            return Err(Error::BadParameter(format!("{name} must be at least 1")));
        }
    }
    Ok(())
}

/// `k` contexts, each with `n_per_context` samples spread evenly over
/// `classes`. Context centers are drawn from `N(0, context_shift^2 I)` and
/// rejected until every pair is at least `context_shift` apart.
pub fn gen_mixture_classification(
    k: usize,
    classes: usize,
    n_per_context: usize,
    dim: usize,
    context_shift: f64,
    class_margin: f64,
    seed: u64,
) -> Result<Dataset> {
    check_counts(&[("k", k), ("classes", classes), ("n_per_context", n_per_context), ("dim", dim)])?;
    if !(context_shift > 0.0) || !(class_margin > 0.0) {
        return Err(Error::BadParameter("context_shift and class_margin must be positive".into()));
    }
    let mut r = rng::seeded(seed, 0xc7);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let min_sq = context_shift * context_shift;
    while centers.len() < k {
        let placed = (0..PACKING_ATTEMPTS).find_map(|_| {
            let c: Vec<f64> = (0..dim).map(|_| context_shift * rng::standard_normal(&mut r)).collect();
            centers.iter().all(|o| squared_distance(o, &c) >= min_sq).then_some(c)
        });
        match placed {
            Some(c) => centers.push(c),
            None => return Err(Error::PackingFailed { k, separation: context_shift, dim }),
        }
    }

    let offsets = class_offsets(classes, dim, class_margin);
    let n = k * n_per_context;
    let mut data = Vec::with_capacity(n * dim);
    let mut class_labels = Vec::with_capacity(n);
    let mut context_labels = Vec::with_capacity(n);
    for (ctx, center) in centers.iter().enumerate() {
        for i in 0..n_per_context {
            let class = i % classes;
            for d in 0..dim {
                data.push(center[d] + offsets[class][d] + rng::standard_normal(&mut r));
            }
            class_labels.push(class);
            context_labels.push(ctx);
        }
    }
    Dataset::new(
        Matrix::new(n, dim, data)?,
        class_labels,
        Some(context_labels),
        classes,
        DatasetMeta { generator: "mixture".into(), k_true: k, seed },
    )
}

/// A source and a target domain with the same class structure; target
/// features are mapped through `x -> scale_shift * x + mean_shift`. Context
/// labels are the domain id (0 source, 1 target).
pub fn gen_domain_shift(
    classes: usize,
    n_source: usize,
    n_target: usize,
    dim: usize,
    scale_shift: f64,
    mean_shift: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    check_counts(&[("classes", classes), ("n_source", n_source), ("n_target", n_target), ("dim", dim)])?;
    if !scale_shift.is_finite() || scale_shift == 0.0 || !mean_shift.is_finite() {
        return Err(Error::BadParameter("scale_shift must be finite and non-zero, mean_shift finite".into()));
    }
    let offsets = class_offsets(classes, dim, DOMAIN_CLASS_MARGIN);
    let mut r = rng::seeded(seed, 0xd5);
    let mut make = |n: usize, domain: usize, scale: f64, shift: f64| {
        let mut data = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % classes;
            for d in 0..dim {
                data.push(scale * (offsets[class][d] + rng::standard_normal(&mut r)) + shift);
            }
            labels.push(class);
        }
        Dataset::new(
            Matrix::new(n, dim, data)?,
            labels,
            Some(vec![domain; n]),
            classes,
            DatasetMeta { generator: "domain_shift".into(), k_true: 2, seed },
        )
    };
    let source = make(n_source, 0, 1.0, 0.0)?;
    let target = make(n_target, 1, scale_shift, mean_shift)?;
    Ok((source, target))
}

/// Per-class split: a `train_fraction` share of each class (rounded, at
/// least one sample when the class has two or more) goes to training, the
/// rest to evaluation. Both index lists are sorted.
pub fn stratified_split(labels: &[usize], classes: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng::seeded(seed, 0x5b);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for class in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rng::shuffle(&mut r, &mut members);
        let mut take = libm::round(train_fraction * members.len() as f64) as usize;
        if members.len() >= 2 {
            take = take.clamp(1, members.len() - 1);
        }
        train.extend_from_slice(&members[..take.min(members.len())]);
        eval.extend_from_slice(&members[take.min(members.len())..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}
