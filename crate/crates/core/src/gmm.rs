//! Diagonal-covariance Gaussian mixtures: posteriors, log-likelihood and EM.
//!
//! Mixture normalization uses the posteriors to weight per-component
//! standardizations; supervised normalization builds a mixture from its
//! per-context running statistics to route samples whose context is unknown.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::context::kmeans_fit;
use crate::error::{shape_mismatch, Error, Result};
use crate::numeric::{ChannelVector, Matrix};

/// Lower bound applied to every component variance.
pub const VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<ChannelVector>,
    pub vars: Vec<ChannelVector>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<ChannelVector>, vars: Vec<ChannelVector>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || vars.len() != k {
            return Err(shape_mismatch(format!(
                "mixture needs matching component counts, got {k} weights, {} means, {} vars",
                means.len(),
                vars.len()
            )));
        }
        let dim = means[0].len();
        if means.iter().chain(&vars).any(|v| v.len() != dim) {
            return Err(shape_mismatch("mixture components differ in dimension"));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::BadParameter(format!("mixture weights must be positive and sum to 1, got {sum}")));
        }
        if vars.iter().flat_map(|v| v.iter()).any(|v| !(*v >= VAR_FLOOR)) {
            return Err(Error::BadParameter(format!("mixture variances must be >= {VAR_FLOOR}")));
        }
        if means.iter().flat_map(|m| m.iter()).any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("mixture means"));
        }
        Ok(Self { weights, means, vars })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn check_points(&self, points: &Matrix) -> Result<()> {
        if points.cols != self.dim() {
            return Err(shape_mismatch(format!("points have dimension {}, mixture has {}", points.cols, self.dim())));
        }
        Ok(())
    }

    /// `log(lambda_k) + log N(x; mu_k, diag var_k)` for every component.
    fn joint_log_densities(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = libm::log(self.weights[k]);
            for ((xi, m), v) in x.iter().zip(self.means[k].iter()).zip(self.vars[k].iter()) {
                let d = xi - m;
                acc -= 0.5 * (libm::log(2.0 * PI * v) + d * d / v);
            }
            *o = acc;
        }
    }
}

/// Posterior component probabilities, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities(pub Matrix);

impl Responsibilities {
    /// One-hot rows for a hard assignment.
    pub fn one_hot(indices: &[usize], k: usize) -> Result<Self> {
        let mut m = Matrix::zeros(indices.len(), k);
        for (n, &i) in indices.iter().enumerate() {
            if i >= k {
                return Err(Error::BadContext { index: i, k });
            }
            m[(n, i)] = 1.0;
        }
        Ok(Self(m))
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn k(&self) -> usize {
        self.0.cols
    }

    pub fn row(&self, n: usize) -> &[f64] {
        self.0.row(n)
    }

    /// Checks that entries lie in `[0, 1]` and each row sums to 1 within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (row, r) in self.0.rows_iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > tol || r.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::BadPosterior { row, sum });
            }
        }
        Ok(())
    }

    /// Index of the most probable component per row (lowest index on ties).
    pub fn argmax(&self) -> Vec<usize> {
        self.0.rows_iter().map(|r| r.iter().enumerate().fold(0, |best, (k, p)| if *p > r[best] { k } else { best })).collect()
    }
}

fn log_sum_exp(values: &[f64]) -> (f64, f64) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|v| libm::exp(v - max)).sum();
    (max, sum)
}

/// Bayes posterior `p(k | x)` under the mixture, evaluated in log space.
pub fn gmm_posterior(model: &GmmModel, points: &Matrix) -> Result<Responsibilities> {
    model.check_points(points)?;
    let k = model.k();
    let mut out = Matrix::zeros(points.rows, k);
    let mut logs = vec![0.0; k];
    for n in 0..points.rows {
        model.joint_log_densities(points.row(n), &mut logs);
        let (max, sum) = log_sum_exp(&logs);
        for (o, l) in out.row_mut(n).iter_mut().zip(&logs) {
            *o = libm::exp(l - max) / sum;
        }
    }
    Ok(Responsibilities(out))
}

/// `sum_n log sum_k lambda_k N(x_n; mu_k, diag var_k)`.
pub fn gmm_log_likelihood(model: &GmmModel, points: &Matrix) -> Result<f64> {
    model.check_points(points)?;
    let mut logs = vec![0.0; model.k()];
    let mut total = 0.0;
    for x in points.rows_iter() {
        model.joint_log_densities(x, &mut logs);
        let (max, sum) = log_sum_exp(&logs);
        total += max + libm::log(sum);
    }
    Ok(total)
}

fn m_step(points: &Matrix, resp: &Responsibilities, previous: &GmmModel) -> GmmModel {
    let (n, dim, k) = (points.rows, points.cols, resp.k());
    let mut soft = vec![0.0; k];
    for r in resp.0.rows_iter() {
        for (s, p) in soft.iter_mut().zip(r) {
            *s += p;
        }
    }
    let mut means = previous.means.clone();
    let mut vars = previous.vars.clone();
    for j in 0..k {
        if soft[j] <= 0.0 {
            continue;
        }
        let mut mean = ChannelVector::zeros(dim);
        for i in 0..n {
            let r = resp.0[(i, j)];
            for (m, x) in mean.iter_mut().zip(points.row(i)) {
                *m += r * x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= soft[j]);
        let mut var = ChannelVector::zeros(dim);
        for i in 0..n {
            let r = resp.0[(i, j)];
            for ((v, x), m) in var.iter_mut().zip(points.row(i)).zip(mean.iter()) {
                *v += r * (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v = (*v / soft[j]).max(VAR_FLOOR));
        means[j] = mean;
        vars[j] = var;
    }
    let floor = f64::MIN_POSITIVE;
    let clamped: Vec<f64> = soft.iter().map(|s| s.max(floor)).collect();
    let total: f64 = clamped.iter().sum();
    let weights = clamped.iter().map(|s| s / total).collect();
    GmmModel { weights, means, vars }
}

/// Fits a `k`-component mixture by EM and returns it with the log-likelihood
/// of the initial model and after every iteration.
///
/// Means start at k-means centroids (same `seed`), weights uniform, variances
/// at the global per-dimension variance. Stops when the log-likelihood
/// improves by less than `tol` or after `max_iter` iterations.
pub fn gmm_fit_em_traced(points: &Matrix, k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<(GmmModel, Vec<f64>)> {
    if k == 0 {
        return Err(Error::BadParameter("K must be at least 1".into()));
    }
    if points.rows < k {
        return Err(Error::TooFewPoints { needed: k, got: points.rows });
    }
    if !(tol >= 0.0) {
        return Err(Error::BadParameter(format!("tol must be >= 0, got {tol}")));
    }
    let km = kmeans_fit(points, k, 100, 1e-10, seed)?;
    let dim = points.cols;
    let n = points.rows as f64;
    let mut global = ChannelVector::zeros(dim);
    let mut mean = ChannelVector::zeros(dim);
    for x in points.rows_iter() {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
    }
    for x in points.rows_iter() {
        global.iter_mut().zip(x).zip(mean.iter()).for_each(|((g, v), m)| *g += (v - m) * (v - m) / n);
    }
    global.iter_mut().for_each(|g| *g = g.max(VAR_FLOOR));

    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: km.centroids.rows_iter().map(|c| ChannelVector(c.to_vec())).collect(),
        vars: vec![global; k],
    };
    let mut previous = gmm_log_likelihood(&model, points)?;
    let mut trace = vec![previous];
    for _ in 0..max_iter {
        let resp = gmm_posterior(&model, points)?;
        model = m_step(points, &resp, &model);
        let ll = gmm_log_likelihood(&model, points)?;
        trace.push(ll);
        if ll - previous < tol {
            break;
        }
        previous = ll;
    }
    Ok((model, trace))
}

pub fn gmm_fit_em(points: &Matrix, k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<GmmModel> {
    gmm_fit_em_traced(points, k, max_iter, tol, seed).map(|(m, _)| m)
}
