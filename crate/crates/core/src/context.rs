//! Context assignments: which predefined group each sample belongs to, plus
//! the dataset-level proportion of every group.
//!
//! Contexts come from explicit labels (a domain id, a superclass) or from
//! k-means clusters over the raw features.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_mismatch, Error, Result};
use crate::numeric::{squared_distance, Matrix};
use crate::rng;

/// Per-sample context indices in `[0, K)` and the proportions `lambda`.
///
/// Assignments built from a whole dataset have every `lambda[k] > 0`. An
/// assignment of a subset (a mini-batch, or points routed through a fitted
/// clusterer) may carry the parent dataset's proportions or, for
/// [`kmeans_assign`], proportions over the routed points, which can be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextAssignment {
    indices: Vec<usize>,
    k: usize,
    lambda: Vec<f64>,
}

impl ContextAssignment {
    pub fn new(indices: Vec<usize>, k: usize, lambda: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::BadParameter("K must be at least 1".into()));
        }
        if lambda.len() != k {
            return Err(shape_mismatch(format!("lambda has {} entries for K={k}", lambda.len())));
        }
        if let Some(&index) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::BadContext { index, k });
        }
        let sum: f64 = lambda.iter().sum();
        if lambda.iter().any(|l| !(*l >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::BadParameter(format!("lambda must be a probability vector, sums to {sum}")));
        }
        Ok(Self { indices, k, lambda })
    }

    /// Assignment whose proportions are the observed ones; fails on an empty context.
    pub fn from_indices(indices: Vec<usize>, k: usize) -> Result<Self> {
        let lambda = context_proportions(&indices, k)?;
        Self::new(indices, k, lambda)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &i in &self.indices {
            counts[i] += 1;
        }
        counts
    }

    /// Subset of samples `rows`, keeping `K` and the parent proportions.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self { indices: rows.iter().map(|&r| self.indices[r]).collect(), k: self.k, lambda: self.lambda.clone() }
    }

    /// Same indices with other proportions (e.g. the training set's).
    pub fn with_lambda(&self, lambda: Vec<f64>) -> Result<Self> {
        Self::new(self.indices.clone(), self.k, lambda)
    }
}

/// Dense relabelling of arbitrary integer labels, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelContexts {
    labels: Vec<i64>,
}

impl LabelContexts {
    pub fn fit(labels: &[i64]) -> Self {
        let mut seen: Vec<i64> = Vec::new();
        for &l in labels {
            if !seen.contains(&l) {
                seen.push(l);
            }
        }
        Self { labels: seen }
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    /// Context index of each label; labels not seen at fit time are rejected.
    pub fn map(&self, labels: &[i64]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| self.labels.iter().position(|s| s == l).ok_or_else(|| Error::BadParameter(format!("label {l} has no context"))))
            .collect()
    }
}

/// Contexts from explicit labels: distinct values become `0..K` in order of
/// first appearance and `lambda[k] = count_k / N`.
pub fn contexts_from_labels(labels: &[i64]) -> Result<ContextAssignment> {
    if labels.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mapping = LabelContexts::fit(labels);
    let indices = mapping.map(labels)?;
    ContextAssignment::from_indices(indices, mapping.k())
}

/// `lambda[k] = count_k / N`; every context must be non-empty.
pub fn context_proportions(indices: &[usize], k: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; k];
    for &i in indices {
        if i >= k {
            return Err(Error::BadContext { index: i, k });
        }
        counts[i] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyContext(empty));
    }
    let n = indices.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub centroids: Matrix,
    pub inertia: f64,
    pub iterations_run: usize,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.rows
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, point: &[f64]) -> (usize, f64) {
        nearest(&self.centroids, point)
    }
}

fn nearest(centroids: &Matrix, point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows_iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &Matrix, k: usize, rng: &mut rng::SeededRng) -> Matrix {
    let n = points.rows;
    let mut centroids = Matrix::zeros(k, points.cols);
    let first = rng::index(rng, n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut dist: Vec<f64> = points.rows_iter().map(|p| squared_distance(p, points.row(first))).collect();
    for j in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng::unit(rng) * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            // Round-off can leave `acc` just short of `target`.
            chosen.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            rng::index(rng, n)
        };
        centroids.row_mut(j).copy_from_slice(points.row(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(squared_distance(points.row(i), centroids.row(j)));
        }
    }
    centroids
}

fn assign_all(points: &Matrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>) {
    points.rows_iter().map(|p| nearest(centroids, p)).unzip()
}

/// Moves the worst-fitting point of a multi-member cluster into each empty
/// cluster so that every cluster keeps at least one member.
fn repair_empty(assign: &mut [usize], dist: &mut [f64], k: usize) {
    let mut counts = vec![0usize; k];
    for &a in assign.iter() {
        counts[a] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let donor = (0..assign.len()).filter(|&i| counts[assign[i]] > 1).fold(None, |best: Option<usize>, i| match best {
            Some(b) if dist[b] >= dist[i] => Some(b),
            _ => Some(i),
        });
        if let Some(i) = donor {
            counts[assign[i]] -= 1;
            counts[empty] = 1;
            assign[i] = empty;
            dist[i] = 0.0;
        }
    }
}

/// Fits k-means with k-means++ seeding and Lloyd iterations, returning the
/// model and the inertia after seeding and after every iteration.
pub fn kmeans_fit_traced(points: &Matrix, k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<(KMeansModel, Vec<f64>)> {
    if k == 0 {
        return Err(Error::BadParameter("K must be at least 1".into()));
    }
    if points.rows < k {
        return Err(Error::TooFewPoints { needed: k, got: points.rows });
    }
    if !(tol >= 0.0) {
        return Err(Error::BadParameter(format!("tol must be >= 0, got {tol}")));
    }
    if points.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }
    let dim = points.cols;
    let mut rng = rng::seeded(seed, 0x6b6d);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let (mut assign, mut dist) = assign_all(points, &centroids);
    let mut trace = vec![dist.iter().sum::<f64>()];
    let mut iterations_run = 0;

    for _ in 0..max_iter {
        iterations_run += 1;
        repair_empty(&mut assign, &mut dist, k);
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums.row_mut(a).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            sums.row_mut(j).iter_mut().for_each(|s| *s *= inv);
            shift = shift.max(libm::sqrt(squared_distance(sums.row(j), centroids.row(j))));
            centroids.row_mut(j).copy_from_slice(sums.row(j));
        }
        (assign, dist) = assign_all(points, &centroids);
        trace.push(dist.iter().sum());
        if shift < tol {
            break;
        }
    }

    let inertia = *trace.last().unwrap_or(&0.0);
    Ok((KMeansModel { centroids, inertia, iterations_run }, trace))
}

pub fn kmeans_fit(points: &Matrix, k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<KMeansModel> {
    kmeans_fit_traced(points, k, max_iter, tol, seed).map(|(m, _)| m)
}

/// Routes every point to its nearest centroid. `lambda` is computed over
/// these points and may contain zeros.
pub fn kmeans_assign(model: &KMeansModel, points: &Matrix) -> Result<ContextAssignment> {
    if points.cols != model.dim() {
        return Err(shape_mismatch(format!("points have dimension {}, centroids {}", points.cols, model.dim())));
    }
    let k = model.k();
    let indices: Vec<usize> = points.rows_iter().map(|p| model.nearest(p).0).collect();
    let mut lambda = vec![0.0; k];
    for &i in &indices {
        lambda[i] += 1.0;
    }
    let m = indices.len().max(1) as f64;
    lambda.iter_mut().for_each(|l| *l /= m);
    if indices.is_empty() {
        lambda = vec![1.0 / k as f64; k];
    }
    Ok(ContextAssignment { indices, k, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(seed: u64, per: usize) -> Matrix {
        let mut r = rng::seeded(seed, 3);
        let mut rows = Vec::new();
        for center in [-10.0, 10.0] {
            for _ in 0..per {
                rows.push(vec![center + 0.3 * rng::standard_normal(&mut r), center + 0.3 * rng::standard_normal(&mut r)]);
            }
        }
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn labels_to_contexts() {
        let a = contexts_from_labels(&[5, 5, 9, 5]).unwrap();
        assert_eq!(a.indices(), &[0, 0, 1, 0]);
        assert_eq!(a.k(), 2);
        assert_eq!(a.lambda(), &[0.75, 0.25]);

        let a = contexts_from_labels(&[3, 3, 3]).unwrap();
        assert_eq!((a.k(), a.lambda()), (1, &[1.0][..]));

        let a = contexts_from_labels(&[2, 7, 2, 7, 7, 1]).unwrap();
        assert_eq!(a.indices(), &[0, 1, 0, 1, 1, 2]);
        let expect = [1.0 / 3.0, 0.5, 1.0 / 6.0];
        for (l, e) in a.lambda().iter().zip(expect) {
            assert!((l - e).abs() < 1e-15);
        }
    }

    #[test]
    fn proportions() {
        assert_eq!(context_proportions(&[0, 1, 0, 1], 2).unwrap(), vec![0.5, 0.5]);
        assert_eq!(context_proportions(&[0, 0, 0], 2).unwrap_err().code(), "empty-context");
        let l = context_proportions(&[0, 1, 2, 2, 2, 1], 3).unwrap();
        for (a, e) in l.iter().zip([1.0 / 6.0, 1.0 / 3.0, 0.5]) {
            assert!((a - e).abs() < 1e-15);
        }
        assert_eq!(context_proportions(&[0, 3], 2).unwrap_err().code(), "bad-context");
    }

    #[test]
    fn kmeans_single_cluster_is_the_mean() {
        let pts = blobs(1, 20);
        let m = kmeans_fit(&pts, 1, 50, 0.0, 4).unwrap();
        for d in 0..2 {
            let mean = pts.rows_iter().map(|r| r[d]).sum::<f64>() / pts.rows as f64;
            assert!((m.centroids[(0, d)] - mean).abs() < 1e-12);
        }
        let total: f64 = pts.rows_iter().map(|r| squared_distance(r, m.centroids.row(0))).sum();
        assert!((m.inertia - total).abs() < 1e-9);
    }

    #[test]
    fn kmeans_two_blobs_any_seed() {
        let pts = blobs(2, 50);
        for seed in 0..10 {
            let m = kmeans_fit(&pts, 2, 100, 1e-9, seed).unwrap();
            for target in [-10.0, 10.0] {
                let blob_mean: Vec<f64> = (0..2)
                    .map(|d| {
                        let rows: Vec<&[f64]> = pts.rows_iter().filter(|r| (r[0] - target).abs() < 5.0).collect();
                        rows.iter().map(|r| r[d]).sum::<f64>() / rows.len() as f64
                    })
                    .collect();
                let (j, _) = m.nearest(&blob_mean);
                assert!(libm::sqrt(squared_distance(m.centroids.row(j), &blob_mean)) < 0.5);
            }
        }
    }

    #[test]
    fn kmeans_k_equals_n() {
        let pts = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0], vec![5.0, 5.0]]).unwrap();
        let m = kmeans_fit(&pts, 3, 10, 0.0, 0).unwrap();
        assert_eq!(m.inertia, 0.0);
        let a = kmeans_assign(&m, &pts).unwrap();
        let mut idx = a.indices().to_vec();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_errors() {
        let pts = Matrix::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(kmeans_fit(&pts, 2, 10, 0.0, 0).unwrap_err().code(), "too-few-points");
    }

    #[test]
    fn inertia_trace_never_increases() {
        let mut r = rng::seeded(12, 0);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| 4.0 * rng::standard_normal(&mut r)).collect()).collect();
        let pts = Matrix::from_rows(&rows).unwrap();
        for k in [2, 5, 9] {
            let (_, trace) = kmeans_fit_traced(&pts, k, 100, 0.0, k as u64).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{trace:?}");
            }
        }
    }

    #[test]
    fn assign_ties_and_exact_hits() {
        let model = KMeansModel {
            centroids: Matrix::from_rows(&[vec![-1.0, 0.0], vec![5.0, 5.0], vec![1.0, 0.0]]).unwrap(),
            inertia: 0.0,
            iterations_run: 0,
        };
        let pts = Matrix::from_rows(&[vec![5.0, 5.0], vec![0.0, 0.0]]).unwrap();
        let a = kmeans_assign(&model, &pts).unwrap();
        assert_eq!(a.indices(), &[1, 0]);
        assert_eq!(a.lambda(), &[0.5, 0.5, 0.0]);
        let bad = Matrix::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(kmeans_assign(&model, &bad).unwrap_err().code(), "shape-mismatch");
    }

    #[test]
    fn assign_matches_exhaustive_scan() {
        let mut r = rng::seeded(8, 0);
        let centroids =
            Matrix::from_rows(&(0..3).map(|_| (0..2).map(|_| rng::standard_normal(&mut r)).collect()).collect::<Vec<_>>()).unwrap();
        let model = KMeansModel { centroids: centroids.clone(), inertia: 0.0, iterations_run: 0 };
        let pts =
            Matrix::from_rows(&(0..100).map(|_| (0..2).map(|_| 2.0 * rng::standard_normal(&mut r)).collect()).collect::<Vec<_>>()).unwrap();
        let a = kmeans_assign(&model, &pts).unwrap();
        for (i, p) in pts.rows_iter().enumerate() {
            let d: Vec<f64> = (0..3)
                .map(|j| {
                    let (dx, dy) = (p[0] - centroids[(j, 0)], p[1] - centroids[(j, 1)]);
                    dx * dx + dy * dy
                })
                .collect();
            let assigned = d[a.indices()[i]];
            assert!(d.iter().all(|&other| assigned <= other));
        }
    }
}
