//! Dense-array substrate: NCHW batches, per-channel vectors, row-major
//! matrices, and the three primitives every normalization layer is built
//! from (channel moments, standardization, per-channel affine).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use crate::error::{shape_mismatch, Error, Result};

/// A block of activations laid out row-major as `(N, C, H, W)`.
///
/// Vector data of dimension `C` is encoded with `H = W = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Batch {
    pub fn new(shape: (usize, usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let batch = Self::from_raw(shape, data)?;
        if batch.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("batch contains NaN or Inf"));
        }
        Ok(batch)
    }

    /// Same as [`Batch::new`] without the finiteness scan. Used for values the
    /// crate computed itself.
    pub(crate) fn from_raw(shape: (usize, usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (n, c, h, w) = shape;
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(shape_mismatch(format!("batch dimensions must be positive, got {shape:?}")));
        }
        if data.len() != n * c * h * w {
            return Err(shape_mismatch(format!("batch {shape:?} needs {} values, got {}", n * c * h * w, data.len())));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn zeros(shape: (usize, usize, usize, usize)) -> Result<Self> {
        let (n, c, h, w) = shape;
        Self::from_raw(shape, vec![0.0; n * c * h * w])
    }

    /// Vector data: one row per sample, `H = W = 1`.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        Self::new((m.rows, m.cols, 1, 1), m.data.clone())
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    /// Number of spatial positions `H * W`.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Values of channel `c` of sample `n` (one `H * W` plane).
    pub fn plane_of(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.plane();
        let start = (n * self.c + c) * hw;
        &self.data[start..start + hw]
    }

    /// Flattens every sample into one row of length `C * H * W`.
    pub fn to_matrix(&self) -> Matrix {
        Matrix { rows: self.n, cols: self.c * self.h * self.w, data: self.data.clone() }
    }

    /// Per-sample channel means over spatial positions, as an `N x C` matrix.
    pub fn spatial_means(&self) -> Matrix {
        let hw = self.plane() as f64;
        let mut out = Matrix::zeros(self.n, self.c);
        for n in 0..self.n {
            for c in 0..self.c {
                out[(n, c)] = self.plane_of(n, c).iter().sum::<f64>() / hw;
            }
        }
        out
    }

    /// Samples `rows` in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let stride = self.c * self.plane();
        let mut data = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            if r >= self.n {
                return Err(shape_mismatch(format!("row {r} out of range for {} samples", self.n)));
            }
            data.extend_from_slice(&self.data[r * stride..(r + 1) * stride]);
        }
        Self::from_raw((rows.len(), self.c, self.h, self.w), data)
    }

    pub(crate) fn same_shape(&self, other: &Batch, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch(format!("{what}: {:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }
}

/// One real value per channel (a mean, a variance, a scale or a shift).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector(pub Vec<f64>);

impl ChannelVector {
    pub fn filled(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }

    pub fn zeros(len: usize) -> Self {
        Self::filled(len, 0.0)
    }

    pub fn ones(len: usize) -> Self {
        Self::filled(len, 1.0)
    }
}

impl From<Vec<f64>> for ChannelVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ChannelVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ChannelVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Row-major `rows x cols` real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_mismatch(format!("matrix {rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(shape_mismatch(format!("row {i} has {} values, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows_iter().map(<[f64]>::to_vec).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix { rows: rows.len(), cols: self.cols, data }
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-channel mean and biased variance over the selected samples and all
/// of their spatial positions.
///
/// Two passes: the mean first, then squared deviations from it.
pub fn channel_moments(batch: &Batch, sample_mask: Option<&[bool]>) -> Result<(ChannelVector, ChannelVector)> {
    let (n, c, _, _) = batch.shape();
    if let Some(mask) = sample_mask {
        if mask.len() != n {
            return Err(shape_mismatch(format!("mask has {} entries for {n} samples", mask.len())));
        }
    }
    let selected = |i: usize| sample_mask.is_none_or(|m| m[i]);
    let count = (0..n).filter(|&i| selected(i)).count();
    if count == 0 {
        return Err(Error::EmptySelection);
    }
    let total = (count * batch.plane()) as f64;

    let mut mean = ChannelVector::zeros(c);
    for i in (0..n).filter(|&i| selected(i)) {
        for (ch, m) in mean.iter_mut().enumerate() {
            *m += batch.plane_of(i, ch).iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);

    let mut var = ChannelVector::zeros(c);
    for i in (0..n).filter(|&i| selected(i)) {
        for (ch, v) in var.iter_mut().enumerate() {
            let mu = mean[ch];
            *v += batch.plane_of(i, ch).iter().map(|x| (x - mu) * (x - mu)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= total);

    if mean.iter().chain(var.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("channel moments"));
    }
    Ok((mean, var))
}

fn check_channels(batch: &Batch, v: &ChannelVector, what: &str) -> Result<()> {
    if v.len() != batch.channels() {
        return Err(shape_mismatch(format!("{what} has {} channels, batch has {}", v.len(), batch.channels())));
    }
    Ok(())
}

/// `(x - mean[c]) / sqrt(var[c] + eps)` elementwise.
pub fn standardize(batch: &Batch, mean: &ChannelVector, var: &ChannelVector, eps: f64) -> Result<Batch> {
    if !(eps > 0.0) {
        return Err(Error::BadEpsilon(eps));
    }
    check_channels(batch, mean, "mean")?;
    check_channels(batch, var, "var")?;
    let (n, c, _, _) = batch.shape();
    let hw = batch.plane();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
    let mut out = batch.clone();
    for i in 0..n {
        for ch in 0..c {
            let start = (i * c + ch) * hw;
            for x in &mut out.data[start..start + hw] {
                *x = (*x - mean[ch]) * inv_std[ch];
            }
        }
    }
    Ok(out)
}

/// `scale[c] * x + shift[c]` elementwise.
pub fn affine(batch: &Batch, scale: &ChannelVector, shift: &ChannelVector) -> Result<Batch> {
    check_channels(batch, scale, "scale")?;
    check_channels(batch, shift, "shift")?;
    let (n, c, _, _) = batch.shape();
    let hw = batch.plane();
    let mut out = batch.clone();
    for i in 0..n {
        for ch in 0..c {
            let start = (i * c + ch) * hw;
            for x in &mut out.data[start..start + hw] {
                *x = scale[ch] * *x + shift[ch];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_batch(seed: u64, shape: (usize, usize, usize, usize)) -> Batch {
        let mut r = rng::seeded(seed, 0);
        let len = shape.0 * shape.1 * shape.2 * shape.3;
        Batch::new(shape, (0..len).map(|_| 3.0 * rng::standard_normal(&mut r) + 1.0).collect()).unwrap()
    }

    /// Scalar-loop oracle over NCHW indices, independent of `plane_of`.
    fn loop_moments(b: &Batch, mask: Option<&[bool]>) -> (Vec<f64>, Vec<f64>) {
        let (n, c, h, w) = b.shape();
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for ch in 0..c {
            let mut vals = Vec::new();
            for i in 0..n {
                if mask.is_some_and(|m| !m[i]) {
                    continue;
                }
                for y in 0..h {
                    for x in 0..w {
                        vals.push(b.data()[((i * c + ch) * h + y) * w + x]);
                    }
                }
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            means.push(m);
            vars.push(v);
        }
        (means, vars)
    }

    #[test]
    fn constant_single_sample() {
        let b = Batch::new((1, 2, 2, 1), vec![4.0, 4.0, -1.5, -1.5]).unwrap();
        let (m, v) = channel_moments(&b, None).unwrap();
        assert_eq!(m.0, vec![4.0, -1.5]);
        assert_eq!(v.0, vec![0.0, 0.0]);
    }

    #[test]
    fn symmetric_pair() {
        let b = Batch::new((2, 1, 1, 1), vec![0.0, 2.0]).unwrap();
        let (m, v) = channel_moments(&b, None).unwrap();
        assert_eq!((m[0], v[0]), (1.0, 1.0));
    }

    #[test]
    fn masked_moments_match_loop_oracle() {
        let b = random_batch(7, (4, 2, 1, 1));
        let mask = [true, false, true, false];
        let (m, v) = channel_moments(&b, Some(&mask)).unwrap();
        let (om, ov) = loop_moments(&b, Some(&mask));
        for ch in 0..2 {
            assert!((m[ch] - om[ch]).abs() <= 1e-10 * om[ch].abs().max(1.0));
            assert!((v[ch] - ov[ch]).abs() <= 1e-10 * ov[ch].abs().max(1.0));
        }
    }

    #[test]
    fn moments_agree_with_loop_oracle_randomized() {
        let mut r = rng::seeded(99, 1);
        for trial in 0..100 {
            let shape = (1 + rng::index(&mut r, 8), 1 + rng::index(&mut r, 8), 1 + rng::index(&mut r, 8), 1 + rng::index(&mut r, 8));
            let b = random_batch(trial, shape);
            let (m, v) = channel_moments(&b, None).unwrap();
            let (om, ov) = loop_moments(&b, None);
            for ch in 0..shape.1 {
                assert!((m[ch] - om[ch]).abs() <= 1e-10 * om[ch].abs().max(1e-300) + 1e-15);
                assert!((v[ch] - ov[ch]).abs() <= 1e-10 * ov[ch].abs() + 1e-15);
            }
        }
    }

    #[test]
    fn empty_selection_and_non_finite() {
        let b = Batch::new((2, 1, 1, 1), vec![0.0, 1.0]).unwrap();
        assert_eq!(channel_moments(&b, Some(&[false, false])).unwrap_err().code(), "empty-selection");
        let err = Batch::new((1, 1, 1, 1), vec![f64::NAN]).unwrap_err();
        assert_eq!(err.code(), "non-finite");
        let mut b = b;
        b.data_mut()[0] = f64::INFINITY;
        assert_eq!(channel_moments(&b, None).unwrap_err().code(), "non-finite");
    }

    #[test]
    fn standardize_hand_values() {
        let b = Batch::new((2, 1, 1, 1), vec![0.0, 2.0]).unwrap();
        let out = standardize(&b, &ChannelVector(vec![1.0]), &ChannelVector(vec![1.0]), 3.0).unwrap();
        assert_eq!(out.data(), &[-0.5, 0.5]);
    }

    #[test]
    fn standardize_identity_parameters() {
        let b = random_batch(3, (3, 2, 2, 2));
        let out = standardize(&b, &ChannelVector::zeros(2), &ChannelVector::ones(2), 1e-12).unwrap();
        for (a, e) in out.data().iter().zip(b.data()) {
            assert!((a - e).abs() <= 1e-11 * e.abs().max(1.0));
        }
        let err = standardize(&b, &ChannelVector::zeros(2), &ChannelVector::ones(2), 0.0).unwrap_err();
        assert_eq!(err.code(), "bad-epsilon");
    }

    #[test]
    fn standardize_with_own_moments() {
        let b = random_batch(5, (6, 3, 2, 2));
        let (m, v) = channel_moments(&b, None).unwrap();
        let max_var = v.iter().cloned().fold(0.0, f64::max);
        let out = standardize(&b, &m, &v, 1e-8 * max_var).unwrap();
        let (om, ov) = channel_moments(&out, None).unwrap();
        for ch in 0..3 {
            assert!(om[ch].abs() <= 1e-6);
            assert!((ov[ch] - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn affine_cases() {
        let b = Batch::new((3, 1, 1, 1), vec![0.0, 0.5, 1.0]).unwrap();
        let out = affine(&b, &ChannelVector(vec![2.0]), &ChannelVector(vec![-1.0])).unwrap();
        assert_eq!(out.data(), &[-1.0, 0.0, 1.0]);

        let b = random_batch(1, (2, 2, 1, 2));
        assert_eq!(affine(&b, &ChannelVector::ones(2), &ChannelVector::zeros(2)).unwrap(), b);
        let out = affine(&b, &ChannelVector::zeros(2), &ChannelVector(vec![3.0, -2.0])).unwrap();
        for n in 0..2 {
            assert!(out.plane_of(n, 0).iter().all(|&x| x == 3.0));
            assert!(out.plane_of(n, 1).iter().all(|&x| x == -2.0));
        }
        let err = affine(&b, &ChannelVector::ones(3), &ChannelVector::zeros(2)).unwrap_err();
        assert_eq!(err.code(), "shape-mismatch");
    }

    #[test]
    fn affine_of_standardize_follows_affine_law() {
        // With fixed statistics the layer is affine in x:
        // f(a*x + b) - f(x) = gamma * ((a - 1) * x + b) / sd.
        let b = random_batch(11, (4, 2, 1, 1));
        let mean = ChannelVector(vec![0.3, -0.7]);
        let var = ChannelVector(vec![2.0, 0.5]);
        let eps = 1e-5;
        let gamma = ChannelVector(vec![1.5, -0.5]);
        let beta = ChannelVector(vec![0.2, 0.1]);
        let (a, shift) = (2.5, -1.25);
        let f = |x: &Batch| affine(&standardize(x, &mean, &var, eps).unwrap(), &gamma, &beta).unwrap();
        let mut moved = b.clone();
        moved.data_mut().iter_mut().for_each(|x| *x = a * *x + shift);
        let (fx, fm) = (f(&b), f(&moved));
        for n in 0..4 {
            for c in 0..2 {
                let sd = libm::sqrt(var[c] + eps);
                let x = b.plane_of(n, c)[0];
                let expect = fx.plane_of(n, c)[0] + gamma[c] * ((a - 1.0) * x + shift) / sd;
                assert!((fm.plane_of(n, c)[0] - expect).abs() < 1e-12);
            }
        }
    }
}
