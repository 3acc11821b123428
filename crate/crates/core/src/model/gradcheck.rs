use alloc::vec::Vec;

use crate::error::{shape_mismatch, Error, Result};

/// Largest relative error between analytic and central-difference
/// gradients, per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.iter().all(|&e| e <= self.tol)
    }

    pub fn failing_blocks(&self) -> Vec<usize> {
        (0..self.max_rel_error.len()).filter(|&b| !(self.max_rel_error[b] <= self.tol)).collect()
    }

    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// vanishing gradients from turning round-off into large ratios.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares `analytic` with `(f(theta + h e_i) - f(theta - h e_i)) / 2h` for
/// every coordinate of every block. The loss is evaluated twice at `params`
/// first; differing results are reported as a nondeterministic loss.
pub fn finite_diff_check(
    mut loss_fn: impl FnMut(&[Vec<f64>]) -> f64,
    params: &[Vec<f64>],
    analytic: &[Vec<f64>],
    step: f64,
    tol: f64,
) -> Result<GradReport> {
    if !(step > 0.0) {
        return Err(Error::BadParameter("finite-difference step must be positive".into()));
    }
    if params.len() != analytic.len() || params.iter().zip(analytic).any(|(p, a)| p.len() != a.len()) {
        return Err(shape_mismatch("analytic gradient does not match parameter blocks"));
    }
    let first = loss_fn(params);
    let second = loss_fn(params);
    if first.to_bits() != second.to_bits() {
        return Err(Error::NondeterministicLoss(first, second));
    }
    let mut probe = params.to_vec();
    let mut max_rel_error = Vec::with_capacity(params.len());
    for b in 0..params.len() {
        let mut worst: f64 = 0.0;
        for i in 0..params[b].len() {
            let x = params[b][i];
            probe[b][i] = x + step;
            let up = loss_fn(&probe);
            probe[b][i] = x - step;
            let down = loss_fn(&probe);
            probe[b][i] = x;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[b][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        max_rel_error.push(worst);
    }
    Ok(GradReport { max_rel_error, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::cell::Cell;

    fn half_norm(p: &[Vec<f64>]) -> f64 {
        0.5 * p.iter().flatten().map(|x| x * x).sum::<f64>()
    }

    #[test]
    fn quadratic_is_exact() {
        let params = vec![vec![0.7, -1.3, 2.0], vec![-0.9, 1.1]];
        let report = finite_diff_check(half_norm, &params, &params, 1e-4, 1e-8).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn corrupted_block_is_flagged() {
        let params = vec![vec![0.7, -1.3], vec![1.5], vec![-0.6, 0.8]];
        let mut grads = params.clone();
        for g in &mut grads[1] {
            *g *= 1.1;
        }
        let report = finite_diff_check(half_norm, &params, &grads, 1e-4, 1e-6).unwrap();
        assert_eq!(report.failing_blocks(), vec![1]);
    }

    #[test]
    fn nondeterministic_loss_is_detected() {
        let calls = Cell::new(0.0);
        let noisy = |p: &[Vec<f64>]| {
            calls.set(calls.get() + 1.0);
            half_norm(p) + calls.get() * 1e-9
        };
        let params = vec![vec![1.0]];
        let err = finite_diff_check(noisy, &params, &params, 1e-4, 1e-6).unwrap_err();
        assert_eq!(err.code(), "nondeterministic-loss");
    }
}
