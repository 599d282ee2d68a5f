//! Shared numeric kernels: max-shifted log-sum-exp, softmax, softplus and the
//! generalized KL divergence.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `log Σ exp(v)` with max-shift. Empty input gives `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // all -inf, or a +inf entry
        return max;
    }
    let sum: f64 = values.iter().map(|&v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}

fn check_nan(y: &Matrix, what: &str) -> Result<()> {
    if y.has_nan() {
        return Err(Error::invalid(format!("{what}: NaN entry")));
    }
    Ok(())
}

/// Row-wise log-sum-exp of a `D x N` matrix, returning a length-`D` vector.
pub fn logsumexp_rows(y: &Matrix) -> Result<Vec<f64>> {
    check_nan(y, "logsumexp_rows")?;
    Ok((0..y.rows()).map(|r| logsumexp(y.row(r))).collect())
}

/// Column-wise log-sum-exp, returning a length-`N` vector.
pub fn logsumexp_cols(y: &Matrix) -> Result<Vec<f64>> {
    check_nan(y, "logsumexp_cols")?;
    let (rows, cols) = y.shape();
    let mut max = alloc::vec![f64::NEG_INFINITY; cols];
    for r in 0..rows {
        for (m, &v) in max.iter_mut().zip(y.row(r)) {
            *m = m.max(v);
        }
    }
    let mut acc = alloc::vec![0.0; cols];
    for r in 0..rows {
        for ((a, &m), &v) in acc.iter_mut().zip(&max).zip(y.row(r)) {
            if m.is_finite() {
                *a += libm::exp(v - m);
            }
        }
    }
    Ok(max
        .iter()
        .zip(&acc)
        .map(|(&m, &a)| if m.is_finite() { m + libm::log(a) } else { m })
        .collect())
}

/// Log-sum-exp over every entry of the matrix.
pub fn logsumexp_all(y: &Matrix) -> f64 {
    logsumexp(y.as_slice())
}

pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let lse = logsumexp(values);
    values.iter().map(|v| v - lse).collect()
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    log_softmax(values).into_iter().map(libm::exp).collect()
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Generalized KL divergence `<a, log a - log b> - <a - b, 1>`, with
/// `0 log 0 = 0`. `b` must be strictly positive.
pub fn generalized_kl(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            format!("length {}", a.len()),
            format!("length {}", b.len()),
        ));
    }
    let mut total = 0.0;
    for (i, (&ai, &bi)) in a.iter().zip(b).enumerate() {
        if !(bi > 0.0) || !bi.is_finite() {
            return Err(Error::invalid(format!(
                "generalized_kl: second argument must be positive, entry {i} is {bi}"
            )));
        }
        if !(ai >= 0.0) || !ai.is_finite() {
            return Err(Error::invalid(format!(
                "generalized_kl: first argument must be nonnegative, entry {i} is {ai}"
            )));
        }
        if ai > 0.0 {
            total += ai * (libm::log(ai) - libm::log(bi));
        }
        total -= ai - bi;
    }
    // rounding can leave a tiny negative value at a == b
    Ok(total.max(0.0))
}

/// Returns `true` if `v` is a probability vector with strictly positive
/// entries summing to one within `tol`.
pub fn is_simplex(v: &[f64], tol: f64) -> bool {
    !v.is_empty()
        && v.iter().all(|&x| x > 0.0 && x.is_finite())
        && (v.iter().sum::<f64>() - 1.0).abs() <= tol
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
