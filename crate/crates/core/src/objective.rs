//! Covariances, the structural cost and the ROT objective.

use alloc::format;

use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix};
use crate::numeric::generalized_kl;
use crate::params::{RotParams, Smoothness};
use crate::types::{CovariancePair, SampleSet, TransportPlan};

/// Population covariances of the features (`D x D`, over samples) and of the
/// samples (`N x N`, over features).
///
/// With a single sample (or a single feature) the corresponding matrix is
/// zero and the structural term vanishes.
pub fn compute_covariances(x: &SampleSet) -> CovariancePair {
    let data = x.data();
    let (d, n) = data.shape();

    let row_means: alloc::vec::Vec<f64> =
        data.row_sums().into_iter().map(|s| s / n as f64).collect();
    let centered_rows = Matrix::from_fn(d, n, |r, c| data[(r, c)] - row_means[r]);
    let sigma1 = gemm(&centered_rows, false, &centered_rows, true)
        .expect("shapes agree")
        .scale(1.0 / n as f64);

    let col_means: alloc::vec::Vec<f64> =
        data.col_sums().into_iter().map(|s| s / d as f64).collect();
    let centered_cols = Matrix::from_fn(d, n, |r, c| data[(r, c)] - col_means[c]);
    let sigma2 = gemm(&centered_cols, true, &centered_cols, false)
        .expect("shapes agree")
        .scale(1.0 / d as f64);

    CovariancePair::from_parts_unchecked(symmetrize(sigma1), symmetrize(sigma2))
}

fn symmetrize(m: Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| 0.5 * (m[(r, c)] + m[(c, r)]))
}

/// `Σ1 P Σ2ᵀ`, or `Σ1ᵀ P Σ2` when `transposed` is set.
pub fn structural_product(cov: &CovariancePair, plan: &Matrix, transposed: bool) -> Result<Matrix> {
    cov.check_dims(plan.rows(), plan.cols())?;
    let left = gemm(cov.sigma1(), transposed, plan, false)?;
    gemm(&left, false, cov.sigma2(), !transposed)
}

/// Evaluates the ROT objective at `plan`. Covariances are computed from `x`
/// when the structural weight is positive.
pub fn rot_objective(x: &SampleSet, plan: &TransportPlan, params: &RotParams) -> Result<f64> {
    if params.alpha0 > 0.0 {
        let cov = compute_covariances(x);
        rot_objective_with(x, Some(&cov), plan, params)
    } else {
        rot_objective_with(x, None, plan, params)
    }
}

/// Like [`rot_objective`] with caller-supplied similarity matrices.
pub fn rot_objective_with(
    x: &SampleSet,
    cov: Option<&CovariancePair>,
    plan: &TransportPlan,
    params: &RotParams,
) -> Result<f64> {
    let data = x.data();
    if data.shape() != plan.shape() {
        return Err(Error::shape(
            format!("plan of shape {}x{}", data.rows(), data.cols()),
            format!("{}x{}", plan.shape().0, plan.shape().1),
        ));
    }
    let (d, n) = data.shape();
    if params.p0.len() != d || params.q0.len() != n {
        return Err(Error::shape(
            format!("priors of length {d} and {n}"),
            format!("{} and {}", params.p0.len(), params.q0.len()),
        ));
    }
    let p = plan.plan();
    let mut total = -data.dot(p)?;

    if params.alpha0 > 0.0 {
        let cov = cov.ok_or_else(|| Error::invalid("structural term needs similarity matrices"))?;
        let structural = structural_product(cov, p, false)?;
        total -= params.alpha0 * structural.dot(p)?;
    }

    if params.alpha1 > 0.0 {
        let reg = match params.smoothness {
            Smoothness::Entropic => p
                .as_slice()
                .iter()
                .zip(plan.log_plan().as_slice())
                .map(|(&v, &lv)| v * (lv - 1.0))
                .sum::<f64>(),
            Smoothness::Quadratic => p.as_slice().iter().map(|v| v * v).sum(),
        };
        total += params.alpha1 * reg;
    }
    if params.alpha2 > 0.0 {
        total += params.alpha2 * generalized_kl(plan.marginal_row(), &params.p0)?;
    }
    if params.alpha3 > 0.0 {
        total += params.alpha3 * generalized_kl(plan.marginal_col(), &params.q0)?;
    }
    Ok(total)
}
