//! Core value types: the input set, the transport plan and the pair of
//! similarity matrices used by the structural term.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numeric::logsumexp_all;

/// A set of `N` samples with `D` features, stored as a `D x N` matrix
/// (one column per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: Matrix,
}

impl SampleSet {
    /// Validated construction: finite, nonnegative, at least one row and column.
    pub fn new(data: Matrix) -> Result<Self> {
        Self::check_shape_and_finite(&data)?;
        for r in 0..data.rows() {
            for (c, &v) in data.row(r).iter().enumerate() {
                if v < 0.0 {
                    return Err(Error::invalid(format!(
                        "negative entry {v} at row {}, col {}",
                        r + 1,
                        c + 1
                    )));
                }
            }
        }
        Ok(SampleSet { data })
    }

    /// Like [`SampleSet::new`] but accepts negative entries. The solvers are
    /// well defined for any finite `X`; only the pooling interpretation
    /// assumes nonnegative data.
    pub fn new_signed(data: Matrix) -> Result<Self> {
        Self::check_shape_and_finite(&data)?;
        Ok(SampleSet { data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    fn check_shape_and_finite(data: &Matrix) -> Result<()> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::invalid(format!(
                "sample set must be at least 1x1, got {}x{}",
                data.rows(),
                data.cols()
            )));
        }
        for r in 0..data.rows() {
            for (c, &v) in data.row(r).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite entry at row {}, col {}",
                        r + 1,
                        c + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    /// Number of feature dimensions `D`.
    pub fn features(&self) -> usize {
        self.data.rows()
    }

    /// Number of samples `N`.
    pub fn samples(&self) -> usize {
        self.data.cols()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.as_slice().iter().all(|&v| v >= 0.0)
    }

    /// Reorders the samples; column `j` of the result is sample `perm[j]`.
    pub fn permute_samples(&self, perm: &[usize]) -> Result<SampleSet> {
        Ok(SampleSet {
            data: self.data.permute_columns(perm)?,
        })
    }
}

/// A joint distribution over (feature, sample) pairs, normalized to unit mass.
///
/// The log-domain matrix is canonical; the plan and both marginals are derived
/// from it at construction. `raw_log_mass` remembers the log of the total mass
/// before normalization, which is what the stability studies inspect.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    log_plan: Matrix,
    plan: Matrix,
    marginal_row: Vec<f64>,
    marginal_col: Vec<f64>,
    raw_log_mass: f64,
}

impl TransportPlan {
    /// Normalizes an unnormalized log-plan into `Ω`. Any non-finite entry, or
    /// a total mass whose log is non-finite, is reported as a numerical failure.
    pub fn from_log(mut log_plan: Matrix) -> Result<Self> {
        if !log_plan.is_finite() {
            return Err(Error::NumericalFailure {
                stage: "plan",
                iteration: 0,
                context: "non-finite entry in log-plan".into(),
            });
        }
        let lse = logsumexp_all(&log_plan);
        if !lse.is_finite() {
            return Err(Error::NumericalFailure {
                stage: "plan",
                iteration: 0,
                context: format!("log of total mass is {lse}"),
            });
        }
        log_plan.map_inplace(|v| v - lse);
        let plan = log_plan.exp();
        let marginal_row = plan.row_sums();
        let marginal_col = plan.col_sums();
        Ok(TransportPlan {
            log_plan,
            plan,
            marginal_row,
            marginal_col,
            raw_log_mass: lse,
        })
    }

    /// Builds a plan from strictly positive entries (rescaled to unit mass).
    pub fn from_plan(plan: &Matrix) -> Result<Self> {
        if plan.as_slice().iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("plan entries must be positive and finite"));
        }
        Self::from_log(plan.map(libm::log))
    }

    /// The product plan `p qᵀ`.
    pub fn product(p: &[f64], q: &[f64]) -> Result<Self> {
        Self::from_plan(&Matrix::outer(p, q))
    }

    pub fn log_plan(&self) -> &Matrix {
        &self.log_plan
    }

    pub fn plan(&self) -> &Matrix {
        &self.plan
    }

    /// `P 1_N`.
    pub fn marginal_row(&self) -> &[f64] {
        &self.marginal_row
    }

    /// `Pᵀ 1_D`.
    pub fn marginal_col(&self) -> &[f64] {
        &self.marginal_col
    }

    pub fn shape(&self) -> (usize, usize) {
        self.plan.shape()
    }

    /// Total mass of the iterate before it was normalized into `Ω`.
    pub fn raw_mass(&self) -> f64 {
        libm::exp(self.raw_log_mass)
    }

    pub fn raw_log_mass(&self) -> f64 {
        self.raw_log_mass
    }

    /// Row-normalized plan `diag(P 1)^-1 P`, the conditional distribution of
    /// sample indices given each feature dimension.
    pub fn conditional(&self) -> Result<Matrix> {
        let mut out = self.plan.clone();
        for (r, &mass) in self.marginal_row.iter().enumerate() {
            if !(mass > 0.0) {
                return Err(Error::DegeneratePlan { row: r });
            }
            for v in out.row_mut(r) {
                *v /= mass;
            }
        }
        Ok(out)
    }

    /// Reorders columns, consistent with [`SampleSet::permute_samples`].
    pub fn permute_samples(&self, perm: &[usize]) -> Result<TransportPlan> {
        let mut out = Self::from_log(self.log_plan.permute_columns(perm)?)?;
        out.raw_log_mass = self.raw_log_mass;
        Ok(out)
    }
}

/// Feature-level (`D x D`) and sample-level (`N x N`) similarity matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    sigma1: Matrix,
    sigma2: Matrix,
}

impl CovariancePair {
    const SYMMETRY_TOL: f64 = 1e-10;

    /// Accepts externally supplied similarity matrices (covariances, cosine
    /// similarities, kernels). Both must be square and symmetric.
    pub fn new(sigma1: Matrix, sigma2: Matrix) -> Result<Self> {
        for (name, m) in [("sigma1", &sigma1), ("sigma2", &sigma2)] {
            if m.rows() != m.cols() {
                return Err(Error::shape(
                    format!("square {name}"),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
            if !m.is_finite() {
                return Err(Error::invalid(format!("{name} has non-finite entries")));
            }
            for r in 0..m.rows() {
                for c in 0..r {
                    let scale = 1.0f64.max(m[(r, c)].abs());
                    if (m[(r, c)] - m[(c, r)]).abs() > Self::SYMMETRY_TOL * scale {
                        return Err(Error::invalid(format!(
                            "{name} is not symmetric at ({r}, {c})"
                        )));
                    }
                }
            }
        }
        Ok(CovariancePair { sigma1, sigma2 })
    }

    pub(crate) fn from_parts_unchecked(sigma1: Matrix, sigma2: Matrix) -> Self {
        CovariancePair { sigma1, sigma2 }
    }

    pub fn sigma1(&self) -> &Matrix {
        &self.sigma1
    }

    pub fn sigma2(&self) -> &Matrix {
        &self.sigma2
    }

    pub(crate) fn check_dims(&self, d: usize, n: usize) -> Result<()> {
        if self.sigma1.rows() != d || self.sigma2.rows() != n {
            return Err(Error::shape(
                format!("similarities of size {d} and {n}"),
                format!("{} and {}", self.sigma1.rows(), self.sigma2.rows()),
            ));
        }
        Ok(())
    }
}
