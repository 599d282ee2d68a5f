//! Model parameters: regularizer weights, marginal priors and solver knobs,
//! plus the mapping from unconstrained parameters.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::numeric::{is_simplex, softmax, softplus};
use crate::types::SampleSet;

/// Smoothness regularizer `R(P)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Smoothness {
    /// `<P, log P - 1>`
    Entropic,
    /// `‖P‖²_F`
    Quadratic,
}

impl Smoothness {
    pub fn name(self) -> &'static str {
        match self {
            Smoothness::Entropic => "entropic",
            Smoothness::Quadratic => "quadratic",
        }
    }
}

/// Parameters of one ROT problem plus the knobs of both solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct RotParams {
    /// Structural (Gromov-Wasserstein) weight.
    pub alpha0: f64,
    /// Smoothness weight.
    pub alpha1: f64,
    /// Row-marginal KL weight.
    pub alpha2: f64,
    /// Column-marginal KL weight.
    pub alpha3: f64,
    /// Row-marginal prior, length `D`.
    pub p0: Vec<f64>,
    /// Column-marginal prior, length `N`.
    pub q0: Vec<f64>,
    /// Bregman divergence weight (ADMM solver).
    pub rho: f64,
    /// Proximal weight (Sinkhorn solver). `None` resolves to 1 when the
    /// structural term is active and 0 otherwise.
    pub tau: Option<f64>,
    /// Number of outer modules `T`.
    pub outer_iters: usize,
    /// Sinkhorn steps per outer module `K`.
    pub inner_iters: usize,
    /// Early-exit threshold on the sup-norm change of the Sinkhorn duals;
    /// zero disables early exit.
    pub inner_tol: f64,
    pub smoothness: Smoothness,
}

impl RotParams {
    pub const DEFAULT_RHO: f64 = 1.0;
    pub const DEFAULT_OUTER: usize = 8;
    pub const DEFAULT_INNER: usize = 32;
    pub const DEFAULT_INNER_TOL: f64 = 1e-9;
    /// Smallest admissible `alpha1 + tau` for the Sinkhorn dual.
    pub const MIN_ENTROPIC_WEIGHT: f64 = 1e-8;
    const SIMPLEX_TOL: f64 = 1e-10;

    /// Uniform priors, unit weights, no structural term, default knobs.
    pub fn uniform(d: usize, n: usize) -> Self {
        RotParams {
            alpha0: 0.0,
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
            p0: vec![1.0 / d as f64; d],
            q0: vec![1.0 / n as f64; n],
            rho: Self::DEFAULT_RHO,
            tau: None,
            outer_iters: Self::DEFAULT_OUTER,
            inner_iters: Self::DEFAULT_INNER,
            inner_tol: Self::DEFAULT_INNER_TOL,
            smoothness: Smoothness::Entropic,
        }
    }

    pub fn with_alphas(mut self, alpha0: f64, alpha1: f64, alpha2: f64, alpha3: f64) -> Self {
        self.alpha0 = alpha0;
        self.alpha1 = alpha1;
        self.alpha2 = alpha2;
        self.alpha3 = alpha3;
        self
    }

    pub fn with_priors(mut self, p0: Vec<f64>, q0: Vec<f64>) -> Self {
        self.p0 = p0;
        self.q0 = q0;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    pub fn with_iters(mut self, outer: usize, inner: usize) -> Self {
        self.outer_iters = outer;
        self.inner_iters = inner;
        self
    }

    pub fn with_inner_tol(mut self, tol: f64) -> Self {
        self.inner_tol = tol;
        self
    }

    pub fn with_smoothness(mut self, smoothness: Smoothness) -> Self {
        self.smoothness = smoothness;
        self
    }

    /// Effective proximal weight.
    pub fn tau(&self) -> f64 {
        self.tau
            .unwrap_or(if self.alpha0 > 0.0 { 1.0 } else { 0.0 })
    }

    /// `alpha1 + tau`, the entropic weight of each Sinkhorn subproblem.
    pub fn entropic_weight(&self) -> f64 {
        self.alpha1 + self.tau()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p0.len(), self.q0.len())
    }

    /// Checks every invariant against a `D x N` problem.
    pub fn validate(&self, d: usize, n: usize) -> Result<()> {
        let alphas = [self.alpha0, self.alpha1, self.alpha2, self.alpha3];
        for (i, a) in alphas.iter().enumerate() {
            if !(*a >= 0.0) || !a.is_finite() {
                return Err(Error::invalid(format!("alpha{i} must be finite and >= 0, got {a}")));
            }
        }
        if self.p0.len() != d || self.q0.len() != n {
            return Err(Error::shape(
                format!("priors of length {d} and {n}"),
                format!("{} and {}", self.p0.len(), self.q0.len()),
            ));
        }
        if !is_simplex(&self.p0, Self::SIMPLEX_TOL) {
            return Err(Error::invalid("p0 must be a positive probability vector"));
        }
        if !is_simplex(&self.q0, Self::SIMPLEX_TOL) {
            return Err(Error::invalid("q0 must be a positive probability vector"));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::invalid(format!("rho must be positive, got {}", self.rho)));
        }
        let tau = self.tau();
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("tau must be >= 0, got {tau}")));
        }
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::invalid("outer and inner iteration counts must be >= 1"));
        }
        if !(self.inner_tol >= 0.0) {
            return Err(Error::invalid("inner_tol must be >= 0"));
        }
        Ok(())
    }
}

/// How the marginal priors are produced from the data.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    Uniform,
    Supplied { p0: Vec<f64>, q0: Vec<f64> },
    /// `p0 = softmax(U X 1_N)`, `q0 = softmax(wᵀ tanh(V X))`.
    Attention { w: Vec<f64>, v: Matrix, u: Matrix },
}

/// Unconstrained parameters: weights pass through softplus.
#[derive(Debug, Clone, PartialEq)]
pub struct RawParams {
    pub beta: [f64; 4],
    pub prior: PriorSpec,
}

/// Maps unconstrained parameters onto a valid [`RotParams`] for `x`. Solver
/// knobs take their defaults.
pub fn constrain_params(raw: &RawParams, x: &SampleSet) -> Result<RotParams> {
    const SUPPLIED_TOL: f64 = 1e-8;
    let (d, n) = (x.features(), x.samples());
    let [a0, a1, a2, a3] = raw.beta.map(softplus);
    let (p0, q0) = match &raw.prior {
        PriorSpec::Uniform => (vec![1.0 / d as f64; d], vec![1.0 / n as f64; n]),
        PriorSpec::Supplied { p0, q0 } => {
            if p0.len() != d || q0.len() != n {
                return Err(Error::shape(
                    format!("priors of length {d} and {n}"),
                    format!("{} and {}", p0.len(), q0.len()),
                ));
            }
            if !is_simplex(p0, SUPPLIED_TOL) || !is_simplex(q0, SUPPLIED_TOL) {
                return Err(Error::invalid("supplied priors are off the simplex"));
            }
            (renormalize(p0), renormalize(q0))
        }
        PriorSpec::Attention { w, v, u } => {
            if w.len() != d || v.shape() != (d, d) || u.shape() != (d, d) {
                return Err(Error::shape(
                    format!("w of length {d}, V and U of {d}x{d}"),
                    format!(
                        "w of length {}, V {}x{}, U {}x{}",
                        w.len(),
                        v.rows(),
                        v.cols(),
                        u.rows(),
                        u.cols()
                    ),
                ));
            }
            let row_totals = Matrix::from_vec(d, 1, x.data().row_sums())?;
            let logits_p = u.matmul(&row_totals)?.into_vec();
            let hidden = v.matmul(x.data())?.map(libm::tanh);
            let w_row = Matrix::from_vec(1, d, w.clone())?;
            let logits_q = w_row.matmul(&hidden)?.into_vec();
            (softmax(&logits_p), softmax(&logits_q))
        }
    };
    let params = RotParams::uniform(d, n)
        .with_alphas(a0, a1, a2, a3)
        .with_priors(p0, q0);
    params.validate(d, n)?;
    Ok(params)
}

fn renormalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x22() -> SampleSet {
        SampleSet::from_rows(&[[1.0, 2.0], [4.0, 3.0]]).unwrap()
    }

    #[test]
    fn softplus_of_zero_betas() {
        let raw = RawParams { beta: [0.0; 4], prior: PriorSpec::Uniform };
        let p = constrain_params(&raw, &x22()).unwrap();
        for a in [p.alpha0, p.alpha1, p.alpha2, p.alpha3] {
            assert!((a - core::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_prior_four_samples() {
        let x = SampleSet::from_rows(&[[1.0, 2.0, 3.0, 4.0]]).unwrap();
        let raw = RawParams { beta: [0.0; 4], prior: PriorSpec::Uniform };
        let p = constrain_params(&raw, &x).unwrap();
        assert_eq!(p.q0, vec![0.25; 4]);
        assert_eq!(p.p0, vec![1.0]);
    }

    #[test]
    fn attention_with_zero_w_is_uniform_over_samples() {
        let x = SampleSet::from_rows(&[[1.0, 7.0, 0.5], [4.0, 3.0, 2.0]]).unwrap();
        let v = Matrix::from_rows(&[[0.3, -1.0], [2.0, 0.1]]).unwrap();
        let u = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let raw = RawParams {
            beta: [0.0; 4],
            prior: PriorSpec::Attention { w: vec![0.0, 0.0], v, u },
        };
        let p = constrain_params(&raw, &x).unwrap();
        for q in &p.q0 {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
        // U X 1 = [8.5, 18] -> softmax
        let expected = softmax(&[8.5, 18.0]);
        assert!((p.p0[0] - expected[0]).abs() < 1e-15);
    }

    #[test]
    fn attention_shape_mismatch() {
        let raw = RawParams {
            beta: [0.0; 4],
            prior: PriorSpec::Attention {
                w: vec![0.0; 3],
                v: Matrix::zeros(2, 2),
                u: Matrix::zeros(2, 2),
            },
        };
        assert!(constrain_params(&raw, &x22()).is_err());
    }

    #[test]
    fn supplied_priors_checked_against_simplex() {
        let raw = RawParams {
            beta: [0.0; 4],
            prior: PriorSpec::Supplied { p0: vec![0.5, 0.5], q0: vec![0.5, 0.6] },
        };
        assert!(matches!(constrain_params(&raw, &x22()), Err(Error::InvalidInput(_))));
        let raw = RawParams {
            beta: [0.0; 4],
            prior: PriorSpec::Supplied { p0: vec![0.5, 0.5], q0: vec![0.3, 0.7 + 5e-9] },
        };
        let p = constrain_params(&raw, &x22()).unwrap();
        assert!((p.q0.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tau_default_follows_structural_weight() {
        let p = RotParams::uniform(2, 2);
        assert_eq!(p.tau(), 0.0);
        assert_eq!(p.clone().with_alphas(0.1, 1.0, 1.0, 1.0).tau(), 1.0);
        assert_eq!(p.with_tau(0.25).tau(), 0.25);
    }

    #[test]
    fn validation_rejects_bad_knobs() {
        let ok = RotParams::uniform(2, 3);
        assert!(ok.validate(2, 3).is_ok());
        assert!(ok.validate(3, 3).is_err());
        assert!(ok.clone().with_rho(0.0).validate(2, 3).is_err());
        assert!(ok.clone().with_iters(0, 1).validate(2, 3).is_err());
        assert!(ok.clone().with_alphas(-1.0, 1.0, 1.0, 1.0).validate(2, 3).is_err());
        assert!(ok.with_priors(vec![1.0, 0.0], vec![1.0 / 3.0; 3]).validate(2, 3).is_err());
    }
}
