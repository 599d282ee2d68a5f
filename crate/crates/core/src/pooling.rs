//! The pooling operator, classic-pooling presets and hierarchical compositions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use crate::badmm::solve_badmm;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{RotParams, Smoothness};
use crate::sinkhorn::solve_sinkhorn;
use crate::trace::SolverTrace;
use crate::types::{SampleSet, TransportPlan};

/// Finite stand-in for an infinite regularizer weight.
///
/// The pooled output of the mean preset deviates from the exact mean by
/// roughly `var(X) / INF_WEIGHT`, so this has to sit well above the `1e-6`
/// fidelity target.
pub const INF_WEIGHT: f64 = 1e8;

/// Entropic weight of the max preset. The gap between the soft and the hard
/// maximum is at most `MAX_SMOOTHING * ln N`.
pub const MAX_SMOOTHING: f64 = 1e-5;

/// Bound on `|‖P‖₁ - 1|` for a plan to count as mass-stable.
pub const MASS_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SolverKind {
    Sinkhorn,
    Badmm,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Sinkhorn => "sinkhorn",
            SolverKind::Badmm => "badmm",
        }
    }
}

/// Runs the chosen solver.
pub fn solve(x: &SampleSet, params: &RotParams, solver: SolverKind) -> Result<(TransportPlan, SolverTrace)> {
    match solver {
        SolverKind::Sinkhorn => solve_sinkhorn(x, params),
        SolverKind::Badmm => solve_badmm(x, params),
    }
}

/// `(X ⊙ diag(P 1)^-1 P) 1`: per-dimension expectation of `x_dn` under
/// `p(n | d)`.
pub fn pool(x: &SampleSet, plan: &TransportPlan) -> Result<Vec<f64>> {
    let data = x.data();
    if data.shape() != plan.shape() {
        return Err(Error::shape(
            format!("plan of shape {}x{}", data.rows(), data.cols()),
            format!("{}x{}", plan.shape().0, plan.shape().1),
        ));
    }
    let cond = plan.conditional()?;
    Ok((0..data.rows())
        .map(|r| data.row(r).iter().zip(cond.row(r)).map(|(x, p)| x * p).sum())
        .collect())
}

/// Numerical health of one pooled solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityFlags {
    /// Total mass of the plan before normalization into `Ω`.
    pub raw_mass: f64,
    /// `|raw_mass - 1| <= MASS_TOLERANCE`.
    pub mass_in_range: bool,
}

impl StabilityFlags {
    pub fn of(plan: &TransportPlan) -> Self {
        let raw_mass = plan.raw_mass();
        StabilityFlags {
            raw_mass,
            mass_in_range: (raw_mass - 1.0).abs() <= MASS_TOLERANCE,
        }
    }
}

/// Result of pooling one set.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolReport {
    pub pooled: Vec<f64>,
    pub plan: TransportPlan,
    pub trace: SolverTrace,
    pub solver: SolverKind,
    /// Filled in by callers with a clock.
    pub wall_time: Option<Duration>,
    pub stability: StabilityFlags,
}

/// Solves the ROT problem for `x` and pools with the resulting plan.
pub fn rotp(x: &SampleSet, params: &RotParams, solver: SolverKind) -> Result<PoolReport> {
    let (plan, trace) = solve(x, params, solver)?;
    let pooled = pool(x, &plan)?;
    Ok(PoolReport {
        pooled,
        stability: StabilityFlags::of(&plan),
        plan,
        trace,
        solver,
        wall_time: None,
    })
}

/// Reference implementations of the classic global pooling operators.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassicPool {
    Add,
    Mean,
    Max,
    /// `X a`, with `a` a probability vector over samples.
    Attention(Vec<f64>),
}

pub fn classic_pool(x: &SampleSet, kind: &ClassicPool) -> Result<Vec<f64>> {
    let data = x.data();
    let n = data.cols() as f64;
    let rows = 0..data.rows();
    Ok(match kind {
        ClassicPool::Add => data.row_sums(),
        ClassicPool::Mean => data.row_sums().into_iter().map(|s| s / n).collect(),
        ClassicPool::Max => rows
            .map(|r| data.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        ClassicPool::Attention(a) => {
            check_attention_weights(a, data.cols())?;
            rows.map(|r| data.row(r).iter().zip(a).map(|(x, w)| x * w).sum())
                .collect()
        }
    })
}

fn check_attention_weights(a: &[f64], n: usize) -> Result<()> {
    if a.len() != n {
        return Err(Error::shape(format!("attention weights of length {n}"), format!("{}", a.len())));
    }
    if a.iter().any(|&w| !(w >= 0.0)) || (a.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(Error::invalid("attention weights must lie on the simplex"));
    }
    Ok(())
}

/// How a template produces the sample prior `q0` for a set of size `N`.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplePrior {
    Uniform,
    /// Fixed weights; `N` must match.
    Weights(Vec<f64>),
}

/// Shape-free ROT parameters, resolved against each set's `D x N` at use.
/// Feature priors are always uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTemplate {
    pub alphas: [f64; 4],
    pub sample_prior: SamplePrior,
    pub rho: f64,
    pub tau: Option<f64>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub inner_tol: f64,
    pub smoothness: Smoothness,
    pub solver: SolverKind,
}

impl ParamTemplate {
    pub fn new(alphas: [f64; 4], solver: SolverKind) -> Self {
        ParamTemplate {
            alphas,
            sample_prior: SamplePrior::Uniform,
            rho: RotParams::DEFAULT_RHO,
            tau: None,
            outer_iters: RotParams::DEFAULT_OUTER,
            inner_iters: RotParams::DEFAULT_INNER,
            inner_tol: RotParams::DEFAULT_INNER_TOL,
            smoothness: Smoothness::Entropic,
            solver,
        }
    }

    /// Copies every knob of `params` except the priors.
    pub fn from_params(params: &RotParams, solver: SolverKind) -> Self {
        ParamTemplate {
            alphas: [params.alpha0, params.alpha1, params.alpha2, params.alpha3],
            sample_prior: SamplePrior::Uniform,
            rho: params.rho,
            tau: params.tau,
            outer_iters: params.outer_iters,
            inner_iters: params.inner_iters,
            inner_tol: params.inner_tol,
            smoothness: params.smoothness,
            solver,
        }
    }

    pub fn mean() -> Self {
        Self::mean_with(INF_WEIGHT)
    }

    /// `alpha = (0, inf, inf, inf)`, uniform priors. The ADMM weight `rho`
    /// also takes the large value, since the ADMM iterates otherwise settle
    /// on a row softmax of `X` rather than the uniform plan.
    pub fn mean_with(infinity: f64) -> Self {
        let mut t = Self::new([0.0, infinity, infinity, infinity], SolverKind::Sinkhorn);
        t.rho = infinity;
        t
    }

    /// `alpha = (0, ~0, inf, 0)`, uniform feature prior.
    pub fn max() -> Self {
        Self::max_with(INF_WEIGHT, MAX_SMOOTHING)
    }

    pub fn max_with(infinity: f64, smoothing: f64) -> Self {
        Self::new([0.0, smoothing, infinity, 0.0], SolverKind::Sinkhorn)
    }

    /// Mean-preset weights with `q0 = a`.
    pub fn attention(a: Vec<f64>) -> Self {
        Self::attention_with(a, INF_WEIGHT)
    }

    pub fn attention_with(a: Vec<f64>, infinity: f64) -> Self {
        let mut t = Self::mean_with(infinity);
        t.sample_prior = SamplePrior::Weights(a);
        t.solver = SolverKind::Badmm;
        t
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_iters(mut self, outer: usize, inner: usize) -> Self {
        self.outer_iters = outer;
        self.inner_iters = inner;
        self
    }

    pub fn resolve(&self, d: usize, n: usize) -> Result<RotParams> {
        let q0 = match &self.sample_prior {
            SamplePrior::Uniform => vec![1.0 / n as f64; n],
            SamplePrior::Weights(w) => w.clone(),
        };
        let [a0, a1, a2, a3] = self.alphas;
        let mut params = RotParams::uniform(d, n)
            .with_alphas(a0, a1, a2, a3)
            .with_priors(vec![1.0 / d as f64; d], q0)
            .with_rho(self.rho)
            .with_iters(self.outer_iters, self.inner_iters)
            .with_inner_tol(self.inner_tol)
            .with_smoothness(self.smoothness);
        params.tau = self.tau;
        params.validate(d, n)?;
        Ok(params)
    }

    /// Resolves against `x` and pools it with the template's solver.
    pub fn rotp(&self, x: &SampleSet) -> Result<PoolReport> {
        let params = self.resolve(x.features(), x.samples())?;
        rotp(x, &params, self.solver)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PresetKind {
    Mean,
    Max,
    Attention,
    Custom,
}

impl PresetKind {
    pub fn name(self) -> &'static str {
        match self {
            PresetKind::Mean => "mean",
            PresetKind::Max => "max",
            PresetKind::Attention => "attention",
            PresetKind::Custom => "custom",
        }
    }
}

/// A classic pooling operator expressed as a ROT configuration for one
/// `D x N` problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolPreset {
    pub kind: PresetKind,
    pub params: RotParams,
    pub attention_weights: Option<Vec<f64>>,
    /// Solver that imitates this operator best.
    pub solver: SolverKind,
}

impl PoolPreset {
    pub fn mean(d: usize, n: usize) -> Result<Self> {
        Self::from_template(PresetKind::Mean, &ParamTemplate::mean(), d, n, None)
    }

    pub fn max(d: usize, n: usize) -> Result<Self> {
        Self::from_template(PresetKind::Max, &ParamTemplate::max(), d, n, None)
    }

    pub fn attention(d: usize, a: Vec<f64>) -> Result<Self> {
        check_attention_weights(&a, a.len())?;
        let n = a.len();
        Self::from_template(
            PresetKind::Attention,
            &ParamTemplate::attention(a.clone()),
            d,
            n,
            Some(a),
        )
    }

    pub fn custom(params: RotParams, solver: SolverKind) -> Self {
        PoolPreset {
            kind: PresetKind::Custom,
            params,
            attention_weights: None,
            solver,
        }
    }

    fn from_template(
        kind: PresetKind,
        t: &ParamTemplate,
        d: usize,
        n: usize,
        attention_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        Ok(PoolPreset {
            kind,
            params: t.resolve(d, n)?,
            attention_weights,
            solver: t.solver,
        })
    }

    /// The classic operator this preset stands in for, if any.
    pub fn oracle(&self) -> Option<ClassicPool> {
        match self.kind {
            PresetKind::Mean => Some(ClassicPool::Mean),
            PresetKind::Max => Some(ClassicPool::Max),
            PresetKind::Attention => self.attention_weights.clone().map(ClassicPool::Attention),
            PresetKind::Custom => None,
        }
    }

    /// The optimal plan in the infinite-weight limit, where it is known in
    /// closed form: `[1/DN]` for mean, `(1/D) 1 aᵀ` for attention.
    pub fn limit_plan(&self) -> Option<Matrix> {
        let (d, n) = self.params.dims();
        match (self.kind, &self.attention_weights) {
            (PresetKind::Mean, _) => Some(Matrix::filled(d, n, 1.0 / (d * n) as f64)),
            (PresetKind::Attention, Some(a)) => Some(Matrix::from_fn(d, n, |_, c| a[c] / d as f64)),
            _ => None,
        }
    }
}

/// Both evaluations of the mixed mean-max operator.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPool {
    /// `omega * mean + (1 - omega) * max`.
    pub direct: Vec<f64>,
    /// Third ROT pooling applied to `[mean-preset output, max-preset output]`
    /// with sample prior `[omega, 1 - omega]`.
    pub composed: Vec<f64>,
}

/// Clamp keeping `[omega, 1 - omega]` strictly positive at the endpoints.
const OMEGA_FLOOR: f64 = 1e-12;

pub fn mixed_mean_max(x: &SampleSet, omega: f64) -> Result<MixedPool> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::invalid(format!("omega must lie in [0, 1], got {omega}")));
    }
    let mean = classic_pool(x, &ClassicPool::Mean)?;
    let max = classic_pool(x, &ClassicPool::Max)?;
    let direct = mean
        .iter()
        .zip(&max)
        .map(|(a, b)| omega * a + (1.0 - omega) * b)
        .collect();

    let w = omega.clamp(OMEGA_FLOOR, 1.0 - OMEGA_FLOOR);
    let heads = [ParamTemplate::mean(), ParamTemplate::max()];
    let fuse = ParamTemplate::attention(vec![w, 1.0 - w]);
    let composed = mrotp(x, &heads, &fuse)?;
    Ok(MixedPool { direct, composed })
}

/// Column-concatenates pooled vectors into a `D x M` set.
fn stack(columns: &[Vec<f64>]) -> Result<SampleSet> {
    let d = columns[0].len();
    if columns.iter().any(|c| c.len() != d) {
        return Err(Error::invalid("pooled vectors differ in length"));
    }
    // pooled outputs of signed inputs may be negative
    SampleSet::new_signed(Matrix::from_fn(d, columns.len(), |r, c| columns[c][r]))
}

/// M-head mixed pooling: pools `x` with each head and fuses the `M` outputs
/// with a final ROT pooling.
pub fn mrotp(x: &SampleSet, heads: &[ParamTemplate], fuse: &ParamTemplate) -> Result<Vec<f64>> {
    if heads.is_empty() {
        return Err(Error::invalid("at least one head is required"));
    }
    let outputs = heads
        .iter()
        .map(|h| h.rotp(x).map(|r| r.pooled))
        .collect::<Result<Vec<_>>>()?;
    Ok(fuse.rotp(&stack(&outputs)?)?.pooled)
}

/// The map `g` applied between the two pooling levels.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Identity,
    /// `v -> W v + b` with `W` of shape `D' x D`.
    Affine { weight: Matrix, bias: Vec<f64> },
}

impl FeatureMap {
    pub fn output_dim(&self, d: usize) -> usize {
        match self {
            FeatureMap::Identity => d,
            FeatureMap::Affine { weight, .. } => weight.rows(),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            FeatureMap::Identity => Ok(v.to_vec()),
            FeatureMap::Affine { weight, bias } => {
                if weight.cols() != v.len() || bias.len() != weight.rows() {
                    return Err(Error::shape(
                        format!("affine map from dimension {}", v.len()),
                        format!("{}x{} weight with bias of length {}", weight.rows(), weight.cols(), bias.len()),
                    ));
                }
                Ok((0..weight.rows())
                    .map(|r| weight.row(r).iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + bias[r])
                    .collect())
            }
        }
    }
}

/// Set-of-sets pooling: each member set is pooled with `inner` (or with
/// `heads` fused by `inner` when heads are given), mapped through `g`, and
/// the resulting `D' x M` matrix is pooled with `outer`.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalSpec {
    pub inner: ParamTemplate,
    pub outer: ParamTemplate,
    pub feature_map: FeatureMap,
    pub heads: Option<Vec<ParamTemplate>>,
}

impl HierarchicalSpec {
    pub fn new(inner: ParamTemplate, outer: ParamTemplate) -> Self {
        HierarchicalSpec {
            inner,
            outer,
            feature_map: FeatureMap::Identity,
            heads: None,
        }
    }

    /// Pools one member set and applies `g`.
    pub fn embed(&self, x: &SampleSet) -> Result<Vec<f64>> {
        let pooled = match &self.heads {
            Some(heads) => mrotp(x, heads, &self.inner)?,
            None => self.inner.rotp(x)?.pooled,
        };
        self.feature_map.apply(&pooled)
    }

    /// Pools already embedded member sets.
    pub fn fuse(&self, embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
        if embeddings.is_empty() {
            return Err(Error::invalid("hierarchical pooling needs at least one set"));
        }
        Ok(self.outer.rotp(&stack(embeddings)?)?.pooled)
    }
}

pub fn hrotp(sets: &[SampleSet], spec: &HierarchicalSpec) -> Result<Vec<f64>> {
    let Some(first) = sets.first() else {
        return Err(Error::invalid("hierarchical pooling needs at least one set"));
    };
    let d = first.features();
    if let Some((i, s)) = sets.iter().enumerate().find(|(_, s)| s.features() != d) {
        return Err(Error::invalid(format!(
            "set {} has {} features, expected {d}",
            i + 1,
            s.features()
        )));
    }
    let embeddings = sets.iter().map(|s| spec.embed(s)).collect::<Result<Vec<_>>>()?;
    spec.fuse(&embeddings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x22() -> SampleSet {
        SampleSet::from_rows(&[[1.0, 2.0], [4.0, 3.0]]).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn pool_with_uniform_plan_is_row_mean() {
        let plan = TransportPlan::product(&[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(pool(&x22(), &plan).unwrap(), vec![1.5, 3.5]);
    }

    #[test]
    fn pool_single_sample_returns_column() {
        let x = SampleSet::from_rows(&[[3.0], [7.5]]).unwrap();
        let plan = TransportPlan::product(&[0.2, 0.8], &[1.0]).unwrap();
        assert_eq!(pool(&x, &plan).unwrap(), vec![3.0, 7.5]);
    }

    #[test]
    fn pool_with_argmax_plan_is_max() {
        let big = 40.0;
        let log_plan = Matrix::from_rows(&[[-big, 0.0], [0.0, -big]]).unwrap();
        let plan = TransportPlan::from_log(log_plan).unwrap();
        assert!(close(&pool(&x22(), &plan).unwrap(), &[2.0, 4.0], 1e-15));
    }

    #[test]
    fn classic_examples() {
        let x = x22();
        assert_eq!(classic_pool(&x, &ClassicPool::Mean).unwrap(), vec![1.5, 3.5]);
        assert_eq!(classic_pool(&x, &ClassicPool::Max).unwrap(), vec![2.0, 4.0]);
        assert_eq!(classic_pool(&x, &ClassicPool::Add).unwrap(), vec![3.0, 7.0]);
        assert_eq!(
            classic_pool(&x, &ClassicPool::Attention(vec![1.0, 0.0])).unwrap(),
            vec![1.0, 4.0]
        );
        assert_eq!(
            classic_pool(&x, &ClassicPool::Attention(vec![0.5, 0.5])).unwrap(),
            vec![1.5, 3.5]
        );
        assert!(classic_pool(&x, &ClassicPool::Attention(vec![0.5, 0.6])).is_err());
    }

    #[test]
    fn presets_reproduce_classic_operators() {
        let x = x22();
        for solver in [SolverKind::Sinkhorn, SolverKind::Badmm] {
            let p = PoolPreset::mean(2, 2).unwrap();
            let out = rotp(&x, &p.params, solver).unwrap();
            assert!(close(&out.pooled, &[1.5, 3.5], 1e-6), "{solver:?}: {:?}", out.pooled);
        }
        let p = PoolPreset::max(2, 2).unwrap();
        let out = rotp(&x, &p.params, p.solver).unwrap();
        assert!(close(&out.pooled, &[2.0, 4.0], 1e-3));
        let p = PoolPreset::attention(2, vec![0.2, 0.8]).unwrap();
        let out = rotp(&x, &p.params, p.solver).unwrap();
        assert!(close(&out.pooled, &[1.8, 3.2], 1e-4));
        let limit = p.limit_plan().unwrap();
        assert!(out.plan.plan().max_abs_diff(&limit).unwrap() < 1e-4);
    }

    #[test]
    fn mixed_examples() {
        let x = x22();
        let m = mixed_mean_max(&x, 0.5).unwrap();
        assert!(close(&m.direct, &[1.75, 3.75], 1e-15));
        assert!(close(&m.composed, &m.direct, 1e-4), "{:?}", m.composed);
        assert!(close(&mixed_mean_max(&x, 1.0).unwrap().direct, &[1.5, 3.5], 1e-15));
        assert!(close(&mixed_mean_max(&x, 0.0).unwrap().direct, &[2.0, 4.0], 1e-15));
        assert!(mixed_mean_max(&x, 1.5).is_err());
    }

    #[test]
    fn hierarchy_examples() {
        let a = SampleSet::from_rows(&[[1.0, 2.0, 3.0], [0.0, 0.5, 1.0]]).unwrap();
        let b = SampleSet::from_rows(&[[2.0, 2.0, 4.0, 4.0, 8.0], [1.0, 1.0, 1.0, 1.0, 6.0]]).unwrap();
        let spec = HierarchicalSpec::new(ParamTemplate::mean(), ParamTemplate::mean());
        // per-set means [2, 0.5] and [4, 2]
        let out = hrotp(&[a.clone(), b], &spec).unwrap();
        assert!(close(&out, &[3.0, 1.25], 1e-6), "{out:?}");

        let single = hrotp(core::slice::from_ref(&a), &spec).unwrap();
        assert!(close(&single, &[2.0, 0.5], 1e-6));

        let bad = SampleSet::from_rows(&[[1.0]]).unwrap();
        assert!(hrotp(&[a, bad], &spec).is_err());
    }

    #[test]
    fn affine_feature_map() {
        let g = FeatureMap::Affine {
            weight: Matrix::from_rows(&[[1.0, 1.0], [2.0, 0.0], [0.0, -1.0]]).unwrap(),
            bias: vec![0.0, 1.0, 0.5],
        };
        assert_eq!(g.output_dim(2), 3);
        assert_eq!(g.apply(&[1.0, 2.0]).unwrap(), vec![3.0, 3.0, -1.5]);
        assert!(g.apply(&[1.0]).is_err());
    }

    #[test]
    fn template_rejects_mismatched_weights() {
        let t = ParamTemplate::attention(vec![0.5, 0.5]);
        assert!(t.resolve(2, 3).is_err());
    }
}
