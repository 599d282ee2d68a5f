use rotpool::diagnostics::{
    self, convergence_study, convergence_trace, log_space, oracle_solve, oracle_solve_with, precision_study,
    runtime_bench, stability_grid, BenchConfig, GridConfig, PrecisionConfig, Variant, CONVERGENCE_TOL,
};
use rotpool::io::to_json_string;
use rotpool::random;
use rotpool_core::badmm::solve_badmm;
use rotpool_core::pooling::{PresetKind, SolverKind};
use rotpool_core::sinkhorn::solve_sinkhorn;
use rotpool_core::{rot_objective, Matrix, PoolPreset, RotParams, SampleSet, Smoothness};

#[test]
fn oracle_returns_uniform_plan_for_mean_preset() {
    let x = random::lognormal_set(&mut random::rng(1), 3, 4);
    let preset = PoolPreset::mean(3, 4).unwrap();
    let plan = oracle_solve(&x, &preset.params).unwrap();
    assert!(plan.plan().max_abs_diff(&Matrix::filled(3, 4, 1.0 / 12.0)).unwrap() < 1e-6);
}

#[test]
fn oracle_agrees_with_sinkhorn_on_identity() {
    let x = SampleSet::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let params = RotParams::uniform(2, 2);
    let oracle = oracle_solve(&x, &params).unwrap();
    let (plan, _) = solve_sinkhorn(&x, &params.clone().with_iters(1, 5000).with_inner_tol(1e-14)).unwrap();
    assert!(oracle.plan().max_abs_diff(plan.plan()).unwrap() < 1e-4);
}

#[test]
fn oracle_objective_is_never_beaten() {
    for seed in 0..6 {
        let mut rng = random::rng(seed);
        let x = random::lognormal_set(&mut rng, 3, 4);
        for smoothness in [Smoothness::Entropic, Smoothness::Quadratic] {
            let params = RotParams::uniform(3, 4).with_alphas(0.0, 0.7, 2.0, 1.5).with_smoothness(smoothness);
            let oracle = oracle_solve(&x, &params).unwrap();
            let best = rot_objective(&x, &oracle, &params).unwrap();
            let (badmm, _) = solve_badmm(&x, &params).unwrap();
            assert!(best <= rot_objective(&x, &badmm, &params).unwrap() + 1e-6);
            if smoothness == Smoothness::Entropic {
                let (sk, _) = solve_sinkhorn(&x, &params).unwrap();
                assert!(best <= rot_objective(&x, &sk, &params).unwrap() + 1e-6);
            }
        }
    }
}

#[test]
fn oracle_guards() {
    let big = random::lognormal_set(&mut random::rng(0), 8, 9);
    assert!(oracle_solve_with(&big, &RotParams::uniform(8, 9), 1).is_err());
    let x = random::lognormal_set(&mut random::rng(0), 2, 3);
    assert!(oracle_solve_with(&x, &RotParams::uniform(2, 3).with_alphas(0.1, 1.0, 1.0, 1.0), 1).is_err());
}

#[test]
fn single_module_trace_is_never_flagged() {
    let x = random::lognormal_set(&mut random::rng(2), 4, 6);
    for v in Variant::ALL {
        let t = convergence_trace(&x, &RotParams::uniform(4, 6), v, 1, CONVERGENCE_TOL);
        assert_eq!(t.objective.len(), 1);
        assert!(t.relative_change.is_empty());
        assert_eq!(t.converged_at, None);
    }
}

#[test]
fn convergence_study_is_deterministic() {
    let mut rng = random::rng(3);
    let sets: Vec<SampleSet> = (0..3).map(|_| random::lognormal_set(&mut rng, 6, 12)).collect();
    let base = RotParams::uniform(6, 12);
    let a = convergence_study(&sets, &base, &Variant::ALL, 24).unwrap();
    let b = convergence_study(&sets, &base, &Variant::ALL, 24).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.traces.len(), 3);
    for t in a.traces.iter().flatten() {
        assert_eq!(t.objective.len(), 24);
        assert_eq!(t.relative_change.len(), 23);
        if let Some(at) = t.converged_at {
            assert!(t.relative_change[at - 2..].iter().all(|&r| r < CONVERGENCE_TOL));
            assert!(at == 2 || t.relative_change[at - 3] >= CONVERGENCE_TOL);
        }
    }
    assert!(convergence_study(&sets, &base, &Variant::ALL, 0).is_err());
}

// Small instances: the proximal Sinkhorn scheme settles within a few modules
// while the ADMM objective keeps drifting by a few 1e-4 per module, because
// its duals move in plan-entry units (about 1/(DN)).
#[test]
fn sinkhorn_settles_on_small_instances() {
    let mut rng = random::rng(4);
    let sets: Vec<SampleSet> = (0..3).map(|_| random::lognormal_set(&mut rng, 20, 100)).collect();
    let report = convergence_study(&sets, &RotParams::uniform(20, 100), &[Variant::Sinkhorn], 16).unwrap();
    let by = report.converged_by[0].1.expect("sinkhorn settles");
    assert!(by <= 16);
}

#[test]
fn log_axis_hits_powers_of_ten() {
    let axis = log_space(-5, 4, 10);
    assert_eq!(axis.len(), 10);
    assert_eq!(axis[0], 1e-5);
    assert_eq!(axis[9], 1e4);
    assert_eq!(axis[5], 1.0);
}

#[test]
fn grid_reports_are_reproducible() {
    let cfg = GridConfig::standard(SolverKind::Badmm, Smoothness::Entropic, 0.1, 11);
    let a = stability_grid(&cfg, false).unwrap();
    let b = stability_grid(&cfg, false).unwrap();
    assert_eq!(to_json_string(&a), to_json_string(&b));
    assert_eq!(a.cells.len(), 10);
    assert!(a.cells.iter().all(|r| r.len() == 10));
    assert!(a.iter().all(|c| c.failed == c.plan_norm.is_none()));
}

#[test]
fn badmm_grid_stays_finite() {
    for smoothness in [Smoothness::Entropic, Smoothness::Quadratic] {
        for alpha0 in [0.0, 0.1] {
            let cfg = GridConfig::standard(SolverKind::Badmm, smoothness, alpha0, 0);
            let report = stability_grid(&cfg, false).unwrap();
            assert_eq!(report.failed, 0, "{smoothness:?} alpha0={alpha0}");
            assert_eq!(report.out_of_range, 0, "{smoothness:?} alpha0={alpha0}");
        }
    }
}

#[test]
fn sinkhorn_grid_captures_failures() {
    let cfg = GridConfig::standard(SolverKind::Sinkhorn, Smoothness::Entropic, 0.0, 0);
    let report = stability_grid(&cfg, true).unwrap();
    assert_eq!(report.iter().count(), 100);
    assert!(report.iter().all(|c| c.wall_time.is_some()));
    for c in report.iter().filter(|c| c.failed) {
        assert!(c.error.is_some());
    }
    assert!(stability_grid(&GridConfig { alpha1_axis: vec![], ..cfg }, false).is_err());
}

#[test]
fn precision_improves_with_larger_infinity() {
    let seeds: Vec<u64> = (0..5).collect();
    let run = |inf: f64| {
        let cfg = PrecisionConfig {
            infinity: inf,
            ..PrecisionConfig::default()
        };
        precision_study(&cfg, &[PresetKind::Mean], &[SolverKind::Badmm, SolverKind::Sinkhorn], &seeds).unwrap()
    };
    let (coarse, fine) = (run(1e4), run(1e6));
    for (c, f) in coarse.iter().zip(&fine) {
        assert_eq!((c.seed, c.solver), (f.seed, f.solver));
        assert!(f.plan_error.unwrap() <= c.plan_error.unwrap());
    }
    assert!(precision_study(&PrecisionConfig::default(), &[], &[SolverKind::Badmm], &seeds).is_err());
}

#[test]
fn bench_plumbing() {
    let mut cfg = BenchConfig::new(vec![(3, 6)], 4, 4, vec![0.0]);
    cfg.trials = 3;
    cfg.solvers = vec![SolverKind::Badmm];
    let rows = runtime_bench(&cfg).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].samples_s.len(), 3);
    assert_eq!(rows[0].median_s, diagnostics::median(&rows[0].samples_s));
    cfg.trials = 2;
    assert!(runtime_bench(&cfg).is_err());
}

#[test]
fn median_of_even_and_odd() {
    assert_eq!(diagnostics::median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(diagnostics::median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
}
