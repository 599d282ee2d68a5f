use proptest::prelude::*;
use rotpool_core::pooling::SolverKind;
use rotpool_core::{
    classic_pool, hrotp, mixed_mean_max, rotp, ClassicPool, HierarchicalSpec, Matrix, ParamTemplate,
    RotParams, SampleSet, Smoothness,
};

fn set_strategy(max_d: usize, max_n: usize) -> impl Strategy<Value = SampleSet> {
    (1..=max_d, 1..=max_n).prop_flat_map(|(d, n)| {
        proptest::collection::vec(0.0f64..5.0, d * n)
            .prop_map(move |v| SampleSet::new(Matrix::from_vec(d, n, v).unwrap()).unwrap())
    })
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Rows whose largest entry beats the runner-up by at least 0.1.
fn separated_strategy() -> impl Strategy<Value = SampleSet> {
    (1..=5usize, 2..=10usize).prop_flat_map(|(d, n)| {
        (
            proptest::collection::vec(0.0f64..1.0, d * n),
            proptest::collection::vec(0..n, d),
            proptest::collection::vec(0.1f64..2.0, d),
        )
            .prop_map(move |(mut v, winners, gaps)| {
                for r in 0..d {
                    let row = &mut v[r * n..(r + 1) * n];
                    let top = row.iter().copied().fold(f64::MIN, f64::max);
                    row[winners[r]] = top + gaps[r];
                }
                SampleSet::new(Matrix::from_vec(d, n, v).unwrap()).unwrap()
            })
    })
}

const SOLVES: [(SolverKind, Smoothness); 3] = [
    (SolverKind::Sinkhorn, Smoothness::Entropic),
    (SolverKind::Badmm, Smoothness::Entropic),
    (SolverKind::Badmm, Smoothness::Quadratic),
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn pooling_ignores_sample_order(
        (x, perm) in set_strategy(5, 8).prop_flat_map(|x| {
            let n = x.samples();
            (Just(x), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        }),
        alpha0 in prop_oneof![Just(0.0), Just(0.1)],
    ) {
        let permuted = x.permute_samples(&perm).unwrap();
        for (solver, smoothness) in SOLVES {
            let params = RotParams::uniform(x.features(), x.samples())
                .with_alphas(alpha0, 1.0, 1.0, 1.0)
                .with_smoothness(smoothness);
            let a = rotp(&x, &params, solver).unwrap().pooled;
            let b = rotp(&permuted, &params, solver).unwrap().pooled;
            prop_assert!(sup(&a, &b) < 1e-8, "{:?} {:?}: {:?} vs {:?}", solver, smoothness, a, b);
        }
    }

    #[test]
    fn pooled_values_stay_within_each_row(x in set_strategy(5, 10), alpha1 in 0.01f64..10.0) {
        for (solver, smoothness) in SOLVES {
            let params = RotParams::uniform(x.features(), x.samples())
                .with_alphas(0.0, alpha1, 1.0, 1.0)
                .with_smoothness(smoothness);
            let pooled = rotp(&x, &params, solver).unwrap().pooled;
            for (r, v) in pooled.iter().enumerate() {
                let row = x.data().row(r);
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn max_preset_plan_peaks_at_the_data_argmax(x in separated_strategy()) {
        let report = ParamTemplate::max().rotp(&x).unwrap();
        let plan = report.plan.plan();
        for r in 0..x.features() {
            let argmax = |row: &[f64]| (0..row.len()).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            prop_assert_eq!(argmax(plan.row(r)), argmax(x.data().row(r)));
        }
        let expected = classic_pool(&x, &ClassicPool::Max).unwrap();
        prop_assert!(sup(&report.pooled, &expected) < 1e-3);
    }

    #[test]
    fn mean_preset_matches_the_mean(x in set_strategy(5, 10)) {
        let expected = classic_pool(&x, &ClassicPool::Mean).unwrap();
        for solver in [SolverKind::Sinkhorn, SolverKind::Badmm] {
            let pooled = ParamTemplate::mean().with_solver(solver).rotp(&x).unwrap().pooled;
            prop_assert!(sup(&pooled, &expected) < 1e-6);
        }
    }

    #[test]
    fn attention_preset_matches_weighted_average(
        (x, a) in set_strategy(5, 10).prop_flat_map(|x| {
            let n = x.samples();
            (Just(x), proptest::collection::vec(0.05f64..1.0, n))
        })
    ) {
        let total: f64 = a.iter().sum();
        let a: Vec<f64> = a.iter().map(|v| v / total).collect();
        let expected = classic_pool(&x, &ClassicPool::Attention(a.clone())).unwrap();
        let pooled = ParamTemplate::attention(a).rotp(&x).unwrap().pooled;
        prop_assert!(sup(&pooled, &expected) < 1e-4);
    }

    #[test]
    fn hierarchy_ignores_member_order(
        (sets, perm) in (2..=5usize, 1..=4usize).prop_flat_map(|(m, d)| {
            (
                proptest::collection::vec(
                    (1..=6usize).prop_flat_map(move |n| {
                        proptest::collection::vec(0.0f64..5.0, d * n)
                            .prop_map(move |v| SampleSet::new(Matrix::from_vec(d, n, v).unwrap()).unwrap())
                    }),
                    m,
                ),
                Just((0..m).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
    ) {
        let inner = ParamTemplate::new([0.0, 1.0, 1.0, 1.0], SolverKind::Sinkhorn);
        let outer = ParamTemplate::new([0.0, 0.5, 2.0, 2.0], SolverKind::Badmm);
        let spec = HierarchicalSpec::new(inner, outer);
        let shuffled: Vec<SampleSet> = perm.iter().map(|&i| sets[i].clone()).collect();
        let a = hrotp(&sets, &spec).unwrap();
        let b = hrotp(&shuffled, &spec).unwrap();
        prop_assert!(sup(&a, &b) < 1e-8);
    }
}

#[test]
fn mixed_pooling_composition_matches_direct_form() {
    let sets = [
        SampleSet::from_rows(&[[0.1, 3.0, 1.2, 0.4], [2.2, 0.3, 0.9, 1.8]]).unwrap(),
        SampleSet::from_rows(&[[5.0, 1.0, 0.0], [0.2, 0.1, 0.9], [1.5, 1.4, 0.2]]).unwrap(),
    ];
    for x in &sets {
        for omega in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let mixed = mixed_mean_max(x, omega).unwrap();
            assert!(sup(&mixed.direct, &mixed.composed) < 1e-4, "omega {omega}: {mixed:?}");
        }
    }
}
