use proptest::prelude::*;
use smoothcruiser::complexity::predict_calls;
use smoothcruiser::operators::clip_slice;
use smoothcruiser::{
    build_env, solve_regularized, solve_unregularized, DerivedConstants, EnvSpec, GenerativeModel,
    OperatorKind, Planner, PlannerConfig, QVector, SmoothOperator, TabularMdp, TabularOracle,
};

fn operator(kind: OperatorKind, lambda: f64, k: usize) -> SmoothOperator {
    SmoothOperator::new(kind, lambda, k).unwrap()
}

fn kinds() -> impl Strategy<Value = OperatorKind> {
    prop_oneof![
        Just(OperatorKind::LogSumExpMax),
        Just(OperatorKind::LogSumExpMin),
        Just(OperatorKind::SqrtRegularized),
    ]
}

fn pair(k: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-20.0..20.0f64, k),
        prop::collection::vec(-20.0..20.0f64, k),
    )
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Random tabular MDP with `n` states and `k` actions.
fn mdp(n: usize, k: usize) -> impl Strategy<Value = TabularMdp> {
    (
        prop::collection::vec(
            prop::collection::vec(prop::collection::vec(0.01..1.0f64, n), k),
            n,
        ),
        prop::collection::vec(prop::collection::vec(0.0..1.0f64, k), n),
    )
        .prop_map(|(raw, reward)| {
            let transition = raw
                .into_iter()
                .map(|rows| {
                    rows.into_iter()
                        .map(|row| {
                            let total: f64 = row.iter().sum();
                            let mut p: Vec<f64> = row.iter().map(|x| x / total).collect();
                            // Put the rounding residue on the last entry so rows sum to 1.
                            let head: f64 = p[..p.len() - 1].iter().sum();
                            *p.last_mut().unwrap() = 1.0 - head;
                            p
                        })
                        .collect()
                })
                .collect();
            TabularMdp::new(transition, reward).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn operators_are_sup_norm_lipschitz(kind in kinds(), lambda in 0.05..20.0f64, (x, y) in pair(3)) {
        let op = operator(kind, lambda, 3);
        let fx = op.value(&QVector::new(x.clone()).unwrap()).unwrap();
        let fy = op.value(&QVector::new(y.clone()).unwrap()).unwrap();
        prop_assert!((fx - fy).abs() <= sup(&x, &y) + 1e-12 * (1.0 + fx.abs().max(fy.abs())));
    }

    #[test]
    fn operators_bounded_by_sup_norm_plus_offset(kind in kinds(), lambda in 0.05..20.0f64, (x, _) in pair(4)) {
        let op = operator(kind, lambda, 4);
        let fx = op.value(&QVector::new(x.clone()).unwrap()).unwrap();
        let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(fx.abs() <= norm + op.zero_bound() + 1e-9);
    }

    #[test]
    fn gradients_are_subprobability(kind in kinds(), lambda in 0.05..20.0f64, (x, _) in pair(5)) {
        let op = operator(kind, lambda, 5);
        let g = op.gradient(&QVector::new(x).unwrap()).unwrap();
        prop_assert!(g.weights().iter().all(|&w| w >= 0.0));
        let mass = g.l1_norm();
        match kind {
            OperatorKind::SqrtRegularized => prop_assert!(mass > 0.0 && mass <= 1.0 + 1e-10),
            _ => prop_assert!((mass - 1.0).abs() <= 1e-12),
        }
    }

    #[test]
    fn clipping_moves_toward_the_box(
        x in prop::collection::vec(-50.0..50.0f64, 1..6),
        cap in 0.1..20.0f64,
        seed in any::<u64>(),
    ) {
        let q: Vec<f64> = x.iter().enumerate().map(|(i, _)| cap * (((seed >> (i % 64)) & 1023) as f64 / 1023.0)).collect();
        let clipped = clip_slice(&x, cap);
        prop_assert!(clipped.iter().all(|&v| (0.0..=cap).contains(&v)));
        prop_assert!(sup(&clipped, &q) <= sup(&x, &q));
    }

    #[test]
    fn regularization_gap_is_bounded(m in mdp(3, 2), gamma in 0.0..0.95f64, lambda in 0.01..5.0f64) {
        let op = SmoothOperator::log_sum_exp_max(lambda, 2).unwrap();
        let reg = solve_regularized(&m, &op, gamma, 1e-10).unwrap();
        let hard = solve_unregularized(&m, gamma, 1e-10).unwrap();
        let bound = lambda * 2f64.ln() / (1.0 - gamma) + 2e-10;
        for s in 0..3 {
            prop_assert!((reg.v[s] - hard.v[s]).abs() <= bound);
            let q = reg.q_vector(s);
            prop_assert!(q.max() <= reg.v[s] && reg.v[s] <= q.max() + lambda * 2f64.ln() + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn call_counts_ignore_seed_and_environment(
        seed_a in any::<u64>(),
        seed_b in any::<u64>(),
        gridworld in any::<bool>(),
        rel_eps in 0.15..1.1f64,
    ) {
        let (spec, k) = if gridworld { (EnvSpec::gridworld(3), 4) } else { (EnvSpec::chain(5), 2) };
        let m = build_env(spec).unwrap();
        let op = SmoothOperator::log_sum_exp_max(10.0, k).unwrap();
        let cfg = PlannerConfig::new(0.2, 0.1).with_n_scale(1e-3);
        let constants = DerivedConstants::new(&cfg, &op).unwrap();
        let eps = rel_eps * constants.v_max;
        let predicted = predict_calls(&constants, eps).unwrap();
        let mut outputs = Vec::new();
        for seed in [seed_a, seed_b] {
            let oracle = TabularOracle::new(&m, seed);
            let planner = Planner::new(&cfg, &op, &oracle, seed).unwrap();
            let r = planner.plan(0, eps).unwrap();
            prop_assert_eq!(oracle.call_count(), r.oracle_calls);
            prop_assert_eq!(predicted.clone(), r.oracle_calls.into());
            prop_assert!(r.estimate.abs() <= constants.c_gamma);
            let q = planner.estimate_q(0, eps).unwrap();
            prop_assert!(q.as_slice().iter().all(|&v| (0.0..=constants.v_max).contains(&v)));
            outputs.push(r.estimate);
        }
        if seed_a == seed_b {
            prop_assert_eq!(outputs[0], outputs[1]);
        }
    }
}
