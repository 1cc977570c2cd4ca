//! Fast built-in consistency checks, run by the `selftest` CLI command.

use crate::complexity::predict_calls;
use crate::environments::{build_env, EnvSpec, GenerativeModel, TabularMdp, TabularOracle};
use crate::error::Result;
use crate::exact::{solve_regularized, solve_unregularized, DEFAULT_TOLERANCE};
use crate::operators::{clip_slice, QVector, SmoothOperator};
use crate::planner::{DerivedConstants, Planner, PlannerConfig};
use crate::rng::Stream;
use crate::validation::size_n_sim;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type CheckFn = Box<dyn Fn() -> Result<(bool, String)>>;

/// Runs every check. `corrupt` perturbs one expected constant so the suite's
/// failure path can be exercised.
pub fn run(corrupt: bool) -> Vec<Check> {
    let closed_form = if corrupt { 3.5 } else { 3.386294361119891 };
    let checks: Vec<(&'static str, CheckFn)> = vec![
        (
            "lse-max-value-at-ties",
            Box::new(|| {
                let v = SmoothOperator::log_sum_exp_max(1.0, 2)?.value(&QVector::zeros(2)?)?;
                Ok(((v - 2f64.ln()).abs() < 1e-15, format!("F(0,0) = {v}")))
            }),
        ),
        (
            "lse-max-softmax-gradient",
            Box::new(|| {
                let g = SmoothOperator::log_sum_exp_max(1.0, 2)?
                    .gradient(&QVector::new(vec![3f64.ln(), 0.0])?)?;
                let w = g.weights();
                Ok((
                    (w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15,
                    format!("gradient = {w:?}"),
                ))
            }),
        ),
        (
            "lse-min-mirror",
            Box::new(|| {
                let q = QVector::new(vec![0.3, 1.7, -0.4])?;
                let neg = QVector::new(q.as_slice().iter().map(|x| -x).collect())?;
                let lo = SmoothOperator::log_sum_exp_min(0.5, 3)?.value(&q)?;
                let hi = SmoothOperator::log_sum_exp_max(0.5, 3)?.value(&neg)?;
                Ok((
                    (lo + hi).abs() < 1e-15,
                    format!("F_min(q) + F_max(-q) = {}", lo + hi),
                ))
            }),
        ),
        (
            "sqrt-reg-value-at-ties",
            Box::new(|| {
                let v = SmoothOperator::sqrt_regularized(1.0, 2)?.value(&QVector::zeros(2)?)?;
                Ok(((v - 2f64.sqrt()).abs() < 1e-10, format!("F(0,0) = {v}")))
            }),
        ),
        (
            "sqrt-reg-lagrange-residual",
            Box::new(|| {
                let q = QVector::new(vec![1.0, 0.0])?;
                let u = SmoothOperator::sqrt_regularized(1.0, 2)?.solve_lagrange(&q)?;
                let residual = (q
                    .as_slice()
                    .iter()
                    .map(|x| (0.5 / (u - x)).powi(2))
                    .sum::<f64>()
                    - 1.0)
                    .abs();
                Ok((
                    residual <= 1e-10,
                    format!("U = {u}, residual = {residual:e}"),
                ))
            }),
        ),
        (
            "lse-max-gap-at-ties",
            Box::new(|| {
                let gap =
                    SmoothOperator::log_sum_exp_max(2.0, 3)?.max_approx_gap(&QVector::zeros(3)?)?;
                Ok((
                    (gap - 2.0 * 3f64.ln()).abs() < 1e-14,
                    format!("gap = {gap}"),
                ))
            }),
        ),
        (
            "solver-single-state-closed-form",
            Box::new(move || {
                let m = TabularMdp::single_state(1.0, 2)?;
                let v =
                    solve_regularized(&m, &SmoothOperator::log_sum_exp_max(1.0, 2)?, 0.5, 1e-12)?.v
                        [0];
                Ok((
                    (v - closed_form).abs() < 1e-10,
                    format!("V = {v}, expected {closed_form}"),
                ))
            }),
        ),
        (
            "solver-regularization-gap",
            Box::new(|| {
                let m = TabularMdp::single_state(1.0, 2)?;
                let reg =
                    solve_regularized(&m, &SmoothOperator::log_sum_exp_max(1.0, 2)?, 0.5, 1e-12)?.v
                        [0];
                let hard = solve_unregularized(&m, 0.5, 1e-12)?.v[0];
                let gap = reg - hard;
                Ok((
                    (gap - 2f64.ln() / 0.5).abs() < 2e-12,
                    format!("V_reg - V_hard = {gap}"),
                ))
            }),
        ),
        (
            "solver-residual-chain-5",
            Box::new(|| {
                let m = build_env(EnvSpec::chain(5))?;
                let t = solve_regularized(
                    &m,
                    &SmoothOperator::log_sum_exp_max(10.0, 2)?,
                    0.2,
                    DEFAULT_TOLERANCE,
                )?;
                Ok((
                    t.residual <= DEFAULT_TOLERANCE,
                    format!("residual = {:e}", t.residual),
                ))
            }),
        ),
        (
            "sample-size-regression",
            Box::new(|| {
                let c = DerivedConstants::new(
                    &PlannerConfig::new(0.2, 0.1),
                    &SmoothOperator::log_sum_exp_max(0.1, 2)?,
                )?;
                let n = c.n_of_eps(0.1)?;
                Ok((n == 60661, format!("N(0.1) = {n}")))
            }),
        ),
        (
            "depth-regression",
            Box::new(|| {
                let c = DerivedConstants::new(
                    &PlannerConfig::new(0.2, 0.1),
                    &SmoothOperator::log_sum_exp_max(0.1, 2)?,
                )?;
                let h = c.predict_depth(0.1)?;
                Ok((h == 4, format!("H(0.1) = {h}")))
            }),
        ),
        (
            "clip-contracts-toward-box",
            Box::new(|| {
                let stream = Stream::new(11, 0);
                let cap = 2.0;
                let mut worst = f64::NEG_INFINITY;
                for i in 0..2000 {
                    let mut d = stream.at(i);
                    let x: Vec<f64> = (0..3).map(|_| 8.0 * d.uniform() - 3.0).collect();
                    let q: Vec<f64> = (0..3).map(|_| cap * d.uniform()).collect();
                    let dist = |a: &[f64]| {
                        a.iter()
                            .zip(&q)
                            .map(|(u, v)| (u - v).abs())
                            .fold(0.0, f64::max)
                    };
                    worst = worst.max(dist(&clip_slice(&x, cap)) - dist(&x));
                }
                Ok((worst <= 0.0, format!("max increase = {worst}")))
            }),
        ),
        (
            "planner-call-determinism",
            Box::new(|| {
                let m = build_env(EnvSpec::chain(5))?;
                let op = SmoothOperator::log_sum_exp_max(10.0, 2)?;
                let cfg = PlannerConfig::new(0.2, 0.1).with_n_scale(1e-3);
                let mut counts = Vec::new();
                for seed in [1, 2] {
                    let oracle = TabularOracle::new(&m, seed);
                    Planner::new(&cfg, &op, &oracle, seed)?.plan(0, 1.0)?;
                    counts.push(oracle.call_count());
                }
                let predicted = predict_calls(&DerivedConstants::new(&cfg, &op)?, 1.0)?;
                let ok = counts[0] == counts[1] && predicted == counts[0].into();
                Ok((ok, format!("calls = {counts:?}, predicted = {predicted}")))
            }),
        ),
        (
            "hoeffding-sizing-anchor",
            Box::new(|| {
                let c = DerivedConstants::new(
                    &PlannerConfig::new(0.2, 0.1),
                    &SmoothOperator::log_sum_exp_max(10.0, 2)?,
                )?;
                let n = size_n_sim(c.c_gamma, 0.89627, 0.5)?;
                Ok((n == 32723, format!("N_sim = {n}")))
            }),
        ),
    ];
    checks
        .into_iter()
        .map(|(name, check)| match check() {
            Ok((passed, detail)) => Check {
                name,
                passed,
                detail,
            },
            Err(e) => Check {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}
