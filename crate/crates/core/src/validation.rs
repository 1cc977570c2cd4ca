//! Consistency harness for the low-bias value estimator.
//!
//! `sample_v_check` follows the control flow of [`crate::planner::Planner::sample_v`]
//! but replaces every `estimate_q(s, zeta)` by the exact `Q_s` plus uniform
//! noise of half-width `zeta`, clipped to `[0, V_max]`. The noise bound holds
//! surely, so the estimator's bias guarantee `|E[V_hat] - V(s)| <= eps` becomes
//! directly testable through the mean error over many runs.

use rayon::prelude::*;
use serde::Serialize;

use crate::environments::{build_env, EnvSpec, GenerativeModel, TabularMdp, TabularOracle};
use crate::error::{invalid, Error, Result};
use crate::exact::{solve_regularized, ValueTable, DEFAULT_TOLERANCE};
use crate::operators::{clip_slice, QVector, SmoothOperator};
use crate::planner::{draw_action, Branch, DerivedConstants, PlannerConfig};
use crate::rng::{CountingStream, Purpose};

/// Slack on the sure noise bound, covering the rounding of `q + noise`.
const NOISE_BOUND_SLACK: f64 = 1e-12;

/// Emits `clip(Q_s + U)` with `U` uniform on `[-width, width]^K`.
pub struct NoisyQOracle<'a> {
    exact: &'a ValueTable,
    v_max: f64,
    noise: CountingStream,
}

impl<'a> NoisyQOracle<'a> {
    pub fn new(exact: &'a ValueTable, v_max: f64, seed: u64, sub: u64) -> Self {
        Self {
            exact,
            v_max,
            noise: CountingStream::new(seed, Purpose::QNoise.stream(sub)),
        }
    }

    pub fn draw(&self, state: usize, width: f64) -> Result<QVector> {
        let q = self
            .exact
            .q
            .get(state)
            .ok_or_else(|| invalid(format!("state {state} out of range")))?;
        let mut draw = self.noise.next_draw();
        let noisy: Vec<f64> = q
            .iter()
            .map(|&x| x + width * (2.0 * draw.uniform() - 1.0))
            .collect();
        let out = clip_slice(&noisy, self.v_max);
        let err = out
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if err > width * (1.0 + NOISE_BOUND_SLACK) + NOISE_BOUND_SLACK {
            return Err(Error::Internal(format!(
                "noisy Q misses its sure bound: {err} > {width}"
            )));
        }
        QVector::new(out)
    }
}

/// One independent repetition of the checked estimator.
pub struct ConsistencyChecker<'a> {
    constants: &'a DerivedConstants,
    op: &'a SmoothOperator,
    noise: NoisyQOracle<'a>,
    oracle: TabularOracle<'a>,
    actions: CountingStream,
}

impl<'a> ConsistencyChecker<'a> {
    /// Streams for repetition `run` are sub-streams of `seed`.
    pub fn new(
        constants: &'a DerivedConstants,
        op: &'a SmoothOperator,
        model: &'a TabularMdp,
        exact: &'a ValueTable,
        seed: u64,
        run: u64,
    ) -> Self {
        Self {
            constants,
            op,
            noise: NoisyQOracle::new(exact, constants.v_max, seed, run),
            oracle: TabularOracle::with_stream(model, seed, run),
            actions: CountingStream::new(seed, Purpose::ActionChoice.stream(run)),
        }
    }

    pub fn oracle_calls(&self) -> u64 {
        self.oracle.call_count()
    }

    pub fn sample_v_check(&self, state: usize, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(invalid(format!("accuracy must be > 0, got {eps}")));
        }
        let c = self.constants;
        match c.branch(eps) {
            Branch::Truncate => Ok(0.0),
            Branch::Uniform => self.op.value(&self.noise.draw(state, c.zeta(eps)?)?),
            Branch::Linearized => {
                let q = self.noise.draw(state, c.zeta(eps)?)?;
                let (value, grad) = self.op.value_and_gradient(&q)?;
                let mass = grad.l1_norm();
                let action = draw_action(grad.weights(), mass, self.actions.next_draw().uniform())?;
                let (reward, next) = self.oracle.sample(state, action)?;
                let v_next = self.sample_v_check(next, c.child_eps(eps))?;
                Ok(value - q.dot(grad.weights()) + (reward + c.gamma * v_next) * mass)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub env: String,
    pub state: usize,
    pub epsilon: f64,
    pub n_sim: usize,
    pub seed: u64,
    pub gamma: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub v_max: f64,
    pub c_gamma: f64,
    pub exact_value: f64,
    /// Mean of `V_hat_i - V(s)`.
    pub delta_hat: f64,
    /// Sample standard deviation of `V_hat_i - V(s)`.
    pub std: f64,
    pub std_error: f64,
    pub min_output: f64,
    pub max_output: f64,
    /// Outputs outside `[-C_gamma, C_gamma]`.
    pub bound_violations: usize,
    pub oracle_calls: u64,
    pub eps_exceeds_kappa_quarter: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<Vec<f64>>,
}

/// Runs `n_sim` independent checks at the reference state of `spec`.
///
/// Runs execute in parallel; each has its own sub-streams and results are
/// summed in run order, so the report depends only on the arguments.
pub fn run_consistency(
    cfg: &PlannerConfig,
    op: &SmoothOperator,
    spec: EnvSpec,
    eps: f64,
    n_sim: usize,
    seed: u64,
    keep_runs: bool,
) -> Result<ConsistencyReport> {
    let model = build_env(spec)?;
    let state = spec.reference_state();
    run_consistency_on(
        cfg,
        op,
        &model,
        &spec.to_string(),
        state,
        eps,
        n_sim,
        seed,
        keep_runs,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn run_consistency_on(
    cfg: &PlannerConfig,
    op: &SmoothOperator,
    model: &TabularMdp,
    label: &str,
    state: usize,
    eps: f64,
    n_sim: usize,
    seed: u64,
    keep_runs: bool,
) -> Result<ConsistencyReport> {
    if n_sim == 0 {
        return Err(invalid("n_sim must be >= 1"));
    }
    if state >= model.n_states() {
        return Err(invalid(format!(
            "state {state} out of range for {} states",
            model.n_states()
        )));
    }
    let constants = DerivedConstants::new(cfg, op)?;
    if !(eps > 0.0) {
        return Err(invalid(format!("accuracy must be > 0, got {eps}")));
    }
    if eps >= constants.v_max {
        return Err(Error::DegenerateRun(format!(
            "eps = {eps} >= V_max = {}: every output would be 0",
            constants.v_max
        )));
    }
    let exact = solve_regularized(model, op, cfg.gamma, DEFAULT_TOLERANCE)?;
    let v = exact.v[state];
    let results: Vec<(f64, u64)> = (0..n_sim)
        .into_par_iter()
        .map(|run| {
            let checker = ConsistencyChecker::new(&constants, op, model, &exact, seed, run as u64);
            let out = checker.sample_v_check(state, eps)?;
            Ok((out, checker.oracle_calls()))
        })
        .collect::<Result<_>>()?;

    let n = n_sim as f64;
    let mut sum = 0.0;
    let mut calls = 0;
    let mut violations = 0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(out, c) in &results {
        sum += out - v;
        calls += c;
        lo = lo.min(out);
        hi = hi.max(out);
        if !(out.abs() <= constants.c_gamma) {
            violations += 1;
        }
    }
    let mean = sum / n;
    let std = if n_sim > 1 {
        (results
            .iter()
            .map(|&(out, _)| (out - v - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0))
            .sqrt()
    } else {
        0.0
    };
    let exceeds = eps > constants.kappa / 4.0;
    let warning = exceeds.then(|| {
        format!(
            "eps = {eps} exceeds kappa / 4 = {}; the recommended regime is eps <= kappa / 4",
            constants.kappa / 4.0
        )
    });
    Ok(ConsistencyReport {
        env: label.to_string(),
        state,
        epsilon: eps,
        n_sim,
        seed,
        gamma: cfg.gamma,
        lambda: op.lambda(),
        kappa: constants.kappa,
        v_max: constants.v_max,
        c_gamma: constants.c_gamma,
        exact_value: v,
        delta_hat: mean,
        std,
        std_error: std / n.sqrt(),
        min_output: lo,
        max_output: hi,
        bound_violations: violations,
        oracle_calls: calls,
        eps_exceeds_kappa_quarter: exceeds,
        warning,
        runs: keep_runs.then(|| results.iter().map(|r| r.0).collect()),
    })
}

/// Smallest `N` with `2 exp(-N slack^2 / (2 C_gamma^2)) <= 1 - confidence`.
pub fn size_n_sim(c_gamma: f64, confidence: f64, slack: f64) -> Result<u64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(invalid(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    if !(slack > 0.0 && slack.is_finite()) {
        return Err(invalid(format!("slack must be > 0, got {slack}")));
    }
    if !(c_gamma > 0.0 && c_gamma.is_finite()) {
        return Err(invalid(format!("range bound must be > 0, got {c_gamma}")));
    }
    let n = (2.0 * c_gamma * c_gamma * (2.0 / (1.0 - confidence)).ln() / (slack * slack)).ceil();
    Ok((n as u64).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_chain() -> (PlannerConfig, SmoothOperator) {
        (
            PlannerConfig::new(0.2, 0.1),
            SmoothOperator::log_sum_exp_max(10.0, 2).unwrap(),
        )
    }

    #[test]
    fn hoeffding_sizing() {
        let (cfg, op) = reference_chain();
        let c = DerivedConstants::new(&cfg, &op).unwrap();
        assert!((c.c_gamma - 37.178774).abs() < 1e-6);
        assert_eq!(size_n_sim(c.c_gamma, 0.89627, 0.5).unwrap(), 32723);
        let a = size_n_sim(1.0, 0.9, 0.01).unwrap() as f64;
        let b = size_n_sim(2.0, 0.9, 0.01).unwrap() as f64;
        assert!((b / a - 4.0).abs() < 1e-3);
        assert_eq!(size_n_sim(1.0, 1e-9, 10.0).unwrap(), 1);
        assert!(size_n_sim(1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn truncation_is_degenerate() {
        let (cfg, op) = reference_chain();
        let c = DerivedConstants::new(&cfg, &op).unwrap();
        let err = run_consistency(&cfg, &op, EnvSpec::chain(5), c.v_max, 10, 1, false).unwrap_err();
        assert!(matches!(err, Error::DegenerateRun(_)));
    }

    #[test]
    fn zero_noise_uniform_branch_is_exact() {
        let (cfg, op) = reference_chain();
        let c = DerivedConstants::new(&cfg, &op).unwrap();
        let m = build_env(EnvSpec::chain(5)).unwrap();
        let exact = solve_regularized(&m, &op, 0.2, 1e-12).unwrap();
        let noise = NoisyQOracle::new(&exact, c.v_max, 3, 0);
        for s in 0..5 {
            let q = noise.draw(s, 0.0).unwrap();
            assert_eq!(op.value(&q).unwrap(), exact.v[s]);
        }
    }

    #[test]
    fn uniform_branch_bias_is_within_eps() {
        let (cfg, op) = reference_chain();
        let c = DerivedConstants::new(&cfg, &op).unwrap();
        let eps = 0.5 * (c.kappa + c.v_max);
        let r = run_consistency(&cfg, &op, EnvSpec::chain(5), eps, 2000, 4, false).unwrap();
        assert!(r.delta_hat.abs() <= eps);
        assert_eq!(r.oracle_calls, 0);
        assert_eq!(r.bound_violations, 0);
    }

    #[test]
    fn reports_are_reproducible() {
        let (cfg, op) = reference_chain();
        let a = run_consistency(&cfg, &op, EnvSpec::chain(5), 0.35, 500, 7, true).unwrap();
        let b = run_consistency(&cfg, &op, EnvSpec::chain(5), 0.35, 500, 7, true).unwrap();
        assert_eq!(a, b);
        assert!(a.oracle_calls > 0);
        assert!(!a.eps_exceeds_kappa_quarter);
        let g = run_consistency(
            &cfg,
            &SmoothOperator::log_sum_exp_max(10.0, 4).unwrap(),
            EnvSpec::gridworld(5),
            0.35,
            10,
            7,
            false,
        )
        .unwrap();
        assert!(g.eps_exceeds_kappa_quarter && g.warning.is_some());
    }
}
