//! The SmoothCruiser planner.
//!
//! `plan` estimates `V(s) = F_s(Q_s)` from a generative model by calling
//! `estimate_q`, which averages `N(eps)` samples of `R + gamma * sample_v(Z, eps / sqrt(gamma))`
//! per action. `sample_v` has three regimes, keyed on the requested accuracy:
//!
//! * `eps >= V_max`: return 0, which is within `eps` of any value;
//! * `kappa <= eps < V_max`: return `F_s(estimate_q(s, eps))` (sparse sampling);
//! * `eps < kappa`: estimate `Q` only to accuracy `sqrt(kappa * eps)`, linearize
//!   `F_s` there, and correct the linearization with one sampled transition.
//!
//! The planner is non-adaptive: the number of oracle calls depends only on
//! `(gamma, lambda, K, delta', eps, n_scale)` and is predicted exactly by
//! [`crate::complexity::predict_calls`].

use std::sync::atomic::{AtomicUsize, Ordering};

use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity;
use crate::environments::GenerativeModel;
use crate::error::{invalid, Error, Result};
use crate::operators::{clip_slice, QVector, SmoothOperator};
use crate::rng::{CountingStream, Purpose};

/// Indices per parallel work unit in `estimate_q`; chunk sums are combined in
/// index order.
const PARALLEL_CHUNK: usize = 1024;

/// Distance from an integer below which `H(eps)` is treated as that integer.
const DEPTH_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub gamma: f64,
    pub delta_prime: f64,
    /// Multiplier on `N(eps)`; 1 reproduces the theoretical sample sizes.
    pub n_scale: f64,
    pub max_depth_slack: usize,
    pub parallel: bool,
    /// Accept configurations that violate `eta_2(delta') >= 0`.
    pub allow_small_beta: bool,
    /// Refuse to run when more oracle calls than this are predicted.
    pub call_budget: Option<u64>,
}

impl PlannerConfig {
    pub fn new(gamma: f64, delta_prime: f64) -> Self {
        Self {
            gamma,
            delta_prime,
            n_scale: 1.0,
            max_depth_slack: 2,
            parallel: false,
            allow_small_beta: false,
            call_budget: None,
        }
    }

    pub fn with_n_scale(mut self, n_scale: f64) -> Self {
        self.n_scale = n_scale;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn with_call_budget(mut self, budget: u64) -> Self {
        self.call_budget = Some(budget);
        self
    }

    pub fn allowing_small_beta(mut self) -> Self {
        self.allow_small_beta = true;
        self
    }
}

/// Which regime `sample_v` is in for a given accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `eps >= V_max`
    Truncate,
    /// `kappa <= eps < V_max`
    Uniform,
    /// `eps < kappa`
    Linearized,
}

/// Quantities shared by the planner, the call-count predictor and the bounds.
///
/// The accuracy cascade (`child_eps`, `linearization_eps`) is computed here
/// only, so the planner and the predictor take bit-identical branch decisions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub gamma: f64,
    pub sqrt_gamma: f64,
    pub n_actions: usize,
    /// Smoothness constant `L` of the operator.
    pub smoothness: f64,
    /// `M_lambda`, the operator's bound on `|F(0)|`.
    pub zero_bound: f64,
    /// `(1 - sqrt(gamma)) / (K L)`
    pub kappa: f64,
    /// `(1 + M) / (1 - gamma)`
    pub v_max: f64,
    /// `3 (1 + M) / (1 - gamma)^2`
    pub c_gamma: f64,
    pub delta_prime: f64,
    /// `ln(2K / delta')`
    pub log_term: f64,
    /// `18 (1 + M)^2 / ((1 - gamma)^4 (1 - sqrt(gamma))^2)`
    pub n_prefactor: f64,
    pub n_scale: f64,
}

impl DerivedConstants {
    pub fn new(cfg: &PlannerConfig, op: &SmoothOperator) -> Result<Self> {
        let constants = Self::from_parts(
            cfg.gamma,
            op.n_actions(),
            op.smoothness(),
            op.zero_bound(),
            cfg.delta_prime,
            cfg.n_scale,
        )?;
        if !cfg.allow_small_beta && !constants.satisfies_beta_condition() {
            return Err(Error::InvalidConfig(format!(
                "condition eta_2(delta') >= 0 violated: beta(delta') = {} < (1-gamma)(1-sqrt(gamma))/(2 gamma K L) = {}; \
                 choose a smaller delta' or pass the override",
                constants.beta(),
                constants.beta_threshold()
            )));
        }
        Ok(constants)
    }

    pub fn from_parts(
        gamma: f64,
        n_actions: usize,
        smoothness: f64,
        zero_bound: f64,
        delta_prime: f64,
        n_scale: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(invalid(format!(
                "discount gamma must lie in [0, 1), got {gamma}"
            )));
        }
        if !(delta_prime > 0.0 && delta_prime < 1.0) {
            return Err(invalid(format!(
                "delta' must lie in (0, 1), got {delta_prime}"
            )));
        }
        if !(n_scale.is_finite() && n_scale > 0.0) {
            return Err(invalid(format!("n_scale must be > 0, got {n_scale}")));
        }
        if n_actions == 0 {
            return Err(invalid("number of actions K must be >= 1"));
        }
        if !(smoothness.is_finite() && smoothness > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "the planner needs a smoothness constant L > 0, got {smoothness}"
            )));
        }
        if !(zero_bound.is_finite() && zero_bound >= 0.0) {
            return Err(invalid(format!(
                "zero-offset bound M must be >= 0, got {zero_bound}"
            )));
        }
        let sqrt_gamma = gamma.sqrt();
        let k = n_actions as f64;
        let one_m = 1.0 + zero_bound;
        Ok(Self {
            gamma,
            sqrt_gamma,
            n_actions,
            smoothness,
            zero_bound,
            kappa: (1.0 - sqrt_gamma) / (k * smoothness),
            v_max: one_m / (1.0 - gamma),
            c_gamma: 3.0 * one_m / (1.0 - gamma).powi(2),
            delta_prime,
            log_term: (2.0 * k / delta_prime).ln(),
            n_prefactor: 18.0 * one_m * one_m
                / ((1.0 - gamma).powi(4) * (1.0 - sqrt_gamma).powi(2)),
            n_scale,
        })
    }

    /// Same constants with a different `delta'`.
    pub fn with_delta_prime(&self, delta_prime: f64) -> Result<Self> {
        Self::from_parts(
            self.gamma,
            self.n_actions,
            self.smoothness,
            self.zero_bound,
            delta_prime,
            self.n_scale,
        )
    }

    /// `beta(delta') = 18 (1+M)^2 K^2 L / ((1-gamma)^4 (1-sqrt(gamma))^3) ln(2K/delta')`
    pub fn beta(&self) -> f64 {
        let k = self.n_actions as f64;
        let one_m = 1.0 + self.zero_bound;
        18.0 * one_m * one_m * k * k * self.smoothness
            / ((1.0 - self.gamma).powi(4) * (1.0 - self.sqrt_gamma).powi(3))
            * self.log_term
    }

    pub fn beta_threshold(&self) -> f64 {
        (1.0 - self.gamma) * (1.0 - self.sqrt_gamma)
            / (2.0 * self.gamma * self.n_actions as f64 * self.smoothness)
    }

    /// `eta_2(delta') >= 0`, the precondition of the small-accuracy recursion bound.
    pub fn satisfies_beta_condition(&self) -> bool {
        self.beta() >= self.beta_threshold()
    }

    /// `N(eps) = ceil(n_scale * 18(1+M)^2 / ((1-gamma)^4 (1-sqrt(gamma))^2) * ln(2K/delta') / eps^2)`, at least 1.
    pub fn n_of_eps(&self, eps: f64) -> Result<u64> {
        if !(eps > 0.0) {
            return Err(invalid(format!("accuracy must be > 0, got {eps}")));
        }
        let n = (self.n_scale * self.n_prefactor * self.log_term / (eps * eps)).ceil();
        if n >= u64::MAX as f64 {
            return Err(Error::Numeric(format!(
                "N({eps}) = {n:e} exceeds the 64-bit sample counter"
            )));
        }
        Ok((n as u64).max(1))
    }

    /// Accuracy requested from `estimate_q` inside `sample_v(eps)`:
    /// `eps` on `[kappa, V_max)`, `sqrt(kappa eps)` below `kappa`, infinite above.
    pub fn zeta(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(invalid(format!("accuracy must be > 0, got {eps}")));
        }
        Ok(match self.branch(eps) {
            Branch::Truncate => f64::INFINITY,
            Branch::Uniform => eps,
            Branch::Linearized => self.linearization_eps(eps),
        })
    }

    /// Branch (a) wins the tie at `eps == V_max`.
    pub fn branch(&self, eps: f64) -> Branch {
        if eps >= self.v_max {
            Branch::Truncate
        } else if eps >= self.kappa {
            Branch::Uniform
        } else {
            Branch::Linearized
        }
    }

    /// Accuracy of the recursive `sample_v` calls made at accuracy `eps`.
    pub fn child_eps(&self, eps: f64) -> f64 {
        eps / self.sqrt_gamma
    }

    pub fn linearization_eps(&self, eps: f64) -> f64 {
        (self.kappa * eps).sqrt()
    }

    /// `H(eps) = ceil(2 log_gamma(eps (1-gamma) / (1+M)))`, floored at 0, and 0 above `V_max`.
    pub fn predict_depth(&self, eps: f64) -> Result<u32> {
        if !(eps > 0.0) {
            return Err(invalid(format!("accuracy must be > 0, got {eps}")));
        }
        if eps >= self.v_max || self.gamma == 0.0 {
            return Ok(0);
        }
        let h = 2.0 * (eps / self.v_max).ln() / self.gamma.ln();
        // Snap rounding noise so exact integers (e.g. eps = sqrt(gamma) V_max) are not pushed up.
        let h = if (h - h.round()).abs() < DEPTH_SNAP {
            h.round()
        } else {
            h.ceil()
        };
        Ok(h.max(0.0) as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub estimate: f64,
    pub oracle_calls: u64,
    pub predicted_calls: u64,
    pub max_recursion_depth_seen: usize,
}

/// One planner instance: operator, oracle and the action-choice stream.
pub struct Planner<'a, G: GenerativeModel> {
    constants: DerivedConstants,
    op: &'a SmoothOperator,
    oracle: &'a G,
    actions: CountingStream,
    parallel: bool,
    max_depth_slack: usize,
    call_budget: Option<u64>,
    deepest: AtomicUsize,
}

impl<'a, G: GenerativeModel> Planner<'a, G> {
    pub fn new(
        cfg: &PlannerConfig,
        op: &'a SmoothOperator,
        oracle: &'a G,
        seed: u64,
    ) -> Result<Self> {
        if op.n_actions() != oracle.n_actions() {
            return Err(invalid(format!(
                "operator has K = {}, oracle has K = {}",
                op.n_actions(),
                oracle.n_actions()
            )));
        }
        Ok(Self {
            constants: DerivedConstants::new(cfg, op)?,
            op,
            oracle,
            actions: CountingStream::new(seed, Purpose::ActionChoice.stream(0)),
            parallel: cfg.parallel,
            max_depth_slack: cfg.max_depth_slack,
            call_budget: cfg.call_budget,
            deepest: AtomicUsize::new(0),
        })
    }

    pub fn constants(&self) -> &DerivedConstants {
        &self.constants
    }

    /// Full planner run: `F_s(estimate_q(s, eps))` with call accounting.
    pub fn plan(&self, state: usize, eps: f64) -> Result<PlanResult> {
        let predicted = complexity::predict_calls(&self.constants, eps)?;
        let predicted = predicted.to_u64().ok_or_else(|| {
            Error::InfeasibleAccuracy(format!("accuracy {eps} needs {predicted} oracle calls"))
        })?;
        if let Some(budget) = self.call_budget {
            if predicted > budget {
                return Err(Error::InfeasibleAccuracy(format!(
                    "accuracy {eps} needs {predicted} oracle calls, budget is {budget}"
                )));
            }
        }
        let before = self.oracle.call_count();
        let limit = self.depth_limit(eps)?;
        let q = self.estimate_q_at(state, eps, 0, limit)?;
        let estimate = self.op.value(&QVector::new(q)?)?;
        Ok(PlanResult {
            estimate,
            oracle_calls: self.oracle.call_count() - before,
            predicted_calls: predicted,
            max_recursion_depth_seen: self.deepest.load(Ordering::Relaxed),
        })
    }

    pub fn sample_v(&self, state: usize, eps: f64) -> Result<f64> {
        let limit = self.depth_limit(eps)?;
        self.sample_v_at(state, eps, 0, limit)
    }

    pub fn estimate_q(&self, state: usize, eps: f64) -> Result<QVector> {
        let limit = self.depth_limit(eps)?;
        QVector::new(self.estimate_q_at(state, eps, 0, limit)?)
    }

    fn depth_limit(&self, eps: f64) -> Result<usize> {
        Ok(self.constants.predict_depth(eps)? as usize + self.max_depth_slack)
    }

    fn sample_v_at(&self, state: usize, eps: f64, depth: usize, limit: usize) -> Result<f64> {
        if depth > limit {
            return Err(Error::Internal(format!(
                "sample_v recursion depth {depth} exceeds H(eps) + slack = {limit} at eps = {eps}"
            )));
        }
        self.deepest.fetch_max(depth, Ordering::Relaxed);
        let c = &self.constants;
        let out = match c.branch(eps) {
            Branch::Truncate => return Ok(0.0),
            Branch::Uniform => {
                let q = self.estimate_q_at(state, eps, depth, limit)?;
                self.op.value(&QVector::new(q)?)?
            }
            Branch::Linearized => {
                let q = QVector::new(self.estimate_q_at(
                    state,
                    c.linearization_eps(eps),
                    depth,
                    limit,
                )?)?;
                let (value, grad) = self.op.value_and_gradient(&q)?;
                let weights = grad.weights();
                let mass = grad.l1_norm();
                let action = draw_action(weights, mass, self.actions.next_draw().uniform())?;
                let (reward, next) = self.oracle.sample(state, action)?;
                let v_next = self.sample_v_at(next, c.child_eps(eps), depth + 1, limit)?;
                value - q.dot(weights) + (reward + c.gamma * v_next) * mass
            }
        };
        check_bounded(out, c.c_gamma)?;
        Ok(out)
    }

    fn estimate_q_at(
        &self,
        state: usize,
        eps: f64,
        depth: usize,
        limit: usize,
    ) -> Result<Vec<f64>> {
        let c = &self.constants;
        let n = c.n_of_eps(eps)?;
        let n_usize = usize::try_from(n)
            .map_err(|_| Error::Numeric(format!("N = {n} does not fit in usize")))?;
        let child = c.child_eps(eps);
        let one = |action: usize| -> Result<f64> {
            let (reward, next) = self.oracle.sample(state, action)?;
            Ok(reward + c.gamma * self.sample_v_at(next, child, depth + 1, limit)?)
        };
        let mut means = Vec::with_capacity(c.n_actions);
        for action in 0..c.n_actions {
            let total = if self.parallel && n_usize > PARALLEL_CHUNK {
                let chunks = n_usize.div_ceil(PARALLEL_CHUNK);
                let sums = (0..chunks)
                    .into_par_iter()
                    .map(|chunk| {
                        let end = ((chunk + 1) * PARALLEL_CHUNK).min(n_usize);
                        (chunk * PARALLEL_CHUNK..end)
                            .try_fold(0.0, |acc, _| Ok::<_, Error>(acc + one(action)?))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                sums.into_iter().sum::<f64>()
            } else {
                let mut acc = 0.0;
                for _ in 0..n_usize {
                    acc += one(action)?;
                }
                acc
            };
            means.push(total / n as f64);
        }
        Ok(clip_slice(&means, c.v_max))
    }
}

/// Inverse-CDF draw from `weights / mass` with cumulative sums in index order.
pub(crate) fn draw_action(weights: &[f64], mass: f64, u: f64) -> Result<usize> {
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Internal(format!(
            "operator gradient has l1-norm {mass}"
        )));
    }
    let target = u * mass;
    let mut cumulative = 0.0;
    for (a, &w) in weights.iter().enumerate() {
        cumulative += w;
        if w > 0.0 && target < cumulative {
            return Ok(a);
        }
    }
    Ok(weights
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("positive mass"))
}

pub(crate) fn check_bounded(out: f64, c_gamma: f64) -> Result<()> {
    if !(out.abs() <= c_gamma * (1.0 + 1e-12)) {
        return Err(Error::Internal(format!(
            "sample_v output {out} outside [-C_gamma, C_gamma] = +-{c_gamma}"
        )));
    }
    Ok(())
}

/// Convenience wrapper: build a planner and run it once.
pub fn smooth_cruiser<G: GenerativeModel>(
    cfg: &PlannerConfig,
    op: &SmoothOperator,
    oracle: &G,
    state: usize,
    eps: f64,
    seed: u64,
) -> Result<PlanResult> {
    Planner::new(cfg, op, oracle, seed)?.plan(state, eps)
}
