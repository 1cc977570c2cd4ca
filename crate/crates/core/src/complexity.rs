//! Sample-complexity machinery: exact call-count prediction, the simulated
//! per-call recurrence, closed-form upper bounds, and `delta'` selection.
//!
//! Bounds are returned as [`Magnitude`]s since they overflow `f64` quickly as
//! the accuracy shrinks. Exact call counts are [`BigUint`]s.

use std::collections::HashMap;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::magnitude::Magnitude;
use crate::operators::SmoothOperator;
use crate::planner::{Branch, DerivedConstants, PlannerConfig};

/// Number of points in the default accuracy grid, spanning `kappa * 10` down to `kappa / 1000`.
pub const CURVE_POINTS: usize = 40;

/// Memo keys quantize `ln eps` to this resolution.
const MEMO_RESOLUTION: f64 = 1e-12;

/// Largest exponent `j` of the `2^-j` candidates in [`choose_delta_prime`].
const DELTA_GRID_DEPTH: i32 = 1000;

/// Constants of the recursion bounds at a fixed `delta'`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundInputs {
    pub constants: DerivedConstants,
    /// `18 (1+M)^2 K / ((1-gamma)^4 (1-sqrt(gamma))^2) ln(2K/delta')`
    pub alpha: f64,
    /// `18 (1+M)^2 K^2 L / ((1-gamma)^4 (1-sqrt(gamma))^3) ln(2K/delta')`
    pub beta: f64,
    /// `kappa^2` times the sparse-sampling count at `kappa`.
    pub eta1: Magnitude,
    /// `log2(gamma / (1-gamma) * 2 beta / kappa)`
    pub eta2: f64,
}

impl BoundInputs {
    /// Fails when `eta_2 < 0`, where the small-accuracy bound does not apply.
    pub fn new(constants: &DerivedConstants) -> Result<Self> {
        let inputs = Self::unchecked(constants);
        if !(inputs.eta2 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "condition eta_2(delta') >= 0 violated: eta_2 = {} (beta = {}, kappa = {})",
                inputs.eta2, inputs.beta, constants.kappa
            )));
        }
        Ok(inputs)
    }

    pub fn unchecked(constants: &DerivedConstants) -> Self {
        let c = constants;
        let k = c.n_actions as f64;
        let alpha = c.n_prefactor * k * c.log_term;
        let beta = c.beta();
        let eta2 = (c.gamma / (1.0 - c.gamma) * 2.0 * beta / c.kappa).log2();
        let mut inputs = Self {
            constants: c.clone(),
            alpha,
            beta,
            eta1: Magnitude::ZERO,
            eta2,
        };
        inputs.eta1 = Magnitude::new(c.kappa * c.kappa) * inputs.bound_sparse(c.kappa);
        inputs
    }

    pub fn from_config(cfg: &PlannerConfig, op: &SmoothOperator) -> Result<Self> {
        Self::new(&DerivedConstants::new(cfg, op)?)
    }

    pub fn condition_holds(&self) -> bool {
        self.eta2 >= 0.0
    }

    /// Sparse-sampling count `gamma^(H(H-1)/2) (2 alpha / eps^2)^H` with `H = H(eps)`.
    pub fn bound_sparse(&self, eps: f64) -> Magnitude {
        let h = self.depth(eps) as f64;
        if h == 0.0 {
            return Magnitude::ONE;
        }
        let mut ln = h * (2.0 * self.alpha / (eps * eps)).ln();
        if h > 1.0 {
            ln += 0.5 * h * (h - 1.0) * self.constants.gamma.ln();
        }
        Magnitude::from_ln(ln)
    }

    /// `eta_1 [log_{1/gamma}(kappa / (gamma eps))]^eta_2 / eps^2` on `0 < eps <= kappa`.
    pub fn bound_small_eps(&self, eps: f64) -> Result<Magnitude> {
        let c = &self.constants;
        if !(eps > 0.0 && eps <= c.kappa) {
            return Err(invalid(format!(
                "small-accuracy bound needs 0 < eps <= kappa = {}, got {eps}",
                c.kappa
            )));
        }
        self.check_condition()?;
        let log_factor = (c.kappa / (c.gamma * eps)).ln() / (1.0 / c.gamma).ln();
        Ok(self.eta1 * Magnitude::new(log_factor).powf(self.eta2) / Magnitude::new(eps * eps))
    }

    /// Simulated per-call count: `1 + n(eps/sqrt(gamma)) + K N(sqrt(kappa eps)) n(sqrt(kappa eps / gamma))`
    /// below `kappa`, and the sparse-sampling count at or above it.
    pub fn sim_recurrence(&self, eps: f64) -> Result<Magnitude> {
        if !(eps > 0.0) {
            return Err(invalid(format!("accuracy must be > 0, got {eps}")));
        }
        self.check_condition()?;
        self.sim_memo(eps, &mut HashMap::new())
    }

    fn sim_memo(&self, eps: f64, memo: &mut HashMap<i64, Magnitude>) -> Result<Magnitude> {
        let c = &self.constants;
        if eps >= c.kappa {
            return Ok(self.bound_sparse(eps));
        }
        let key = (eps.ln() / MEMO_RESOLUTION).round() as i64;
        if let Some(&hit) = memo.get(&key) {
            return Ok(hit);
        }
        let z = c.linearization_eps(eps);
        let out = Magnitude::ONE
            + self.sim_memo(c.child_eps(eps), memo)?
            + Magnitude::from(c.n_actions as u64)
                * Magnitude::from(c.n_of_eps(z)?)
                * self.sim_memo(c.child_eps(z), memo)?;
        memo.insert(key, out);
        Ok(out)
    }

    /// `K N(eps)` times the simulated recurrence: the total-call analogue.
    pub fn simulated_total(&self, eps: f64) -> Result<Magnitude> {
        Ok(self.root_samples(eps)? * self.sim_recurrence(eps)?)
    }

    /// `K N(eps)` times the sparse-sampling count.
    pub fn sparse_total(&self, eps: f64) -> Result<Magnitude> {
        Ok(self.root_samples(eps)? * self.bound_sparse(eps))
    }

    fn root_samples(&self, eps: f64) -> Result<Magnitude> {
        let c = &self.constants;
        Ok(Magnitude::from(c.n_actions as u64) * Magnitude::from(c.n_of_eps(eps)?))
    }

    pub fn rate_constants(&self) -> RateConstants {
        let c = &self.constants;
        let k = c.n_actions as f64;
        let l = c.smoothness;
        let one_m = 1.0 + c.zero_bound;
        let one_sg = 1.0 - c.sqrt_gamma;
        RateConstants {
            c1: Magnitude::new(18.0 * one_m * one_m / (k * k * l * l * (1.0 - c.gamma).powi(4)))
                * self.bound_sparse(c.kappa),
            c2: 2.0 * k,
            c3: 1.0 / (1.0 / c.gamma).ln(),
            c4: one_sg / (c.gamma * k * l),
            c5: 36.0 * one_m * one_m * c.gamma * k.powi(3) * l * l
                / ((1.0 - c.gamma).powi(5) * one_sg.powi(4)),
        }
    }

    /// `(c1 / eps^4) ln(c2/delta') [c3 ln(c4/eps)]^{log2(c5 ln(c2/delta'))}` for `0 < eps <= kappa`.
    pub fn rate_envelope(&self, eps: f64) -> Result<Magnitude> {
        let c = &self.constants;
        if !(eps > 0.0 && eps <= c.kappa) {
            return Err(invalid(format!(
                "envelope needs 0 < eps <= kappa = {}, got {eps}",
                c.kappa
            )));
        }
        let t = self.rate_constants();
        let log_term = (t.c2 / c.delta_prime).ln();
        let exponent = (t.c5 * log_term).log2();
        Ok(t.c1 / Magnitude::new(eps.powi(4))
            * Magnitude::new(log_term)
            * Magnitude::new(t.c3 * (t.c4 / eps).ln()).powf(exponent))
    }

    fn depth(&self, eps: f64) -> u32 {
        self.constants.predict_depth(eps).unwrap_or(0)
    }

    fn check_condition(&self) -> Result<()> {
        if self.condition_holds() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "condition eta_2(delta') >= 0 violated: eta_2 = {}",
                self.eta2
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateConstants {
    pub c1: Magnitude,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

/// Exact number of oracle calls the planner makes at accuracy `eps`, found by
/// walking its recursion tree with the same branch decisions and sample sizes.
pub fn predict_calls(constants: &DerivedConstants, eps: f64) -> Result<BigUint> {
    if !(eps > 0.0) {
        return Err(invalid(format!("accuracy must be > 0, got {eps}")));
    }
    let c = constants;
    let mut memo = HashMap::new();
    let inner = calls_sample_v(c, c.child_eps(eps), &mut memo)?;
    Ok(BigUint::from(c.n_actions) * BigUint::from(c.n_of_eps(eps)?) * (inner + 1u32))
}

fn calls_sample_v(
    c: &DerivedConstants,
    eps: f64,
    memo: &mut HashMap<u64, BigUint>,
) -> Result<BigUint> {
    let key = eps.to_bits();
    if let Some(hit) = memo.get(&key) {
        return Ok(hit.clone());
    }
    let k = BigUint::from(c.n_actions);
    let out = match c.branch(eps) {
        Branch::Truncate => BigUint::zero(),
        Branch::Uniform => {
            k * BigUint::from(c.n_of_eps(eps)?)
                * (calls_sample_v(c, c.child_eps(eps), memo)? + 1u32)
        }
        Branch::Linearized => {
            let z = c.linearization_eps(eps);
            let estimate = k
                * BigUint::from(c.n_of_eps(z)?)
                * (calls_sample_v(c, c.child_eps(z), memo)? + 1u32);
            estimate + BigUint::one() + calls_sample_v(c, c.child_eps(eps), memo)?
        }
    };
    memo.insert(key, out.clone());
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaChoice {
    pub delta_prime: f64,
    #[serde(serialize_with = "decimal")]
    pub predicted_calls: BigUint,
    /// `delta' * predicted_calls`, the union-bound failure probability.
    pub failure_bound: f64,
}

/// Largest `delta'` among `2^-j` (`j = 1..=1000`) and `eps^5` with
/// `delta' * predict_calls(eps, delta') <= delta`.
///
/// Candidates violating `eta_2(delta') >= 0` are skipped.
pub fn choose_delta_prime(base: &DerivedConstants, eps: f64, delta: f64) -> Result<DeltaChoice> {
    if !(eps > 0.0) {
        return Err(invalid(format!("accuracy must be > 0, got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let mut candidates: Vec<f64> = (1..=DELTA_GRID_DEPTH).map(|j| 2f64.powi(-j)).collect();
    let floor = eps.powi(5);
    if floor > 0.0 && floor < 1.0 {
        candidates.push(floor);
    }
    candidates.sort_by(|a, b| b.total_cmp(a));
    let mut best: Option<DeltaChoice> = None;
    for delta_prime in candidates {
        let constants = base.with_delta_prime(delta_prime)?;
        if !constants.satisfies_beta_condition() {
            continue;
        }
        let calls = predict_calls(&constants, eps)?;
        let failure_bound = delta_prime * calls.to_f64().unwrap_or(f64::INFINITY);
        let choice = DeltaChoice {
            delta_prime,
            predicted_calls: calls,
            failure_bound,
        };
        if failure_bound <= delta {
            return Ok(choice);
        }
        if best
            .as_ref()
            .is_none_or(|b| failure_bound < b.failure_bound)
        {
            best = Some(choice);
        }
    }
    Err(match best {
        Some(b) => Error::InfeasibleAccuracy(format!(
            "no delta' reaches delta' * n(eps, delta') <= {delta} at eps = {eps}; best is {} * {} = {}",
            b.delta_prime, b.predicted_calls, b.failure_bound
        )),
        None => Error::InfeasibleAccuracy(format!("no candidate delta' satisfies eta_2(delta') >= 0 at eps = {eps}")),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundCurveRow {
    pub epsilon: f64,
    pub simulated: Magnitude,
    /// Only defined for `eps <= kappa`.
    pub bound_small_eps: Option<Magnitude>,
    pub bound_sparse: Magnitude,
    #[serde(serialize_with = "decimal")]
    pub predicted_calls: BigUint,
}

/// `n` log-spaced accuracies from `kappa * 10` down to `kappa / 1000`.
pub fn curve_grid(kappa: f64, n: usize) -> Vec<f64> {
    let (hi, lo) = (1.0f64, -3.0f64);
    match n {
        0 => Vec::new(),
        1 => vec![kappa * 10f64.powf(hi)],
        _ => (0..n)
            .map(|i| kappa * 10f64.powf(hi + (lo - hi) * i as f64 / (n - 1) as f64))
            .collect(),
    }
}

pub fn bound_curve(inputs: &BoundInputs, grid: &[f64]) -> Result<Vec<BoundCurveRow>> {
    let c = &inputs.constants;
    grid.iter()
        .map(|&eps| {
            Ok(BoundCurveRow {
                epsilon: eps,
                simulated: inputs.sim_recurrence(eps)?,
                bound_small_eps: if eps <= c.kappa {
                    Some(inputs.bound_small_eps(eps)?)
                } else {
                    None
                },
                bound_sparse: inputs.bound_sparse(eps),
                predicted_calls: predict_calls(c, eps)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub epsilon: f64,
    pub calls: Magnitude,
    pub sparse_calls: Magnitude,
    pub ratio: f64,
    /// False when `eta_2 < 0` at this `lambda`; the row is still evaluated.
    pub condition_holds: bool,
}

/// For each `lambda`, compares `K N(eps) n_sim(eps)` with `K N(eps) G(eps)` at
/// `eps = rel_err * V_max(lambda)`.
pub fn lambda_sweep(
    gamma: f64,
    n_actions: usize,
    delta_prime: f64,
    rel_err: f64,
    lambdas: &[f64],
) -> Result<Vec<LambdaRow>> {
    if !(rel_err > 0.0 && rel_err < 1.0) {
        return Err(invalid(format!(
            "relative error must lie in (0, 1), got {rel_err}"
        )));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let op = SmoothOperator::log_sum_exp_max(lambda, n_actions)?;
            let constants = DerivedConstants::new(
                &PlannerConfig::new(gamma, delta_prime).allowing_small_beta(),
                &op,
            )?;
            let inputs = BoundInputs::unchecked(&constants);
            let eps = rel_err * constants.v_max;
            // Flagged rows are evaluated anyway; the recurrence itself is well defined.
            let calls = inputs.root_samples(eps)? * inputs.sim_memo(eps, &mut HashMap::new())?;
            let sparse_calls = inputs.sparse_total(eps)?;
            Ok(LambdaRow {
                lambda,
                epsilon: eps,
                calls,
                sparse_calls,
                ratio: (calls / sparse_calls).value(),
                condition_holds: inputs.condition_holds(),
            })
        })
        .collect()
}

fn decimal<S: serde::Serializer>(
    n: &BigUint,
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    serializer.collect_str(n)
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_setup() -> BoundInputs {
        let op = SmoothOperator::log_sum_exp_max(0.1, 2).unwrap();
        BoundInputs::from_config(&PlannerConfig::new(0.2, 0.1), &op).unwrap()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs()
    }

    #[test]
    fn inputs_by_direct_evaluation() {
        let b = reference_setup();
        let (g, k, m) = (0.2f64, 2.0f64, 0.1 * 2f64.ln());
        let sg = g.sqrt();
        let lt = (2.0 * k / 0.1f64).ln();
        let alpha = 18.0 * (1.0 + m).powi(2) * k / ((1.0 - g).powi(4) * (1.0 - sg).powi(2)) * lt;
        let beta =
            18.0 * (1.0 + m).powi(2) * k * k * 10.0 / ((1.0 - g).powi(4) * (1.0 - sg).powi(3)) * lt;
        let kappa = (1.0 - sg) / (k * 10.0);
        assert!(close(b.alpha, alpha, 1e-13));
        assert!(close(b.beta, beta, 1e-13));
        assert!(close(
            b.eta2,
            (g / (1.0 - g) * 2.0 * beta / kappa).log2(),
            1e-13
        ));
        assert!(close(b.eta2, 19.6, 0.01));
    }

    #[test]
    fn sparse_bound_small_depths() {
        let b = reference_setup();
        let c = &b.constants;
        assert_eq!(b.bound_sparse(c.v_max), Magnitude::ONE);
        let eps = c.v_max * c.sqrt_gamma;
        assert_eq!(c.predict_depth(eps).unwrap(), 1);
        assert!(close(
            b.bound_sparse(eps).value(),
            2.0 * b.alpha / (eps * eps),
            1e-12
        ));
    }

    #[test]
    fn sim_base_cases() {
        let b = reference_setup();
        let c = &b.constants;
        assert_eq!(b.sim_recurrence(c.v_max).unwrap(), Magnitude::ONE);
        let at_kappa = b.sim_recurrence(c.kappa).unwrap();
        assert!(close(
            at_kappa.ln(),
            (b.eta1 / Magnitude::new(c.kappa * c.kappa)).ln(),
            1e-12
        ));
        assert!(close(
            b.bound_small_eps(c.kappa).unwrap().ln(),
            at_kappa.ln(),
            1e-12
        ));
    }

    #[test]
    fn sim_one_level_below_kappa() {
        // Just below kappa both children are at or above kappa.
        let b = reference_setup();
        let c = &b.constants;
        let eps = c.kappa * 0.99;
        let z = (c.kappa * eps).sqrt();
        let expected = 1.0
            + b.bound_sparse(eps / c.sqrt_gamma).value()
            + 2.0 * c.n_of_eps(z).unwrap() as f64 * b.bound_sparse(z / c.sqrt_gamma).value();
        assert!(close(
            b.sim_recurrence(eps).unwrap().value(),
            expected,
            1e-12
        ));
    }

    #[test]
    fn small_eps_bound_scaling_at_zero_exponent() {
        let mut b = reference_setup();
        b.eta2 = 0.0;
        let k = b.constants.kappa;
        let r = b.bound_small_eps(k / 4.0).unwrap() / b.bound_small_eps(k / 2.0).unwrap();
        assert!(close(r.value(), 4.0, 1e-12));
        assert!(b.bound_small_eps(2.0 * k).is_err());
    }

    #[test]
    fn sparse_bound_is_superpolynomial() {
        let b = reference_setup();
        let k = b.constants.kappa;
        let ratios: Vec<f64> = (1..8)
            .map(|i| {
                let eps = k * 10f64.powi(-2 * i);
                b.bound_sparse(eps).ln() / (1.0 / eps).ln()
            })
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
    }

    #[test]
    fn predict_one_level() {
        let b = reference_setup();
        let c = &b.constants;
        let eps = c.v_max * c.sqrt_gamma;
        assert_eq!(
            predict_calls(c, eps).unwrap(),
            BigUint::from(2 * c.n_of_eps(eps).unwrap())
        );
    }

    #[test]
    fn predict_two_levels() {
        let b = reference_setup();
        let c = &b.constants;
        // Children land in [kappa, V_max) and grandchildren truncate.
        let eps = c.v_max * c.gamma;
        let child = c.child_eps(eps);
        assert_eq!(c.branch(child), Branch::Uniform);
        assert_eq!(c.branch(c.child_eps(child)), Branch::Truncate);
        let n0 = c.n_of_eps(eps).unwrap() as u128;
        let n1 = c.n_of_eps(child).unwrap() as u128;
        let expected = 2 * n0 * (1 + 2 * n1);
        assert_eq!(predict_calls(c, eps).unwrap(), BigUint::from(expected));
    }

    #[test]
    fn thm_constants_positive() {
        let t = reference_setup().rate_constants();
        assert!(t.c1 > Magnitude::ZERO);
        for v in [t.c2, t.c3, t.c4, t.c5] {
            assert!(v.is_finite() && v > 0.0);
        }
        assert_eq!(t.c2, 4.0);
    }

    #[test]
    fn delta_prime_choice() {
        let b = reference_setup();
        let choice = choose_delta_prime(&b.constants, b.constants.v_max * 2.0, 0.1).unwrap();
        // Above V_max only the root estimate runs: K N(eps) calls.
        let c = b.constants.with_delta_prime(choice.delta_prime).unwrap();
        assert_eq!(
            choice.predicted_calls,
            BigUint::from(2 * c.n_of_eps(b.constants.v_max * 2.0).unwrap())
        );
        assert!(choice.failure_bound <= 0.1);
        assert!(choice.delta_prime <= 0.1);
        assert!(choose_delta_prime(&b.constants, 1.0, 1.0).is_err());
    }

    #[test]
    fn grids() {
        let g = curve_grid(2.0, CURVE_POINTS);
        assert_eq!(g.len(), 40);
        assert!(close(g[0], 20.0, 1e-15) && close(g[39], 0.002, 1e-12));
        let l = log_grid(0.01, 100.0, 5);
        assert!(close(l[2], 1.0, 1e-14) && close(l[4], 100.0, 1e-14));
        assert!(close(
            fit_slope(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]),
            2.0,
            1e-15
        ));
    }
}
