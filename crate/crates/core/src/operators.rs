//! Smooth Bellman operators `F_s: R^K -> R`.
//!
//! Three kinds are provided: the log-sum-exp softening of `max` (entropy
//! regularization), the matching softening of `min`, and the
//! square-root-regularized operator `max_pi sum_a (Q_a pi_a + lambda sqrt(pi_a))`
//! whose maximizer is found by a one-dimensional root-find on the Lagrange
//! multiplier of the simplex constraint.
//!
//! Every operator has a nonnegative gradient with l1-norm in `(0, 1]`, is
//! 1-Lipschitz in the sup-norm and `L`-smooth. The planner relies on all
//! three properties.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Iteration cap for the Lagrange-multiplier bisection.
pub const LAGRANGE_MAX_ITERATIONS: usize = 200;
/// Required accuracy on the Lagrange multiplier `U`.
pub const LAGRANGE_TOLERANCE: f64 = 1e-12;
/// Maximum accepted `|sum_a pi_a - 1|` at the returned multiplier.
pub const LAGRANGE_RESIDUAL_TOLERANCE: f64 = 1e-10;

const SMOOTHNESS_SAFETY_FACTOR: f64 = 2.0;
const SMOOTHNESS_SAMPLES: usize = 4000;
const SMOOTHNESS_SEED: u64 = 0x5157_7265_6753_6d6f;

/// Action values at one state. Non-empty, all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QVector(Vec<f64>);

impl QVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("Q vector must have at least one action"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "Q vector entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(n_actions: usize) -> Result<Self> {
        Self::new(vec![0.0; n_actions])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Componentwise clamp to `[0, cap]`.
    pub fn clip(&self, cap: f64) -> QVector {
        QVector(clip_slice(&self.0, cap))
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

/// Componentwise clamp of `x` to `[0, cap]`.
///
/// For any `q` with entries in `[0, cap]`, clipping never increases the
/// sup-norm distance to `q`.
pub fn clip_slice(x: &[f64], cap: f64) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0).min(cap)).collect()
}

/// Gradient of a smooth operator: nonnegative weights summing to a value in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|w| w.abs()).sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    LogSumExpMax,
    LogSumExpMin,
    SqrtRegularized,
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OperatorKind::LogSumExpMax => "logsumexp_max",
            OperatorKind::LogSumExpMin => "logsumexp_min",
            OperatorKind::SqrtRegularized => "sqrt_reg",
        })
    }
}

impl std::str::FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logsumexp_max" | "lse-max" | "max" => Ok(OperatorKind::LogSumExpMax),
            "logsumexp_min" | "lse-min" | "min" => Ok(OperatorKind::LogSumExpMin),
            "sqrt_reg" | "sqrt" => Ok(OperatorKind::SqrtRegularized),
            other => Err(invalid(format!("unknown operator kind '{other}'"))),
        }
    }
}

/// A smooth Bellman operator over `K` actions with temperature `lambda`.
///
/// Immutable after construction; all methods are pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothOperator {
    kind: OperatorKind,
    lambda: f64,
    n_actions: usize,
    smoothness: f64,
    zero_bound: f64,
}

impl SmoothOperator {
    pub fn new(kind: OperatorKind, lambda: f64, n_actions: usize) -> Result<Self> {
        match kind {
            OperatorKind::LogSumExpMax => Self::log_sum_exp_max(lambda, n_actions),
            OperatorKind::LogSumExpMin => Self::log_sum_exp_min(lambda, n_actions),
            OperatorKind::SqrtRegularized => Self::sqrt_regularized(lambda, n_actions),
        }
    }

    /// `lambda * ln sum_i exp(q_i / lambda)`.
    pub fn log_sum_exp_max(lambda: f64, n_actions: usize) -> Result<Self> {
        Self::log_sum_exp(OperatorKind::LogSumExpMax, lambda, n_actions)
    }

    /// `-lambda * ln sum_i exp(-q_i / lambda)`, the softened `min`.
    pub fn log_sum_exp_min(lambda: f64, n_actions: usize) -> Result<Self> {
        Self::log_sum_exp(OperatorKind::LogSumExpMin, lambda, n_actions)
    }

    fn log_sum_exp(kind: OperatorKind, lambda: f64, n_actions: usize) -> Result<Self> {
        check_lambda(lambda)?;
        check_actions(n_actions)?;
        Ok(Self {
            kind,
            lambda,
            n_actions,
            smoothness: 1.0 / lambda,
            zero_bound: lambda * (n_actions as f64).ln(),
        })
    }

    /// Square-root-regularized operator with a numerically estimated
    /// smoothness constant (see [`estimate_sqrt_smoothness`]).
    pub fn sqrt_regularized(lambda: f64, n_actions: usize) -> Result<Self> {
        check_lambda(lambda)?;
        check_actions(n_actions)?;
        let smoothness = estimate_sqrt_smoothness(n_actions)? / lambda;
        Ok(Self {
            kind: OperatorKind::SqrtRegularized,
            lambda,
            n_actions,
            smoothness,
            zero_bound: lambda * (n_actions as f64).sqrt(),
        })
    }

    /// Replaces the smoothness constant, e.g. with a user-supplied bound.
    pub fn with_smoothness(mut self, smoothness: f64) -> Result<Self> {
        if !(smoothness.is_finite() && smoothness >= 0.0) {
            return Err(invalid(format!(
                "smoothness constant must be finite and >= 0, got {smoothness}"
            )));
        }
        self.smoothness = smoothness;
        Ok(self)
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Smoothness constant `L`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// Bound `M >= |F(0)|`.
    pub fn zero_bound(&self) -> f64 {
        self.zero_bound
    }

    fn check_input(&self, q: &QVector) -> Result<()> {
        if q.len() != self.n_actions {
            return Err(invalid(format!(
                "Q vector has {} entries, operator expects {}",
                q.len(),
                self.n_actions
            )));
        }
        Ok(())
    }

    pub fn value(&self, q: &QVector) -> Result<f64> {
        self.check_input(q)?;
        match self.kind {
            OperatorKind::LogSumExpMax => Ok(lse(q.as_slice(), self.lambda, 1.0)),
            OperatorKind::LogSumExpMin => Ok(lse(q.as_slice(), self.lambda, -1.0)),
            OperatorKind::SqrtRegularized => Ok(self.sqrt_solution(q)?.value),
        }
    }

    pub fn gradient(&self, q: &QVector) -> Result<GradientVector> {
        Ok(self.value_and_gradient(q)?.1)
    }

    /// Value and gradient in one pass; the root-find is shared for `sqrt_reg`.
    pub fn value_and_gradient(&self, q: &QVector) -> Result<(f64, GradientVector)> {
        self.check_input(q)?;
        match self.kind {
            OperatorKind::LogSumExpMax | OperatorKind::LogSumExpMin => {
                let sign = if self.kind == OperatorKind::LogSumExpMax {
                    1.0
                } else {
                    -1.0
                };
                let value = lse(q.as_slice(), self.lambda, sign);
                Ok((
                    value,
                    GradientVector(softmax(q.as_slice(), self.lambda, sign)),
                ))
            }
            OperatorKind::SqrtRegularized => {
                let sol = self.sqrt_solution(q)?;
                Ok((sol.value, GradientVector(sol.policy)))
            }
        }
    }

    /// Lagrange multiplier `U` of the simplex constraint for `sqrt_reg`:
    /// the root of `sum_a (lambda / 2 / (U - q_a))^2 = 1` above `max(q)`.
    pub fn solve_lagrange(&self, q: &QVector) -> Result<f64> {
        self.check_input(q)?;
        if self.kind != OperatorKind::SqrtRegularized {
            return Err(Error::Unsupported(format!(
                "solve_lagrange is only defined for sqrt_reg, not {}",
                self.kind
            )));
        }
        Ok(self.sqrt_solution(q)?.multiplier)
    }

    /// Distance between the operator and the hard max (or min):
    /// `F(q) - max(q)` for the max kind, `min(q) - F(q)` for the min kind.
    pub fn max_approx_gap(&self, q: &QVector) -> Result<f64> {
        self.check_input(q)?;
        match self.kind {
            OperatorKind::LogSumExpMax => Ok(lse(q.as_slice(), self.lambda, 1.0) - q.max()),
            OperatorKind::LogSumExpMin => Ok(q.min() - lse(q.as_slice(), self.lambda, -1.0)),
            OperatorKind::SqrtRegularized => Err(Error::Unsupported(
                "max_approx_gap is only defined for the log-sum-exp kinds".into(),
            )),
        }
    }

    fn sqrt_solution(&self, q: &QVector) -> Result<SqrtSolution> {
        solve_sqrt(q.as_slice(), self.lambda)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid(format!(
            "lambda must be finite and > 0, got {lambda}"
        )));
    }
    Ok(())
}

fn check_actions(n_actions: usize) -> Result<()> {
    if n_actions == 0 {
        return Err(invalid("number of actions K must be >= 1"));
    }
    Ok(())
}

/// `sign * lambda * ln sum exp(sign * q_i / lambda)` with max-shift.
fn lse(q: &[f64], lambda: f64, sign: f64) -> f64 {
    let shift = q.iter().map(|v| sign * v).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = q.iter().map(|v| ((sign * v - shift) / lambda).exp()).sum();
    sign * (shift + lambda * sum.ln())
}

fn softmax(q: &[f64], lambda: f64, sign: f64) -> Vec<f64> {
    let shift = q.iter().map(|v| sign * v).fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = q
        .iter()
        .map(|v| ((sign * v - shift) / lambda).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

struct SqrtSolution {
    multiplier: f64,
    value: f64,
    policy: Vec<f64>,
}

/// Solves the sqrt-regularized problem in the frame shifted by `max(q)`, so
/// the bisection variable `t = U - max(q)` lives on `[lambda/2, lambda sqrt(K)/2]`
/// and keeps full relative precision regardless of the magnitude of `q`.
fn solve_sqrt(q: &[f64], lambda: f64) -> Result<SqrtSolution> {
    let top = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gaps: Vec<f64> = q.iter().map(|v| top - v).collect();
    let half = 0.5 * lambda;
    let excess =
        |t: f64| -> f64 { gaps.iter().map(|d| (half / (t + d)).powi(2)).sum::<f64>() - 1.0 };

    let mut lo = half;
    let mut hi = half * (q.len() as f64).sqrt();
    let (f_lo, f_hi) = (excess(lo), excess(hi));
    // Residual is decreasing in t: nonnegative at lo, nonpositive at hi.
    if f_lo < -LAGRANGE_RESIDUAL_TOLERANCE || f_hi > LAGRANGE_RESIDUAL_TOLERANCE {
        return Err(Error::Internal(format!(
            "Lagrange bracket does not straddle the root (residuals {f_lo}, {f_hi})"
        )));
    }
    let mut iterations = 0;
    while iterations < LAGRANGE_MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    if hi - lo > LAGRANGE_TOLERANCE * lambda.max(1.0) {
        return Err(Error::Numeric(format!(
            "Lagrange bisection did not converge after {LAGRANGE_MAX_ITERATIONS} iterations (width {})",
            hi - lo
        )));
    }
    let t = if excess(hi).abs() < excess(lo).abs() {
        hi
    } else {
        lo
    };
    let raw: Vec<f64> = gaps.iter().map(|d| (half / (t + d)).powi(2)).collect();
    let total: f64 = raw.iter().sum();
    if (total - 1.0).abs() > LAGRANGE_RESIDUAL_TOLERANCE {
        return Err(Error::Numeric(format!(
            "Lagrange residual {} exceeds tolerance",
            total - 1.0
        )));
    }
    let mut policy: Vec<f64> = raw.iter().map(|p| p / total).collect();
    // Rounding can leave the normalized sum an ulp above 1.
    while policy.iter().sum::<f64>() > 1.0 {
        policy.iter_mut().for_each(|p| *p *= 1.0 - f64::EPSILON);
    }
    // F = max(q) + sum_a pi_a (q_a - max(q)) + lambda sum_a sqrt(pi_a)
    let value = top
        + policy
            .iter()
            .zip(&gaps)
            .map(|(p, d)| -p * d + lambda * p.sqrt())
            .sum::<f64>();
    Ok(SqrtSolution {
        multiplier: top + t,
        value,
        policy,
    })
}

/// Numerical smoothness constant of the sqrt-regularized operator at `lambda = 1`.
///
/// Takes the largest ratio `|F(q) - F(q') - (q - q')^T grad F(q')| / |q - q'|_2^2`
/// over a fixed pseudo-random sample of pairs (close pairs near ties as well as
/// far pairs) and multiplies it by a safety factor of 2. The operator satisfies
/// `F_lambda(q) = lambda F_1(q / lambda)`, so the constant at temperature
/// `lambda` is this value divided by `lambda`.
pub fn estimate_sqrt_smoothness(n_actions: usize) -> Result<f64> {
    check_actions(n_actions)?;
    if n_actions == 1 {
        // F(q) = q + lambda is affine.
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SMOOTHNESS_SEED ^ n_actions as u64);
    let mut worst: f64 = 0.0;
    for _ in 0..SMOOTHNESS_SAMPLES {
        let base: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(0.0..10.0)).collect();
        let radius = 10f64.powf(rng.gen_range(-3.0..1.0));
        let dir: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let other: Vec<f64> = base
            .iter()
            .zip(&dir)
            .map(|(b, d)| b + radius * d / norm)
            .collect();
        let at = solve_sqrt(&base, 1.0)?;
        let moved = solve_sqrt(&other, 1.0)?;
        let linear: f64 = other
            .iter()
            .zip(&base)
            .zip(&at.policy)
            .map(|((o, b), p)| (o - b) * p)
            .sum();
        let dist2: f64 = other.iter().zip(&base).map(|(o, b)| (o - b).powi(2)).sum();
        worst = worst.max((moved.value - at.value - linear).abs() / dist2);
    }
    Ok(SMOOTHNESS_SAFETY_FACTOR * worst)
}
