//! Ground-truth value functions by fixed-point iteration of `V(s) = F_s(Q_s)`.

use serde::{Deserialize, Serialize};

use crate::environments::TabularMdp;
use crate::error::{invalid, Result};
use crate::operators::{QVector, SmoothOperator};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Hard cap on sweeps; at `gamma = 0.999` and `tol = 1e-12` convergence takes
/// roughly 4e4 sweeps.
const MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    /// Sup-norm Bellman residual of the returned `v`.
    pub residual: f64,
    pub iterations: usize,
    /// Sup-norm change between successive iterates, one entry per sweep.
    #[serde(skip)]
    pub deltas: Vec<f64>,
}

impl ValueTable {
    pub fn q_vector(&self, state: usize) -> QVector {
        QVector::new(self.q[state].clone()).expect("solver Q values are finite")
    }
}

/// Soft value iteration with the smooth operator `op` at every state.
pub fn solve_regularized(
    model: &TabularMdp,
    op: &SmoothOperator,
    gamma: f64,
    tol: f64,
) -> Result<ValueTable> {
    if op.n_actions() != model.n_actions() {
        return Err(invalid(format!(
            "operator has K = {}, model has K = {}",
            op.n_actions(),
            model.n_actions()
        )));
    }
    iterate(model, gamma, tol, |q| op.value(&QVector::new(q.to_vec())?))
}

/// Hard-max value iteration (no regularization).
pub fn solve_unregularized(model: &TabularMdp, gamma: f64, tol: f64) -> Result<ValueTable> {
    iterate(model, gamma, tol, |q| {
        Ok(q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    })
}

fn backup(model: &TabularMdp, gamma: f64, v: &[f64], q: &mut [Vec<f64>]) {
    for (s, row) in q.iter_mut().enumerate() {
        for (a, entry) in row.iter_mut().enumerate() {
            *entry = model.reward(s, a) + gamma * model.expected_next(s, a, v);
        }
    }
}

fn iterate(
    model: &TabularMdp,
    gamma: f64,
    tol: f64,
    aggregate: impl Fn(&[f64]) -> Result<f64>,
) -> Result<ValueTable> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid(format!(
            "discount gamma must lie in [0, 1), got {gamma}"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(invalid(format!("tolerance must be > 0, got {tol}")));
    }
    let n = model.n_states();
    // |V_{k+1} - V*| <= gamma / (1 - gamma) |V_{k+1} - V_k|
    let threshold = if gamma > 0.0 {
        tol * (1.0 - gamma) / gamma
    } else {
        f64::INFINITY
    };
    let mut v = vec![0.0; n];
    let mut q = vec![vec![0.0; model.n_actions()]; n];
    let mut deltas = Vec::new();
    loop {
        backup(model, gamma, &v, &mut q);
        let next: Vec<f64> = q.iter().map(|row| aggregate(row)).collect::<Result<_>>()?;
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        deltas.push(delta);
        if delta <= threshold || deltas.len() >= MAX_SWEEPS {
            break;
        }
    }
    // v = F(q) holds exactly for the returned pair; the residual is measured
    // with one more backup.
    let mut probe = q.clone();
    backup(model, gamma, &v, &mut probe);
    let residual = probe
        .iter()
        .zip(&v)
        .map(|(row, vs)| aggregate(row).map(|x| (x - vs).abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let iterations = deltas.len();
    Ok(ValueTable {
        v,
        q,
        residual,
        iterations,
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{build_env, EnvSpec};

    #[test]
    fn single_state_closed_forms() {
        let m = TabularMdp::single_state(1.0, 2).unwrap();
        let op = SmoothOperator::log_sum_exp_max(1.0, 2).unwrap();
        let reg = solve_regularized(&m, &op, 0.5, 1e-12).unwrap();
        let expected = (1.0 + 2f64.ln()) / 0.5;
        assert!((reg.v[0] - expected).abs() < 1e-10);
        assert!((reg.v[0] - 3.386294).abs() < 1e-6);
        let hard = solve_unregularized(&m, 0.5, 1e-12).unwrap();
        assert!((hard.v[0] - 2.0).abs() < 1e-10);
        assert!((reg.v[0] - hard.v[0] - 2f64.ln() / 0.5).abs() < 1e-10);
    }

    #[test]
    fn zero_rewards() {
        let m = TabularMdp::new(
            vec![vec![vec![0.0, 1.0]; 3], vec![vec![1.0, 0.0]; 3]],
            vec![vec![0.0; 3]; 2],
        )
        .unwrap();
        let op = SmoothOperator::log_sum_exp_max(0.3, 3).unwrap();
        let reg = solve_regularized(&m, &op, 0.7, 1e-11).unwrap();
        for v in &reg.v {
            assert!((v - 0.3 * 3f64.ln() / 0.3).abs() < 1e-10);
        }
        let hard = solve_unregularized(&m, 0.7, 1e-11).unwrap();
        assert!(hard.v.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn chain_self_consistency() {
        let m = build_env(EnvSpec::chain(5)).unwrap();
        let op = SmoothOperator::log_sum_exp_max(10.0, 2).unwrap();
        let t = solve_regularized(&m, &op, 0.2, DEFAULT_TOLERANCE).unwrap();
        assert!(t.residual <= DEFAULT_TOLERANCE);
        for s in 0..5 {
            assert_eq!(t.v[s], op.value(&t.q_vector(s)).unwrap());
        }
    }

    #[test]
    fn iterates_contract() {
        let m = build_env(EnvSpec::gridworld(4)).unwrap();
        let op = SmoothOperator::log_sum_exp_max(0.5, 4).unwrap();
        let gamma = 0.9;
        let t = solve_regularized(&m, &op, gamma, 1e-10).unwrap();
        for w in t.deltas.windows(2) {
            assert!(w[1] <= gamma * w[0] + 1e-12, "{} > gamma * {}", w[1], w[0]);
        }
    }

    #[test]
    fn gamma_zero_is_one_step() {
        let m = build_env(EnvSpec::chain(3)).unwrap();
        let t = solve_unregularized(&m, 0.0, 1e-10).unwrap();
        assert_eq!(t.iterations, 1);
        assert_eq!(t.v, vec![0.1, 0.1, 1.0]);
        assert_eq!(t.residual, 0.0);
    }

    #[test]
    fn rejects_bad_discount() {
        let m = TabularMdp::single_state(1.0, 2).unwrap();
        assert!(solve_unregularized(&m, 1.0, 1e-10).is_err());
        assert!(solve_unregularized(&m, -0.1, 1e-10).is_err());
        assert!(solve_unregularized(&m, 0.5, 0.0).is_err());
    }
}
