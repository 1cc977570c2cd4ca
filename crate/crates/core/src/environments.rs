//! Tabular MDPs and generative oracles over them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{CountingStream, Purpose};

/// Reward-noise half-width enabled by [`TabularMdp::with_default_noise`].
pub const DEFAULT_REWARD_NOISE: f64 = 0.05;

const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Explicit finite MDP with rewards in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `P(z | s, a)` at `(s * n_actions + a) * n_states + z`.
    transition: Vec<f64>,
    /// `R(s, a)` at `s * n_actions + a`.
    reward_mean: Vec<f64>,
    /// Half-width of the uniform reward noise, per `(s, a)`.
    reward_noise: Vec<f64>,
}

impl TabularMdp {
    /// `transition[s][a][z]` and `reward[s][a]`; noise is off.
    pub fn new(transition: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(invalid("MDP needs at least one state"));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(invalid("MDP needs at least one action"));
        }
        if reward.len() != n_states {
            return Err(invalid("reward table must have one row per state"));
        }
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        let mut reward_mean = Vec::with_capacity(n_states * n_actions);
        for (s, (rows, rewards)) in transition.iter().zip(&reward).enumerate() {
            if rows.len() != n_actions || rewards.len() != n_actions {
                return Err(invalid(format!(
                    "state {s} does not have {n_actions} actions"
                )));
            }
            for (a, (row, &r)) in rows.iter().zip(rewards).enumerate() {
                if row.len() != n_states {
                    return Err(invalid(format!(
                        "transition row ({s}, {a}) has wrong length"
                    )));
                }
                if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(invalid(format!(
                        "transition row ({s}, {a}) has a negative or non-finite entry"
                    )));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(invalid(format!(
                        "transition row ({s}, {a}) sums to {total}"
                    )));
                }
                if !(0.0..=1.0).contains(&r) {
                    return Err(invalid(format!("reward ({s}, {a}) = {r} outside [0, 1]")));
                }
                flat.extend_from_slice(row);
                reward_mean.push(r);
            }
        }
        let reward_noise = vec![0.0; reward_mean.len()];
        Ok(Self {
            n_states,
            n_actions,
            transition: flat,
            reward_mean,
            reward_noise,
        })
    }

    /// One absorbing state where every action pays `reward`.
    pub fn single_state(reward: f64, n_actions: usize) -> Result<Self> {
        Self::new(
            vec![vec![vec![1.0]; n_actions]],
            vec![vec![reward; n_actions]],
        )
    }

    /// Uniform reward noise of half-width `half_width`, shrunk per `(s, a)` to
    /// `min(R, 1 - R)` so noisy rewards stay in `[0, 1]` without clamping bias.
    pub fn with_reward_noise(mut self, half_width: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width >= 0.0) {
            return Err(invalid(format!(
                "reward noise must be >= 0, got {half_width}"
            )));
        }
        self.reward_noise = self
            .reward_mean
            .iter()
            .map(|&r| half_width.min(r).min(1.0 - r))
            .collect();
        Ok(self)
    }

    pub fn with_default_noise(self) -> Result<Self> {
        self.with_reward_noise(DEFAULT_REWARD_NOISE)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.n_actions + action) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.reward_mean[state * self.n_actions + action]
    }

    pub fn reward_noise(&self, state: usize, action: usize) -> f64 {
        self.reward_noise[state * self.n_actions + action]
    }

    /// `sum_z P(z | s, a) v(z)`.
    pub fn expected_next(&self, state: usize, action: usize, values: &[f64]) -> f64 {
        self.transition_row(state, action)
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum()
    }

    fn check_indices(&self, state: usize, action: usize) -> Result<()> {
        if state >= self.n_states {
            return Err(invalid(format!(
                "state {state} out of range (n_states = {})",
                self.n_states
            )));
        }
        if action >= self.n_actions {
            return Err(invalid(format!(
                "action {action} out of range (K = {})",
                self.n_actions
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvFamily {
    Chain,
    Gridworld,
}

/// Environment name of the form `chain:<n>` or `gridworld:<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub family: EnvFamily,
    pub size: usize,
}

impl EnvSpec {
    pub fn chain(size: usize) -> Self {
        Self {
            family: EnvFamily::Chain,
            size,
        }
    }

    pub fn gridworld(size: usize) -> Self {
        Self {
            family: EnvFamily::Gridworld,
            size,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self.family {
            EnvFamily::Chain => 2,
            EnvFamily::Gridworld => 4,
        }
    }

    /// State used for reporting: the chain's first state, the grid's top-left cell.
    pub fn reference_state(&self) -> usize {
        0
    }
}

impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            EnvFamily::Chain => write!(f, "chain:{}", self.size),
            EnvFamily::Gridworld => write!(f, "gridworld:{}", self.size),
        }
    }
}

impl FromStr for EnvSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, size) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("environment '{s}' is not of the form family:n")))?;
        let size: usize = size.trim().parse().map_err(|_| {
            invalid(format!(
                "environment size '{size}' is not a positive integer"
            ))
        })?;
        let family = match family.trim() {
            "chain" => EnvFamily::Chain,
            "gridworld" | "grid" => EnvFamily::Gridworld,
            other => return Err(invalid(format!("unknown environment family '{other}'"))),
        };
        Ok(Self { family, size })
    }
}

/// Builds the tabular model for `spec`.
///
/// Chain: action 0 moves `s -> s + 1` with reward 0, except the last state,
/// which loops onto itself with reward 1; action 1 returns to state 0 with
/// reward 0.1.
///
/// Gridworld: `n x n` cells indexed `row * n + col`, actions N/S/E/W move one
/// cell and are clamped at walls. The goal cell `(n-1, n-1)` is absorbing and
/// pays 1 for every action; all other rewards are 0.
pub fn build_env(spec: EnvSpec) -> Result<TabularMdp> {
    if spec.size < 2 {
        return Err(invalid(format!("{spec}: size must be >= 2")));
    }
    match spec.family {
        EnvFamily::Chain => Ok(chain(spec.size)),
        EnvFamily::Gridworld => Ok(gridworld(spec.size)),
    }
}

fn point_mass(n: usize, at: usize) -> Vec<f64> {
    let mut row = vec![0.0; n];
    row[at] = 1.0;
    row
}

fn chain(n: usize) -> TabularMdp {
    let mut transition = Vec::with_capacity(n);
    let mut reward = Vec::with_capacity(n);
    for s in 0..n {
        let last = s + 1 == n;
        let forward = if last { s } else { s + 1 };
        transition.push(vec![point_mass(n, forward), point_mass(n, 0)]);
        reward.push(vec![if last { 1.0 } else { 0.0 }, 0.1]);
    }
    TabularMdp::new(transition, reward).expect("chain tables are valid")
}

fn gridworld(n: usize) -> TabularMdp {
    let cells = n * n;
    let goal = cells - 1;
    let mut transition = Vec::with_capacity(cells);
    let mut reward = Vec::with_capacity(cells);
    for cell in 0..cells {
        let (row, col) = (cell / n, cell % n);
        if cell == goal {
            transition.push(vec![point_mass(cells, goal); 4]);
            reward.push(vec![1.0; 4]);
            continue;
        }
        let moves = [
            (row.saturating_sub(1), col),
            ((row + 1).min(n - 1), col),
            (row, (col + 1).min(n - 1)),
            (row, col.saturating_sub(1)),
        ];
        transition.push(
            moves
                .iter()
                .map(|&(r, c)| point_mass(cells, r * n + c))
                .collect(),
        );
        reward.push(vec![0.0; 4]);
    }
    TabularMdp::new(transition, reward).expect("gridworld tables are valid")
}

/// Sampling interface consumed by the planner: one call returns one reward and
/// one next state, and is counted.
pub trait GenerativeModel: Sync {
    fn n_actions(&self) -> usize;

    fn sample(&self, state: usize, action: usize) -> Result<(f64, usize)>;

    /// Number of `sample` invocations so far.
    fn call_count(&self) -> u64;
}

/// Generative oracle over a [`TabularMdp`].
///
/// Call `i` uses draw `i` of a counter-based stream, so the counter never loses
/// increments under concurrent use and same-seed oracles replay identically.
#[derive(Debug)]
pub struct TabularOracle<'a> {
    model: &'a TabularMdp,
    draws: CountingStream,
}

impl<'a> TabularOracle<'a> {
    pub fn new(model: &'a TabularMdp, seed: u64) -> Self {
        Self::with_stream(model, seed, 0)
    }

    /// Oracle on sub-stream `sub`, for independent repetitions under one seed.
    pub fn with_stream(model: &'a TabularMdp, seed: u64, sub: u64) -> Self {
        Self {
            model,
            draws: CountingStream::new(seed, Purpose::Oracle.stream(sub)),
        }
    }

    pub fn model(&self) -> &TabularMdp {
        self.model
    }
}

impl GenerativeModel for TabularOracle<'_> {
    fn n_actions(&self) -> usize {
        self.model.n_actions
    }

    fn sample(&self, state: usize, action: usize) -> Result<(f64, usize)> {
        self.model.check_indices(state, action)?;
        let mut draw = self.draws.next_draw();
        let row = self.model.transition_row(state, action);
        let u = draw.uniform();
        let mut cumulative = 0.0;
        let mut next = None;
        for (z, &p) in row.iter().enumerate() {
            cumulative += p;
            if p > 0.0 && u < cumulative {
                next = Some(z);
                break;
            }
        }
        // Rounding can leave u just above the final cumulative sum.
        let next =
            next.unwrap_or_else(|| row.iter().rposition(|&p| p > 0.0).expect("rows sum to 1"));
        let half_width = self.model.reward_noise(state, action);
        let mut reward = self.model.reward(state, action);
        if half_width > 0.0 {
            reward = (reward + half_width * (2.0 * draw.uniform() - 1.0)).clamp(0.0, 1.0);
        }
        Ok((reward, next))
    }

    fn call_count(&self) -> u64 {
        self.draws.draws_taken()
    }
}
