//! Monte-Carlo planning for entropy-regularized Markov decision processes.
//!
//! The crate provides smooth Bellman operators, tabular environments with a
//! counted generative oracle, an exact soft value-iteration solver, the
//! SmoothCruiser planner, sample-complexity predictions and bounds, and a
//! consistency harness that measures the planner's estimator bias.
//!
//! ```
//! use smoothcruiser::{build_env, EnvSpec, PlannerConfig, Planner, SmoothOperator, TabularOracle};
//!
//! let model = build_env(EnvSpec::chain(5)).unwrap();
//! let op = SmoothOperator::log_sum_exp_max(10.0, 2).unwrap();
//! let oracle = TabularOracle::new(&model, 42);
//! let cfg = PlannerConfig::new(0.2, 0.1).with_n_scale(1e-3);
//! let result = Planner::new(&cfg, &op, &oracle, 42).unwrap().plan(0, 1.0).unwrap();
//! assert_eq!(result.oracle_calls, result.predicted_calls);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod complexity;
pub mod environments;
pub mod error;
pub mod exact;
pub mod format;
pub mod magnitude;
pub mod operators;
pub mod planner;
pub mod rng;
pub mod selftest;
pub mod validation;

pub use complexity::{
    bound_curve, choose_delta_prime, lambda_sweep, predict_calls, BoundCurveRow, BoundInputs,
    DeltaChoice, LambdaRow, RateConstants,
};
pub use environments::{build_env, EnvFamily, EnvSpec, GenerativeModel, TabularMdp, TabularOracle};
pub use error::{Error, Result};
pub use exact::{solve_regularized, solve_unregularized, ValueTable};
pub use magnitude::Magnitude;
pub use operators::{GradientVector, OperatorKind, QVector, SmoothOperator};
pub use planner::{smooth_cruiser, Branch, DerivedConstants, PlanResult, Planner, PlannerConfig};
pub use validation::{
    run_consistency, size_n_sim, ConsistencyChecker, ConsistencyReport, NoisyQOracle,
};
