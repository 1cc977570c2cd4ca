use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use smoothcruiser::complexity::{bound_curve, curve_grid, lambda_sweep, log_grid, CURVE_POINTS};
use smoothcruiser::exact::DEFAULT_TOLERANCE;
use smoothcruiser::format::{fmt_float, fmt_magnitude};
use smoothcruiser::validation::run_consistency_on;
use smoothcruiser::{
    build_env, selftest, size_n_sim, solve_regularized, solve_unregularized, BoundInputs,
    DerivedConstants, EnvSpec, Error, Magnitude, OperatorKind, Planner, PlannerConfig,
    SmoothOperator, TabularOracle,
};

#[derive(Parser)]
#[command(
    name = "smoothcruiser",
    version,
    about = "Planning for entropy-regularized MDPs with a generative model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact value function by soft value iteration.
    Solve(SolveArgs),
    /// Run the planner once from a state.
    Plan(PlanArgs),
    /// Simulated call counts and bounds over an accuracy grid.
    Complexity(ComplexityArgs),
    /// Planner cost against sparse sampling as the temperature varies.
    LambdaSweep(SweepArgs),
    /// Bias of the low-variance estimator against the exact value.
    Consistency(ConsistencyArgs),
    /// Fast built-in checks.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Output {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    lambda: f64,
    /// Number of actions; defaults to the environment's.
    #[arg(short = 'K', long = "actions")]
    actions: Option<usize>,
    #[arg(long, default_value = "logsumexp_max")]
    operator: OperatorKind,
    /// Override for the operator's smoothness constant.
    #[arg(long)]
    smoothness: Option<f64>,
}

#[derive(Args)]
struct Seed {
    #[arg(long, env = "SMOOTHCRUISER_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    env: EnvSpec,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    /// Hard-max value iteration instead of the smooth operator.
    #[arg(long)]
    unregularized: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    env: EnvSpec,
    /// Start state; defaults to the environment's reference state.
    #[arg(long)]
    state: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    epsilon: f64,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.1)]
    delta_prime: f64,
    #[arg(long, default_value_t = 1.0)]
    n_scale: f64,
    #[arg(long)]
    parallel: bool,
    /// Accept configurations violating eta_2(delta') >= 0.
    #[arg(long)]
    allow_small_beta: bool,
    /// Refuse to run when more oracle calls are predicted.
    #[arg(long)]
    call_budget: Option<u64>,
    /// Add uniform reward noise of the default half-width.
    #[arg(long)]
    reward_noise: bool,
    #[command(flatten)]
    seed: Seed,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ComplexityArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.1)]
    delta_prime: f64,
    #[arg(long, default_value_t = CURVE_POINTS)]
    points: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 0.2)]
    gamma: f64,
    #[arg(short = 'K', long = "actions", default_value_t = 2)]
    actions: usize,
    #[arg(long, default_value_t = 0.1)]
    delta_prime: f64,
    /// Accuracy as a fraction of V_max.
    #[arg(long, default_value_t = 0.01)]
    rel_err: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_min: f64,
    #[arg(long, default_value_t = 100.0)]
    lambda_max: f64,
    #[arg(long, default_value_t = 20)]
    points: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ConsistencyArgs {
    #[arg(long)]
    env: EnvSpec,
    #[arg(long)]
    state: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    epsilon: f64,
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.1)]
    delta_prime: f64,
    /// Number of runs; sized by Hoeffding from --confidence and --slack when omitted.
    #[arg(long)]
    n_sim: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Half-width of the Hoeffding band; defaults to eps / 4.
    #[arg(long)]
    slack: Option<f64>,
    /// Per-run outputs as CSV `run_index,output`.
    #[arg(long)]
    runs_out: Option<PathBuf>,
    #[command(flatten)]
    seed: Seed,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SelftestArgs {
    /// Perturb one expected constant to exercise the failure path.
    #[arg(long, hide = true)]
    corrupt_constant: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: invalid-argument: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}: {}", e.code(), e.message());
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Solve(a) => solve(a),
        Command::Plan(a) => plan(a),
        Command::Complexity(a) => complexity(a),
        Command::LambdaSweep(a) => sweep(a),
        Command::Consistency(a) => consistency(a),
        Command::Selftest(a) => return Ok(run_selftest(a)),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl Common {
    fn operator(&self, env_actions: Option<usize>) -> Result<SmoothOperator, Error> {
        let k = match (self.actions, env_actions) {
            (Some(k), Some(e)) if k != e => {
                return Err(invalid(format!(
                    "--actions {k} does not match the environment's {e} actions"
                )))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => 2,
        };
        let op = SmoothOperator::new(self.operator, self.lambda, k)?;
        match self.smoothness {
            Some(l) => op.with_smoothness(l),
            None => Ok(op),
        }
    }
}

fn write_output(
    output: &Output,
    default: Format,
    json: &Value,
    csv: impl FnOnce() -> String,
) -> Result<(), Error> {
    let text = match output.format.unwrap_or(default) {
        Format::Json => serde_json::to_string_pretty(json).expect("serializable") + "\n",
        Format::Csv => csv(),
    };
    write_text(output.out.as_ref(), &text)
}

fn write_text(path: Option<&PathBuf>, text: &str) -> Result<(), Error> {
    let result = match path {
        Some(p) => fs::write(p, text),
        None => io::stdout().lock().write_all(text.as_bytes()),
    };
    result.map_err(|e| invalid(format!("cannot write output: {e}")))
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn solve(a: SolveArgs) -> Result<(), Error> {
    let model = build_env(a.env)?;
    let op = a.common.operator(Some(model.n_actions()))?;
    let table = if a.unregularized {
        solve_unregularized(&model, a.common.gamma, a.tol)?
    } else {
        solve_regularized(&model, &op, a.common.gamma, a.tol)?
    };
    let json = json!({
        "env": a.env.to_string(),
        "gamma": a.common.gamma,
        "lambda": if a.unregularized { Value::Null } else { json!(a.common.lambda) },
        "operator": if a.unregularized { "max".to_string() } else { op.kind().to_string() },
        "V": table.v,
        "Q": table.q,
        "residual": table.residual,
        "iterations": table.iterations,
    });
    let k = model.n_actions();
    write_output(&a.output, Format::Json, &json, || {
        let mut header = vec!["state".to_string(), "v".to_string()];
        header.extend((0..k).map(|i| format!("q_{i}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        csv_table(
            &header,
            table.v.iter().zip(&table.q).enumerate().map(|(s, (v, q))| {
                let mut row = vec![s.to_string(), fmt_float(*v)];
                row.extend(q.iter().map(|x| fmt_float(*x)));
                row
            }),
        )
    })
}

fn plan(a: PlanArgs) -> Result<(), Error> {
    let mut model = build_env(a.env)?;
    if a.reward_noise {
        model = model.with_default_noise()?;
    }
    let op = a.common.operator(Some(model.n_actions()))?;
    let state = a.state.unwrap_or(a.env.reference_state());
    if state >= model.n_states() {
        return Err(invalid(format!(
            "--state {state} out of range for {} states",
            model.n_states()
        )));
    }
    let mut cfg = PlannerConfig::new(a.common.gamma, a.delta_prime)
        .with_n_scale(a.n_scale)
        .with_parallel(a.parallel);
    cfg.allow_small_beta = a.allow_small_beta;
    cfg.call_budget = a.call_budget;
    let oracle = TabularOracle::new(&model, a.seed.seed);
    let planner = Planner::new(&cfg, &op, &oracle, a.seed.seed)?;
    let c = planner.constants().clone();
    let r = planner.plan(state, a.epsilon)?;
    let json = json!({
        "env": a.env.to_string(),
        "state": state,
        "epsilon": a.epsilon,
        "gamma": cfg.gamma,
        "lambda": op.lambda(),
        "operator": op.kind().to_string(),
        "delta_prime": cfg.delta_prime,
        "n_scale": cfg.n_scale,
        "seed": a.seed.seed,
        "kappa": c.kappa,
        "v_max": c.v_max,
        "estimate": r.estimate,
        "oracle_calls": r.oracle_calls,
        "predicted_calls": r.predicted_calls,
        "max_recursion_depth_seen": r.max_recursion_depth_seen,
    });
    write_output(&a.output, Format::Json, &json, || {
        csv_table(
            &[
                "estimate",
                "oracle_calls",
                "predicted_calls",
                "max_recursion_depth_seen",
            ],
            [vec![
                fmt_float(r.estimate),
                r.oracle_calls.to_string(),
                r.predicted_calls.to_string(),
                r.max_recursion_depth_seen.to_string(),
            ]],
        )
    })
}

fn log10_cell(m: Option<Magnitude>) -> String {
    m.map(|m| fmt_float(m.log10())).unwrap_or_default()
}

fn complexity(a: ComplexityArgs) -> Result<(), Error> {
    let op = a.common.operator(None)?;
    let inputs = BoundInputs::from_config(&PlannerConfig::new(a.common.gamma, a.delta_prime), &op)?;
    if a.points == 0 {
        return Err(invalid("--points must be >= 1"));
    }
    let rows = bound_curve(&inputs, &curve_grid(inputs.constants.kappa, a.points))?;
    let c = &inputs.constants;
    let json = json!({
        "gamma": c.gamma,
        "lambda": op.lambda(),
        "actions": c.n_actions,
        "delta_prime": c.delta_prime,
        "kappa": c.kappa,
        "v_max": c.v_max,
        "alpha": inputs.alpha,
        "beta": inputs.beta,
        "eta1_log10": inputs.eta1.log10(),
        "eta2": inputs.eta2,
        "rows": rows.iter().map(|r| json!({
            "epsilon": r.epsilon,
            "simulated_log10": r.simulated.log10(),
            "bound_lemma_log10": r.bound_small_eps.map(Magnitude::log10),
            "bound_sparse_log10": r.bound_sparse.log10(),
            "predicted_calls": r.predicted_calls.to_string(),
        })).collect::<Vec<_>>(),
    });
    write_output(&a.output, Format::Csv, &json, || {
        csv_table(
            &[
                "epsilon",
                "simulated",
                "bound_lemma",
                "bound_sparse",
                "predicted_calls",
                "simulated_log10",
                "bound_lemma_log10",
                "bound_sparse_log10",
                "predicted_calls_log10",
            ],
            rows.iter().map(|r| {
                let calls = Magnitude::from(&r.predicted_calls);
                vec![
                    fmt_float(r.epsilon),
                    fmt_magnitude(r.simulated),
                    r.bound_small_eps.map(fmt_magnitude).unwrap_or_default(),
                    fmt_magnitude(r.bound_sparse),
                    r.predicted_calls.to_string(),
                    log10_cell(Some(r.simulated)),
                    log10_cell(r.bound_small_eps),
                    log10_cell(Some(r.bound_sparse)),
                    log10_cell(Some(calls)),
                ]
            }),
        )
    })
}

fn sweep(a: SweepArgs) -> Result<(), Error> {
    if !(a.lambda_min > 0.0 && a.lambda_max >= a.lambda_min) || a.points == 0 {
        return Err(invalid(
            "need 0 < --lambda-min <= --lambda-max and --points >= 1",
        ));
    }
    let rows = lambda_sweep(
        a.gamma,
        a.actions,
        a.delta_prime,
        a.rel_err,
        &log_grid(a.lambda_min, a.lambda_max, a.points),
    )?;
    let json = json!({
        "gamma": a.gamma,
        "actions": a.actions,
        "delta_prime": a.delta_prime,
        "rel_err": a.rel_err,
        "rows": rows.iter().map(|r| json!({
            "lambda": r.lambda,
            "epsilon": r.epsilon,
            "calls_log10": r.calls.log10(),
            "sparse_calls_log10": r.sparse_calls.log10(),
            "ratio": r.ratio,
            "condition_holds": r.condition_holds,
        })).collect::<Vec<_>>(),
    });
    write_output(&a.output, Format::Csv, &json, || {
        csv_table(
            &["lambda", "epsilon", "calls", "sparse_calls", "ratio"],
            rows.iter().map(|r| {
                vec![
                    fmt_float(r.lambda),
                    fmt_float(r.epsilon),
                    fmt_magnitude(r.calls),
                    fmt_magnitude(r.sparse_calls),
                    fmt_float(r.ratio),
                ]
            }),
        )
    })
}

fn consistency(a: ConsistencyArgs) -> Result<(), Error> {
    let model = build_env(a.env)?;
    let op = a.common.operator(Some(model.n_actions()))?;
    let cfg = PlannerConfig::new(a.common.gamma, a.delta_prime);
    let n_sim = match a.n_sim {
        Some(n) => n,
        None => {
            let c = DerivedConstants::new(&cfg, &op)?;
            let n = size_n_sim(c.c_gamma, a.confidence, a.slack.unwrap_or(a.epsilon / 4.0))?;
            usize::try_from(n).map_err(|_| invalid(format!("sized N_sim = {n} is too large")))?
        }
    };
    let state = a.state.unwrap_or(a.env.reference_state());
    let keep = a.runs_out.is_some();
    let mut report = run_consistency_on(
        &cfg,
        &op,
        &model,
        &a.env.to_string(),
        state,
        a.epsilon,
        n_sim,
        a.seed.seed,
        keep,
    )?;
    if let Some(warning) = &report.warning {
        eprintln!("warning: {warning}");
    }
    if let Some(path) = &a.runs_out {
        let runs = report.runs.take().unwrap_or_default();
        let text = csv_table(
            &["run_index", "output"],
            runs.iter()
                .enumerate()
                .map(|(i, v)| vec![i.to_string(), fmt_float(*v)]),
        );
        write_text(Some(path), &text)?;
    }
    let json = serde_json::to_value(&report).expect("serializable");
    write_output(&a.output, Format::Json, &json, || {
        csv_table(
            &[
                "env",
                "state",
                "epsilon",
                "n_sim",
                "delta_hat",
                "std",
                "std_error",
                "bound_violations",
            ],
            [vec![
                report.env.clone(),
                report.state.to_string(),
                fmt_float(report.epsilon),
                report.n_sim.to_string(),
                fmt_float(report.delta_hat),
                fmt_float(report.std),
                fmt_float(report.std_error),
                report.bound_violations.to_string(),
            ]],
        )
    })
}

fn run_selftest(a: SelftestArgs) -> ExitCode {
    let checks = selftest::run(a.corrupt_constant);
    let mut failed = 0;
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        failed += usize::from(!c.passed);
    }
    println!("{} checks, {} failed", checks.len(), failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
