//! Config parsing and subcommand dispatch for the `ruin-lab` binary.
//!
//! One JSON file describes a run: the process kind, the step laws (or, for
//! the limit process, explicit diffusion parameters), the initial capital,
//! the grid, the horizon, and the Monte Carlo budget. Subcommands decide
//! what to compute from it. stdout carries a single machine-readable JSON
//! object embedding `{config_hash, seed, version}`; human-oriented tables go
//! to stderr; file artifacts go under `--out`. The same argv, config, and
//! seed produce byte-identical stdout and artifacts, independent of the
//! worker count.
//!
//! Exit codes: 0 on success, 1 on validation problems (schema, domains,
//! missing fields), 2 on numerical failures (quadrature/ODE gates, refused
//! experiments).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::discrete::{self, EstimateConfig, EstimatorResult, Functional};
use crate::distributions::{Family, StepLaw};
use crate::gou::{self, GouEstimateConfig, GouParams};
use crate::harness::{
    self, config_hash, limit_params, limit_scheme, ConvergenceReport, MarginalConfig,
    MomentConfig, PenaltyConfig, RuinConfig, RuinMode,
};
use crate::limits;
use crate::rescale::{check_condition_15, check_condition_9, RescaledScheme};
use crate::rng::StreamKey;
use crate::{Error, Result};

// ======================================================================
// Run configuration
// ======================================================================

/// Which process a run simulates or evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Process {
    /// The discrete surplus recursion at grid fineness `n`.
    Discrete,
    /// The limit process on a time grid of step `h`.
    Gou,
}

fn default_t() -> f64 {
    1.0
}

fn default_n_paths() -> u64 {
    10_000
}

fn default_seed() -> u64 {
    42
}

fn default_n_grid() -> Vec<u64> {
    vec![8, 32, 128, 512]
}

/// One validated run description.
///
/// `loss` / `log_return` are the base step laws. For `process = "gou"` the
/// diffusion parameters may instead be given directly as `mu_xi`,
/// `sigma_xi`, `mu_rho`, `sigma_rho` (all four together); with laws, the
/// limit parameters are derived from their means and variances or tail
/// constants. `n` is the discrete grid fineness (steps per unit time) and
/// `h` the limit-process time step.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub process: Process,
    #[serde(default)]
    pub loss: Option<Family>,
    #[serde(default)]
    pub log_return: Option<Family>,
    pub y0: f64,
    #[serde(default)]
    pub n: Option<u64>,
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default = "default_t")]
    pub t: f64,
    /// Discount rate of the penalty functional.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Moment order.
    #[serde(default)]
    pub p: Option<u32>,
    #[serde(default = "default_n_paths")]
    pub n_paths: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Grid finenesses visited by `converge`.
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<u64>,
    /// Ultimate-ruin mode for `converge --experiment ruin`; the finite
    /// horizon `t` then acts as the long-horizon proxy.
    #[serde(default)]
    pub ultimate: bool,
    /// Default artifact directory; the `--out` flag overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub mu_xi: Option<f64>,
    #[serde(default)]
    pub sigma_xi: Option<f64>,
    #[serde(default)]
    pub mu_rho: Option<f64>,
    #[serde(default)]
    pub sigma_rho: Option<f64>,
}

const TOP_KEYS: &[&str] = &[
    "process",
    "loss",
    "log_return",
    "y0",
    "n",
    "h",
    "t",
    "alpha",
    "p",
    "n_paths",
    "seed",
    "n_grid",
    "ultimate",
    "out_dir",
    "mu_xi",
    "sigma_xi",
    "mu_rho",
    "sigma_rho",
];

const FAMILY_KEYS: &[(&str, &[&str])] = &[
    ("neg-pareto", &["alpha"]),
    ("normal", &["mu", "sigma2"]),
    ("nig", &["alpha", "beta", "delta", "mu"]),
    ("stable", &["alpha", "beta"]),
    ("degenerate", &["c"]),
];

fn unknown_key(key: &str, place: &str, allowed: &[&str]) -> Error {
    let mut msg = format!(
        "unknown key {key:?} in {place}; allowed keys: {}",
        allowed.join(", ")
    );
    if key.starts_with("sigma") {
        msg.push_str(
            "; sigma is spelled sigma_xi / sigma_rho (limit parameters) or sigma2 (normal law variance)",
        );
    }
    Error::Invalid(msg)
}

/// Reject unknown keys, with a field path, before the typed parse. Serde's
/// internally tagged law enum cannot do this itself.
fn check_keys(value: &Value) -> Result<()> {
    let Some(map) = value.as_object() else {
        return Err(Error::Invalid("config must be a JSON object".into()));
    };
    for key in map.keys() {
        if !TOP_KEYS.contains(&key.as_str()) {
            return Err(unknown_key(key, "the config", TOP_KEYS));
        }
    }
    for law_key in ["loss", "log_return"] {
        if let Some(law) = map.get(law_key) {
            check_law_keys(law, law_key)?;
        }
    }
    Ok(())
}

fn check_law_keys(value: &Value, place: &str) -> Result<()> {
    let Some(map) = value.as_object() else {
        return Err(Error::Invalid(format!(
            "{place} must be a JSON object with a \"family\" tag"
        )));
    };
    let Some(family) = map.get("family").and_then(Value::as_str) else {
        return Err(Error::Invalid(format!(
            "{place} needs a \"family\" string tag"
        )));
    };
    let Some((_, allowed)) = FAMILY_KEYS.iter().find(|(name, _)| *name == family) else {
        let names: Vec<&str> = FAMILY_KEYS.iter().map(|(name, _)| *name).collect();
        return Err(Error::Invalid(format!(
            "{place}: unknown family {family:?}, expected one of {}",
            names.join(", ")
        )));
    };
    for key in map.keys() {
        if key != "family" && !allowed.contains(&key.as_str()) {
            return Err(unknown_key(key, place, allowed));
        }
    }
    Ok(())
}

/// Parse and validate a JSON run configuration, filling documented defaults
/// (`n_paths` 10^4, `seed` 42, `t` 1).
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::Invalid(format!("config is not valid JSON: {e}")))?;
    check_keys(&value)?;
    let config: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::Invalid(format!("config: {e}")))?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if !self.y0.is_finite() || !(self.y0 >= 0.0) {
            return Err(Error::Invalid(format!(
                "y0 must be finite and >= 0, got {}",
                self.y0
            )));
        }
        if !self.t.is_finite() || !(self.t > 0.0) {
            return Err(Error::Invalid(format!(
                "t must be finite and > 0, got {}",
                self.t
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::Invalid("n_paths must be >= 1".into()));
        }
        if let Some(n) = self.n {
            if n == 0 {
                return Err(Error::Invalid("n must be >= 1".into()));
            }
        }
        if let Some(h) = self.h {
            if !h.is_finite() || !(h > 0.0) {
                return Err(Error::Invalid(format!("h must be finite and > 0, got {h}")));
            }
        }
        if let Some(alpha) = self.alpha {
            if !alpha.is_finite() || !(alpha > 0.0) {
                return Err(Error::Invalid(format!(
                    "alpha must be finite and > 0, got {alpha}"
                )));
            }
        }
        let given: Vec<&str> = [
            ("mu_xi", self.mu_xi),
            ("sigma_xi", self.sigma_xi),
            ("mu_rho", self.mu_rho),
            ("sigma_rho", self.sigma_rho),
        ]
        .iter()
        .filter_map(|&(name, v)| v.map(|_| name))
        .collect();
        match self.process {
            Process::Discrete => {
                if !given.is_empty() {
                    return Err(Error::Invalid(format!(
                        "limit parameters ({}) apply only to process \"gou\"",
                        given.join(", ")
                    )));
                }
                if self.loss.is_none() || self.log_return.is_none() {
                    return Err(Error::Invalid(
                        "process \"discrete\" needs both the loss and log_return laws".into(),
                    ));
                }
                self.step_laws()?;
            }
            Process::Gou => {
                if self.n.is_some() {
                    return Err(Error::Invalid(
                        "process \"gou\" takes the time step h; the grid fineness n belongs to process \"discrete\"".into(),
                    ));
                }
                let has_laws = self.loss.is_some() || self.log_return.is_some();
                if has_laws && !given.is_empty() {
                    return Err(Error::Invalid(
                        "give either step laws or explicit limit parameters, not both".into(),
                    ));
                }
                if has_laws {
                    if self.loss.is_none() || self.log_return.is_none() {
                        return Err(Error::Invalid(
                            "process \"gou\" with laws needs both loss and log_return".into(),
                        ));
                    }
                } else if given.len() != 4 {
                    let missing: Vec<&str> = ["mu_xi", "sigma_xi", "mu_rho", "sigma_rho"]
                        .iter()
                        .filter(|name| !given.contains(name))
                        .copied()
                        .collect();
                    return Err(Error::Invalid(format!(
                        "explicit limit parameters need all of mu_xi, sigma_xi, mu_rho, sigma_rho; missing {}",
                        missing.join(", ")
                    )));
                }
                self.gou_params()?;
            }
        }
        Ok(())
    }

    /// The validated step-law pair; errors name the process requirement.
    pub fn step_laws(&self) -> Result<(StepLaw, StepLaw)> {
        let (Some(loss), Some(ret)) = (self.loss, self.log_return) else {
            return Err(Error::Invalid(
                "this run needs the loss and log_return step laws".into(),
            ));
        };
        Ok((StepLaw::loss(loss)?, StepLaw::log_return(ret)?))
    }

    /// Limit-process parameters, either explicit or derived from the laws.
    pub fn gou_params(&self) -> Result<GouParams> {
        if let (Some(mu_xi), Some(sigma_xi), Some(mu_rho), Some(sigma_rho)) =
            (self.mu_xi, self.sigma_xi, self.mu_rho, self.sigma_rho)
        {
            return GouParams::diffusion(mu_xi, sigma_xi, mu_rho, sigma_rho);
        }
        let (loss, ret) = self.step_laws()?;
        limit_params(&loss, &ret)
    }

    fn require_n(&self) -> Result<u64> {
        self.n.ok_or_else(|| {
            Error::Invalid("this run needs the grid fineness n (steps per unit time)".into())
        })
    }

    fn require_h(&self) -> Result<f64> {
        self.h
            .ok_or_else(|| Error::Invalid("this run needs the limit-process time step h".into()))
    }

    fn require_alpha(&self) -> Result<f64> {
        self.alpha
            .ok_or_else(|| Error::Invalid("the penalty functional needs the discount rate alpha".into()))
    }

    fn require_p(&self) -> Result<u32> {
        self.p
            .ok_or_else(|| Error::Invalid("the moment functional needs the order p".into()))
    }
}

// ======================================================================
// Argument surface
// ======================================================================

/// Surplus-process laboratory: discrete-time simulation and limit-process
/// approximations for ruin, penalty, and moment functionals.
#[derive(Debug, Parser)]
#[command(name = "ruin-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one surplus path and dump it as CSV (columns k, t, value).
    Simulate(CommonArgs),
    /// Estimate the ruin probability by the horizon t.
    Ruin {
        #[command(flatten)]
        args: CommonArgs,
        /// Evaluate the closed-form ultimate ruin probability of the limit
        /// process instead of a Monte Carlo estimate (gou only).
        #[arg(long)]
        limit: bool,
    },
    /// Estimate or evaluate the discounted penalty at ruin.
    Penalty(CommonArgs),
    /// Exact discrete moments at t = 1, or limit moments m_p(t).
    Moments(CommonArgs),
    /// Run a convergence experiment and emit report.{csv,json,svg}.
    Converge {
        #[command(flatten)]
        args: CommonArgs,
        /// Which convergence experiment to run.
        #[arg(long, value_enum)]
        experiment: Experiment,
    },
    /// Tabulate the exponential-moment conditions of the log-return law:
    /// the decay of a_n gating ultimate ruin and the boundedness of b_n
    /// gating moment convergence.
    CheckConditions {
        #[command(flatten)]
        args: CommonArgs,
        /// Moment order q in the b_n boundedness check.
        #[arg(long, default_value_t = 2)]
        q: u32,
        /// Largest grid fineness tested.
        #[arg(long, default_value_t = 512)]
        n_max: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Marginal,
    Ruin,
    Penalty,
    Moments,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for file artifacts (created if missing); overrides the
    /// config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker-thread count; estimates do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

// ======================================================================
// Dispatch
// ======================================================================

/// Parse argv, dispatch, and map errors to the exit-code contract:
/// 0 success, 1 validation error, 2 numerical failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Invalid(_) => 1,
                Error::Numerical(_) => 2,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => execute(&args, "simulate", simulate),
        Command::Ruin { args, limit } => execute(&args, "ruin", |config| ruin(config, limit)),
        Command::Penalty(args) => execute(&args, "penalty", penalty),
        Command::Moments(args) => execute(&args, "moments", moments),
        Command::Converge { args, experiment } => {
            execute(&args, "converge", |config| converge(config, experiment))
        }
        Command::CheckConditions { args, q, n_max } => {
            execute(&args, "check-conditions", |config| {
                check_conditions(config, q, n_max)
            })
        }
    }
}

/// What one subcommand produced: the machine `result` for stdout, a human
/// summary for stderr, and named file artifacts.
#[derive(Debug)]
struct CommandOutput {
    result: Value,
    human: String,
    artifacts: Vec<(&'static str, String)>,
}

fn execute(
    args: &CommonArgs,
    name: &str,
    handler: impl FnOnce(&RunConfig) -> Result<CommandOutput> + Send,
) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        Error::Invalid(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let config = parse_config(&text)?;
    let output = match args.workers {
        Some(0) => return Err(Error::Invalid("workers must be >= 1".into())),
        Some(workers) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Invalid(format!("cannot build a {workers}-worker pool: {e}")))?;
            pool.install(|| handler(&config))?
        }
        None => handler(&config)?,
    };
    emit(
        name,
        &config,
        args.out.as_deref().or(config.out_dir.as_deref()),
        output,
    )
}

fn emit(
    command: &str,
    config: &RunConfig,
    out_dir: Option<&Path>,
    output: CommandOutput,
) -> Result<()> {
    let mut written = Vec::new();
    if let Some(dir) = out_dir {
        if !output.artifacts.is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::Invalid(format!("cannot create {}: {e}", dir.display())))?;
        }
        for (name, contents) in &output.artifacts {
            let path = dir.join(name);
            std::fs::write(&path, contents)
                .map_err(|e| Error::Invalid(format!("cannot write {}: {e}", path.display())))?;
            written.push(path.display().to_string());
        }
    }
    if !output.human.is_empty() {
        eprintln!("{}", output.human.trim_end());
    }
    let envelope = json!({
        "command": command,
        "config_hash": config_hash(config),
        "seed": config.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "artifacts": written,
        "result": output.result,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&envelope).expect("output serialization is infallible")
    );
    Ok(())
}

// ======================================================================
// Subcommand handlers
// ======================================================================

fn path_csv(rows: &[(u64, f64, f64)]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["k", "t", "value"])
        .expect("csv writing to memory is infallible");
    for row in rows {
        writer
            .serialize(row)
            .expect("csv writing to memory is infallible");
    }
    String::from_utf8(writer.into_inner().expect("csv writer owns the buffer"))
        .expect("csv output is utf-8")
}

fn simulate(config: &RunConfig) -> Result<CommandOutput> {
    let key = StreamKey::new(config.seed, 0);
    let (rows, mut result) = match config.process {
        Process::Discrete => {
            let (loss, ret) = config.step_laws()?;
            let n = config.require_n()?;
            let scheme = RescaledScheme::new(n, loss, ret)?;
            let path = discrete::simulate_path(&scheme, config.y0, config.t, key)?;
            let dt = 1.0 / n as f64;
            let rows: Vec<(u64, f64, f64)> = path
                .values
                .iter()
                .enumerate()
                .map(|(k, &v)| (k as u64, k as f64 * dt, v))
                .collect();
            (rows, json!({ "process": "discrete", "n": n }))
        }
        Process::Gou => {
            let params = config.gou_params()?;
            let h = config.require_h()?;
            let path = if params.has_stable_drivers() {
                gou::simulate_stable(&params, config.y0, config.t, h, key)?
            } else {
                gou::simulate_diffusion(&params, config.y0, config.t, h, limit_scheme(&params), key)?
            };
            let rows: Vec<(u64, f64, f64)> = path
                .values
                .iter()
                .enumerate()
                .map(|(k, &v)| (k as u64, k as f64 * h, v))
                .collect();
            (rows, json!({ "process": "gou", "h": h }))
        }
    };
    let last = rows.last().expect("paths are nonempty");
    let min = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let fields = result.as_object_mut().expect("built as an object");
    fields.insert("points".into(), json!(rows.len()));
    fields.insert("horizon".into(), json!(config.t));
    fields.insert("final_value".into(), json!(last.2));
    fields.insert("min_value".into(), json!(min));
    fields.insert("ruined".into(), json!(min < 0.0));
    let human = format!(
        "path: {} points on [0, {}], final {:.6}, min {:.6}",
        rows.len(),
        config.t,
        last.2,
        min
    );
    Ok(CommandOutput {
        result,
        human,
        artifacts: vec![("path.csv", path_csv(&rows))],
    })
}

fn estimate_output(label: &str, extra: Value, est: EstimatorResult) -> CommandOutput {
    let human = format!(
        "{label}: {:.6} +/- {:.6} (95% CI [{:.6}, {:.6}], {} paths)",
        est.mean, est.stderr, est.ci_lo, est.ci_hi, est.n_paths
    );
    let mut result = extra;
    result.as_object_mut().expect("built as an object").insert(
        "estimate".into(),
        serde_json::to_value(&est).expect("estimator results serialize infallibly"),
    );
    CommandOutput {
        result,
        human,
        artifacts: Vec::new(),
    }
}

fn ruin(config: &RunConfig, limit: bool) -> Result<CommandOutput> {
    match (config.process, limit) {
        (Process::Discrete, true) => Err(Error::Invalid(
            "the closed-form ultimate ruin belongs to the limit process; set process = \"gou\""
                .into(),
        )),
        (Process::Discrete, false) => {
            let (loss, ret) = config.step_laws()?;
            let scheme = RescaledScheme::new(config.require_n()?, loss, ret)?;
            let est = discrete::estimate(
                &scheme,
                &EstimateConfig {
                    functional: Functional::RuinProbByT,
                    n_paths: config.n_paths,
                    y0: config.y0,
                    horizon: config.t,
                },
                config.seed,
            )?;
            Ok(estimate_output(
                "ruin probability",
                json!({ "process": "discrete", "horizon": config.t }),
                est,
            ))
        }
        (Process::Gou, true) => {
            let params = config.gou_params()?;
            let detailed = limits::ultimate_ruin_detailed(&params, config.y0)?;
            let human = format!(
                "ultimate ruin probability {:.6} ({} quadrature panels, estimated error {:.2e})",
                detailed.probability, detailed.panels, detailed.estimated_error
            );
            Ok(CommandOutput {
                result: json!({
                    "process": "gou",
                    "method": "quadrature",
                    "ultimate": serde_json::to_value(detailed)
                        .expect("quadrature results serialize infallibly"),
                }),
                human,
                artifacts: Vec::new(),
            })
        }
        (Process::Gou, false) => {
            let params = config.gou_params()?;
            let h = config.require_h()?;
            let est = gou::estimate(
                &params,
                &GouEstimateConfig {
                    functional: Functional::RuinProbByT,
                    n_paths: config.n_paths,
                    y: config.y0,
                    horizon: config.t,
                    h,
                    scheme: limit_scheme(&params),
                },
                config.seed,
            )?;
            Ok(estimate_output(
                "ruin probability",
                json!({ "process": "gou", "horizon": config.t, "h": h }),
                est,
            ))
        }
    }
}

fn penalty(config: &RunConfig) -> Result<CommandOutput> {
    let alpha = config.require_alpha()?;
    match config.process {
        Process::Discrete => {
            let (loss, ret) = config.step_laws()?;
            let scheme = RescaledScheme::new(config.require_n()?, loss, ret)?;
            let est = discrete::estimate(
                &scheme,
                &EstimateConfig {
                    functional: Functional::DiscountedPenalty { alpha },
                    n_paths: config.n_paths,
                    y0: config.y0,
                    horizon: config.t,
                },
                config.seed,
            )?;
            Ok(estimate_output(
                "discounted penalty",
                json!({ "process": "discrete", "alpha": alpha, "horizon": config.t }),
                est,
            ))
        }
        Process::Gou => {
            let params = config.gou_params()?;
            let x_max = limits::default_x_max(&params, config.y0);
            let solution =
                limits::solve_penalty_ode(&params, alpha, x_max, limits::default_ode_step(x_max))?;
            let value = solution.penalty_at(config.y0)?;
            let mut human = format!(
                "discounted penalty {value:.6} (decay exponent {:.6}, residual {:.2e})",
                solution.eta, solution.max_scaled_residual
            );
            if !solution.uniqueness_guaranteed {
                human.push_str("; uniqueness not guaranteed (mu_rho > 0)");
            }
            let note = if solution.uniqueness_guaranteed {
                Value::Null
            } else {
                json!(
                    "uniqueness not guaranteed: mu_rho > 0 admits nondecaying solutions; \
                     the value reported is the principal (decaying-seed) one"
                )
            };
            Ok(CommandOutput {
                result: json!({
                    "process": "gou",
                    "method": "ode",
                    "value": value,
                    "alpha": alpha,
                    "eta": solution.eta,
                    "x_max": solution.x_max,
                    "ode_step": solution.h,
                    "max_scaled_residual": solution.max_scaled_residual,
                    "uniqueness_guaranteed": solution.uniqueness_guaranteed,
                    "note": note,
                }),
                human,
                artifacts: Vec::new(),
            })
        }
    }
}

fn moments(config: &RunConfig) -> Result<CommandOutput> {
    let p = config.require_p()?;
    match config.process {
        Process::Discrete => {
            if (config.t - 1.0).abs() > 1e-12 {
                return Err(Error::Invalid(
                    "exact discrete moments are implemented at t = 1; set t = 1 or use process \"gou\""
                        .into(),
                ));
            }
            let (loss, ret) = config.step_laws()?;
            let n = config.require_n()?;
            let scheme = RescaledScheme::new(n, loss, ret)?;
            let value = discrete::exact_moment(&scheme, config.y0, p as usize)?;
            Ok(CommandOutput {
                result: json!({
                    "process": "discrete",
                    "method": "exact-recursion",
                    "p": p,
                    "t": 1.0,
                    "n": n,
                    "value": value,
                }),
                human: format!("exact moment of order {p} at n = {n}: {value:.12}"),
                artifacts: Vec::new(),
            })
        }
        Process::Gou => {
            let params = config.gou_params()?;
            let value = limits::moment_recursion(&params, config.y0, p, config.t)?;
            Ok(CommandOutput {
                result: json!({
                    "process": "gou",
                    "method": "exponential-polynomial",
                    "p": p,
                    "t": config.t,
                    "value": value,
                }),
                human: format!("limit moment m_{p}({}) = {value:.12}", config.t),
                artifacts: Vec::new(),
            })
        }
    }
}

fn render_report(report: &ConvergenceReport) -> String {
    let mut table = format!(
        "experiment {}: {}\nlimit method: {}; allowance {:.6e}\n{:>8} {:>14} {:>12} {:>14} {:>12}\n",
        report.experiment,
        if report.passed { "PASS" } else { "FAIL" },
        report.limit_method,
        report.allowance,
        "n",
        "estimate",
        "stderr",
        "limit",
        "error",
    );
    for row in &report.rows {
        let _ = writeln!(
            table,
            "{:>8} {:>14.6} {:>12.3e} {:>14.6} {:>12.3e}",
            row.n, row.estimate, row.stderr, row.limit, row.error
        );
    }
    let _ = write!(table, "verdict: {}", report.verdict);
    table
}

fn converge(config: &RunConfig, experiment: Experiment) -> Result<CommandOutput> {
    if config.process != Process::Discrete {
        return Err(Error::Invalid(
            "convergence experiments drive the discrete scheme toward its limit; set process = \"discrete\""
                .into(),
        ));
    }
    let (Some(loss), Some(log_return)) = (config.loss, config.log_return) else {
        return Err(Error::Invalid(
            "convergence experiments need the loss and log_return laws".into(),
        ));
    };
    let report = match experiment {
        Experiment::Marginal => harness::run_marginal_convergence(&MarginalConfig {
            loss,
            log_return,
            y0: config.y0,
            n_grid: config.n_grid.clone(),
            samples: config.n_paths,
            h: config.require_h()?,
            seed: config.seed,
        })?,
        Experiment::Ruin => harness::run_ruin_convergence(&RuinConfig {
            loss,
            log_return,
            y0: config.y0,
            n_grid: config.n_grid.clone(),
            n_paths: config.n_paths,
            h: config.require_h()?,
            seed: config.seed,
            mode: if config.ultimate {
                RuinMode::Ultimate { t_big: config.t }
            } else {
                RuinMode::FiniteHorizon { t: config.t }
            },
        })?,
        Experiment::Penalty => harness::run_penalty_convergence(&PenaltyConfig {
            loss,
            log_return,
            y0: config.y0,
            alpha: config.require_alpha()?,
            n_grid: config.n_grid.clone(),
            n_paths: config.n_paths,
            seed: config.seed,
        })?,
        Experiment::Moments => harness::run_moment_convergence(&MomentConfig {
            loss,
            log_return,
            y0: config.y0,
            p: config.require_p()?,
            n_grid: config.n_grid.clone(),
        })?,
    };
    let human = render_report(&report);
    let result = serde_json::to_value(&report).expect("reports serialize infallibly");
    let json_file = format!("{}\n", report.to_json());
    Ok(CommandOutput {
        result,
        human,
        artifacts: vec![
            ("report.csv", report.to_csv()),
            ("report.json", json_file),
            ("report.svg", report.to_svg()),
        ],
    })
}

fn check_conditions(config: &RunConfig, q: u32, n_max: u64) -> Result<CommandOutput> {
    let Some(family) = config.log_return else {
        return Err(Error::Invalid(
            "check-conditions needs the log_return law".into(),
        ));
    };
    let law = StepLaw::log_return(family)?;
    let nine = check_condition_9(&law, n_max)?;
    let fifteen = check_condition_15(&law, q, n_max)?;

    let start = nine.min_admissible_n.min(fifteen.min_admissible_n);
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["n", "a_n", "b_n", "verdict"])
        .expect("csv writing to memory is infallible");
    for n in start..=n_max {
        let a = (n >= nine.min_admissible_n)
            .then(|| nine.grid[(n - nine.min_admissible_n) as usize].1);
        let b = (n >= fifteen.min_admissible_n)
            .then(|| fifteen.grid[(n - fifteen.min_admissible_n) as usize].1);
        let verdict = match a {
            Some(a) if a < 1.0 => "ok",
            Some(_) => "a_n>=1",
            None => "outside-mgf-domain",
        };
        writer
            .serialize((n, a, b, verdict))
            .expect("csv writing to memory is infallible");
    }
    let table = String::from_utf8(writer.into_inner().expect("csv writer owns the buffer"))
        .expect("csv output is utf-8");

    let human = format!(
        "a_n decay (ultimate-ruin gate): {} (analytic limit {:.6}, holds from n = {:?})\n\
         b_n boundedness at q = {q} (moment gate): {} (sup estimate {:.6}, analytic limit {:.6})",
        if nine.satisfied { "satisfied" } else { "not satisfied" },
        nine.limit,
        nine.n0,
        if fifteen.bounded { "bounded" } else { "unbounded" },
        fifteen.sup_estimate,
        fifteen.limit,
    );
    Ok(CommandOutput {
        result: json!({
            "q": q,
            "n_max": n_max,
            "ruin_condition": serde_json::to_value(&nine)
                .expect("condition results serialize infallibly"),
            "moment_condition": serde_json::to_value(&fifteen)
                .expect("condition results serialize infallibly"),
        }),
        human,
        artifacts: vec![("conditions.csv", table)],
    })
}
