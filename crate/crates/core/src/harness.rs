//! Convergence experiments tying the discrete surplus model to its limit.
//!
//! Each experiment sweeps the discretization level over an n-grid, compares
//! a per-n quantity against the corresponding limit value, and renders the
//! outcome as a [`ConvergenceReport`] with seed and config-hash provenance.
//! Limit values come from three sources, tagged in the report: closed forms
//! (ultimate ruin, moments), the penalty ODE, or a fine-grid Monte Carlo of
//! the limit process when no closed form exists (fixed-time marginals and
//! finite-horizon ruin).

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::discrete::{self, EstimateConfig, Functional};
use crate::distributions::{stable_constant_c_alpha, Family, StepLaw, TailClass};
use crate::gou::{self, GouParams, GouScheme, StableDriver};
use crate::limits;
use crate::rescale::{self, check_condition_15, check_condition_9, RescaledScheme};
use crate::rng::StreamKey;
use crate::{Error, Result};

// ======================================================================
// Kolmogorov-Smirnov distances
// ======================================================================

fn sorted_copy(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Invalid("KS distance needs a nonempty sample".into()));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("KS distance got a NaN sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN filtered above"));
    Ok(sorted)
}

/// Two-sample Kolmogorov-Smirnov distance `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_distance_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    let a = sorted_copy(a)?;
    let b = sorted_copy(b)?;
    let (mut i, mut j) = (0usize, 0usize);
    let mut max_gap = 0.0f64;
    while i < a.len() && j < b.len() {
        // Advance past every copy of the smaller value so tied observations
        // move both empirical cdfs before the gap is measured.
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        let gap = (i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs();
        max_gap = max_gap.max(gap);
    }
    Ok(max_gap)
}

/// One-sample Kolmogorov-Smirnov distance against a continuous cdf.
pub fn ks_distance_to_cdf(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    let sorted = sorted_copy(samples)?;
    let n = sorted.len() as f64;
    let mut max_gap = 0.0f64;
    for (k, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let low = (f - k as f64 / n).abs();
        let high = ((k + 1) as f64 / n - f).abs();
        max_gap = max_gap.max(low).max(high);
    }
    Ok(max_gap)
}

/// Kolmogorov-Smirnov distance against a point mass at `v`: the larger of
/// the sample fractions strictly below and strictly above `v`.
pub fn ks_distance_to_point(samples: &[f64], v: f64) -> Result<f64> {
    let sorted = sorted_copy(samples)?;
    let n = sorted.len() as f64;
    let below = sorted.iter().filter(|&&x| x < v).count() as f64 / n;
    let above = sorted.iter().filter(|&&x| x > v).count() as f64 / n;
    Ok(below.max(above))
}

// ======================================================================
// Report plumbing
// ======================================================================

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvergenceRow {
    pub n: u64,
    pub estimate: f64,
    /// Zero for exact (noise-free) computations.
    pub stderr: f64,
    pub limit: f64,
    /// Always `|estimate - limit|`.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON of the experiment config.
    pub config_hash: String,
    /// Where the limit column comes from: `closed-form`, `ode`, `fine-mc`,
    /// or `deterministic`.
    pub limit_method: String,
    /// Engineering slack granted on top of statistical error, emitted so the
    /// tolerance budget is visible.
    pub allowance: f64,
    pub passed: bool,
    pub verdict: String,
    pub rows: Vec<ConvergenceRow>,
}

/// SHA-256 hex digest of the canonical JSON serialization, the provenance
/// hash embedded in every report and CLI output.
pub fn config_hash<T: serde::Serialize>(config: &T) -> String {
    let json = serde_json::to_string(config).expect("experiment configs serialize infallibly");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent seed spaces for the phases of one experiment (reference
/// sampling, per-n sampling) derived from the user seed.
fn phase_seed(seed: u64, phase: u64) -> u64 {
    seed.wrapping_add(phase.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn row(n: u64, estimate: f64, stderr: f64, limit: f64) -> ConvergenceRow {
    ConvergenceRow {
        n,
        estimate,
        stderr,
        limit,
        error: (estimate - limit).abs(),
    }
}

impl ConvergenceReport {
    /// CSV rendering: `# key=value` provenance lines, then the row table
    /// with columns `n,estimate,stderr,limit,error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# ruin-lab convergence report v1\n");
        out.push_str(&format!("# experiment={}\n", self.experiment));
        out.push_str(&format!("# seed={}\n", self.seed));
        out.push_str(&format!("# config_hash={}\n", self.config_hash));
        out.push_str(&format!("# limit_method={}\n", self.limit_method));
        out.push_str(&format!("# allowance={:?}\n", self.allowance));
        out.push_str(&format!("# passed={}\n", self.passed));
        out.push_str(&format!("# verdict={}\n", self.verdict));
        let mut writer = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            writer.serialize(r).expect("row serialization is infallible");
        }
        let table = writer.into_inner().expect("in-memory writer");
        out.push_str(std::str::from_utf8(&table).expect("csv output is UTF-8"));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        let mut table = String::new();
        for line in text.lines() {
            if let Some(comment) = line.strip_prefix("# ") {
                if let Some((key, value)) = comment.split_once('=') {
                    fields.insert(key.to_string(), value.to_string());
                }
            } else if !line.is_empty() {
                table.push_str(line);
                table.push('\n');
            }
        }
        let get = |key: &str| {
            fields
                .get(key)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("report CSV is missing '# {key}=...'")))
        };
        let parse_err = |key: &str| Error::Invalid(format!("report CSV field '{key}' is malformed"));
        let mut reader = csv::ReaderBuilder::new().from_reader(table.as_bytes());
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ConvergenceRow>, _>>()
            .map_err(|e| Error::Invalid(format!("report CSV rows are malformed: {e}")))?;
        Ok(ConvergenceReport {
            experiment: get("experiment")?,
            seed: get("seed")?.parse().map_err(|_| parse_err("seed"))?,
            config_hash: get("config_hash")?,
            limit_method: get("limit_method")?,
            allowance: get("allowance")?.parse().map_err(|_| parse_err("allowance"))?,
            passed: get("passed")?.parse().map_err(|_| parse_err("passed"))?,
            verdict: get("verdict")?,
            rows,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    /// Static log-log plot of the error column against n.
    pub fn to_svg(&self) -> String {
        let (w, h, ml, mb, mt, mr) = (640.0, 480.0, 70.0, 50.0, 30.0, 20.0);
        let plot_w = w - ml - mr;
        let plot_h = h - mt - mb;
        let xs: Vec<f64> = self.rows.iter().map(|r| (r.n as f64).log10()).collect();
        let ys: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.error.max(1e-16).log10())
            .collect();
        let (x_lo, x_hi) = bounds(&xs);
        let (y_lo, y_hi) = bounds(&ys);
        let to_px = |x: f64| ml + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let to_py = |y: f64| mt + (y_hi - y) / (y_hi - y_lo) * plot_h;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
             <text x=\"{:.1}\" y=\"18\" font-family=\"monospace\" font-size=\"13\">{} error vs n (log-log), limit: {}</text>\n",
            ml,
            self.experiment,
            self.limit_method
        );
        svg.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            h - mb,
            w - mr,
            h - mb,
            h - mb
        ));
        let mut points = String::new();
        for ((x, y), r) in xs.iter().zip(&ys).zip(&self.rows) {
            let (px, py) = (to_px(*x), to_py(*y));
            points.push_str(&format!("{px:.2},{py:.2} "));
            svg.push_str(&format!(
                "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"steelblue\"/>\n\
                 <text x=\"{px:.2}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">n={}</text>\n\
                 <text x=\"12\" y=\"{py:.2}\" font-family=\"monospace\" font-size=\"10\">{:.1e}</text>\n",
                h - mb + 16.0,
                r.n,
                r.error
            ));
        }
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n",
            points.trim_end()
        ));
        svg.push_str("</svg>\n");
        svg
    }
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

// ======================================================================
// Limit parameters implied by the step laws
// ======================================================================

fn is_heavy(law: &StepLaw) -> Result<bool> {
    if matches!(law.family, Family::Degenerate { .. }) {
        return Ok(false);
    }
    Ok(matches!(law.tail_class()?, TailClass::HeavyAlpha { .. }))
}

/// Limit-process parameters implied by a pair of step laws. Square-integrable
/// pairs give the diffusion with the laws' means and standard deviations.
///
/// Heavy-tailed pairs give stable drivers whose scale is pinned by the
/// discrete-side normalizer `c n^(1/a)`: centered sums of `n` rescaled steps
/// converge to the stable law with exponent coefficient `(k1 + k2) c_a / c^a`
/// and skewness `(k2 - k1) / (k1 + k2)`, where `k1`, `k2` are the base law's
/// tail constants. Strictly stable bases renormalize onto themselves exactly
/// (constant 1, scale 1, the base skew).
pub fn limit_params(loss: &StepLaw, log_return: &StepLaw) -> Result<GouParams> {
    match (is_heavy(loss)?, is_heavy(log_return)?) {
        (false, false) => GouParams::diffusion(
            loss.mean(),
            loss.variance().sqrt(),
            log_return.mean(),
            log_return.variance().sqrt(),
        ),
        (true, true) => {
            let driver = |law: &StepLaw| -> Result<StableDriver> {
                if let Family::Stable { alpha, beta } = law.family {
                    return StableDriver::new(alpha, beta, 1.0);
                }
                match law.tail_class()? {
                    TailClass::HeavyAlpha { alpha, k1, k2 } => {
                        let (_, constant) = rescale::normalization(law)?;
                        let c_a = stable_constant_c_alpha(alpha)?;
                        let scale = ((k1 + k2) * c_a).powf(1.0 / alpha) / constant;
                        StableDriver::new(alpha, (k2 - k1) / (k1 + k2), scale)
                    }
                    TailClass::SquareIntegrable => unreachable!("classified heavy above"),
                }
            };
            GouParams::with_stable_drivers(
                loss.mean(),
                driver(loss)?,
                log_return.mean(),
                driver(log_return)?,
            )
        }
        _ => Err(Error::Invalid(
            "mixed heavy/square-integrable pairs have no supported limit process".into(),
        )),
    }
}

/// Scheme used for limit-process reference sampling: the linear-SDE Euler
/// scheme in the diffusion case, the exponential stable stepper otherwise.
pub fn limit_scheme(params: &GouParams) -> GouScheme {
    if params.has_stable_drivers() {
        GouScheme::StableEuler
    } else {
        GouScheme::EulerSde
    }
}

fn validate_grid_spec(n_grid: &[u64]) -> Result<()> {
    if n_grid.is_empty() {
        return Err(Error::Invalid("the n-grid must be nonempty".into()));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) || n_grid[0] == 0 {
        return Err(Error::Invalid(
            "the n-grid must be strictly increasing and positive".into(),
        ));
    }
    Ok(())
}

fn discrete_terminal_samples(
    scheme: &RescaledScheme,
    y0: f64,
    samples: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..samples)
        .into_par_iter()
        .map(|i| {
            discrete::simulate_path(scheme, y0, 1.0, StreamKey::new(seed, i))
                .map(|path| *path.values.last().expect("paths are nonempty"))
        })
        .collect()
}

// ======================================================================
// Marginal convergence (fixed-time distribution)
// ======================================================================

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MarginalConfig {
    pub loss: Family,
    pub log_return: Family,
    pub y0: f64,
    pub n_grid: Vec<u64>,
    pub samples: u64,
    /// Limit-process grid for the reference sample.
    pub h: f64,
    pub seed: u64,
}

/// Kolmogorov-Smirnov distance between the law of the rescaled surplus at
/// t = 1 and the limit law, per n. The reference is a fine-grid simulation
/// of the limit (or the exact point for noiseless configurations); PASS
/// means the distance is nonincreasing across the grid up to a slack factor
/// (20%, widened to 30% for heavy-tailed drivers) and ends below 0.05.
pub fn run_marginal_convergence(config: &MarginalConfig) -> Result<ConvergenceReport> {
    validate_grid_spec(&config.n_grid)?;
    if config.samples < 100 {
        return Err(Error::Invalid(format!(
            "need at least 100 samples, got {}",
            config.samples
        )));
    }
    let loss = StepLaw::loss(config.loss)?;
    let log_return = StepLaw::log_return(config.log_return)?;
    let params = limit_params(&loss, &log_return)?;
    let deterministic = !params.has_stable_drivers()
        && params.sigma_xi == 0.0
        && params.sigma_rho == 0.0;

    enum Reference {
        Point(f64),
        Sample(Vec<f64>),
    }
    let reference = if deterministic {
        Reference::Point(limits::moment_recursion(&params, config.y0, 1, 1.0)?)
    } else {
        Reference::Sample(gou::terminal_samples(
            &params,
            config.y0,
            1.0,
            config.h,
            limit_scheme(&params),
            config.samples,
            phase_seed(config.seed, 0),
        )?)
    };

    let slack = if params.has_stable_drivers() { 0.30 } else { 0.20 };
    let mut rows = Vec::with_capacity(config.n_grid.len());
    for (idx, &n) in config.n_grid.iter().enumerate() {
        let scheme = RescaledScheme::new(n, loss, log_return)?;
        let sample = discrete_terminal_samples(
            &scheme,
            config.y0,
            config.samples,
            phase_seed(config.seed, 1 + idx as u64),
        )?;
        let ks = match &reference {
            Reference::Point(v) => ks_distance_to_point(&sample, *v)?,
            Reference::Sample(limit_sample) => ks_distance_two_sample(&sample, limit_sample)?,
        };
        rows.push(row(n, ks, 0.0, 0.0));
    }

    let trend_ok = rows
        .windows(2)
        .all(|w| w[1].error <= w[0].error * (1.0 + slack) + 1e-12);
    let final_ks = rows.last().expect("grid nonempty").error;
    let passed = trend_ok && final_ks < 0.05;
    Ok(ConvergenceReport {
        experiment: "marginal".into(),
        seed: config.seed,
        config_hash: config_hash(config),
        limit_method: if deterministic { "deterministic" } else { "fine-mc" }.into(),
        allowance: slack,
        passed,
        verdict: format!(
            "KS trend {} (slack {slack}), final KS {final_ks:.4} vs 0.05",
            if trend_ok { "nonincreasing" } else { "increased" }
        ),
        rows,
    })
}

// ======================================================================
// Ruin convergence
// ======================================================================

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum RuinMode {
    /// Compare `P(ruin by t)` against a fine-grid limit-process Monte Carlo.
    FiniteHorizon { t: f64 },
    /// Compare long-horizon ruin frequency against the closed-form ultimate
    /// ruin probability.
    Ultimate { t_big: f64 },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RuinConfig {
    pub loss: Family,
    pub log_return: Family,
    pub y0: f64,
    pub n_grid: Vec<u64>,
    pub n_paths: u64,
    /// Limit-process grid for the fine-MC reference (finite-horizon mode).
    pub h: f64,
    pub seed: u64,
    pub mode: RuinMode,
}

fn condition_nine_table(cond: &crate::rescale::ConditionNine) -> String {
    let mut table = format!(
        "limit {:.6e} (needs < 1), n0 {:?}, grid:",
        cond.limit, cond.n0
    );
    for (n, value) in &cond.grid {
        table.push_str(&format!(" (n={n}, a_n={value:.6e})"));
    }
    table
}

fn condition_fifteen_table(cond: &crate::rescale::ConditionFifteen) -> String {
    let mut table = format!(
        "sup estimate {:.6e}, analytic limit {:.6e}, grid:",
        cond.sup_estimate, cond.limit
    );
    for (n, value) in &cond.grid {
        table.push_str(&format!(" (n={n}, b_n={value:.6e})"));
    }
    table
}

/// Discrete first-passage probabilities against the limit-process value.
///
/// Ultimate mode demands the geometric-decay condition on the exponential
/// functional when the return drift is positive and reports its table when
/// it fails; nonpositive return drift makes the ultimate limit exactly 1
/// with no condition needed.
pub fn run_ruin_convergence(config: &RuinConfig) -> Result<ConvergenceReport> {
    validate_grid_spec(&config.n_grid)?;
    let loss = StepLaw::loss(config.loss)?;
    let log_return = StepLaw::log_return(config.log_return)?;
    let params = limit_params(&loss, &log_return)?;

    let allowance = 0.02;
    let (horizon, limit, limit_stderr, limit_method) = match config.mode {
        RuinMode::FiniteHorizon { t } => {
            let reference = gou::estimate(
                &params,
                &gou::GouEstimateConfig {
                    functional: Functional::RuinProbByT,
                    n_paths: config.n_paths,
                    y: config.y0,
                    horizon: t,
                    h: config.h,
                    scheme: limit_scheme(&params),
                },
                phase_seed(config.seed, 0),
            )?;
            (t, reference.mean, reference.stderr, "fine-mc")
        }
        RuinMode::Ultimate { t_big } => {
            if params.has_stable_drivers() {
                return Err(Error::Invalid(
                    "ultimate mode needs the diffusion limit; use finite-horizon mode for stable drivers".into(),
                ));
            }
            if params.mu_rho > 0.0 {
                let n_max = *config.n_grid.last().expect("grid nonempty");
                let cond = check_condition_9(&log_return, n_max)?;
                if !cond.satisfied {
                    return Err(Error::Numerical(format!(
                        "ultimate-ruin comparison refused, the geometric-decay condition fails: {}",
                        condition_nine_table(&cond)
                    )));
                }
                (
                    t_big,
                    limits::ultimate_ruin(&params, config.y0)?,
                    0.0,
                    "closed-form",
                )
            } else {
                (t_big, 1.0, 0.0, "closed-form")
            }
        }
    };

    let mut rows = Vec::with_capacity(config.n_grid.len());
    for (idx, &n) in config.n_grid.iter().enumerate() {
        let scheme = RescaledScheme::new(n, loss, log_return)?;
        let estimate = discrete::estimate(
            &scheme,
            &EstimateConfig {
                functional: Functional::RuinProbByT,
                n_paths: config.n_paths,
                y0: config.y0,
                horizon,
            },
            phase_seed(config.seed, 1 + idx as u64),
        )?;
        rows.push(row(n, estimate.mean, estimate.stderr, limit));
    }

    let last = rows.last().expect("grid nonempty");
    let budget = 3.0 * (last.stderr + limit_stderr) + allowance;
    let passed = last.error < budget;
    Ok(ConvergenceReport {
        experiment: "ruin".into(),
        seed: config.seed,
        config_hash: config_hash(config),
        limit_method: limit_method.into(),
        allowance,
        passed,
        verdict: format!(
            "final |estimate - limit| {:.4} vs budget {budget:.4} (3*(stderr {:.4} + limit stderr {limit_stderr:.4}) + allowance {allowance})",
            last.error, last.stderr
        ),
        rows,
    })
}

// ======================================================================
// Penalty convergence
// ======================================================================

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PenaltyConfig {
    pub loss: Family,
    pub log_return: Family,
    pub y0: f64,
    pub alpha: f64,
    pub n_grid: Vec<u64>,
    pub n_paths: u64,
    pub seed: u64,
}

/// Discrete discounted-penalty estimates against the ODE value. The horizon
/// is chosen so the censoring truncation `e^(-alpha T)` is below 1e-4 and is
/// granted as allowance on top of the statistical budget.
pub fn run_penalty_convergence(config: &PenaltyConfig) -> Result<ConvergenceReport> {
    validate_grid_spec(&config.n_grid)?;
    if !(config.alpha > 0.0) {
        return Err(Error::Invalid(format!(
            "discount rate must be > 0, got {}",
            config.alpha
        )));
    }
    let loss = StepLaw::loss(config.loss)?;
    let log_return = StepLaw::log_return(config.log_return)?;
    let params = limit_params(&loss, &log_return)?;
    if params.has_stable_drivers() {
        return Err(Error::Invalid(
            "the penalty comparison needs the diffusion limit".into(),
        ));
    }
    if params.mu_rho > 0.0 {
        return Err(Error::Invalid(
            "the penalty comparison needs mu_rho <= 0, the regime where the ODE value is unique".into(),
        ));
    }

    let horizon = (1e4f64.ln() / config.alpha).ceil();
    let truncation = (-config.alpha * horizon).exp();
    let limit = limits::discounted_penalty(&params, config.alpha, config.y0)?;

    let mut rows = Vec::with_capacity(config.n_grid.len());
    for (idx, &n) in config.n_grid.iter().enumerate() {
        let scheme = RescaledScheme::new(n, loss, log_return)?;
        let estimate = discrete::estimate(
            &scheme,
            &EstimateConfig {
                functional: Functional::DiscountedPenalty { alpha: config.alpha },
                n_paths: config.n_paths,
                y0: config.y0,
                horizon,
            },
            phase_seed(config.seed, 1 + idx as u64),
        )?;
        rows.push(row(n, estimate.mean, estimate.stderr, limit));
    }

    let last = rows.last().expect("grid nonempty");
    let budget = 3.0 * last.stderr + truncation;
    let passed = last.error < budget;
    Ok(ConvergenceReport {
        experiment: "penalty".into(),
        seed: config.seed,
        config_hash: config_hash(config),
        limit_method: "ode".into(),
        allowance: truncation,
        passed,
        verdict: format!(
            "final |estimate - limit| {:.5} vs budget {budget:.5} (3*stderr + truncation {truncation:.1e} at horizon {horizon})",
            last.error
        ),
        rows,
    })
}

// ======================================================================
// Moment convergence
// ======================================================================

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MomentConfig {
    pub loss: Family,
    pub log_return: Family,
    pub y0: f64,
    pub p: u32,
    pub n_grid: Vec<u64>,
}

/// Exact discrete moments (no Monte Carlo noise) against the limit moment
/// `m_p(1)`. Requires the boundedness condition on the exponential
/// functional at order q = p+1 and a finite q-th absolute loss moment.
pub fn run_moment_convergence(config: &MomentConfig) -> Result<ConvergenceReport> {
    validate_grid_spec(&config.n_grid)?;
    let loss = StepLaw::loss(config.loss)?;
    let log_return = StepLaw::log_return(config.log_return)?;
    let params = limit_params(&loss, &log_return)?;
    if params.has_stable_drivers() {
        return Err(Error::Invalid(
            "the moment comparison needs the diffusion limit".into(),
        ));
    }

    let q = config.p + 1;
    loss.raw_moment(q as usize).map_err(|e| {
        Error::Invalid(format!(
            "the loss law needs a finite absolute moment of order {q}: {e}"
        ))
    })?;
    let n_max = *config.n_grid.last().expect("grid nonempty");
    if q >= 2 {
        let cond = check_condition_15(&log_return, q, n_max)?;
        if !cond.bounded {
            return Err(Error::Numerical(format!(
                "moment comparison refused, the boundedness condition fails at q={q}: {}",
                condition_fifteen_table(&cond)
            )));
        }
    }

    let limit = limits::moment_recursion(&params, config.y0, config.p, 1.0)?;
    let mut rows = Vec::with_capacity(config.n_grid.len());
    for &n in &config.n_grid {
        let scheme = RescaledScheme::new(n, loss, log_return)?;
        let exact = discrete::exact_moment(&scheme, config.y0, config.p as usize)?;
        rows.push(row(n, exact, 0.0, limit));
    }

    let monotone = rows.windows(2).all(|w| w[1].error <= w[0].error);
    let final_error = rows.last().expect("grid nonempty").error;
    let tolerance = 1e-3 * (1.0 + limit.abs());
    let passed = monotone && final_error < tolerance;
    Ok(ConvergenceReport {
        experiment: "moments".into(),
        seed: 0,
        config_hash: config_hash(config),
        limit_method: "closed-form".into(),
        allowance: tolerance,
        passed,
        verdict: format!(
            "errors {}, final {final_error:.3e} vs tolerance {tolerance:.3e}",
            if monotone { "nonincreasing" } else { "not monotone" }
        ),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use approx::assert_relative_eq;

    #[test]
    fn identical_samples_have_zero_distance() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(ks_distance_two_sample(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_samples_have_distance_one() {
        let a = [1.0, 2.0];
        let b = [5.0, 6.0, 7.0];
        assert_eq!(ks_distance_two_sample(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn two_sample_distance_matches_a_hand_count() {
        // F_a jumps at 1, 3; F_b jumps at 2, 4. Largest gap is 1/2 after 1.
        let a = [1.0, 3.0];
        let b = [2.0, 4.0];
        assert_eq!(ks_distance_two_sample(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn same_law_samples_stay_below_the_null_threshold() {
        let mut one = StreamKey::new(31, 0).stream();
        let mut two = StreamKey::new(31, 1).stream();
        let a: Vec<f64> = (0..10_000).map(|_| one.next_gaussian()).collect();
        let b: Vec<f64> = (0..10_000).map(|_| two.next_gaussian()).collect();
        let d = ks_distance_two_sample(&a, &b).unwrap();
        assert!(d < 0.05, "KS {d}");
    }

    #[test]
    fn uniform_samples_are_close_to_the_uniform_cdf() {
        let mut stream = StreamKey::new(9, 0).stream();
        let samples: Vec<f64> = (0..20_000).map(|_| stream.next_uniform()).collect();
        let d = ks_distance_to_cdf(&samples, |x| x.clamp(0.0, 1.0)).unwrap();
        // p = 0.01 one-sample threshold is 1.63 / sqrt(n) ~ 0.0115.
        assert!(d < 1.63 / (20_000f64).sqrt(), "KS {d}");
        let shifted = ks_distance_to_cdf(&samples, |x| (x - 0.2).clamp(0.0, 1.0)).unwrap();
        assert!(shifted > 0.15, "shifted cdf should be far: {shifted}");
    }

    #[test]
    fn point_distance_counts_misplaced_mass() {
        assert_eq!(ks_distance_to_point(&[1.5, 1.5, 1.5], 1.5).unwrap(), 0.0);
        assert_eq!(ks_distance_to_point(&[1.0, 2.0], 1.5).unwrap(), 0.5);
        assert_eq!(ks_distance_to_point(&[1.0, 1.0, 2.0, 2.0], 2.0).unwrap(), 0.5);
    }

    #[test]
    fn empty_and_nan_inputs_are_rejected() {
        assert!(ks_distance_two_sample(&[], &[1.0]).is_err());
        assert!(ks_distance_to_cdf(&[f64::NAN], |x| x).is_err());
    }

    #[test]
    fn limit_params_follow_the_tail_dichotomy() {
        let normal_pair = limit_params(
            &StepLaw::loss(Family::Normal { mu: 1.0, sigma2: 4.0 }).unwrap(),
            &StepLaw::log_return(Family::Normal { mu: -0.05, sigma2: 0.09 }).unwrap(),
        )
        .unwrap();
        assert_eq!(normal_pair.mu_xi, 1.0);
        assert_eq!(normal_pair.sigma_xi, 2.0);
        assert_eq!(normal_pair.mu_rho, -0.05);
        assert_relative_eq!(normal_pair.sigma_rho, 0.3, max_relative = 1e-15);
        assert!(!normal_pair.has_stable_drivers());

        let light_pareto = limit_params(
            &StepLaw::loss(Family::NegPareto { alpha: 3.0 }).unwrap(),
            &StepLaw::log_return(Family::Nig { alpha: 2.0, beta: 0.0, delta: 1.0, mu: 0.1 }).unwrap(),
        )
        .unwrap();
        assert!(!light_pareto.has_stable_drivers());
        assert_eq!(light_pareto.mu_xi, -1.5);

        let heavy = limit_params(
            &StepLaw::loss(Family::NegPareto { alpha: 1.5 }).unwrap(),
            &StepLaw::log_return(Family::Stable { alpha: 1.5, beta: 0.3 }).unwrap(),
        )
        .unwrap();
        let x = heavy.x_jumps.unwrap();
        let r = heavy.r_jumps.unwrap();
        assert_eq!((x.alpha, x.beta), (1.5, -1.0));
        // Tail constants k1 = 1, k2 = 0 and normalizer c_a give coefficient
        // c_a^(1-a), so the driver scale is c_a^((1-a)/a) = (2 pi)^(-1/6).
        assert_relative_eq!(
            x.scale,
            (2.0 * std::f64::consts::PI).powf(-1.0 / 6.0),
            max_relative = 1e-15
        );
        assert_eq!(r.alpha, 1.5);
        assert_relative_eq!(r.beta, 0.3, max_relative = 1e-15);
        assert_eq!(r.scale, 1.0);

        assert!(limit_params(
            &StepLaw::loss(Family::NegPareto { alpha: 1.5 }).unwrap(),
            &StepLaw::log_return(Family::Normal { mu: 0.0, sigma2: 1.0 }).unwrap(),
        )
        .is_err());
    }

    #[test]
    fn degenerate_marginal_distances_are_exactly_zero() {
        let report = run_marginal_convergence(&MarginalConfig {
            loss: Family::Degenerate { c: 0.5 },
            log_return: Family::Degenerate { c: 0.0 },
            y0: 1.0,
            n_grid: vec![8, 32],
            samples: 200,
            h: 1e-2,
            seed: 3,
        })
        .unwrap();
        assert!(report.passed);
        assert_eq!(report.limit_method, "deterministic");
        assert!(report.rows.iter().all(|r| r.error == 0.0));
    }

    #[test]
    fn normal_marginal_report_converges() {
        let report = run_marginal_convergence(&MarginalConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Normal { mu: -0.05, sigma2: 0.09 },
            y0: 1.0,
            n_grid: vec![8, 64],
            samples: 4_000,
            h: 1e-2,
            seed: 11,
        })
        .unwrap();
        assert!(report.passed, "{}", report.verdict);
        assert_eq!(report.limit_method, "fine-mc");
        assert!(report.rows.iter().all(|r| r.error == (r.estimate - r.limit).abs()));
    }

    #[test]
    fn stable_marginal_report_uses_wider_slack() {
        let report = run_marginal_convergence(&MarginalConfig {
            loss: Family::NegPareto { alpha: 1.5 },
            log_return: Family::Stable { alpha: 1.5, beta: 0.0 },
            y0: 2.0,
            n_grid: vec![8, 32],
            samples: 1_000,
            h: 1e-2,
            seed: 5,
        })
        .unwrap();
        assert_eq!(report.allowance, 0.30);
        assert!(report.rows.iter().all(|r| r.estimate.is_finite()));
    }

    #[test]
    fn ruin_ultimate_mode_with_negative_drift_approaches_one() {
        // Strongly negative return drift keeps the mean-reversion level of
        // the limit low (about mu_xi/|kappa| = 2.2), so certain ruin is also
        // reached fast enough to observe within the horizon.
        let report = run_ruin_convergence(&RuinConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Normal { mu: -0.5, sigma2: 0.09 },
            y0: 1.0,
            n_grid: vec![8, 32],
            n_paths: 500,
            h: 1e-2,
            seed: 17,
            mode: RuinMode::Ultimate { t_big: 100.0 },
        })
        .unwrap();
        assert_eq!(report.limit_method, "closed-form");
        let last = report.rows.last().unwrap();
        assert_eq!(last.limit, 1.0);
        assert!(last.estimate > 0.95, "{}", last.estimate);
    }

    #[test]
    fn ruin_ultimate_mode_refuses_when_decay_condition_fails() {
        // mu_rho < sigma_rho^2 puts the Normal family outside the geometric
        // decay region.
        let result = run_ruin_convergence(&RuinConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Normal { mu: 0.01, sigma2: 0.09 },
            y0: 1.0,
            n_grid: vec![8, 32],
            n_paths: 500,
            h: 1e-2,
            seed: 17,
            mode: RuinMode::Ultimate { t_big: 50.0 },
        });
        let message = result.unwrap_err().to_string();
        assert!(message.contains("condition"), "{message}");
        assert!(message.contains("a_n"), "table missing: {message}");
    }

    #[test]
    fn ruin_finite_horizon_smoke() {
        let report = run_ruin_convergence(&RuinConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Normal { mu: -0.05, sigma2: 0.09 },
            y0: 1.0,
            n_grid: vec![8, 32],
            n_paths: 2_000,
            h: 1e-2,
            seed: 23,
            mode: RuinMode::FiniteHorizon { t: 1.0 },
        })
        .unwrap();
        assert_eq!(report.limit_method, "fine-mc");
        assert!(report.passed, "{}", report.verdict);
    }

    #[test]
    fn ruin_with_enormous_capital_is_zero_on_both_sides() {
        let report = run_ruin_convergence(&RuinConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Normal { mu: -0.05, sigma2: 0.09 },
            y0: 60.0,
            n_grid: vec![8, 32],
            n_paths: 500,
            h: 1e-2,
            seed: 29,
            mode: RuinMode::FiniteHorizon { t: 1.0 },
        })
        .unwrap();
        let last = report.rows.last().unwrap();
        assert_eq!(last.estimate, 0.0);
        assert_eq!(last.limit, 0.0);
        assert!(report.passed);
    }

    #[test]
    fn penalty_heavy_discounting_kills_the_functional() {
        let report = run_penalty_convergence(&PenaltyConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Normal { mu: -0.05, sigma2: 0.09 },
            y0: 1.0,
            alpha: 20.0,
            n_grid: vec![8, 32],
            n_paths: 1_000,
            seed: 37,
        })
        .unwrap();
        let last = report.rows.last().unwrap();
        assert!(last.estimate < 0.01, "{}", last.estimate);
        assert!(last.limit < 0.01, "{}", last.limit);
    }

    #[test]
    fn penalty_at_the_boundary_tends_to_one() {
        let report = run_penalty_convergence(&PenaltyConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Normal { mu: -0.05, sigma2: 0.09 },
            y0: 0.0,
            alpha: 0.5,
            n_grid: vec![8, 64, 512],
            n_paths: 1_000,
            seed: 41,
        })
        .unwrap();
        assert_relative_eq!(report.rows.last().unwrap().limit, 1.0, max_relative = 1e-9);
        assert!(report.rows.last().unwrap().estimate > 0.9, "{}", report.verdict);
    }

    #[test]
    fn penalty_refuses_positive_return_drift() {
        let result = run_penalty_convergence(&PenaltyConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Normal { mu: 0.05, sigma2: 0.09 },
            y0: 1.0,
            alpha: 0.5,
            n_grid: vec![8],
            n_paths: 500,
            seed: 43,
        });
        assert!(result.is_err());
    }

    #[test]
    fn moment_errors_shrink_at_first_order() {
        let report = run_moment_convergence(&MomentConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Normal { mu: -0.05, sigma2: 0.09 },
            y0: 1.0,
            p: 1,
            n_grid: vec![8, 32, 128, 512],
        })
        .unwrap();
        assert!(report.passed, "{}", report.verdict);
        let errors: Vec<f64> = report.rows.iter().map(|r| r.error).collect();
        // Exact recursion vs limit decays like 1/n: each 4x n-step cuts the
        // error by about 4.
        let ratio = errors[2] / errors[3];
        assert!((2.5..6.0).contains(&ratio), "errors {errors:?}");
    }

    #[test]
    fn moment_zeroth_order_is_trivially_exact() {
        let report = run_moment_convergence(&MomentConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Normal { mu: -0.05, sigma2: 0.09 },
            y0: 1.0,
            p: 0,
            n_grid: vec![8, 32],
        })
        .unwrap();
        assert!(report.passed);
        assert!(report.rows.iter().all(|r| r.error == 0.0));
    }

    #[test]
    fn moment_run_with_nig_returns_converges() {
        let report = run_moment_convergence(&MomentConfig {
            loss: Family::NegPareto { alpha: 4.0 },
            log_return: Family::Nig { alpha: 2.0, beta: 0.0, delta: 1.0, mu: 0.1 },
            y0: 1.0,
            p: 2,
            n_grid: vec![8, 32, 128, 512],
        })
        .unwrap();
        assert!(report.passed, "{}", report.verdict);
    }

    #[test]
    fn moment_run_refuses_infinite_loss_moments() {
        // q = p+1 = 3 needs a loss tail heavier than alpha = 3 allows.
        let result = run_moment_convergence(&MomentConfig {
            loss: Family::NegPareto { alpha: 3.0 },
            log_return: Family::Nig { alpha: 2.0, beta: 0.0, delta: 1.0, mu: 0.1 },
            y0: 1.0,
            p: 2,
            n_grid: vec![8, 32],
        });
        let message = result.unwrap_err().to_string();
        assert!(message.contains("order 3"), "{message}");
    }

    #[test]
    fn moment_run_refuses_unbounded_exponential_functional() {
        // Large positive return drift sends b_n far above any bound long
        // before the analytic limit applies.
        let result = run_moment_convergence(&MomentConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Nig { alpha: 1.0, beta: 0.5, delta: 1.0, mu: 0.0 },
            y0: 1.0,
            p: 2,
            n_grid: vec![8, 10],
        });
        assert!(result.is_err());
    }

    #[test]
    fn reports_round_trip_through_csv_and_json() {
        let report = run_moment_convergence(&MomentConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Normal { mu: -0.05, sigma2: 0.09 },
            y0: 1.0,
            p: 2,
            n_grid: vec![8, 32, 128],
        })
        .unwrap();
        let csv_text = report.to_csv();
        assert_eq!(ConvergenceReport::from_csv(&csv_text).unwrap(), report);
        let json_text = report.to_json();
        let back: ConvergenceReport = serde_json::from_str(&json_text).unwrap();
        assert_eq!(back, report);
        let svg = report.to_svg();
        assert!(svg.starts_with("<svg") && svg.contains("polyline") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn reports_are_reproducible_from_their_seed() {
        let config = MarginalConfig {
            loss: Family::Normal { mu: 1.0, sigma2: 1.0 },
            log_return: Family::Normal { mu: -0.05, sigma2: 0.09 },
            y0: 1.0,
            n_grid: vec![8, 32],
            samples: 500,
            h: 1e-2,
            seed: 47,
        };
        let a = run_marginal_convergence(&config).unwrap();
        let b = run_marginal_convergence(&config).unwrap();
        assert_eq!(a, b);
        let mut other = config;
        other.seed = 48;
        let c = run_marginal_convergence(&other).unwrap();
        assert_ne!(a.rows, c.rows);
        assert_ne!(a.config_hash, c.config_hash);
    }
}
