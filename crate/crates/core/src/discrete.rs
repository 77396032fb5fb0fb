//! Discrete surplus process: simulation, ruin detection, Monte Carlo
//! functionals, and an exact moment recursion.
//!
//! The surplus follows `theta_k = xi_k + theta_{k-1} * rho_k` with
//! `theta_0 = y0`, driven by the rescaled steps of a [`RescaledScheme`]; the
//! grid value at time `k/n` is `theta_k`. Ruin is the first grid time with a
//! strictly negative value; a path touching exactly zero is not ruined.
//!
//! Monte Carlo estimation runs one independent stream per path and reduces
//! with a deterministic ordered fold, so results do not depend on the worker
//! count. The exact moment recursion exploits the independence of
//! `(xi_k, rho_k)` from the past to propagate `E[theta_k^j]`, `j <= p`,
//! without sampling error.

use rayon::prelude::*;

use crate::rescale::RescaledScheme;
use crate::rng::{Stream, StreamKey};
use crate::{Error, Result};

// ======================================================================
// Types
// ======================================================================

/// A simulated surplus path on the grid `k/n`, `k = 0..floor(n T)`.
#[derive(Debug, Clone)]
pub struct SurplusPath {
    pub n: u64,
    pub horizon: f64,
    pub y0: f64,
    pub values: Vec<f64>,
}

impl SurplusPath {
    /// Grid time of index `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.n as f64
    }
}

/// Outcome of a first-passage scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuinOutcome {
    pub ruined: bool,
    /// Grid time of the first strictly negative value; `None` when censored
    /// at the horizon.
    pub time: Option<f64>,
}

// ======================================================================
// Path simulation
// ======================================================================

/// One step of the recursion, consuming a loss draw then a log-return draw.
/// The consumption order is frozen: replaying the same stream reproduces the
/// path exactly.
#[inline]
fn advance(scheme: &RescaledScheme, theta: f64, stream: &mut Stream) -> f64 {
    let xi = scheme.sample_loss(stream);
    let rho = scheme.sample_log_return(stream).exp();
    xi + theta * rho
}

/// Simulate the surplus path on `[0, horizon]`.
pub fn simulate_path(
    scheme: &RescaledScheme,
    y0: f64,
    horizon: f64,
    key: StreamKey,
) -> Result<SurplusPath> {
    if !(y0 >= 0.0) {
        return Err(Error::Invalid(format!("initial capital must be >= 0, got {y0}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::Invalid(format!("horizon must be > 0, got {horizon}")));
    }
    let steps = (scheme.n as f64 * horizon).floor() as usize;
    let mut stream = key.stream();
    let mut values = Vec::with_capacity(steps + 1);
    let mut theta = y0;
    values.push(theta);
    for _ in 0..steps {
        theta = advance(scheme, theta, &mut stream);
        values.push(theta);
    }
    Ok(SurplusPath {
        n: scheme.n,
        horizon,
        y0,
        values,
    })
}

/// Final surplus value from the product-sum form
/// `y0 prod(rho) + sum_i xi_i prod_{j>i} rho_j` (empty products are 1).
///
/// Agrees with the step recursion up to floating-point reordering.
pub fn explicit_solution(y0: f64, xis: &[f64], rhos: &[f64]) -> Result<f64> {
    if xis.len() != rhos.len() {
        return Err(Error::Invalid(format!(
            "step lists must have equal length, got {} and {}",
            xis.len(),
            rhos.len()
        )));
    }
    let mut acc = 0.0;
    let mut suffix = 1.0;
    for (xi, rho) in xis.iter().zip(rhos.iter()).rev() {
        acc += xi * suffix;
        suffix *= rho;
    }
    Ok(y0 * suffix + acc)
}

/// First grid time with a strictly negative value.
pub fn ruin_scan(path: &SurplusPath) -> RuinOutcome {
    for (k, &v) in path.values.iter().enumerate().skip(1) {
        if v < 0.0 {
            return RuinOutcome {
                ruined: true,
                time: Some(path.time(k)),
            };
        }
    }
    RuinOutcome {
        ruined: false,
        time: None,
    }
}

// ======================================================================
// Monte Carlo estimation
// ======================================================================

/// Path functional to estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    /// `P(tau^n(y) <= T)`.
    RuinProbByT,
    /// `E[e^(-alpha tau^n(y)); tau^n(y) <= T]`, horizon-censored.
    DiscountedPenalty { alpha: f64 },
    /// `E[(theta^(n)_1)^p]`, always evaluated at t = 1.
    Moment { p: u32 },
}

#[derive(Debug, Clone, Copy)]
pub struct EstimateConfig {
    pub functional: Functional,
    pub n_paths: u64,
    pub y0: f64,
    pub horizon: f64,
}

/// Monte Carlo estimate with its standard error and 95% interval.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EstimatorResult {
    pub mean: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_paths: u64,
    pub seed: u64,
    /// Censoring bound `e^(-alpha T)` on the discounted penalty; the exact
    /// functional over an infinite horizon exceeds the censored one by at
    /// most this much.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_bound: Option<f64>,
}

/// Evaluate one path's functional without materializing the path, with early
/// exit at ruin for the first-passage functionals.
fn path_value(
    scheme: &RescaledScheme,
    functional: Functional,
    y0: f64,
    steps: u64,
    key: StreamKey,
) -> f64 {
    let mut stream = key.stream();
    let mut theta = y0;
    match functional {
        Functional::RuinProbByT => {
            for _ in 0..steps {
                theta = advance(scheme, theta, &mut stream);
                if theta < 0.0 {
                    return 1.0;
                }
            }
            0.0
        }
        Functional::DiscountedPenalty { alpha } => {
            let n = scheme.n as f64;
            for k in 1..=steps {
                theta = advance(scheme, theta, &mut stream);
                if theta < 0.0 {
                    return (-alpha * k as f64 / n).exp();
                }
            }
            0.0
        }
        Functional::Moment { p } => {
            for _ in 0..steps {
                theta = advance(scheme, theta, &mut stream);
            }
            theta.powi(p as i32)
        }
    }
}

/// Mean, standard error and a 95% normal interval from an ordered sample.
pub(crate) fn summarize(values: &[f64], seed: u64) -> EstimatorResult {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let stderr = if values.len() > 1 {
        (ss / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    EstimatorResult {
        mean,
        stderr,
        ci_lo: mean - 1.96 * stderr,
        ci_hi: mean + 1.96 * stderr,
        n_paths: values.len() as u64,
        seed,
        truncation_bound: None,
    }
}

/// Monte Carlo estimate of a path functional. Paths use streams
/// `(seed, 0..n_paths)`; the reduction is an ordered fold over the collected
/// per-path values, independent of the rayon worker count.
pub fn estimate(
    scheme: &RescaledScheme,
    config: &EstimateConfig,
    seed: u64,
) -> Result<EstimatorResult> {
    if config.n_paths < 100 {
        return Err(Error::Invalid(format!(
            "need at least 100 paths for a meaningful interval, got {}",
            config.n_paths
        )));
    }
    if !(config.y0 >= 0.0) {
        return Err(Error::Invalid(format!(
            "initial capital must be >= 0, got {}",
            config.y0
        )));
    }
    let steps = match config.functional {
        Functional::Moment { p } => {
            // Fails early when the step laws lack the required moments.
            moment_inputs(scheme, p as usize)?;
            scheme.n
        }
        Functional::DiscountedPenalty { alpha } => {
            if !(alpha > 0.0) {
                return Err(Error::Invalid(format!(
                    "discount rate must be > 0, got {alpha}"
                )));
            }
            if !(config.horizon > 0.0) {
                return Err(Error::Invalid(format!(
                    "horizon must be > 0, got {}",
                    config.horizon
                )));
            }
            (scheme.n as f64 * config.horizon).floor() as u64
        }
        Functional::RuinProbByT => {
            if !(config.horizon > 0.0) {
                return Err(Error::Invalid(format!(
                    "horizon must be > 0, got {}",
                    config.horizon
                )));
            }
            (scheme.n as f64 * config.horizon).floor() as u64
        }
    };

    let values: Vec<f64> = (0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            path_value(
                scheme,
                config.functional,
                config.y0,
                steps,
                StreamKey::new(seed, i),
            )
        })
        .collect();

    let mut result = summarize(&values, seed);
    if let Functional::DiscountedPenalty { alpha } = config.functional {
        result.truncation_bound = Some((-alpha * config.horizon).exp());
    }
    Ok(result)
}

// ======================================================================
// Exact moments
// ======================================================================

pub const MAX_EXACT_MOMENT: usize = 6;

/// `E[(rho^(n))^j] = e^(j shift) M(j scale)` through the base mgf of
/// `ln rho`, where `gamma^(n) = shift + scale * ln rho`.
pub fn rescaled_rho_moment(scheme: &RescaledScheme, j: usize) -> Result<f64> {
    let (shift, scale) = scheme.return_affine();
    let jf = j as f64;
    Ok((jf * shift).exp() * scheme.return_base.mgf(jf * scale)?)
}

/// Raw moments `E[(xi^(n))^i]`, `i = 0..=p`, of the rescaled loss, via the
/// scaling of central moments under the affine map.
fn rescaled_loss_moments(scheme: &RescaledScheme, p: usize) -> Result<Vec<f64>> {
    let (shift, scale) = scheme.loss_affine();
    let mean = shift + scale * scheme.loss_base.mean();
    let mut raws = Vec::with_capacity(p + 1);
    for i in 0..=p {
        let mut total = 0.0;
        let mut binom = 1.0; // C(i, j)
        for j in 0..=i {
            let central = scheme.loss_base.central_moment(j)? * scale.powi(j as i32);
            total += binom * central * mean.powi((i - j) as i32);
            binom *= (i - j) as f64 / (j + 1) as f64;
        }
        raws.push(total);
    }
    Ok(raws)
}

/// Both moment inputs of the recursion; errors name the missing moment.
fn moment_inputs(scheme: &RescaledScheme, p: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let loss = rescaled_loss_moments(scheme, p)?;
    let mut rho = Vec::with_capacity(p + 1);
    for j in 0..=p {
        rho.push(rescaled_rho_moment(scheme, j)?);
    }
    Ok((loss, rho))
}

/// Exact `E[(theta^(n)_1)^p]` for `p <= 6`, by propagating all moments of
/// order `<= p` through the `n` steps:
/// `E[theta_k^i] = sum_j C(i,j) E[(xi^(n))^(i-j)] E[(rho^(n))^j] E[theta_{k-1}^j]`.
pub fn exact_moment(scheme: &RescaledScheme, y0: f64, p: usize) -> Result<f64> {
    if p > MAX_EXACT_MOMENT {
        return Err(Error::Invalid(format!(
            "exact moments supported up to order {MAX_EXACT_MOMENT}, got {p}"
        )));
    }
    if !(y0 >= 0.0) {
        return Err(Error::Invalid(format!("initial capital must be >= 0, got {y0}")));
    }
    let (loss_moments, rho_moments) = moment_inputs(scheme, p)?;

    // Binomial triangle C(i, j) for i <= p.
    let mut binom = vec![vec![0.0f64; p + 1]; p + 1];
    for i in 0..=p {
        binom[i][0] = 1.0;
        for j in 1..=i {
            binom[i][j] = binom[i - 1][j - 1] + if j < i { binom[i - 1][j] } else { 0.0 };
        }
    }

    let mut moments: Vec<f64> = (0..=p).map(|i| y0.powi(i as i32)).collect();
    for _ in 0..scheme.n {
        let mut next = vec![0.0f64; p + 1];
        for i in 0..=p {
            let mut total = 0.0;
            for j in 0..=i {
                total += binom[i][j] * loss_moments[i - j] * rho_moments[j] * moments[j];
            }
            next[i] = total;
        }
        moments = next;
    }
    Ok(moments[p])
}
