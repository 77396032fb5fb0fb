//! Renormalized step laws and the moment conditions on the log-returns.
//!
//! For a grid of `n` steps per unit time, the rescaled steps are the affine
//! images
//!
//! ```text
//! xi^(n)    = mu_xi / n + (xi - mu_xi) / (c_a n^(1/a))
//! gamma^(n) = mu_rho / n + (ln rho - mu_rho) / (c_b n^(1/b))
//! ```
//!
//! with exponent 2 and constant 1 in the square-integrable case, and the
//! stable index with its family constant in the heavy-tailed case. The sum of
//! `n` rescaled steps keeps the base mean exactly, and in the
//! square-integrable case also the base variance.
//!
//! The module also evaluates the two moment conditions on the log-return law
//! that the limit results require: a geometric-decay bound
//! `sup_n E(e^(-2 gamma^(n)))^n <= C < 1` for the ultimate-ruin
//! approximation, and boundedness of `sup_n E(e^(q gamma^(n)))^n` for the
//! moment approximation. Both are evaluated in closed form through the base
//! moment generating function on a finite grid of `n`, together with the
//! analytic large-`n` limit.

use crate::distributions::{stable_constant_c_alpha, Family, StepLaw, TailClass};
use crate::rng::Stream;
use crate::{Error, Result};

// ======================================================================
// Scheme
// ======================================================================

/// Normalization data for one step law: exponent `a` and constant `c` in the
/// normalizer `c n^(1/a)`. Shared with the harness, which derives the limit
/// drivers implied by this normalizer.
pub(crate) fn normalization(law: &StepLaw) -> Result<(f64, f64)> {
    // Point masses renormalize trivially (the centered term is identically
    // zero), so any normalizer works; use the square-integrable convention.
    // They stay non-conforming for tail classification.
    if let Family::Degenerate { .. } = law.family {
        return Ok((2.0, 1.0));
    }
    match law.tail_class()? {
        TailClass::SquareIntegrable => Ok((2.0, 1.0)),
        TailClass::HeavyAlpha { alpha, .. } => match law.family {
            Family::NegPareto { .. } => Ok((alpha, stable_constant_c_alpha(alpha)?)),
            // Strictly stable base laws renormalize with constant 1: the sum
            // of n centered copies over n^(1/alpha) is again the base law.
            Family::Stable { .. } => Ok((alpha, 1.0)),
            _ => Err(Error::Invalid(format!(
                "no normalization constant known for heavy-tailed family {:?}",
                law.family
            ))),
        },
    }
}

fn root(n: u64, exponent: f64) -> f64 {
    // sqrt is correctly rounded; powf(0.5) may be off by an ulp, which the
    // machine-precision variance identity below would notice.
    if exponent == 2.0 {
        (n as f64).sqrt()
    } else {
        (n as f64).powf(1.0 / exponent)
    }
}

/// Rescaled loss draw: `mu_xi / n + (raw - mu_xi) / (c_a n^(1/a))`.
pub fn rescaled_loss(base: &StepLaw, n: u64, raw: f64) -> Result<f64> {
    let (exponent, constant) = normalization(base)?;
    let mu = base.mean();
    Ok(mu / n as f64 + (raw - mu) / (constant * root(n, exponent)))
}

/// Rescaled log-return draw `gamma^(n)`: `mu_rho / n + (raw - mu_rho) / (c_b n^(1/b))`
/// where `raw` is a draw of `ln rho`. The rescaled return itself is
/// `rho^(n) = exp(gamma^(n))`.
pub fn rescaled_logreturn(base: &StepLaw, n: u64, raw: f64) -> Result<f64> {
    rescaled_loss(base, n, raw)
}

/// A pair of base laws with their renormalization for a fixed grid `n`.
///
/// The affine coefficients are precomputed once so the per-step transform in
/// the simulation loop is a single multiply-add.
#[derive(Debug, Clone, Copy)]
pub struct RescaledScheme {
    pub n: u64,
    pub loss_base: StepLaw,
    pub return_base: StepLaw,
    pub loss_exponent: f64,
    pub loss_constant: f64,
    pub return_exponent: f64,
    pub return_constant: f64,
    loss_shift: f64,
    loss_scale: f64,
    return_shift: f64,
    return_scale: f64,
}

impl RescaledScheme {
    pub fn new(n: u64, loss_base: StepLaw, return_base: StepLaw) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("grid size n must be >= 1".into()));
        }
        let (loss_exponent, loss_constant) = normalization(&loss_base)?;
        let (return_exponent, return_constant) = normalization(&return_base)?;
        let nf = n as f64;
        let loss_scale = 1.0 / (loss_constant * root(n, loss_exponent));
        let return_scale = 1.0 / (return_constant * root(n, return_exponent));
        let mu_xi = loss_base.mean();
        let mu_rho = return_base.mean();
        Ok(RescaledScheme {
            n,
            loss_base,
            return_base,
            loss_exponent,
            loss_constant,
            return_exponent,
            return_constant,
            loss_shift: mu_xi / nf - mu_xi * loss_scale,
            loss_scale,
            return_shift: mu_rho / nf - mu_rho * return_scale,
            return_scale,
        })
    }

    /// Affine map applied to a raw loss draw.
    #[inline]
    pub fn rescale_loss_draw(&self, raw: f64) -> f64 {
        self.loss_shift + self.loss_scale * raw
    }

    /// Affine map applied to a raw `ln rho` draw.
    #[inline]
    pub fn rescale_logreturn_draw(&self, raw: f64) -> f64 {
        self.return_shift + self.return_scale * raw
    }

    /// `(shift, scale)` of the loss transform, for callers that inline the
    /// sampling loop.
    #[inline]
    pub fn loss_affine(&self) -> (f64, f64) {
        (self.loss_shift, self.loss_scale)
    }

    /// `(shift, scale)` of the log-return transform.
    #[inline]
    pub fn return_affine(&self) -> (f64, f64) {
        (self.return_shift, self.return_scale)
    }

    /// One rescaled loss `xi^(n)`.
    #[inline]
    pub fn sample_loss(&self, stream: &mut Stream) -> f64 {
        self.rescale_loss_draw(self.loss_base.sample(stream))
    }

    /// One rescaled log-return `gamma^(n)`.
    #[inline]
    pub fn sample_log_return(&self, stream: &mut Stream) -> f64 {
        self.rescale_logreturn_draw(self.return_base.sample(stream))
    }
}

// ======================================================================
// Moment conditions
// ======================================================================

/// Result of the geometric-decay check on `a_n = E(e^(-2 gamma^(n)))^n`.
///
/// `satisfied` demands a strict bound `C < 1` on the grid tail from `n0` on
/// and on the analytic limit; a limit exactly at 1 does not qualify.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConditionNine {
    pub satisfied: bool,
    /// Bound on the grid tail and the limit (the full grid sup when unsatisfied).
    pub c: f64,
    /// First grid index from which every tested value stays below 1.
    pub n0: Option<u64>,
    /// Analytic limit `exp(-2 (mu_rho - sigma_rho^2))`.
    pub limit: f64,
    /// Smallest `n` at which the mgf argument is inside its domain.
    pub min_admissible_n: u64,
    /// Tested pairs `(n, a_n)`.
    pub grid: Vec<(u64, f64)>,
}

/// Result of the boundedness check on `b_n = E(e^(q gamma^(n)))^n`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConditionFifteen {
    pub bounded: bool,
    /// Largest tested value (including the analytic limit).
    pub sup_estimate: f64,
    /// Value at the largest tested `n`, an empirical stand-in for the limit.
    pub limit_estimate: f64,
    /// Analytic limit `exp(q mu_rho + q^2 sigma_rho^2 / 2)`.
    pub limit: f64,
    /// Smallest `n` at which the mgf argument is inside its domain.
    pub min_admissible_n: u64,
    /// Tested pairs `(n, b_n)`.
    pub grid: Vec<(u64, f64)>,
}

/// Exponent of `E(e^(u_n gamma^(n)))^n` where `u_n = s0 * sqrt(n)`, i.e. the
/// mgf of the rescaled log-return is taken at a fixed multiple of
/// `1/sqrt(n)`. Returns `None` when `n` is outside the mgf domain.
///
/// The naive exponent `s0 sqrt(n) mu_rho / ... + n psi(s0/sqrt(n))` contains
/// terms growing like sqrt(n) that cancel; they are removed symbolically per
/// family so the evaluation is stable for arbitrarily large n:
///
/// * Normal: the exponent reduces to `s0 mu + s0^2 sigma^2 / 2`, n-free.
/// * Degenerate at `c`: reduces to `s0 c`.
/// * NIG: with `u = s0/sqrt(n)`, `g = sqrt(alpha^2 - (beta+u)^2)` and the
///   rationalization `lambda - g = u (2 beta + u) / (lambda + g)`, the
///   exponent is
///   `s0 mu_rho + s0^2 delta (beta (2 beta + u) + lambda (lambda + g)) / (lambda (lambda + g)^2)`.
fn tilted_exponent(law: &StepLaw, s0: f64, n: u64) -> Result<Option<f64>> {
    match law.family {
        Family::Normal { mu, sigma2 } => Ok(Some(s0 * mu + 0.5 * s0 * s0 * sigma2)),
        Family::Degenerate { c } => Ok(Some(s0 * c)),
        Family::Nig {
            alpha,
            beta,
            delta,
            mu,
        } => {
            let u = s0 / (n as f64).sqrt();
            if (beta + u).abs() >= alpha {
                return Ok(None);
            }
            let lambda = (alpha * alpha - beta * beta).sqrt();
            let g = (alpha * alpha - (beta + u) * (beta + u)).sqrt();
            let mu_rho = mu + beta * delta / lambda;
            let correction =
                s0 * s0 * delta * (beta * (2.0 * beta + u) + lambda * (lambda + g))
                    / (lambda * (lambda + g) * (lambda + g));
            Ok(Some(s0 * mu_rho + correction))
        }
        Family::NegPareto { .. } | Family::Stable { .. } => Err(Error::Invalid(format!(
            "moment conditions require a log-return law with a moment generating function, got {:?}",
            law.family
        ))),
    }
}

/// Large-n limit of the exponent above: `s0 mu_rho + s0^2 sigma_rho^2 / 2`.
fn tilted_limit_exponent(law: &StepLaw, s0: f64) -> f64 {
    law.mean() * s0 + 0.5 * s0 * s0 * law.variance()
}

/// Smallest `n` with the mgf argument `s0/sqrt(n)` strictly inside the domain.
fn min_admissible(law: &StepLaw, s0: f64) -> u64 {
    if let Family::Nig { alpha, beta, .. } = law.family {
        let margin = if s0 > 0.0 { alpha - beta } else { alpha + beta };
        let bound = (s0 / margin) * (s0 / margin);
        let mut n = bound.floor() as u64 + 1;
        while (beta + s0 / (n as f64).sqrt()).abs() >= alpha {
            n += 1;
        }
        n
    } else {
        1
    }
}

/// Check the geometric-decay condition on `a_n = E(e^(-2 gamma^(n)))^n`.
///
/// `a_n` is evaluated in closed form for every admissible `n <= n_max`
/// together with the analytic limit; the condition holds when the limit is
/// strictly below 1 and the grid values stay strictly below 1 from some `n0`
/// on.
pub fn check_condition_9(return_base: &StepLaw, n_max: u64) -> Result<ConditionNine> {
    if n_max == 0 {
        return Err(Error::Invalid("n_max must be >= 1".into()));
    }
    let s0 = -2.0;
    // Surface the unsupported-family error even if the grid would be empty.
    tilted_exponent(return_base, s0, u64::MAX)?;
    let first = min_admissible(return_base, s0);
    if first > n_max {
        return Err(Error::Invalid(format!(
            "mgf argument -2/sqrt(n) leaves the domain for every n <= {n_max}; smallest admissible n is {first}"
        )));
    }
    let mut grid = Vec::with_capacity((n_max - first + 1) as usize);
    for n in first..=n_max {
        let exponent = tilted_exponent(return_base, s0, n)?
            .expect("n >= min_admissible keeps the argument inside the domain");
        grid.push((n, exponent.exp()));
    }
    let limit = tilted_limit_exponent(return_base, s0).exp();

    // First index from which the tested values stay strictly below 1.
    let mut n0 = None;
    for (i, &(n, a)) in grid.iter().enumerate() {
        if a < 1.0 {
            if n0.is_none() {
                n0 = Some((i, n));
            }
        } else {
            n0 = None;
        }
    }
    let satisfied = limit < 1.0 && n0.is_some();
    let c = match n0 {
        Some((i, _)) if satisfied => grid[i..]
            .iter()
            .map(|&(_, a)| a)
            .fold(limit, f64::max),
        _ => grid.iter().map(|&(_, a)| a).fold(limit, f64::max),
    };
    Ok(ConditionNine {
        satisfied,
        c,
        n0: if satisfied { n0.map(|(_, n)| n) } else { None },
        limit,
        min_admissible_n: first,
        grid,
    })
}

/// Check boundedness of `b_n = E(e^(q gamma^(n)))^n` for an integer `q >= 2`.
pub fn check_condition_15(return_base: &StepLaw, q: u32, n_max: u64) -> Result<ConditionFifteen> {
    if q < 2 {
        return Err(Error::Invalid(format!("q must be an integer >= 2, got {q}")));
    }
    if n_max == 0 {
        return Err(Error::Invalid("n_max must be >= 1".into()));
    }
    let s0 = q as f64;
    tilted_exponent(return_base, s0, u64::MAX)?;
    let first = min_admissible(return_base, s0);
    if first > n_max {
        return Err(Error::Invalid(format!(
            "mgf argument {q}/sqrt(n) leaves the domain for every n <= {n_max}; smallest admissible n is {first}"
        )));
    }
    let mut grid = Vec::with_capacity((n_max - first + 1) as usize);
    for n in first..=n_max {
        let exponent = tilted_exponent(return_base, s0, n)?
            .expect("n >= min_admissible keeps the argument inside the domain");
        grid.push((n, exponent.exp()));
    }
    let limit = tilted_limit_exponent(return_base, s0).exp();
    let sup_estimate = grid.iter().map(|&(_, b)| b).fold(limit, f64::max);
    let limit_estimate = grid.last().map(|&(_, b)| b).unwrap_or(limit);
    Ok(ConditionFifteen {
        bounded: sup_estimate.is_finite(),
        sup_estimate,
        limit_estimate,
        limit,
        min_admissible_n: first,
        grid,
    })
}
