//! Base step laws for losses `xi` and log-returns `ln(rho)`.
//!
//! A [`StepLaw`] bundles a distribution family with its role in the surplus
//! recursion. The module provides exact means/variances/central moments,
//! moment generating functions where they exist, samplers driven by the
//! [`crate::rng`] streams, and the tail classification that decides which
//! renormalization applies:
//!
//! * heavy tails of index `alpha` in (1,2) — stable-domain case, normalized
//!   by `c_alpha * n^(1/alpha)`,
//! * square-integrable with positive variance — Gaussian-domain case,
//!   normalized by `sqrt(n)`.

use crate::rng::Stream;
use crate::{Error, Result};

// ======================================================================
// Types
// ======================================================================

/// Tail dichotomy of a step law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailClass {
    /// Regularly varying tails of index `alpha` in (1, 2) with tail constants
    /// `k1` (left) and `k2` (right), `k1 + k2 > 0`. First moment finite,
    /// second moment infinite.
    HeavyAlpha { alpha: f64, k1: f64, k2: f64 },
    /// Finite variance, strictly positive.
    SquareIntegrable,
}

/// Role a step law plays in the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Loss,
    #[serde(rename = "logreturn")]
    LogReturn,
}

/// Distribution family of one step variable.
///
/// `Stable` uses the characteristic-function parameterization
/// `exp[-|u|^a (1 - i b sign(u) tan(pi a / 2))]` with scale `c = 1` and
/// location `gamma = 0` (strictly stable for `a > 1`).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Family {
    /// Negative of a type-I Pareto with scale 1: `F(x) = (-x)^(-alpha)` for
    /// `x <= -1`. Support is `(-inf, -1]`.
    NegPareto { alpha: f64 },
    Normal { mu: f64, sigma2: f64 },
    Nig { alpha: f64, beta: f64, delta: f64, mu: f64 },
    Stable { alpha: f64, beta: f64 },
    /// Point mass; admitted as a testing law only. Zero variance makes it
    /// non-conforming for the square-integrable class.
    Degenerate { c: f64 },
}

/// A base step distribution together with its role.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLaw {
    pub family: Family,
    pub role: Role,
}

/// Parameters of a stable driver law (general scale, location pinned at 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParams {
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
    pub gamma: f64,
}

impl StableParams {
    pub fn new(alpha: f64, beta: f64, c: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::Invalid(format!(
                "stable index must lie in (1, 2), got {alpha}"
            )));
        }
        if !(-1.0..=1.0).contains(&beta) {
            return Err(Error::Invalid(format!(
                "stable skewness must lie in [-1, 1], got {beta}"
            )));
        }
        if !(c > 0.0) {
            return Err(Error::Invalid(format!("stable scale must be > 0, got {c}")));
        }
        Ok(StableParams {
            alpha,
            beta,
            c,
            gamma: 0.0,
        })
    }
}

// ======================================================================
// Free operations (closed forms)
// ======================================================================

/// Mean and variance of the negative type-I Pareto loss.
///
/// Returns `(-alpha/(alpha-1), alpha/((alpha-1)^2 (alpha-2)))`; the variance
/// is `+inf` for `alpha <= 2`.
pub fn pareto_moments(alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 1.0) {
        return Err(Error::Invalid(format!(
            "Pareto shape must be > 1 for a finite mean, got {alpha}"
        )));
    }
    let mean = -alpha / (alpha - 1.0);
    let variance = if alpha > 2.0 {
        alpha / ((alpha - 1.0).powi(2) * (alpha - 2.0))
    } else {
        f64::INFINITY
    };
    Ok((mean, variance))
}

/// Mean and variance of `NIG(alpha, beta, delta, mu)`:
/// `mu + beta*delta/lambda` and `delta*alpha^2/lambda^3`, `lambda = sqrt(alpha^2-beta^2)`.
pub fn nig_moments(alpha: f64, beta: f64, delta: f64, mu: f64) -> Result<(f64, f64)> {
    validate_nig(alpha, beta, delta)?;
    let lambda = (alpha * alpha - beta * beta).sqrt();
    let mean = mu + beta * delta / lambda;
    let variance = delta * alpha * alpha / lambda.powi(3);
    Ok((mean, variance))
}

/// Moment generating function of `NIG(alpha, beta, delta, mu)` at `u`:
/// `exp(mu*u + delta*(lambda - sqrt(alpha^2 - (beta+u)^2)))`.
///
/// Defined only for `|beta + u| < alpha`.
pub fn nig_mgf(u: f64, alpha: f64, beta: f64, delta: f64, mu: f64) -> Result<f64> {
    validate_nig(alpha, beta, delta)?;
    if (beta + u).abs() >= alpha {
        return Err(Error::Invalid(format!(
            "NIG mgf undefined at u={u}: requires |beta + u| < alpha, i.e. u in ({}, {})",
            -alpha - beta,
            alpha - beta
        )));
    }
    let lambda = (alpha * alpha - beta * beta).sqrt();
    let root = (alpha * alpha - (beta + u) * (beta + u)).sqrt();
    Ok((mu * u + delta * (lambda - root)).exp())
}

/// Normalization constant for heavy-tailed losses of index `alpha` in (1,2):
/// `pi / (2 Gamma(alpha) sin(alpha pi / 2))`.
pub fn stable_constant_c_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::Invalid(format!(
            "normalization constant defined for alpha in (1, 2) only, got {alpha}"
        )));
    }
    let gamma = statrs::function::gamma::gamma(alpha);
    Ok(std::f64::consts::PI / (2.0 * gamma * (alpha * std::f64::consts::PI / 2.0).sin()))
}

fn validate_nig(alpha: f64, beta: f64, delta: f64) -> Result<()> {
    if !(alpha > 0.0) || !(beta.abs() < alpha) {
        return Err(Error::Invalid(format!(
            "NIG requires 0 <= |beta| < alpha, got alpha={alpha}, beta={beta}"
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::Invalid(format!("NIG requires delta > 0, got {delta}")));
    }
    Ok(())
}

/// Cumulants `kappa_1..kappa_max` of `NIG(alpha, beta, delta, mu)`, computed
/// analytically from the Taylor coefficients of the log-mgf
/// `psi(u) = mu*u + delta*(lambda - sqrt(alpha^2 - (beta+u)^2))`.
///
/// The square root of the quadratic `q(u) = lambda^2 - 2 beta u - u^2` is
/// expanded by the recurrence for Taylor coefficients of a square root, so no
/// numeric differentiation is involved.
pub fn nig_cumulants(alpha: f64, beta: f64, delta: f64, mu: f64, max: usize) -> Result<Vec<f64>> {
    validate_nig(alpha, beta, delta)?;
    let lambda = (alpha * alpha - beta * beta).sqrt();
    // Taylor coefficients of q(u) = alpha^2 - (beta+u)^2 around 0.
    let mut q = vec![0.0; max + 1];
    q[0] = lambda * lambda;
    if max >= 1 {
        q[1] = -2.0 * beta;
    }
    if max >= 2 {
        q[2] = -1.0;
    }
    // b = sqrt(q) coefficient recurrence: b0 = lambda,
    // b_n = (q_n - sum_{k=1}^{n-1} b_k b_{n-k}) / (2 b0).
    let mut b = vec![0.0; max + 1];
    b[0] = lambda;
    for n in 1..=max {
        let mut s = q[n];
        for k in 1..n {
            s -= b[k] * b[n - k];
        }
        b[n] = s / (2.0 * lambda);
    }
    // psi_n coefficients: psi_1 = mu - delta b_1, psi_n = -delta b_n (n >= 2);
    // kappa_n = n! * psi_n.
    let mut kappa = Vec::with_capacity(max);
    let mut factorial = 1.0;
    for n in 1..=max {
        factorial *= n as f64;
        let coeff = if n == 1 { mu - delta * b[1] } else { -delta * b[n] };
        kappa.push(factorial * coeff);
    }
    Ok(kappa)
}

/// Central moments `m_2..m_max` from cumulants via the standard recursion
/// (the first cumulant is dropped, centering the variable).
fn central_from_cumulants(kappa: &[f64], max: usize) -> Vec<f64> {
    // moments[n] = n-th central moment; kappa_1 treated as 0.
    let mut moments = vec![0.0; max + 1];
    moments[0] = 1.0;
    for n in 1..=max {
        let mut s = 0.0;
        let mut binom = 1.0; // C(n-1, j-1)
        for j in 1..=n {
            let kj = if j == 1 { 0.0 } else { kappa[j - 1] };
            s += binom * kj * moments[n - j];
            binom *= (n - j) as f64 / j as f64;
        }
        moments[n] = s;
    }
    moments
}

// ======================================================================
// StepLaw methods
// ======================================================================

pub const MAX_MOMENT_ORDER: usize = 8;

impl StepLaw {
    pub fn new(family: Family, role: Role) -> Result<Self> {
        match family {
            Family::NegPareto { alpha } => {
                if !(alpha > 1.0) {
                    return Err(Error::Invalid(format!(
                        "NegPareto requires alpha > 1 (finite mean), got {alpha}"
                    )));
                }
            }
            Family::Normal { sigma2, .. } => {
                if !(sigma2 > 0.0) {
                    return Err(Error::Invalid(format!(
                        "Normal step law requires sigma2 > 0, got {sigma2}; use Degenerate for a point mass"
                    )));
                }
            }
            Family::Nig {
                alpha,
                beta,
                delta,
                ..
            } => validate_nig(alpha, beta, delta)?,
            Family::Stable { alpha, beta } => {
                StableParams::new(alpha, beta, 1.0)?;
            }
            Family::Degenerate { c } => {
                if !c.is_finite() {
                    return Err(Error::Invalid(format!("Degenerate value must be finite, got {c}")));
                }
            }
        }
        Ok(StepLaw { family, role })
    }

    pub fn loss(family: Family) -> Result<Self> {
        StepLaw::new(family, Role::Loss)
    }

    pub fn log_return(family: Family) -> Result<Self> {
        StepLaw::new(family, Role::LogReturn)
    }

    /// Exact mean. Finite for every admissible family.
    pub fn mean(&self) -> f64 {
        match self.family {
            Family::NegPareto { alpha } => -alpha / (alpha - 1.0),
            Family::Normal { mu, .. } => mu,
            Family::Nig {
                alpha,
                beta,
                delta,
                mu,
            } => {
                let lambda = (alpha * alpha - beta * beta).sqrt();
                mu + beta * delta / lambda
            }
            Family::Stable { .. } => 0.0,
            Family::Degenerate { c } => c,
        }
    }

    /// Exact variance; `+inf` where the second moment diverges.
    pub fn variance(&self) -> f64 {
        match self.family {
            Family::NegPareto { alpha } => pareto_moments(alpha).expect("validated").1,
            Family::Normal { sigma2, .. } => sigma2,
            Family::Nig {
                alpha,
                beta,
                delta,
                ..
            } => {
                let lambda = (alpha * alpha - beta * beta).sqrt();
                delta * alpha * alpha / lambda.powi(3)
            }
            Family::Stable { .. } => f64::INFINITY,
            Family::Degenerate { .. } => 0.0,
        }
    }

    /// Tail classification deciding the renormalization.
    ///
    /// Degenerate laws are non-conforming (zero variance), and NegPareto at
    /// exactly `alpha = 2` falls between the classes (infinite variance but
    /// outside the stable index range); both are rejected.
    pub fn tail_class(&self) -> Result<TailClass> {
        match self.family {
            Family::NegPareto { alpha } => {
                if alpha < 2.0 {
                    Ok(TailClass::HeavyAlpha {
                        alpha,
                        k1: 1.0,
                        k2: 0.0,
                    })
                } else if alpha > 2.0 {
                    Ok(TailClass::SquareIntegrable)
                } else {
                    Err(Error::Invalid(
                        "NegPareto with alpha = 2 has infinite variance but is outside the heavy-tail index range (1, 2)".into(),
                    ))
                }
            }
            Family::Normal { .. } | Family::Nig { .. } => Ok(TailClass::SquareIntegrable),
            Family::Stable { alpha, beta } => {
                // Tail constants of the standard stable law are proportional
                // to (1 +/- beta); only their ratio matters downstream.
                Ok(TailClass::HeavyAlpha {
                    alpha,
                    k1: 1.0 - beta,
                    k2: 1.0 + beta,
                })
            }
            Family::Degenerate { .. } => Err(Error::Invalid(
                "degenerate law has zero variance and conforms to neither tail class".into(),
            )),
        }
    }

    /// Moment generating function `E[e^(u Z)]` where closed forms exist
    /// (Normal, NIG, Degenerate).
    pub fn mgf(&self, u: f64) -> Result<f64> {
        match self.family {
            Family::Normal { mu, sigma2 } => Ok((mu * u + 0.5 * sigma2 * u * u).exp()),
            Family::Nig {
                alpha,
                beta,
                delta,
                mu,
            } => nig_mgf(u, alpha, beta, delta, mu),
            Family::Degenerate { c } => Ok((c * u).exp()),
            Family::NegPareto { .. } => Err(Error::Invalid(
                "NegPareto has no moment generating function on u < 0 (left tail is polynomial)".into(),
            )),
            Family::Stable { .. } => Err(Error::Invalid(
                "stable laws have no finite exponential moments".into(),
            )),
        }
    }

    /// Exact central moment of order `m <= 8`, or an error when the moment
    /// does not exist for the family/order.
    pub fn central_moment(&self, m: usize) -> Result<f64> {
        if m > MAX_MOMENT_ORDER {
            return Err(Error::Invalid(format!(
                "central moments supported up to order {MAX_MOMENT_ORDER}, got {m}"
            )));
        }
        if m == 0 {
            return Ok(1.0);
        }
        if m == 1 {
            return Ok(0.0);
        }
        match self.family {
            Family::Normal { sigma2, .. } => {
                if m % 2 == 1 {
                    Ok(0.0)
                } else {
                    // (m-1)!! * sigma^m
                    let mut v = 1.0;
                    let mut k = m as i64 - 1;
                    while k > 0 {
                        v *= k as f64;
                        k -= 2;
                    }
                    Ok(v * sigma2.powi(m as i32 / 2))
                }
            }
            Family::NegPareto { alpha } => {
                if alpha <= m as f64 {
                    return Err(Error::Invalid(format!(
                        "NegPareto({alpha}) has no finite moment of order {m} (requires alpha > m)"
                    )));
                }
                // Raw moments E[Z^j] = (-1)^j alpha/(alpha - j), then center.
                let mean = -alpha / (alpha - 1.0);
                let mut total = 0.0;
                let mut binom = 1.0; // C(m, j)
                for j in 0..=m {
                    let raw = if j == 0 {
                        1.0
                    } else {
                        (if j % 2 == 1 { -1.0 } else { 1.0 }) * alpha / (alpha - j as f64)
                    };
                    total += binom * raw * (-mean).powi((m - j) as i32);
                    binom *= (m - j) as f64 / (j + 1) as f64;
                }
                Ok(total)
            }
            Family::Nig {
                alpha,
                beta,
                delta,
                mu,
            } => {
                let kappa = nig_cumulants(alpha, beta, delta, mu, m)?;
                Ok(central_from_cumulants(&kappa, m)[m])
            }
            Family::Stable { alpha, .. } => Err(Error::Invalid(format!(
                "stable law of index {alpha} has no finite moment of order {m}"
            ))),
            Family::Degenerate { .. } => Ok(0.0),
        }
    }

    /// Raw moment `E[Z^m]` assembled from the central moments and the mean.
    pub fn raw_moment(&self, m: usize) -> Result<f64> {
        if m == 0 {
            return Ok(1.0);
        }
        let mean = self.mean();
        let mut total = 0.0;
        let mut binom = 1.0; // C(m, j)
        for j in 0..=m {
            let central = self.central_moment(j)?;
            total += binom * central * mean.powi((m - j) as i32);
            binom *= (m - j) as f64 / (j + 1) as f64;
        }
        Ok(total)
    }

    /// Draw one variate.
    ///
    /// Samplers are frozen: NegPareto by inverse CDF on one uniform, Normal
    /// by one Box-Muller gaussian, stable by the Chambers-Mallows-Stuck
    /// transform on two uniforms, NIG by a normal mean-variance mixture with
    /// a Michael-Schucany-Haas inverse-Gaussian mixing variate (two
    /// gaussians and one uniform).
    pub fn sample(&self, stream: &mut Stream) -> f64 {
        match self.family {
            Family::NegPareto { alpha } => -stream.next_uniform().powf(-1.0 / alpha),
            Family::Normal { mu, sigma2 } => mu + sigma2.sqrt() * stream.next_gaussian(),
            Family::Nig {
                alpha,
                beta,
                delta,
                mu,
            } => {
                let lambda = (alpha * alpha - beta * beta).sqrt();
                let z = sample_inverse_gaussian(delta / lambda, delta * delta, stream);
                mu + beta * z + z.sqrt() * stream.next_gaussian()
            }
            Family::Stable { alpha, beta } => sample_stable_cms(alpha, beta, stream),
            Family::Degenerate { c } => c,
        }
    }
}

/// Inverse-Gaussian variate with the given mean and shape, by the
/// Michael-Schucany-Haas transformation (one squared gaussian, one uniform).
fn sample_inverse_gaussian(mean: f64, shape: f64, stream: &mut Stream) -> f64 {
    let v = {
        let g = stream.next_gaussian();
        g * g
    };
    let candidate = mean + mean * mean * v / (2.0 * shape)
        - mean / (2.0 * shape) * (4.0 * mean * shape * v + mean * mean * v * v).sqrt();
    let u = stream.next_uniform();
    if u <= mean / (mean + candidate) {
        candidate
    } else {
        mean * mean / candidate
    }
}

/// Standard stable variate (index `alpha` in (1,2), skewness `beta`, scale 1,
/// location 0) by the Chambers-Mallows-Stuck transform: one uniform angle on
/// (-pi/2, pi/2) and one unit exponential.
fn sample_stable_cms(alpha: f64, beta: f64, stream: &mut Stream) -> f64 {
    let u = std::f64::consts::PI * (stream.next_uniform() - 0.5);
    let w = -stream.next_uniform().ln();
    let tan_half = (alpha * std::f64::consts::FRAC_PI_2).tan();
    let b = (beta * tan_half).atan() / alpha;
    let s = (1.0 + beta * beta * tan_half * tan_half).powf(0.5 / alpha);
    let num = (alpha * (u + b)).sin();
    let den = u.cos().powf(1.0 / alpha);
    let tail = ((u - alpha * (u + b)).cos() / w).powf((1.0 - alpha) / alpha);
    s * num / den * tail
}

/// Characteristic function of the standard stable law used by [`Family::Stable`]:
/// `exp(-|u|^alpha (1 - i beta sign(u) tan(pi alpha / 2)))`, returned as
/// (real, imaginary) parts. Test oracle for the CMS sampler.
pub fn stable_cf(alpha: f64, beta: f64, u: f64) -> (f64, f64) {
    let modulus = (-u.abs().powf(alpha)).exp();
    let phase = u.abs().powf(alpha) * beta * u.signum() * (alpha * std::f64::consts::FRAC_PI_2).tan();
    (modulus * phase.cos(), modulus * phase.sin())
}
