//! Closed-form and semi-closed-form quantities of the limit process.
//!
//! Three exact-limit tools back the convergence experiments: the ultimate
//! ruin probability as a ratio of explicit integrals, the discounted
//! penalty as a ratio of values of a second-order ODE solution, and the
//! moment functions as exponential polynomials built by a one-dimensional
//! integral recursion.

use std::sync::OnceLock;

use crate::gou::GouParams;
use crate::{Error, Result};

// ======================================================================
// Gauss-Legendre quadrature
// ======================================================================

const GL_ORDER: usize = 32;

/// Legendre polynomial value and derivative at `x` by the three-term
/// recurrence.
fn legendre_eval(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0f64;
    let mut p = x;
    for k in 2..=n {
        let k = k as f64;
        let next = ((2.0 * k - 1.0) * x * p - (k - 1.0) * p_prev) / k;
        p_prev = p;
        p = next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Nodes and weights on [-1, 1], Newton-refined from the Chebyshev guess.
fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static TABLE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = GL_ORDER;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..50 {
                let (p, dp) = legendre_eval(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_eval(n, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

/// Integrate `f` over [0, 1] with `panels` equal Gauss-Legendre panels.
fn integrate_unit(f: impl Fn(f64) -> f64, panels: u32) -> f64 {
    let (nodes, weights) = gauss_legendre();
    let width = 1.0 / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * width;
        let mut panel = 0.0;
        for (&x, &w) in nodes.iter().zip(weights) {
            panel += w * f(mid + 0.5 * width * x);
        }
        total += 0.5 * width * panel;
    }
    total
}

// ======================================================================
// Ultimate ruin probability
// ======================================================================

/// Ultimate ruin probability with quadrature diagnostics.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct UltimateRuin {
    pub probability: f64,
    /// Gauss-Legendre panels at which the doubling loop converged (0 when a
    /// drift gate answered without quadrature).
    pub panels: u32,
    /// Last successive-doubling difference, a proxy for the quadrature error.
    pub estimated_error: f64,
}

struct RuinIntegrand {
    /// Exponent of the kernel power, `2 nu - 2`.
    power: f64,
    /// Coefficient of the arctan exponential.
    c: f64,
    /// Grading exponent flattening the left endpoint.
    k: i32,
}

impl RuinIntegrand {
    fn new(params: &GouParams) -> Self {
        let nu = 0.5 + params.mu_rho / (params.sigma_rho * params.sigma_rho);
        // The transformed integrand behaves like u^(2nu-2) at the left
        // endpoint with 2nu - 2 in (-1, inf); grading with w^k turns it into
        // w^(k(2nu-1)-1), so k >= 4/(2nu-1) makes it at least cubic there.
        let k = (4.0 / (2.0 * nu - 1.0)).ceil().clamp(1.0, 64.0) as i32;
        RuinIntegrand {
            power: 2.0 * nu - 2.0,
            c: 2.0 * params.mu_xi / (params.sigma_xi * params.sigma_rho),
            k,
        }
    }

    /// `H(x)` after the substitutions `z = (sigma_xi/sigma_rho) tan(phi)`,
    /// `phi = -pi/2 + u`, `u = (b + pi/2) w^k`, up to an x-independent
    /// constant factor that cancels in the ruin ratio.
    fn integral(&self, b: f64, panels: u32) -> f64 {
        let span = b + std::f64::consts::FRAC_PI_2;
        let k = self.k;
        integrate_unit(
            |w| {
                let u = span * w.powi(k);
                if u <= 0.0 {
                    return 0.0;
                }
                // Log-space evaluation keeps the near-singular kernel finite
                // for large grading exponents.
                let log_val = self.power * u.sin().ln()
                    + self.c * (u - std::f64::consts::FRAC_PI_2)
                    + (k - 1) as f64 * w.ln()
                    + (k as f64 * span).ln();
                log_val.exp()
            },
            panels,
        )
    }

    fn converged_integral(&self, b: f64) -> Result<(f64, u32, f64)> {
        let mut panels = 1u32;
        let mut previous = self.integral(b, panels);
        while panels <= 1024 {
            let next_panels = panels * 2;
            let current = self.integral(b, next_panels);
            let diff = (current - previous).abs();
            if diff <= 1e-10 * current.abs().max(1e-300) {
                return Ok((current, next_panels, diff));
            }
            previous = current;
            panels = next_panels;
        }
        Err(Error::Numerical(format!(
            "ruin quadrature did not converge at 2048 panels; last doubling changed the integral by {:.3e}",
            (self.integral(b, 2048) - previous).abs()
        )))
    }
}

/// Ultimate ruin probability of the diffusion limit with diagnostics.
///
/// Drift gates answer first: nonpositive `mu_rho` or nonpositive `mu_xi`
/// makes ruin certain. Otherwise the probability is `H(-y)/H(0)` where
/// `H(x) = int_{-inf}^x (sigma_xi^2 + sigma_rho^2 z^2)^(-nu)
/// exp((2 mu_xi/(sigma_xi sigma_rho)) arctan(sigma_rho z / sigma_xi)) dz`
/// and `nu = 1/2 + mu_rho/sigma_rho^2`.
pub fn ultimate_ruin_detailed(params: &GouParams, y: f64) -> Result<UltimateRuin> {
    if params.has_stable_drivers() {
        return Err(Error::Invalid(
            "ultimate ruin has a closed form only in the diffusion case".into(),
        ));
    }
    if !(params.sigma_xi > 0.0) || !(params.sigma_rho > 0.0) {
        return Err(Error::Invalid(format!(
            "ultimate ruin needs sigma_xi > 0 and sigma_rho > 0, got {} and {}",
            params.sigma_xi, params.sigma_rho
        )));
    }
    if !(y >= 0.0) {
        return Err(Error::Invalid(format!("initial capital must be >= 0, got {y}")));
    }
    if params.mu_rho <= 0.0 || params.mu_xi <= 0.0 {
        return Ok(UltimateRuin {
            probability: 1.0,
            panels: 0,
            estimated_error: 0.0,
        });
    }
    let integrand = RuinIntegrand::new(params);
    let b_zero = 0.0;
    let b_y = (-params.sigma_rho * y / params.sigma_xi).atan();
    let (h_zero, panels_zero, err_zero) = integrand.converged_integral(b_zero)?;
    let (h_y, panels_y, err_y) = integrand.converged_integral(b_y)?;
    Ok(UltimateRuin {
        probability: h_y / h_zero,
        panels: panels_zero.max(panels_y),
        estimated_error: (err_zero + err_y) / h_zero,
    })
}

/// Ultimate ruin probability `P(tau(y) < inf)`.
pub fn ultimate_ruin(params: &GouParams, y: f64) -> Result<f64> {
    ultimate_ruin_detailed(params, y).map(|r| r.probability)
}

// ======================================================================
// Discounted penalty via the ODE
// ======================================================================

/// Principal decaying solution of
/// `(sigma_xi^2 + sigma_rho^2 x^2) f'' + 2 (mu_xi + kappa_rho x) f' - 2 alpha f = 0`
/// on a uniform grid over [0, x_max].
#[derive(Debug, Clone)]
pub struct PenaltySolution {
    pub alpha: f64,
    pub x_max: f64,
    pub h: f64,
    /// Positive root of `sigma_rho^2 eta (eta + 1) - 2 kappa_rho eta - 2 alpha = 0`,
    /// the decay rate `f ~ x^(-eta)` seeding the backward solve.
    pub eta: f64,
    pub f: Vec<f64>,
    pub f_prime: Vec<f64>,
    /// Largest `|residual| / (1 + |f|)` over interior grid nodes.
    pub max_scaled_residual: f64,
    /// False when `mu_rho > 0`, where decaying-solution uniqueness up to a
    /// constant factor is not guaranteed.
    pub uniqueness_guaranteed: bool,
}

impl PenaltySolution {
    pub fn grid_point(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn f0(&self) -> f64 {
        self.f[0]
    }

    /// `f(y)/f(0)` by cubic interpolation; trusted only on [0, x_max/2]
    /// where the seed truncation error has died out.
    pub fn penalty_at(&self, y: f64) -> Result<f64> {
        if !(y >= 0.0) {
            return Err(Error::Invalid(format!("initial capital must be >= 0, got {y}")));
        }
        if y > self.x_max / 2.0 {
            return Err(Error::Invalid(format!(
                "y = {y} is beyond the trusted region [0, {}]; re-solve with a larger x_max",
                self.x_max / 2.0
            )));
        }
        Ok(interpolate_cubic(&self.f, self.h, y) / self.f[0])
    }
}

/// Four-point Lagrange interpolation on a uniform grid.
fn interpolate_cubic(values: &[f64], h: f64, x: f64) -> f64 {
    let n = values.len();
    let i = ((x / h) as usize).clamp(1, n - 3);
    let stencil = [i - 1, i, i + 1, i + 2];
    let mut total = 0.0;
    for (a, &ia) in stencil.iter().enumerate() {
        let xa = ia as f64 * h;
        let mut weight = 1.0;
        for (b, &ib) in stencil.iter().enumerate() {
            if a != b {
                let xb = ib as f64 * h;
                weight *= (x - xb) / (xa - xb);
            }
        }
        total += weight * values[ia];
    }
    total
}

pub fn default_x_max(params: &GouParams, y: f64) -> f64 {
    50.0f64
        .max(20.0 * y)
        .max(20.0 * params.sigma_xi / params.sigma_rho)
}

pub fn default_ode_step(x_max: f64) -> f64 {
    (1e-3f64).min(x_max / 1e5)
}

fn validate_penalty_inputs(params: &GouParams, alpha: f64) -> Result<()> {
    if params.has_stable_drivers() {
        return Err(Error::Invalid(
            "the penalty ODE applies only in the diffusion case".into(),
        ));
    }
    if !(params.sigma_rho > 0.0) {
        return Err(Error::Invalid(
            "the penalty ODE needs sigma_rho > 0; the decay exponent is undefined otherwise".into(),
        ));
    }
    if !(params.sigma_xi > 0.0) {
        return Err(Error::Invalid(
            "the penalty ODE needs sigma_xi > 0; the equation degenerates at x = 0 otherwise".into(),
        ));
    }
    if !(alpha > 0.0) {
        return Err(Error::Invalid(format!("discount rate must be > 0, got {alpha}")));
    }
    Ok(())
}

fn decay_exponent(params: &GouParams, alpha: f64) -> f64 {
    let s2 = params.sigma_rho * params.sigma_rho;
    (params.mu_rho + (params.mu_rho * params.mu_rho + 2.0 * alpha * s2).sqrt()) / s2
}

/// Backward solve with the asymptotic seed multiplied by `seed_scale`.
///
/// The equation is linear, so scaling the seed scales the whole solution by
/// the same factor and leaves `penalty_at` unchanged; exposing the scale
/// makes that invariance testable.
pub fn solve_penalty_with_seed(
    params: &GouParams,
    alpha: f64,
    x_max: f64,
    h: f64,
    seed_scale: f64,
) -> Result<PenaltySolution> {
    validate_penalty_inputs(params, alpha)?;
    if !(x_max > 0.0) || !(h > 0.0) || h > x_max / 10.0 {
        return Err(Error::Invalid(format!(
            "need 0 < h <= x_max/10, got h = {h}, x_max = {x_max}"
        )));
    }
    let steps = (x_max / h).round() as usize;
    if ((steps as f64) * h - x_max).abs() > 1e-9 * x_max {
        return Err(Error::Invalid(format!(
            "x_max = {x_max} is not a multiple of the grid step {h}"
        )));
    }
    let eta = decay_exponent(params, alpha);
    let kappa = params.kappa_rho();
    let sxx = params.sigma_xi * params.sigma_xi;
    let srr = params.sigma_rho * params.sigma_rho;
    let second = |x: f64, f: f64, g: f64| (2.0 * alpha * f - 2.0 * (params.mu_xi + kappa * x) * g) / (sxx + srr * x * x);

    let mut f = vec![0.0; steps + 1];
    let mut g = vec![0.0; steps + 1];
    f[steps] = seed_scale * x_max.powf(-eta);
    g[steps] = -seed_scale * eta * x_max.powf(-eta - 1.0);
    if f[steps] == 0.0 {
        return Err(Error::Numerical(format!(
            "asymptotic seed x_max^(-eta) underflowed at x_max = {x_max}, eta = {eta}"
        )));
    }
    for i in (1..=steps).rev() {
        let x = i as f64 * h;
        let (fi, gi) = (f[i], g[i]);
        let k1f = gi;
        let k1g = second(x, fi, gi);
        let k2f = gi - 0.5 * h * k1g;
        let k2g = second(x - 0.5 * h, fi - 0.5 * h * k1f, gi - 0.5 * h * k1g);
        let k3f = gi - 0.5 * h * k2g;
        let k3g = second(x - 0.5 * h, fi - 0.5 * h * k2f, gi - 0.5 * h * k2g);
        let k4f = gi - h * k3g;
        let k4g = second(x - h, fi - h * k3f, gi - h * k3g);
        f[i - 1] = fi - h / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
        g[i - 1] = gi - h / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g);
    }

    for (i, (&fi, &gi)) in f.iter().zip(&g).enumerate() {
        if !(fi > 0.0) || !(gi <= 0.0) || !fi.is_finite() {
            return Err(Error::Numerical(format!(
                "solution violates positivity/monotonicity at x = {}; x_max = {x_max} is too small, retry with 2*x_max",
                i as f64 * h
            )));
        }
    }

    // Independent plug-back check: second derivative from a five-point
    // stencil on f rather than from the equation itself.
    let mut max_scaled_residual = 0.0f64;
    for i in 2..steps - 1 {
        let x = i as f64 * h;
        let fpp = (-f[i - 2] + 16.0 * f[i - 1] - 30.0 * f[i] + 16.0 * f[i + 1] - f[i + 2])
            / (12.0 * h * h);
        let residual = (sxx + srr * x * x) * fpp + 2.0 * (params.mu_xi + kappa * x) * g[i]
            - 2.0 * alpha * f[i];
        max_scaled_residual = max_scaled_residual.max(residual.abs() / (1.0 + f[i].abs()));
    }
    if max_scaled_residual > 1e-6 {
        return Err(Error::Numerical(format!(
            "plug-back residual {max_scaled_residual:.3e} exceeds 1e-6; the solve is not trustworthy"
        )));
    }

    Ok(PenaltySolution {
        alpha,
        x_max,
        h,
        eta,
        f,
        f_prime: g,
        max_scaled_residual,
        uniqueness_guaranteed: params.mu_rho <= 0.0,
    })
}

/// Solve the penalty ODE backward from `x_max` with the asymptotic seed
/// `f(x_max) = x_max^(-eta)`, `f'(x_max) = -eta x_max^(-eta-1)`.
pub fn solve_penalty_ode(
    params: &GouParams,
    alpha: f64,
    x_max: f64,
    h: f64,
) -> Result<PenaltySolution> {
    solve_penalty_with_seed(params, alpha, x_max, h, 1.0)
}

/// `E[e^(-alpha tau(y)); tau(y) < inf] = f(y)/f(0)` with default grid
/// choices.
pub fn discounted_penalty(params: &GouParams, alpha: f64, y: f64) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::Invalid(format!("initial capital must be >= 0, got {y}")));
    }
    let x_max = default_x_max(params, y);
    let solution = solve_penalty_ode(params, alpha, x_max, default_ode_step(x_max))?;
    solution.penalty_at(y)
}

// ======================================================================
// Moment recursion
// ======================================================================

/// One `c t^d e^(r t)` term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpPolyTerm {
    pub coeff: f64,
    pub degree: u32,
    pub rate: f64,
}

/// `m_p(t)` as an exponential polynomial. The family is closed under the
/// recursion `m_p(t) = y^p e^(a_p t) + int_0^t e^(a_p (t-s)) (b_p m_(p-1)(s)
/// + c_p m_(p-2)(s)) ds` with `a_p = p mu_rho + p^2 sigma_rho^2/2`,
/// `b_p = p mu_xi`, `c_p = p(p-1) sigma_xi^2/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPolynomial {
    terms: Vec<ExpPolyTerm>,
}

pub const MAX_LIMIT_MOMENT: u32 = 6;

const RATE_SNAP: f64 = 1e-9;

fn rates_collide(a: f64, b: f64) -> bool {
    (a - b).abs() <= RATE_SNAP * (1.0 + a.abs().max(b.abs()))
}

impl MomentPolynomial {
    pub fn eval(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|term| term.coeff * t.powi(term.degree as i32) * (term.rate * t).exp())
            .sum()
    }

    pub fn terms(&self) -> &[ExpPolyTerm] {
        &self.terms
    }

    fn push(&mut self, coeff: f64, degree: u32, rate: f64) {
        if coeff == 0.0 {
            return;
        }
        for term in &mut self.terms {
            if term.degree == degree && rates_collide(term.rate, rate) {
                term.coeff += coeff;
                return;
            }
        }
        self.terms.push(ExpPolyTerm { coeff, degree, rate });
    }

    /// Add `factor * int_0^t e^(a(t-s)) source(s) ds` term by term. A source
    /// rate colliding with `a` integrates to `t^(d+1)/(d+1) e^(a t)` (degree
    /// bump); the generic branch uses the polynomial antiderivative
    /// `int s^d e^(mu s) ds = Q(s) e^(mu s)` with `q_d = 1/mu`,
    /// `q_(i-1) = -i q_i / mu`.
    fn add_convolution(&mut self, source: &MomentPolynomial, factor: f64, a: f64) {
        for term in &source.terms {
            let c = factor * term.coeff;
            if c == 0.0 {
                continue;
            }
            if rates_collide(term.rate, a) {
                self.push(c / (term.degree + 1) as f64, term.degree + 1, a);
                continue;
            }
            let mu = term.rate - a;
            let d = term.degree as usize;
            let mut q = vec![0.0; d + 1];
            q[d] = 1.0 / mu;
            for i in (1..=d).rev() {
                q[i - 1] = -(i as f64) * q[i] / mu;
            }
            for (i, &qi) in q.iter().enumerate() {
                self.push(c * qi, i as u32, term.rate);
            }
            self.push(-c * q[0], 0, a);
        }
    }

    /// Pin the value at t = 0 to `target` exactly with dedicated dust terms.
    /// Merging the correction into an existing bucket would let a large
    /// coefficient swallow it; a standalone term appended at the end of the
    /// evaluation sum converges in two passes.
    fn renormalize_at_zero(&mut self, target: f64) {
        for _ in 0..4 {
            let at_zero = self.eval(0.0);
            if at_zero == target {
                return;
            }
            self.terms.push(ExpPolyTerm {
                coeff: target - at_zero,
                degree: 0,
                rate: 0.0,
            });
        }
    }
}

/// `m_p(t) = E[Y_t^p]` of the diffusion limit started at `y`, as an
/// exponential polynomial.
pub fn moment_polynomial(params: &GouParams, y: f64, p: u32) -> Result<MomentPolynomial> {
    if params.has_stable_drivers() {
        return Err(Error::Invalid(
            "moment recursion applies only in the diffusion case".into(),
        ));
    }
    if p > MAX_LIMIT_MOMENT {
        return Err(Error::Invalid(format!(
            "moment order is capped at {MAX_LIMIT_MOMENT}, got {p}"
        )));
    }
    if !y.is_finite() {
        return Err(Error::Invalid(format!("initial capital must be finite, got {y}")));
    }
    let mut history: Vec<MomentPolynomial> = Vec::with_capacity(p as usize + 1);
    history.push(MomentPolynomial {
        terms: vec![ExpPolyTerm { coeff: 1.0, degree: 0, rate: 0.0 }],
    });
    for q in 1..=p {
        let qf = q as f64;
        let a_q = qf * params.mu_rho + qf * qf * params.sigma_rho * params.sigma_rho / 2.0;
        let b_q = qf * params.mu_xi;
        let c_q = qf * (qf - 1.0) * params.sigma_xi * params.sigma_xi / 2.0;
        let mut m = MomentPolynomial { terms: Vec::new() };
        m.push(y.powi(q as i32), 0, a_q);
        m.add_convolution(&history[q as usize - 1], b_q, a_q);
        if q >= 2 {
            m.add_convolution(&history[q as usize - 2], c_q, a_q);
        }
        m.terms.retain(|t| t.coeff != 0.0);
        m.renormalize_at_zero(y.powi(q as i32));
        history.push(m);
    }
    Ok(history.pop().expect("nonempty by construction"))
}

/// `m_p(t)` evaluated at one time point in [0, 1].
pub fn moment_recursion(params: &GouParams, y: f64, p: u32, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Invalid(format!(
            "the moment recursion is contracted on t in [0, 1], got {t}"
        )));
    }
    Ok(moment_polynomial(params, y, p)?.eval(t))
}
