//! Seeded Monte Carlo checks of the samplers against closed-form targets:
//! first and second moments, polynomial tail frequencies, a point mass, and
//! the stable characteristic function. Seeds are fixed, so every tolerance
//! below is a deterministic statement about a specific draw, sized at four
//! standard errors (three for the binomial tail counts).

use ruin_lab::distributions::{Family, StepLaw};
use ruin_lab::rng::StreamKey;

fn draws(law: &StepLaw, count: usize, seed: u64) -> Vec<f64> {
    let mut stream = StreamKey::new(seed, 0).stream();
    (0..count).map(|_| law.sample(&mut stream)).collect()
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0) / n).sqrt())
}

/// Sample variance and the asymptotic standard error of the sample variance,
/// valid when the law has a finite fourth moment.
fn variance_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (m2 * n / (n - 1.0), ((m4 - m2 * m2) / n).sqrt())
}

fn assert_within(label: &str, observed: f64, target: f64, stderr: f64, sigmas: f64) {
    let gap = (observed - target).abs();
    assert!(
        gap <= sigmas * stderr,
        "{label}: observed {observed}, target {target}, gap {gap} > {sigmas} * stderr {stderr}"
    );
}

fn check_mean_and_variance(label: &str, family: Family, seed: u64) {
    let law = StepLaw::loss(family).unwrap();
    let xs = draws(&law, 200_000, seed);
    let (mean, mean_se) = mean_and_stderr(&xs);
    assert_within(&format!("{label} mean"), mean, law.mean(), mean_se, 4.0);
    let (var, var_se) = variance_and_stderr(&xs);
    assert_within(&format!("{label} variance"), var, law.variance(), var_se, 4.0);
}

#[test]
fn normal_moments_match() {
    check_mean_and_variance("Normal(1, 1)", Family::Normal { mu: 1.0, sigma2: 1.0 }, 42);
    check_mean_and_variance(
        "Normal(0.25, 4)",
        Family::Normal { mu: 0.25, sigma2: 4.0 },
        43,
    );
}

#[test]
fn nig_moments_match() {
    check_mean_and_variance(
        "NIG(2, 0, 1, 0.1)",
        Family::Nig {
            alpha: 2.0,
            beta: 0.0,
            delta: 1.0,
            mu: 0.1,
        },
        44,
    );
    check_mean_and_variance(
        "NIG(1.8, 0.4, 1.3, 0.07)",
        Family::Nig {
            alpha: 1.8,
            beta: 0.4,
            delta: 1.3,
            mu: 0.07,
        },
        45,
    );
}

#[test]
fn neg_pareto_moments_match() {
    // The sample-variance standard error needs a finite fourth moment, so the
    // variance check uses alpha = 5; alpha = 3 gets its mean checked only.
    let law = StepLaw::loss(Family::NegPareto { alpha: 3.0 }).unwrap();
    let xs = draws(&law, 200_000, 46);
    let (mean, mean_se) = mean_and_stderr(&xs);
    assert_within("NegPareto(3) mean", mean, law.mean(), mean_se, 4.0);

    check_mean_and_variance("NegPareto(5)", Family::NegPareto { alpha: 5.0 }, 47);
}

#[test]
fn degenerate_is_a_point_mass() {
    let law = StepLaw::log_return(Family::Degenerate { c: 0.125 }).unwrap();
    let xs = draws(&law, 1_000, 48);
    assert!(xs.iter().all(|&x| x == 0.125));
}

#[test]
fn neg_pareto_tail_frequencies_match_the_polynomial_tail() {
    // P(X < -x) = x^(-alpha) for x >= 1.
    let alpha = 1.5;
    let law = StepLaw::loss(Family::NegPareto { alpha }).unwrap();
    let xs = draws(&law, 400_000, 49);
    let n = xs.len() as f64;
    for x in [2.0, 5.0, 10.0] {
        let frequency = xs.iter().filter(|&&v| v < -x).count() as f64 / n;
        let p = x.powf(-alpha);
        let stderr = (p * (1.0 - p) / n).sqrt();
        assert_within(&format!("tail at {x}"), frequency, p, stderr, 3.0);
    }
}

#[test]
fn stable_characteristic_function_matches() {
    // The sampler targets E e^(iuX) = exp[-|u|^a (1 - i b sign(u) tan(pi a / 2))]
    // at unit scale; both components of the empirical characteristic function
    // are compared against that target.
    for (alpha, beta, seed) in [(1.5, 0.3, 50), (1.7, -0.5, 51)] {
        let law = StepLaw::log_return(Family::Stable { alpha, beta }).unwrap();
        let xs = draws(&law, 400_000, seed);
        for u in [0.5f64, 1.0, 2.0] {
            let decay = (-u.powf(alpha)).exp();
            let phase = beta * u.powf(alpha) * (std::f64::consts::PI * alpha / 2.0).tan();
            let target_re = decay * phase.cos();
            let target_im = decay * phase.sin();

            let cos: Vec<f64> = xs.iter().map(|&x| (u * x).cos()).collect();
            let sin: Vec<f64> = xs.iter().map(|&x| (u * x).sin()).collect();
            let (re, re_se) = mean_and_stderr(&cos);
            let (im, im_se) = mean_and_stderr(&sin);
            let label = format!("Stable({alpha}, {beta}) at u = {u}");
            assert_within(&format!("{label} (real)"), re, target_re, re_se, 4.0);
            assert_within(&format!("{label} (imaginary)"), im, target_im, im_se, 4.0);
        }
    }
}
