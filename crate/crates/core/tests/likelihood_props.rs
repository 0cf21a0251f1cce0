//! Likelihood invariants: Monte-Carlo oracles for both inner expectations,
//! normalization and moment checks for the zero-inflated negative binomial,
//! agreement of the tape and plain-f64 twins, and finite-difference checks
//! on every continuous parameter.

use mogp::diffmath::{grad_check, softplus_inverse, Tensor};
use mogp::likelihood::{
    gaussian_inner_expectation, gaussian_inner_expectation_rows, nongaussian_inner_expectation,
    zinb_inner_expectation_rows, zinb_link, zinb_logpmf, zinb_moments, GaussianLik, ZinbLik,
};
use mogp::rng::{purpose, standard_normal_vec, stream};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};

#[test]
fn gaussian_inner_expectation_matches_monte_carlo() {
    let mut rng = stream(21, &[purpose::AUDIT, 1]);
    for _ in 0..5 {
        let y: f64 = rng.gen_range(-2.0..2.0);
        let mu: f64 = rng.gen_range(-2.0..2.0);
        let v: f64 = rng.gen_range(0.1..1.5);
        let noise: f64 = rng.gen_range(0.2..1.5);
        let analytic = gaussian_inner_expectation(y, mu, v, noise);

        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let f = mu + v.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let lp = -0.5 * (2.0 * std::f64::consts::PI * noise).ln()
                - (y - f) * (y - f) / (2.0 * noise);
            sum += lp;
            sumsq += lp * lp;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (analytic - mean).abs() < 3.0 * se,
            "analytic {analytic} vs MC {mean} ± {se}"
        );
    }
}

#[test]
fn zinb_inner_expectation_matches_monte_carlo() {
    let lik = ZinbLik::new(0.6, 0.1, 1.0, 20).unwrap();
    let mut rng = stream(22, &[purpose::AUDIT, 2]);
    for &(y, mu, v) in &[(0.0, 0.5, 0.8), (4.0, 1.5, 0.5), (11.0, 2.5, 1.0)] {
        let quad = nongaussian_inner_expectation(y, mu, v, &lik).unwrap();
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let f = mu + v.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let lp = zinb_logpmf(y, zinb_link(f, lik.scale), &lik).unwrap();
            sum += lp;
            sumsq += lp * lp;
        }
        let mean = sum / n as f64;
        let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (quad - mean).abs() < 3.0 * se,
            "y={y} μ={mu} v={v}: quadrature {quad} vs MC {mean} ± {se}"
        );
    }
}

#[test]
fn zinb_pmf_normalizes_over_truncated_support() {
    for &(m, alpha, k_m) in &[(1.0, 0.3, 0.1), (12.0, 1.0, 0.1), (50.0, 2.0, 0.1), (50.0, 2.0, 0.0)]
    {
        let lik = ZinbLik::new(alpha, k_m, 1.0, 20).unwrap();
        let mut total = 0.0;
        for y in 0..=10_000 {
            total += zinb_logpmf(y as f64, m, &lik).unwrap().exp();
        }
        assert!(
            total >= 1.0 - 1e-9 && total <= 1.0 + 1e-9,
            "m={m} α={alpha} k_m={k_m}: truncated mass {total}"
        );
    }
}

#[test]
fn zinb_moments_match_one_million_samples() {
    let lik = ZinbLik::new(0.7, 0.15, 1.0, 20).unwrap();
    let m = 5.0;
    let (mean, var) = zinb_moments(m, &lik);
    let alpha = 0.7;
    let psi = 0.15 / (0.15 + m);
    let r = 1.0 / alpha;

    let mut rng = stream(23, &[purpose::AUDIT, 3]);
    // Generative ZINB: zero with probability ψ, else a Gamma–Poisson
    // mixture with shape r and scale m/r (mean m, variance m + αm²).
    let gamma = Gamma::new(r, m / r).unwrap();
    let n = 1_000_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let y = if rng.gen_range(0.0..1.0) < psi {
            0.0
        } else {
            let lambda: f64 = gamma.sample(&mut rng);
            Poisson::new(lambda.max(1e-12)).unwrap().sample(&mut rng)
        };
        sum += y;
        sumsq += y * y;
    }
    let emp_mean = sum / n as f64;
    let emp_var = sumsq / n as f64 - emp_mean * emp_mean;
    assert!(
        (emp_mean - mean).abs() / mean < 0.01,
        "mean {mean} vs empirical {emp_mean}"
    );
    assert!(
        (emp_var - var).abs() / var < 0.01,
        "variance {var} vs empirical {emp_var}"
    );
}

#[test]
fn tape_and_plain_twins_agree() {
    let mut rng = stream(24, &[purpose::AUDIT, 4]);
    let n = 12;
    let y_gauss = Tensor::vector(standard_normal_vec(&mut rng, n));
    let y_counts = Tensor::vector((0..n).map(|_| rng.gen_range(0..15) as f64).collect());
    let mu = standard_normal_vec(&mut rng, n);
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.2)).collect();

    let glik = GaussianLik::new(0.4).unwrap();
    let zlik = ZinbLik::new(0.8, 0.1, 1.0, 20).unwrap();

    let tape = mogp::diffmath::Tape::new();
    let mu_var = tape.leaf(Tensor::vector(mu.clone()));
    let v_var = tape.leaf(Tensor::vector(v.clone()));
    let noise_leaf = tape.leaf(glik.params()[0].1.clone());
    let alpha_leaf = tape.leaf(zlik.params()[0].1.clone());

    let g_rows = gaussian_inner_expectation_rows(
        &y_gauss,
        &mu_var,
        &v_var,
        &glik.noise_var(&[noise_leaf]),
    )
    .value();
    let z_rows = zinb_inner_expectation_rows(
        &y_counts,
        &mu_var,
        &v_var,
        &zlik.alpha_var(&[alpha_leaf]),
        &zlik,
    )
    .value();
    for i in 0..n {
        let g_scalar = gaussian_inner_expectation(y_gauss.data()[i], mu[i], v[i], 0.4);
        assert!((g_rows.data()[i] - g_scalar).abs() < 1e-12);
        let z_scalar =
            nongaussian_inner_expectation(y_counts.data()[i], mu[i], v[i], &zlik).unwrap();
        assert!(
            (z_rows.data()[i] - z_scalar).abs() < 1e-12,
            "row {i}: {} vs {z_scalar}",
            z_rows.data()[i]
        );
    }
}

#[test]
fn inner_expectation_gradients_match_finite_differences() {
    let mut rng = stream(25, &[purpose::AUDIT, 5]);
    let n = 6;
    let y_gauss = Tensor::vector(standard_normal_vec(&mut rng, n));
    let y_counts = Tensor::vector(vec![0.0, 3.0, 1.0, 7.0, 0.0, 12.0]);
    let mu0 = Tensor::vector(standard_normal_vec(&mut rng, n));
    let v_raw0 = Tensor::vector((0..n).map(|_| rng.gen_range(-1.0..0.3)).collect());

    // Gaussian: differentiate through μ, a positivity-mapped v, and σ_y².
    let params = vec![
        ("mu".to_string(), mu0.clone()),
        ("v_raw".to_string(), v_raw0.clone()),
        ("raw_noise".to_string(), Tensor::vector(vec![softplus_inverse(0.5)])),
    ];
    let yg = y_gauss.clone();
    let report = grad_check(
        move |_tape, vars| {
            let v = vars[1].softplus();
            let noise = vars[2].softplus();
            Ok(gaussian_inner_expectation_rows(&yg, &vars[0], &v, &noise).sum())
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-5, "gaussian worst {:?}", report.worst_param());

    // ZINB: differentiate through μ, v, and the dispersion.
    let zlik = ZinbLik::new(0.8, 0.1, 1.0, 20).unwrap();
    let params = vec![
        ("mu".to_string(), mu0),
        ("v_raw".to_string(), v_raw0),
        ("raw_alpha".to_string(), zlik.params()[0].1.clone()),
    ];
    let yc = y_counts;
    let report = grad_check(
        move |_tape, vars| {
            let v = vars[1].softplus();
            let alpha = vars[2].softplus();
            Ok(zinb_inner_expectation_rows(&yc, &vars[0], &v, &alpha, &zlik).sum())
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-5, "zinb worst {:?}", report.worst_param());
}
