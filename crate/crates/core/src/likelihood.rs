//! Observation models and their inner expected log-likelihoods.
//!
//! The evidence bound needs V_{n,p} = E_{q(f)}[log p(y | f)] for each
//! observation, with q(f) = N(μ, v) the marginal posterior of the latent
//! function value.  Two models are supported:
//!
//! * **Gaussian**: y = f + ε, ε ~ N(0, σ_y²).  The expectation is analytic:
//!   V = log N(y | μ, σ_y²) − v/(2σ_y²).
//! * **Zero-inflated negative binomial (ZINB)** for counts: a NB(m, α) whose
//!   zero class is inflated with probability ψ = k_m/(k_m + m), the
//!   Michaelis–Menten saturation of the NB mean m = scale·softplus(f).
//!   The expectation has no closed form and is approximated with
//!   Gauss–Hermite quadrature.
//!
//! Every operation exists in two twins that must agree to float precision: a
//! tape version used in training and a plain-f64 version used at prediction
//! time.  NB terms use log-Gamma functions throughout, since factorials
//! overflow 64-bit floats beyond y = 170.

use statrs::function::gamma::ln_gamma;

use crate::diffmath::{dense, softplus_inverse, softplus_scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Gaussian observation noise with unconstrained storage of σ_y².
#[derive(Debug, Clone)]
pub struct GaussianLik {
    raw_noise: Tensor,
}

impl GaussianLik {
    pub fn new(noise_variance: f64) -> Result<GaussianLik> {
        if !(noise_variance > 0.0) {
            return Err(Error::Config(format!(
                "gaussian noise variance must be positive, got {noise_variance}"
            )));
        }
        Ok(GaussianLik {
            raw_noise: Tensor::vector(vec![softplus_inverse(noise_variance)]),
        })
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        vec![("likelihood.raw_noise".into(), self.raw_noise.clone())]
    }

    pub fn set_params(&mut self, values: &[Tensor]) {
        self.raw_noise = values[0].clone();
    }

    /// σ_y² as a graph scalar from the aligned leaf.
    pub fn noise_var(&self, leaves: &[Var]) -> Var {
        leaves[0].softplus()
    }

    /// Current σ_y² as a plain float.
    pub fn noise_value(&self) -> f64 {
        softplus_scalar(self.raw_noise.data()[0])
    }
}

/// Zero-inflated negative binomial observation model.  The dispersion α is
/// trainable; the Michaelis–Menten constant and the link scale are fixed at
/// construction.
#[derive(Debug, Clone)]
pub struct ZinbLik {
    raw_alpha: Tensor,
    /// Michaelis–Menten constant k_m ≥ 0; the zero-inflation probability is
    /// ψ = k_m/(k_m + m), so k_m = 0 disables inflation entirely.
    pub k_m: f64,
    /// Positive factor applied after the softplus link.
    pub scale: f64,
    /// Gauss–Hermite node count for the inner expectation.
    pub nodes: usize,
    /// Cached quadrature rule (abscissa, weight) for ∫e^{−x²}.
    quad: Vec<(f64, f64)>,
}

impl ZinbLik {
    pub fn new(alpha: f64, k_m: f64, scale: f64, nodes: usize) -> Result<ZinbLik> {
        if !(alpha > 0.0) {
            return Err(Error::Config(format!("ZINB dispersion must be positive, got {alpha}")));
        }
        if !(k_m >= 0.0) {
            return Err(Error::Config(format!(
                "Michaelis–Menten constant must be non-negative, got {k_m}"
            )));
        }
        if !(scale > 0.0) {
            return Err(Error::Config(format!("ZINB scale must be positive, got {scale}")));
        }
        if nodes < 2 {
            return Err(Error::Config(format!("need at least 2 quadrature nodes, got {nodes}")));
        }
        Ok(ZinbLik {
            raw_alpha: Tensor::vector(vec![softplus_inverse(alpha)]),
            k_m,
            scale,
            nodes,
            quad: hermite_rule(nodes),
        })
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        vec![("likelihood.raw_alpha".into(), self.raw_alpha.clone())]
    }

    pub fn set_params(&mut self, values: &[Tensor]) {
        self.raw_alpha = values[0].clone();
    }

    /// α as a graph scalar from the aligned leaf.
    pub fn alpha_var(&self, leaves: &[Var]) -> Var {
        leaves[0].softplus()
    }

    /// Current α as a plain float.
    pub fn alpha_value(&self) -> f64 {
        softplus_scalar(self.raw_alpha.data()[0])
    }
}

/// Observation model selector with unified parameter plumbing.
#[derive(Debug, Clone)]
pub enum Likelihood {
    Gaussian(GaussianLik),
    Zinb(ZinbLik),
}

impl Likelihood {
    pub fn params(&self) -> Vec<(String, Tensor)> {
        match self {
            Likelihood::Gaussian(g) => g.params(),
            Likelihood::Zinb(z) => z.params(),
        }
    }

    pub fn set_params(&mut self, values: &[Tensor]) {
        match self {
            Likelihood::Gaussian(g) => g.set_params(values),
            Likelihood::Zinb(z) => z.set_params(values),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Likelihood::Gaussian(_) => "gaussian",
            Likelihood::Zinb(_) => "zinb",
        }
    }

    /// Per-observation inner expectations V as a graph vector, given the
    /// marginal means/variances and this likelihood's parameter leaves.
    pub fn inner_expectation_rows(&self, y: &Tensor, mu: &Var, v: &Var, leaves: &[Var]) -> Var {
        match self {
            Likelihood::Gaussian(g) => {
                gaussian_inner_expectation_rows(y, mu, v, &g.noise_var(leaves))
            }
            Likelihood::Zinb(z) => zinb_inner_expectation_rows(y, mu, v, &z.alpha_var(leaves), z),
        }
    }

    /// Validate raw observations for this model (ZINB requires non-negative
    /// integer counts).
    pub fn validate_observation(&self, y: f64) -> Result<()> {
        match self {
            Likelihood::Gaussian(_) => {
                if y.is_finite() {
                    Ok(())
                } else {
                    Err(Error::argument("observation", format!("non-finite value {y}")))
                }
            }
            Likelihood::Zinb(_) => check_count(y),
        }
    }
}

fn check_count(y: f64) -> Result<()> {
    if !y.is_finite() || y < 0.0 || y.fract() != 0.0 {
        return Err(Error::argument(
            "zinb observation",
            format!("counts must be non-negative integers, got {y}"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Gaussian inner expectation

/// E_{N(f|μ,v)}[log N(y | f, σ_y²)] = log N(y | μ, σ_y²) − v/(2σ_y²).
pub fn gaussian_inner_expectation(y: f64, mu: f64, v: f64, noise_var: f64) -> f64 {
    assert!(v >= 0.0, "gaussian_inner_expectation: negative variance {v}");
    dense::gaussian_log_density(y, mu, noise_var) - v / (2.0 * noise_var)
}

/// Batched tape twin of [`gaussian_inner_expectation`]: `y` is data, `mu`
/// and `v` are per-observation vectors, `noise` the σ_y² scalar.
pub fn gaussian_inner_expectation_rows(y: &Tensor, mu: &Var, v: &Var, noise: &Var) -> Var {
    let tape = mu.tape();
    let yv = tape.leaf(y.clone());
    let resid = yv.sub(mu).square().add(v);
    let half_inv = noise.recip().scale(0.5);
    let log_norm = noise.ln().shift((2.0 * std::f64::consts::PI).ln());
    resid.mul(&half_inv).neg().sub(&log_norm.scale(0.5))
}

// ---------------------------------------------------------------------------
// ZINB pieces (plain f64)

/// m = scale · softplus(f), strictly positive with no underflow to zero in
/// 64-bit floats.
pub fn zinb_link(f: f64, scale: f64) -> f64 {
    scale * softplus_scalar(f)
}

/// log P(Y = y) under ZINB(m, α, k_m).
pub fn zinb_logpmf(y: f64, m: f64, lik: &ZinbLik) -> Result<f64> {
    check_count(y)?;
    assert!(m > 0.0, "zinb_logpmf: mean must be positive, got {m}");
    Ok(zinb_logpmf_unchecked(y, m, lik.alpha_value(), lik.k_m))
}

/// Core pmf with pre-validated inputs.  ψ = k_m/(k_m + m); r = 1/α;
/// log P(0) = log[ψ + (1−ψ)(1+αm)^{−1/α}],
/// log P(y>0) = log(1−ψ) + log NB(y | m, α).
pub fn zinb_logpmf_unchecked(y: f64, m: f64, alpha: f64, k_m: f64) -> f64 {
    let r = 1.0 / alpha;
    let log_one_minus_psi = m.ln() - (k_m + m).ln();
    let nb_zero = -r * (alpha * m).ln_1p();
    if y == 0.0 {
        if k_m == 0.0 {
            nb_zero
        } else {
            let psi = k_m / (k_m + m);
            (psi + (1.0 - psi) * nb_zero.exp()).ln()
        }
    } else {
        log_one_minus_psi + ln_gamma(y + r) - ln_gamma(r) - ln_gamma(y + 1.0)
            + r * (r.ln() - (r + m).ln())
            + y * (m.ln() - (r + m).ln())
    }
}

/// Mean and variance of ZINB(m, α, k_m):
/// E[Y] = (1−ψ)m, Var[Y] = m(1−ψ)[1 + m(α + ψ)].
pub fn zinb_moments(m: f64, lik: &ZinbLik) -> (f64, f64) {
    assert!(m > 0.0, "zinb_moments: mean must be positive, got {m}");
    let alpha = lik.alpha_value();
    let psi = if lik.k_m == 0.0 { 0.0 } else { lik.k_m / (lik.k_m + m) };
    let mean = (1.0 - psi) * m;
    let var = m * (1.0 - psi) * (1.0 + m * (alpha + psi));
    (mean, var)
}

/// Gauss–Hermite approximation of E_{N(f|μ,v)}[log ZINB(y | link(f))].
/// A degenerate Gaussian (v = 0) evaluates the integrand at μ exactly.
pub fn nongaussian_inner_expectation(y: f64, mu: f64, v: f64, lik: &ZinbLik) -> Result<f64> {
    check_count(y)?;
    assert!(v >= 0.0, "nongaussian_inner_expectation: negative variance {v}");
    let alpha = lik.alpha_value();
    if v == 0.0 {
        return Ok(zinb_logpmf_unchecked(y, zinb_link(mu, lik.scale), alpha, lik.k_m));
    }
    let width = (2.0 * v).sqrt();
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let mut acc = 0.0;
    for &(x, w) in &lik.quad {
        let f = mu + width * x;
        acc += w * zinb_logpmf_unchecked(y, zinb_link(f, lik.scale), alpha, lik.k_m);
    }
    Ok(acc * inv_sqrt_pi)
}

// ---------------------------------------------------------------------------
// ZINB inner expectation on the tape

/// Batched tape twin of [`nongaussian_inner_expectation`]: per-observation
/// quadrature with y as data and (μ, v, α) differentiable.  Requires v > 0
/// elementwise (training marginals are jittered away from zero).
pub fn zinb_inner_expectation_rows(y: &Tensor, mu: &Var, v: &Var, alpha: &Var, lik: &ZinbLik) -> Var {
    debug_assert!(
        v.value().iter().all(|&x| x > 0.0),
        "zinb_inner_expectation_rows: marginal variances must be positive"
    );
    debug_assert!(y.iter().all(|&obs| obs >= 0.0 && obs.fract() == 0.0));
    let tape = mu.tape();
    let n = y.len();
    let width = v.scale(2.0).sqrt();
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let mut acc = tape.leaf(Tensor::zeros(&[n]));
    for &(x, w) in &lik.quad {
        let f = mu.add(&width.scale(x));
        let logpmf = zinb_logpmf_rows(y, &f, alpha, lik);
        acc = acc.add(&logpmf.scale(w * inv_sqrt_pi));
    }
    acc
}

/// log ZINB(y | link(f)) per element, with constant masks selecting the
/// zero/positive branches.  Both branches are finite everywhere, so the
/// masked-out side contributes neither value nor gradient.
fn zinb_logpmf_rows(y: &Tensor, f: &Var, alpha: &Var, lik: &ZinbLik) -> Var {
    let tape = f.tape();
    let n = y.len();
    let m = f.softplus().scale(lik.scale);
    let r = alpha.recip();
    let log_m = m.ln();
    let log_r_plus_m = r.add(&m).ln();
    // log NB(y | m, α) pieces shared by both branches.
    let yv = tape.leaf(y.clone());
    let lg_y_plus_r = yv.add(&r).ln_gamma();
    let lg_r = r.ln_gamma();
    let lg_y_fact = tape.leaf(Tensor::vector(
        y.iter().map(|&yi| ln_gamma(yi + 1.0)).collect(),
    ));
    let log_nb_mean_part = r.mul(&r.ln().sub(&log_r_plus_m));
    let log_nb = lg_y_plus_r
        .sub(&lg_r)
        .sub(&lg_y_fact)
        .add(&log_nb_mean_part)
        .add(&yv.mul(&log_m.sub(&log_r_plus_m)));
    // Zero branch: log[ψ + (1−ψ)(1+αm)^{−1/α}].
    let nb_zero = alpha.mul(&m).ln_1p().mul(&r).neg();
    let zero_branch = if lik.k_m == 0.0 {
        nb_zero
    } else {
        let km = lik.k_m;
        let km_plus_m = m.shift(km);
        let psi = km_plus_m.recip().scale(km);
        let one_minus_psi = m.div(&km_plus_m);
        psi.add(&one_minus_psi.mul(&nb_zero.exp())).ln()
    };
    // Positive branch: log(1−ψ) + log NB.
    let log_one_minus_psi = if lik.k_m == 0.0 {
        tape.leaf(Tensor::zeros(&[n]))
    } else {
        log_m.sub(&m.shift(lik.k_m).ln())
    };
    let pos_branch = log_one_minus_psi.add(&log_nb);
    let zero_mask = tape.leaf(Tensor::vector(
        y.iter().map(|&yi| if yi == 0.0 { 1.0 } else { 0.0 }).collect(),
    ));
    let pos_mask = tape.leaf(Tensor::vector(
        y.iter().map(|&yi| if yi == 0.0 { 0.0 } else { 1.0 }).collect(),
    ));
    zero_mask.mul(&zero_branch).add(&pos_mask.mul(&pos_branch))
}

// ---------------------------------------------------------------------------
// Gauss–Hermite rule

/// Nodes and weights of the n-point Gauss–Hermite rule for ∫ e^{−x²} g(x) dx
/// (physicists' convention; the weights sum to √π).  Roots are found by
/// Newton iteration on the orthonormal Hermite recurrence.
pub fn hermite_rule(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 2, "hermite_rule: need at least 2 nodes");
    let mut rule = vec![(0.0, 0.0); n];
    let mut z = 0.0f64;
    let half = n.div_ceil(2);
    for i in 0..half {
        // Initial guesses, largest root first (classical asymptotics).
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * rule[0].0,
            3 => 1.91 * z - 0.91 * rule[1].0,
            _ => 2.0 * z - rule[i - 2].0,
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // Orthonormal recurrence: p1 = H̃_n(z), p2 = H̃_{n−1}(z).
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - (((j - 1) as f64) / j as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / (pp * pp);
        rule[i] = (z, w);
        rule[n - 1 - i] = (-z, w);
    }
    if n % 2 == 1 {
        // The middle node of an odd rule is exactly zero.
        rule[half - 1].0 = 0.0;
        rule[n - half].0 = 0.0;
    }
    rule
}
