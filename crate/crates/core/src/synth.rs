//! Synthetic dataset generation from the model's own generative story.
//!
//! Latent output vectors are drawn from N(0, I).  The function values on
//! the full input × output grid come from the separable prior
//! Cov(f(x, p), f(x′, p′)) = k_X(x, x′) · k_H(h_p, h_{p′}): with
//! K_X = L_X L_Xᵀ and K_H = L_H L_Hᵀ, the matrix F = L_X · E · L_Hᵀ for
//! E ~ N(0, I)^{N×P} has exactly that Kronecker-structured covariance,
//! since Cov(F_{ij}, F_{kl}) = (K_X)_{ik} (K_H)_{jl}.  The chosen
//! observation model (Gaussian noise or zero-inflated negative binomial)
//! is then applied element-wise.
//!
//! Generation is dense in N·P, so grids beyond 10⁴ cells are rejected.
//! The generating parameters, latents, and noiseless function values are
//! returned alongside the dataset and can be serialized to JSON.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::diffmath::{dense, Tensor};
use crate::error::{Error, Result};
use crate::likelihood::zinb_link;
use crate::rng::{purpose, standard_normal_vec, stream};

/// Largest N·P grid the dense joint sampler accepts.
pub const MAX_GRID_CELLS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SynthLikelihood {
    /// y = f + ε with ε ~ N(0, noise); noise 0 reproduces f exactly.
    Gaussian { noise: f64 },
    /// Counts from ZINB(link(f), α, k_m) with link(f) = scale·softplus(f).
    Zinb { alpha: f64, k_m: f64, scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Number of input locations N.
    pub inputs: usize,
    /// Number of outputs P.
    pub outputs: usize,
    /// Input dimension D_X.
    pub input_dim: usize,
    /// Latent output dimension D_H.
    pub latent_dim: usize,
    /// ARD lengthscales of k_X (length `input_dim`).
    pub input_lengthscales: Vec<f64>,
    /// ARD lengthscales of k_H (length `latent_dim`).
    pub latent_lengthscales: Vec<f64>,
    /// Signal variance of the separable kernel (carried by k_X).
    pub outputscale: f64,
    /// Inputs are uniform on [input_low, input_high]^{D_X}.
    pub input_low: f64,
    pub input_high: f64,
    pub likelihood: SynthLikelihood,
    /// Publish the true latents as per-output prior means in the dataset.
    pub latent_priors: bool,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::argument("generate_synthetic", reason));
        if self.inputs == 0 || self.outputs == 0 {
            return fail("need at least one input and one output".into());
        }
        if self.inputs * self.outputs > MAX_GRID_CELLS {
            return fail(format!(
                "grid of {} inputs x {} outputs exceeds the dense sampling limit of {MAX_GRID_CELLS} cells",
                self.inputs, self.outputs
            ));
        }
        if self.input_dim == 0 || self.latent_dim == 0 {
            return fail("input and latent dimensions must be positive".into());
        }
        if self.input_lengthscales.len() != self.input_dim {
            return fail(format!(
                "expected {} input lengthscales, got {}",
                self.input_dim,
                self.input_lengthscales.len()
            ));
        }
        if self.latent_lengthscales.len() != self.latent_dim {
            return fail(format!(
                "expected {} latent lengthscales, got {}",
                self.latent_dim,
                self.latent_lengthscales.len()
            ));
        }
        for ls in self.input_lengthscales.iter().chain(&self.latent_lengthscales) {
            if !(ls.is_finite() && *ls > 0.0) {
                return fail(format!("lengthscales must be positive and finite, got {ls}"));
            }
        }
        if !(self.outputscale.is_finite() && self.outputscale > 0.0) {
            return fail(format!("outputscale must be positive, got {}", self.outputscale));
        }
        if !(self.input_low.is_finite()
            && self.input_high.is_finite()
            && self.input_low < self.input_high)
        {
            return fail(format!(
                "input box [{}, {}] must be a finite non-empty interval",
                self.input_low, self.input_high
            ));
        }
        match &self.likelihood {
            SynthLikelihood::Gaussian { noise } => {
                if !(noise.is_finite() && *noise >= 0.0) {
                    return fail(format!("gaussian noise variance must be >= 0, got {noise}"));
                }
            }
            SynthLikelihood::Zinb { alpha, k_m, scale } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return fail(format!("zinb dispersion must be positive, got {alpha}"));
                }
                if !(k_m.is_finite() && *k_m >= 0.0) {
                    return fail(format!("zinb saturation constant must be >= 0, got {k_m}"));
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return fail(format!("zinb link scale must be positive, got {scale}"));
                }
            }
        }
        Ok(())
    }
}

/// The generating parameters and noiseless function values behind a
/// synthetic dataset.  All floats survive a JSON round trip bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub seed: u64,
    /// True latent vectors, one row per output (P × D_H).
    pub latents: Vec<Vec<f64>>,
    /// Noiseless function values, one row per input (N × P).
    pub f: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::argument("ground_truth", format!("invalid JSON: {e}")))
    }
}

/// Uniform inputs on the spec's box, one row per location (N × D_X).
pub fn draw_inputs(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Tensor {
    let width = spec.input_high - spec.input_low;
    let data = (0..spec.inputs * spec.input_dim)
        .map(|_| spec.input_low + width * rng.gen::<f64>())
        .collect();
    Tensor::matrix(spec.inputs, spec.input_dim, data)
}

/// Standard-normal latent vectors, one row per output (P × D_H).
pub fn draw_latents(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(
        spec.outputs,
        spec.latent_dim,
        standard_normal_vec(rng, spec.outputs * spec.latent_dim),
    )
}

/// One draw of the full N × P function matrix from the separable prior,
/// for the given inputs and latents.
pub fn sample_function(
    x: &Tensor,
    latents: &Tensor,
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let n = spec.inputs;
    let p = spec.outputs;
    assert_eq!(x.shape(), &[n, spec.input_dim], "sample_function: input shape");
    assert_eq!(latents.shape(), &[p, spec.latent_dim], "sample_function: latent shape");
    let k_x = dense::rbf_gram(
        n,
        n,
        spec.input_dim,
        x.data(),
        x.data(),
        &spec.input_lengthscales,
        spec.outputscale,
    );
    let (l_x, _) = dense::cholesky_escalating(n, &k_x, 0.0, "synthetic input gram")?;
    let k_h = dense::rbf_gram(
        p,
        p,
        spec.latent_dim,
        latents.data(),
        latents.data(),
        &spec.latent_lengthscales,
        1.0,
    );
    let (l_h, _) = dense::cholesky_escalating(p, &k_h, 0.0, "synthetic latent gram")?;
    let e = standard_normal_vec(rng, n * p);
    let le = dense::mat_mul(n, n, p, &l_x, &e);
    let f = dense::mat_mul_nt(n, p, p, &le, &l_h);
    Ok(Tensor::matrix(n, p, f))
}

/// One draw from ZINB(m, α, k_m): with probability ψ = k_m/(k_m + m) the
/// structural zero fires; otherwise the negative binomial is sampled as a
/// Gamma(1/α, αm)–Poisson mixture.
pub fn sample_zinb(m: f64, alpha: f64, k_m: f64, rng: &mut ChaCha8Rng) -> f64 {
    assert!(m > 0.0 && alpha > 0.0 && k_m >= 0.0, "sample_zinb: bad parameters");
    if k_m > 0.0 {
        let psi = k_m / (k_m + m);
        if rng.gen::<f64>() < psi {
            return 0.0;
        }
    }
    let r = 1.0 / alpha;
    let gamma = Gamma::new(r, m / r).expect("positive gamma parameters");
    let lambda: f64 = gamma.sample(rng);
    if !(lambda.is_finite() && lambda > 0.0) {
        return 0.0;
    }
    let poisson = Poisson::new(lambda).expect("positive poisson rate");
    poisson.sample(rng)
}

/// Apply the observation model element-wise over the full grid, in
/// input-major order.
pub fn apply_likelihood(
    f: &Tensor,
    likelihood: &SynthLikelihood,
    rng: &mut ChaCha8Rng,
) -> Vec<Observation> {
    let (n, p) = (f.shape()[0], f.shape()[1]);
    let mut observations = Vec::with_capacity(n * p);
    for i in 0..n {
        for j in 0..p {
            let fv = f.at(i, j);
            let y = match likelihood {
                SynthLikelihood::Gaussian { noise } => {
                    if *noise == 0.0 {
                        fv
                    } else {
                        let eps: f64 = standard_normal_vec(rng, 1)[0];
                        fv + noise.sqrt() * eps
                    }
                }
                SynthLikelihood::Zinb { alpha, k_m, scale } => {
                    sample_zinb(zinb_link(fv, *scale), *alpha, *k_m, rng)
                }
            };
            observations.push(Observation { input: i, output: j, y });
        }
    }
    observations
}

/// Generate a fully observed synthetic dataset plus its ground truth.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = stream(seed, &[purpose::SYNTH]);
    let x = draw_inputs(spec, &mut rng);
    let latents = draw_latents(spec, &mut rng);
    let f = sample_function(&x, &latents, spec, &mut rng)?;
    let observations = apply_likelihood(&f, &spec.likelihood, &mut rng);
    let dataset = Dataset {
        input_ids: (0..spec.inputs).map(|i| format!("x{i}")).collect(),
        inputs: x,
        output_ids: (0..spec.outputs).map(|j| format!("p{j}")).collect(),
        output_priors: spec.latent_priors.then(|| latents.clone()),
        observations,
    };
    dataset.validate()?;
    let truth = GroundTruth {
        spec: spec.clone(),
        seed,
        latents: (0..spec.outputs).map(|j| latents.row(j).to_vec()).collect(),
        f: (0..spec.inputs).map(|i| f.row(i).to_vec()).collect(),
    };
    Ok((dataset, truth))
}
