//! The assembled model: kernel hyperparameters, embedder, per-output
//! latent coordinates, likelihood, inducing state, and bound options, with
//! one flat parameter registry shared by the optimizer, the gradient
//! checker, and the checkpoint format.
//!
//! Parameters are keyed by dotted names (`kernel.raw_lengthscales`,
//! `embedder.w1`, `latent.means`, `likelihood.raw_noise`, `inducing.z`, …)
//! in a fixed order, so a leaf list handed to the loss assembler can be
//! sliced positionally by component.

use std::ops::Range;

use crate::diffmath::Tensor;
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::kernel::KernelHyperparams;
use crate::latent::LatentState;
use crate::likelihood::Likelihood;
use crate::svgp::{BoundKind, BoundOptions, InducingState};
use rand::Rng;

/// Every trainable state of the model, in one place.
#[derive(Clone)]
pub struct Model {
    pub kernel: KernelHyperparams,
    pub embedder: Embedder,
    /// Per-output latent coordinates; `None` runs the degenerate
    /// single-space mode in which rows are embedded from x alone.
    pub latents: Option<LatentState>,
    pub likelihood: Likelihood,
    pub inducing: InducingState,
    pub bound: BoundOptions,
}

/// Positions of each component's parameters within the flat registry.
#[derive(Clone, Debug)]
pub struct ModelLayout {
    pub kernel: Range<usize>,
    pub embedder: Range<usize>,
    pub latent: Range<usize>,
    pub likelihood: Range<usize>,
    pub inducing: Range<usize>,
    pub bound: Range<usize>,
}

impl Model {
    /// Whether the spherical-variance multiplier is an active parameter
    /// (tighter bound under a count likelihood).
    fn spherical_v_active(&self) -> bool {
        self.bound.kind == BoundKind::Tighter
            && !matches!(self.likelihood, Likelihood::Gaussian(_))
    }

    /// The flat (name, value) parameter registry, in layout order.
    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            (
                "kernel.raw_lengthscales".to_string(),
                self.kernel.raw_lengthscales.clone(),
            ),
            (
                "kernel.raw_outputscale".to_string(),
                self.kernel.raw_outputscale.clone(),
            ),
        ];
        out.extend(self.embedder.params());
        if let Some(l) = &self.latents {
            out.extend(l.params());
        }
        out.extend(self.likelihood.params());
        out.extend(self.inducing.params());
        if self.spherical_v_active() {
            out.extend(self.bound.params());
        }
        out
    }

    /// Ranges of each component inside the [`params`](Model::params) list.
    pub fn layout(&self) -> ModelLayout {
        let k = 2;
        let e = self.embedder.params().len();
        let l = self.latents.as_ref().map_or(0, |s| s.params().len());
        let lik = self.likelihood.params().len();
        let ind = self.inducing.params().len();
        let b = if self.spherical_v_active() { 1 } else { 0 };
        let mut at = 0;
        let mut next = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        ModelLayout {
            kernel: next(k),
            embedder: next(e),
            latent: next(l),
            likelihood: next(lik),
            inducing: next(ind),
            bound: next(b),
        }
    }

    /// Overwrite every parameter from a flat value list in layout order.
    pub fn set_params(&mut self, values: &[Tensor]) {
        let lay = self.layout();
        self.kernel.raw_lengthscales = values[lay.kernel.start].clone();
        self.kernel.raw_outputscale = values[lay.kernel.start + 1].clone();
        self.embedder.set_params(&values[lay.embedder]);
        if let Some(l) = &mut self.latents {
            l.set_params(&values[lay.latent]);
        }
        self.likelihood.set_params(&values[lay.likelihood]);
        self.inducing.set_params(&values[lay.inducing]);
        if self.spherical_v_active() {
            self.bound.set_params(&values[lay.bound]);
        }
    }

    /// Basic cross-component consistency checks.
    pub fn validate(&self) -> Result<()> {
        self.embedder.config.validate()?;
        let d_t = self.embedder.config.d_t;
        if self.kernel.embed_dim() != d_t {
            return Err(Error::argument(
                "model",
                format!(
                    "kernel has {} lengthscales but the embedder produces {d_t} coordinates",
                    self.kernel.embed_dim()
                ),
            ));
        }
        if self.inducing.embed_dim() != d_t {
            return Err(Error::argument(
                "model",
                format!(
                    "inducing locations live in {} dimensions but the embedder produces {d_t}",
                    self.inducing.embed_dim()
                ),
            ));
        }
        if let Some(l) = &self.latents {
            if l.config.d_h != self.embedder.config.d_h {
                return Err(Error::argument(
                    "model",
                    "latent dimension disagrees between the latent state and the embedder",
                ));
            }
        } else if self.embedder.config.d_h != 0 {
            return Err(Error::argument(
                "model",
                "embedder expects latent coordinates but the model has none",
            ));
        }
        Ok(())
    }
}

/// Initial inducing locations: embed a random subset of training inputs,
/// each paired with the prior mean of a random output's latent coordinate,
/// then perturb with Gaussian noise of standard deviation 0.05 so
/// coincident picks cannot produce a singular K_ZZ.
pub fn initial_inducing_locations(
    embedder: &Embedder,
    latents: Option<&LatentState>,
    x: &Tensor,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if count == 0 {
        return Err(Error::argument("inducing_init", "need at least one inducing point"));
    }
    if x.rows() == 0 {
        return Err(Error::argument("inducing_init", "no training inputs to draw from"));
    }
    let frozen = embedder.freeze();
    let d_t = embedder.config.d_t;
    // A subset without replacement while the data lasts — coincident
    // anchors would start K_ZZ near singular — then with replacement.
    let picks: Vec<usize> = if count <= x.rows() {
        rand::seq::index::sample(rng, x.rows(), count).into_vec()
    } else {
        (0..count).map(|_| rng.gen_range(0..x.rows())).collect()
    };
    let mut rows = Vec::with_capacity(count * d_t);
    for n in picks {
        let h = match latents {
            Some(l) => {
                let p = rng.gen_range(0..l.config.outputs);
                l.prior_means().row(p).to_vec()
            }
            None => Vec::new(),
        };
        let e = frozen.embed_one(x.row(n), &h);
        for v in e {
            rows.push(v + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal));
        }
    }
    Ok(Tensor::matrix(count, d_t, rows))
}
