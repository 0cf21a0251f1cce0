//! Per-output latent variables h_p ∈ R^{D_H}.
//!
//! Each output p carries a Gaussian prior p(h_p) = N(μ0_p, s0²·I) — zero
//! mean by default, or informed means such as sensor coordinates — and a
//! Gaussian variational posterior q(h_p) = N(m_p, Σ_p).  Sampling uses the
//! reparametrization h_p = m_p + Σ_p^{1/2} ε with ε injected by the caller,
//! so draws are differentiable in the variational parameters and fully
//! deterministic given the noise source.  The evidence bound penalizes each
//! posterior with the closed-form Gaussian KL[q(h_p) ‖ p(h_p)]; because the
//! posterior factorizes over outputs, the joint KL is the sum of the
//! per-output terms.
//!
//! Σ_p is diagonal by default (parameter count linear in P); a dense
//! lower-triangular factor is available behind a flag.

use rand::Rng;

use crate::diffmath::{vstack, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::standard_normal_vec;

/// Shape and prior information for the latent block.
#[derive(Debug, Clone)]
pub struct LatentConfig {
    /// Number of outputs P.
    pub outputs: usize,
    /// Latent dimension D_H.
    pub d_h: usize,
    /// Dense lower-triangular covariance factors instead of diagonal ones.
    pub dense_factor: bool,
    /// Prior scale s0: the prior covariance is s0²·I.
    pub prior_scale: f64,
}

/// Trainable variational parameters plus the fixed prior means.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub config: LatentConfig,
    /// Variational means, P × D_H.
    means: Tensor,
    /// Diagonal parametrization: log standard deviations, P × D_H.
    log_stds: Option<Tensor>,
    /// Dense parametrization: unconstrained factor diagonals (softplus
    /// applied on use), P × D_H.
    factor_diag_raw: Option<Tensor>,
    /// Dense parametrization: packed strictly-lower factor entries,
    /// P × D_H(D_H−1)/2.
    factor_below: Option<Tensor>,
    /// Prior means μ0_p, P × D_H; zero unless informed.
    prior_means: Tensor,
}

/// Initial marginal standard deviation of each q(h_p) coordinate.
const INIT_STD: f64 = 0.1;
/// Standard deviation of the noise added to prior means at initialization.
const INIT_MEAN_NOISE: f64 = 0.01;

impl LatentState {
    /// Initialize posteriors around the prior: means = μ0_p + noise
    /// (std 0.01), covariance 0.01·I.
    pub fn new(config: LatentConfig, rng: &mut impl Rng) -> Result<LatentState> {
        if config.outputs == 0 || config.d_h == 0 {
            return Err(Error::Config(format!(
                "latent block needs outputs ≥ 1 and D_H ≥ 1, got P = {}, D_H = {}",
                config.outputs, config.d_h
            )));
        }
        if !(config.prior_scale > 0.0) {
            return Err(Error::Config(format!(
                "latent prior scale must be positive, got {}",
                config.prior_scale
            )));
        }
        let (p, d) = (config.outputs, config.d_h);
        let prior_means = Tensor::zeros(&[p, d]);
        let means = Tensor::matrix(
            p,
            d,
            standard_normal_vec(rng, p * d)
                .into_iter()
                .map(|v| v * INIT_MEAN_NOISE)
                .collect(),
        );
        let (log_stds, factor_diag_raw, factor_below) = if config.dense_factor {
            let raw = crate::diffmath::softplus_inverse(INIT_STD);
            (
                None,
                Some(Tensor::full(&[p, d], raw)),
                Some(Tensor::zeros(&[p, d * (d - 1) / 2])),
            )
        } else {
            (Some(Tensor::full(&[p, d], INIT_STD.ln())), None, None)
        };
        Ok(LatentState {
            config,
            means,
            log_stds,
            factor_diag_raw,
            factor_below,
            prior_means,
        })
    }

    /// Install informed prior means (one row per output) and recenter the
    /// variational means on them, keeping the initialization noise.
    pub fn set_prior_means(&mut self, prior: Tensor) -> Result<()> {
        let (p, d) = (self.config.outputs, self.config.d_h);
        if prior.shape() != [p, d] {
            return Err(Error::argument(
                "set_prior_means",
                format!("expected a {p}×{d} matrix, got shape {:?}", prior.shape()),
            ));
        }
        let recentered: Vec<f64> = self
            .means
            .data()
            .iter()
            .zip(prior.data())
            .map(|(m, mu)| m + mu)
            .collect();
        self.means = Tensor::matrix(p, d, recentered);
        self.prior_means = prior;
        Ok(())
    }

    pub fn prior_means(&self) -> &Tensor {
        &self.prior_means
    }

    /// Named trainable tensors, in a stable order.
    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("latent.means".to_string(), self.means.clone())];
        if let Some(ls) = &self.log_stds {
            out.push(("latent.log_stds".into(), ls.clone()));
        }
        if let Some(dr) = &self.factor_diag_raw {
            out.push(("latent.factor_diag_raw".into(), dr.clone()));
        }
        if let Some(fb) = &self.factor_below {
            out.push(("latent.factor_below".into(), fb.clone()));
        }
        out
    }

    /// Replace the trainable tensors; `values` must align with [`params`].
    pub fn set_params(&mut self, values: &[Tensor]) {
        let mut it = values.iter();
        self.means = it.next().expect("missing latent means").clone();
        if self.log_stds.is_some() {
            self.log_stds = Some(it.next().expect("missing latent log-stds").clone());
        }
        if self.factor_diag_raw.is_some() {
            self.factor_diag_raw = Some(it.next().expect("missing factor diagonal").clone());
            self.factor_below = Some(it.next().expect("missing factor lower entries").clone());
        }
    }

    /// Pair tape leaves (aligned with [`params`]) into a graph-side view.
    pub fn vars(&self, leaves: &[Var]) -> LatentVars {
        if self.config.dense_factor {
            LatentVars::Dense {
                means: leaves[0].clone(),
                diag_raw: leaves[1].clone(),
                below: leaves[2].clone(),
            }
        } else {
            LatentVars::Diag {
                means: leaves[0].clone(),
                log_stds: leaves[1].clone(),
            }
        }
    }

    /// The covariance factor Σ_p^{1/2} of one output as a dense D_H × D_H
    /// lower-triangular matrix (no tape).
    pub fn factor_dense(&self, p: usize) -> Result<Vec<f64>> {
        self.check_index("factor_dense", p)?;
        let d = self.config.d_h;
        let mut l = vec![0.0; d * d];
        if let Some(ls) = &self.log_stds {
            for j in 0..d {
                l[j * d + j] = ls.at(p, j).exp();
            }
        } else {
            let dr = self.factor_diag_raw.as_ref().unwrap();
            let fb = self.factor_below.as_ref().unwrap();
            for j in 0..d {
                l[j * d + j] = crate::diffmath::softplus_scalar(dr.at(p, j));
            }
            let mut k = 0;
            for i in 1..d {
                for j in 0..i {
                    l[i * d + j] = fb.at(p, k);
                    k += 1;
                }
            }
        }
        Ok(l)
    }

    /// Draw h_p = m_p + Σ_p^{1/2} ε without a tape (prediction path).
    pub fn sample_dense(&self, p: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_index("sample_latent", p)?;
        let d = self.config.d_h;
        assert_eq!(eps.len(), d, "sample_latent: noise has wrong length");
        let l = self.factor_dense(p)?;
        let mut h = self.means.row(p).to_vec();
        for i in 0..d {
            for j in 0..=i {
                h[i] += l[i * d + j] * eps[j];
            }
        }
        Ok(h)
    }

    /// Variational mean of one output (no tape).
    pub fn mean_of(&self, p: usize) -> Result<Vec<f64>> {
        self.check_index("latent_mean", p)?;
        Ok(self.means.row(p).to_vec())
    }

    fn check_index(&self, op: &str, p: usize) -> Result<()> {
        if p >= self.config.outputs {
            return Err(Error::argument(
                op,
                format!("output index {p} out of range for {} outputs", self.config.outputs),
            ));
        }
        Ok(())
    }
}

/// Graph-side view of the latent parameters.
#[derive(Clone)]
pub enum LatentVars {
    Diag { means: Var, log_stds: Var },
    Dense { means: Var, diag_raw: Var, below: Var },
}

impl LatentVars {
    /// Reparametrized samples for the listed outputs: row r of the result is
    /// h_{outputs[r]} = m + Σ^{1/2} ε_r, with `eps` a |outputs| × D_H
    /// constant of standard-normal draws.
    pub fn sample_rows(&self, outputs: &[usize], eps: &Var) -> Var {
        match self {
            LatentVars::Diag { means, log_stds } => {
                let m = means.gather_rows(outputs);
                let s = log_stds.gather_rows(outputs).exp();
                m.add(&s.mul(eps))
            }
            LatentVars::Dense { means, diag_raw, below } => {
                let d = means.value().cols();
                let rows: Vec<Var> = outputs
                    .iter()
                    .enumerate()
                    .map(|(r, &p)| {
                        let l = self.factor_graph(p, d, diag_raw, below);
                        let e = eps.gather_rows(&[r]).transpose(); // [d, 1]
                        let le = l.matmul(&e); // [d, 1]
                        let m = means.gather_rows(&[p]);
                        m.add(&le.transpose())
                    })
                    .collect();
                vstack(&rows)
            }
        }
    }

    /// Lower-triangular factor of one output's covariance, on the tape.
    fn factor_graph(&self, p: usize, d: usize, diag_raw: &Var, below: &Var) -> Var {
        let diag = diag_raw.gather_rows(&[p]).reshape(&[d]).softplus().diag_embed();
        let low = below
            .gather_rows(&[p])
            .reshape(&[d * (d - 1) / 2])
            .scatter_strict_lower(d);
        diag.add(&low)
    }

    /// Σ over the listed outputs of KL[q(h_p) ‖ N(μ0_p, s0²·I)], a
    /// non-negative scalar.
    pub fn kl_sum(&self, outputs: &[usize], state: &LatentState) -> Var {
        let s0 = state.config.prior_scale;
        let d = state.config.d_h;
        match self {
            LatentVars::Diag { means, log_stds } => {
                let tape = means.tape();
                let mut sel = Vec::with_capacity(outputs.len() * d);
                for &p in outputs {
                    sel.extend_from_slice(state.prior_means.row(p));
                }
                let mu0 = tape.leaf(Tensor::matrix(outputs.len(), d, sel));
                let m = means.gather_rows(outputs);
                let ls = log_stds.gather_rows(outputs);
                let var = ls.scale(2.0).exp();
                let diff = m.sub(&mu0);
                // ½ Σ [ (σ² + Δ²)/s0² − 1 − ln σ² + ln s0² ]
                let count = (outputs.len() * d) as f64;
                var.add(&diff.square())
                    .scale(1.0 / (s0 * s0))
                    .sum()
                    .add(&ls.scale(2.0).sum().neg())
                    .shift(count * (2.0 * s0.ln() - 1.0))
                    .scale(0.5)
            }
            LatentVars::Dense { means, diag_raw, below } => {
                let tape = means.tape();
                let mut total = tape.scalar(0.0);
                for &p in outputs {
                    let l = self.factor_graph(p, d, diag_raw, below);
                    let mu0 = tape.leaf(Tensor::matrix(1, d, state.prior_means.row(p).to_vec()));
                    let m = means.gather_rows(&[p]);
                    let diff = m.sub(&mu0);
                    let trace = l.sumsq();
                    let logdet = l.diag_part().ln().sum().scale(2.0);
                    let kl = trace
                        .add(&diff.sumsq())
                        .scale(1.0 / (s0 * s0))
                        .add(&logdet.neg())
                        .shift(d as f64 * (2.0 * s0.ln() - 1.0))
                        .scale(0.5);
                    total = total.add(&kl);
                }
                total
            }
        }
    }

    /// One reparametrized sample h_p (as a 1 × D_H row) for a single output.
    pub fn sample_one(&self, p: usize, eps: &Var, state: &LatentState) -> Result<Var> {
        state.check_index("sample_latent", p)?;
        let d = eps.value().len();
        Ok(self.sample_rows(&[p], &eps.reshape(&[1, d])))
    }

    /// KL[q(h_p) ‖ p(h_p)] for a single output.
    pub fn kl_one(&self, p: usize, state: &LatentState) -> Result<Var> {
        state.check_index("kl_latent", p)?;
        Ok(self.kl_sum(&[p], state))
    }
}
