//! Inducing-point machinery in the embedding space and the evidence lower
//! bound that ties the model together.
//!
//! A set of M inducing locations Z lives in the same D_T-dimensional space
//! that the embedder maps into, with a free-form Gaussian q(u) = N(m, S)
//! over the function values at Z.  Marginalizing u gives each embedded
//! point x̃ a Gaussian marginal
//!
//!   μ(x̃)  = k_x̃ᵀ K_ZZ⁻¹ m
//!   σ²(x̃) = k_x̃x̃ − k_x̃ᵀ K_ZZ⁻¹ k_x̃ + k_x̃ᵀ K_ZZ⁻¹ S K_ZZ⁻¹ k_x̃
//!
//! whose first two terms form the Nyström residual d(x̃) ≥ 0.  The
//! mini-batch objective sums expected log-likelihoods over a batch of
//! (input, output) pairs — embedding each pair with a reparametrized sample
//! of its output's latent coordinate — and rescales so the estimator is
//! consistent with the full-data objective:
//!
//!   L̃ = s · Σ_batch E_q[log p(y | f)] − KL[q(u)‖p(u)]
//!       − (P/P_b) · Σ_{p ∈ output batch} KL[q(h_p)‖p(h_p)]
//!
//! with s = |Ω| / (N_b·P_b) for |Ω| observed pairs, N_b sampled inputs and
//! P_b sampled outputs.  Two optional tightenings are supported.  With a
//! Gaussian likelihood the objective adds the non-negative correction
//!
//!   Δ = ½ Σ [ d/σ_y² − ln(1 + d/σ_y²) ]
//!
//! over the batch (with the same scale s), recovering the stronger of the
//! two classic collapsed bounds.  With a count likelihood the marginal
//! variance d + kᵀK⁻¹SK⁻¹k is replaced by v·d + kᵀK⁻¹SK⁻¹k for a
//! trainable v > 0, at the price of the deterministic penalty
//! (|Ω|/2)(1 + ln v − v) ≤ 0; v = 1 recovers the standard bound exactly.

use crate::diffmath::{
    dense, softplus_inverse, softplus_scalar, Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::kernel::{self, KernelHyperparams, KernelVars};
use crate::likelihood::Likelihood;
use crate::model::Model;
use crate::rng::standard_normal_vec;
use rand::Rng;

/// Inducing locations Z with the free-form variational distribution
/// q(u) = N(m, S).  S is stored through its lower Cholesky factor, packed
/// as a softplus-mapped diagonal plus a strictly-lower vector so that every
/// stored entry is live under differentiation and S stays positive
/// definite by construction.
#[derive(Clone)]
pub struct InducingState {
    z: Tensor,
    m: Tensor,
    s_diag_raw: Tensor,
    s_below: Tensor,
}

impl InducingState {
    /// Start q(u) at N(0, I) around the given locations (M × D_T).
    pub fn new(z: Tensor) -> Result<InducingState> {
        if z.rows() == 0 || z.cols() == 0 {
            return Err(Error::argument(
                "inducing",
                "need at least one inducing point with a positive embedding dimension",
            ));
        }
        let m = z.rows();
        Ok(InducingState {
            z,
            m: Tensor::vector(vec![0.0; m]),
            s_diag_raw: Tensor::vector(vec![softplus_inverse(1.0); m]),
            s_below: Tensor::vector(vec![0.0; m * (m - 1) / 2]),
        })
    }

    pub fn count(&self) -> usize {
        self.z.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.z.cols()
    }

    pub fn locations(&self) -> &Tensor {
        &self.z
    }

    pub fn mean(&self) -> &Tensor {
        &self.m
    }

    /// Overwrite q(u) with an explicit mean and dense lower-triangular
    /// covariance factor (diagonal strictly positive).
    pub fn set_variational(&mut self, mean: Vec<f64>, factor: &Tensor) -> Result<()> {
        let m = self.count();
        if mean.len() != m || factor.rows() != m || factor.cols() != m {
            return Err(Error::argument(
                "inducing",
                "variational mean or factor dimensions do not match the inducing count",
            ));
        }
        let mut diag = Vec::with_capacity(m);
        for i in 0..m {
            let d = factor.at(i, i);
            if d <= 0.0 {
                return Err(Error::argument(
                    "inducing",
                    "covariance factor needs a strictly positive diagonal",
                ));
            }
            diag.push(softplus_inverse(d));
        }
        let mut below = Vec::with_capacity(m * (m - 1) / 2);
        for i in 1..m {
            for j in 0..i {
                below.push(factor.at(i, j));
            }
        }
        self.m = Tensor::vector(mean);
        self.s_diag_raw = Tensor::vector(diag);
        self.s_below = Tensor::vector(below);
        Ok(())
    }

    /// The dense M × M lower-triangular factor of S (no tape).
    pub fn s_factor_dense(&self) -> Tensor {
        let m = self.count();
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            out[i * m + i] = softplus_scalar(self.s_diag_raw.data()[i]);
        }
        let mut k = 0;
        for i in 1..m {
            for j in 0..i {
                out[i * m + j] = self.s_below.data()[k];
                k += 1;
            }
        }
        Tensor::matrix(m, m, out)
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        vec![
            ("inducing.z".into(), self.z.clone()),
            ("inducing.m".into(), self.m.clone()),
            ("inducing.s_diag_raw".into(), self.s_diag_raw.clone()),
            ("inducing.s_below".into(), self.s_below.clone()),
        ]
    }

    pub fn set_params(&mut self, values: &[Tensor]) {
        self.z = values[0].clone();
        self.m = values[1].clone();
        self.s_diag_raw = values[2].clone();
        self.s_below = values[3].clone();
    }

    /// Pair the stored tensors with their tape leaves, in `params` order.
    pub fn vars(&self, leaves: &[Var]) -> InducingVars {
        InducingVars {
            z: leaves[0].clone(),
            m: leaves[1].clone(),
            s_diag_raw: leaves[2].clone(),
            s_below: leaves[3].clone(),
        }
    }
}

/// Tape-side view of the inducing state.
pub struct InducingVars {
    pub z: Var,
    pub m: Var,
    s_diag_raw: Var,
    s_below: Var,
}

impl InducingVars {
    /// The lower-triangular factor of S on the tape.
    pub fn s_factor(&self) -> Var {
        let m = self.z.value().rows();
        let diag = self.s_diag_raw.softplus().diag_embed();
        if m == 1 {
            return diag;
        }
        diag.add(&self.s_below.scatter_strict_lower(m))
    }
}

/// Which evidence lower bound the trainer optimizes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BoundKind {
    Standard,
    Tighter,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Standard => "standard",
            BoundKind::Tighter => "tighter",
        }
    }

    pub fn parse(s: &str) -> Result<BoundKind> {
        match s {
            "standard" => Ok(BoundKind::Standard),
            "tighter" => Ok(BoundKind::Tighter),
            other => Err(Error::argument(
                "bound",
                format!("unknown bound kind {other:?} (expected standard | tighter)"),
            )),
        }
    }
}

/// Bound configuration: the kind, the spherical variance multiplier v used
/// by the tighter bound under a count likelihood (stored through softplus,
/// trainable), and the number of Monte-Carlo latent samples per step.
#[derive(Clone)]
pub struct BoundOptions {
    pub kind: BoundKind,
    raw_v: Tensor,
    pub mc_samples: usize,
}

impl BoundOptions {
    pub fn new(kind: BoundKind, v: f64, mc_samples: usize) -> Result<BoundOptions> {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::argument("bound", "spherical variance v must be positive"));
        }
        if mc_samples == 0 {
            return Err(Error::argument("bound", "need at least one Monte-Carlo sample"));
        }
        Ok(BoundOptions {
            kind,
            raw_v: Tensor::vector(vec![softplus_inverse(v)]),
            mc_samples,
        })
    }

    /// Standard bound, v = 1, one Monte-Carlo sample.
    pub fn standard() -> BoundOptions {
        BoundOptions::new(BoundKind::Standard, 1.0, 1).expect("valid defaults")
    }

    pub fn tighter() -> BoundOptions {
        BoundOptions::new(BoundKind::Tighter, 1.0, 1).expect("valid defaults")
    }

    pub fn v_value(&self) -> f64 {
        softplus_scalar(self.raw_v.data()[0])
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        vec![("bound.raw_v".into(), self.raw_v.clone())]
    }

    pub fn set_params(&mut self, values: &[Tensor]) {
        self.raw_v = values[0].clone();
    }
}

/// Marginal q(f) pieces for a batch of embedded rows: the mean, the
/// Nyström residual diagonal d (clamped at zero), and the S-dependent
/// quadratic term kᵀK_ZZ⁻¹SK_ZZ⁻¹k.  The standard marginal variance is
/// d + s_quad.
pub struct QfParts {
    pub mu: Var,
    pub d: Var,
    pub s_quad: Var,
}

/// Compute the q(f) marginal pieces for embedded rows (B × D_T), reusing a
/// precomputed Cholesky factor of K_ZZ.
pub fn marginal_parts(
    xtilde: &Var,
    ind: &InducingVars,
    hyp: &KernelVars,
    k_zz_chol: &Var,
) -> Result<QfParts> {
    let m = ind.z.value().rows();
    let b = xtilde.value().rows();
    let k_zx = kernel::rbf_gram(&ind.z, xtilde, hyp);
    let a = k_zz_chol.solve_lower(&k_zx)?;
    let kinv_kzx = k_zz_chol.solve_lower_t(&a)?;
    let mu = kinv_kzx
        .transpose()
        .matmul(&ind.m.reshape(&[m, 1]))
        .reshape(&[b]);
    let d = kernel::rbf_diag(b, hyp).sub(&a.col_sumsq()).clamp_min0();
    let s_quad = ind
        .s_factor()
        .transpose()
        .matmul(&kinv_kzx)
        .col_sumsq();
    Ok(QfParts { mu, d, s_quad })
}

/// Marginal mean and variance of q(f) at embedded rows (B × D_T), on the
/// tape.
pub fn marginal_qf_rows(
    xtilde: &Var,
    ind: &InducingVars,
    hyp: &KernelVars,
    jitter: f64,
) -> Result<(Var, Var)> {
    let k_zz = kernel::rbf_gram(&ind.z, &ind.z, hyp);
    let l = k_zz.cholesky(jitter, "k_zz")?;
    let parts = marginal_parts(xtilde, ind, hyp, &l)?;
    Ok((parts.mu, parts.d.add(&parts.s_quad)))
}

/// Precomputed plain-value state for repeated marginal evaluations:
/// the Cholesky factor of K_ZZ and dense copies of every inducing
/// quantity, so each point costs O(M²) instead of a fresh factorization.
pub struct PosteriorCache {
    m: usize,
    d_t: usize,
    z: Vec<f64>,
    ls: Vec<f64>,
    os: f64,
    l: Vec<f64>,
    mean: Vec<f64>,
    s_factor: Vec<f64>,
}

impl PosteriorCache {
    pub fn new(ind: &InducingState, hyp: &KernelHyperparams) -> Result<PosteriorCache> {
        let m = ind.count();
        let d_t = ind.embed_dim();
        if hyp.embed_dim() != d_t {
            return Err(Error::argument(
                "posterior_cache",
                "inducing locations and lengthscales disagree on dimension",
            ));
        }
        let ls: Vec<f64> = hyp
            .raw_lengthscales
            .iter()
            .map(|&r| softplus_scalar(r))
            .collect();
        let os = softplus_scalar(hyp.raw_outputscale.data()[0]);
        let z = ind.z.data().to_vec();
        let k_zz = dense::rbf_gram(m, m, d_t, &z, &z, &ls, os);
        let (l, _) = dense::cholesky_escalating(m, &k_zz, 0.0, "k_zz")?;
        Ok(PosteriorCache {
            m,
            d_t,
            z,
            ls,
            os,
            l,
            mean: ind.m.data().to_vec(),
            s_factor: ind.s_factor_dense().data().to_vec(),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.d_t
    }

    /// Marginal mean and variance of q(f) at one embedded point.
    pub fn marginal(&self, xtilde: &[f64]) -> Result<(f64, f64)> {
        let m = self.m;
        if xtilde.len() != self.d_t {
            return Err(Error::argument(
                "marginal_qf",
                "embedded point has the wrong dimension",
            ));
        }
        let k_zx = dense::rbf_gram(m, 1, self.d_t, &self.z, xtilde, &self.ls, self.os);
        let a = dense::solve_lower(m, &self.l, 1, &k_zx)?;
        let kinv_kzx = dense::solve_lower_t(m, &self.l, 1, &a)?;
        let mu = dense::dot(&kinv_kzx, &self.mean);
        let q_diag: f64 = a.iter().map(|x| x * x).sum();
        let sb = dense::mat_mul_tn(m, m, 1, &self.s_factor, &kinv_kzx);
        let s_quad: f64 = sb.iter().map(|x| x * x).sum();
        let var = (self.os - q_diag).max(0.0) + s_quad;
        Ok((mu, var))
    }
}

/// Plain-value marginal mean and variance of q(f) at a single embedded
/// point.
pub fn marginal_qf(
    xtilde: &[f64],
    ind: &InducingState,
    hyp: &KernelHyperparams,
) -> Result<(f64, f64)> {
    PosteriorCache::new(ind, hyp)?.marginal(xtilde)
}

/// KL[q(u) ‖ N(0, K_ZZ)] in closed form, reusing a precomputed Cholesky
/// factor of K_ZZ:
///
///   ½ [ ‖L⁻¹L_S‖² + ‖L⁻¹m‖² − M + 2Σln diag L − 2Σln diag L_S ]
pub fn kl_u(ind: &InducingVars, k_zz_chol: &Var) -> Result<Var> {
    let m = ind.z.value().rows();
    let l_s = ind.s_factor();
    let trace = k_zz_chol.solve_lower(&l_s)?.sumsq();
    let quad = k_zz_chol.solve_lower(&ind.m.reshape(&[m, 1]))?.sumsq();
    let logdet_k = k_zz_chol.diag_part().ln().sum().scale(2.0);
    let logdet_s = l_s.diag_part().ln().sum().scale(2.0);
    Ok(trace
        .add(&quad)
        .add(&logdet_k)
        .sub(&logdet_s)
        .shift(-(m as f64))
        .scale(0.5))
}

/// The non-negative Gaussian-likelihood correction over a batch,
/// Δ = ½ Σ [d/σ_y² − ln(1 + d/σ_y²)], on the tape.
pub fn gaussian_correction_rows(d: &Var, noise_var: &Var) -> Var {
    let ratio = d.mul(&noise_var.recip());
    ratio.sub(&ratio.ln_1p()).sum().scale(0.5)
}

/// Plain-value Gaussian correction Δ for given Nyström residuals.
pub fn gaussian_correction(d: &[f64], noise_var: f64) -> Result<f64> {
    if !(noise_var > 0.0) {
        return Err(Error::argument("gaussian_correction", "noise variance must be positive"));
    }
    if d.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::argument(
            "gaussian_correction",
            "Nyström residuals must be finite and non-negative",
        ));
    }
    Ok(0.5 * d.iter().map(|&x| x / noise_var - (x / noise_var).ln_1p()).sum::<f64>())
}

/// The deterministic spherical-variance penalty (count/2)(1 + ln v − v)
/// added by the tighter bound under a count likelihood.  Non-positive, and
/// zero exactly at v = 1.
pub fn nongaussian_tighter_terms(v: f64, count: usize) -> Result<f64> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::argument("tighter_terms", "spherical variance v must be positive"));
    }
    Ok(count as f64 / 2.0 * (1.0 + v.ln() - v))
}

/// Tape twin of [`nongaussian_tighter_terms`].
pub fn nongaussian_tighter_penalty(v: &Var, count: f64) -> Var {
    v.ln().shift(1.0).sub(v).scale(count / 2.0)
}

/// One mini-batch: the sampled input and output index sets plus the
/// observed (input, output, y) pairs of their cross product.
#[derive(Clone, Debug)]
pub struct Batch {
    /// How many distinct inputs were sampled (N_b).
    pub input_count: usize,
    /// The sampled output indices (P_b of them).
    pub outputs: Vec<usize>,
    /// Observed pairs within the sampled cross product.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl Batch {
    /// The full-data batch over every observed pair.
    pub fn full(total_inputs: usize, total_outputs: usize, pairs: Vec<(usize, usize, f64)>) -> Batch {
        Batch {
            input_count: total_inputs,
            outputs: (0..total_outputs).collect(),
            pairs,
        }
    }
}

/// Dataset-level counts the estimator rescales against.
#[derive(Clone, Copy, Debug)]
pub struct DataScale {
    /// N: total distinct training inputs.
    pub total_inputs: usize,
    /// P: total outputs.
    pub total_outputs: usize,
    /// |Ω|: total observed (input, output) pairs.
    pub observed_pairs: usize,
}

/// The assembled bound and its pieces (each already carrying its scaling).
pub struct ElboParts {
    pub objective: Var,
    pub expected_log_lik: Var,
    pub correction: Option<Var>,
    pub penalty: Option<Var>,
    pub kl_inducing: Var,
    pub kl_latent: Option<Var>,
}

/// Assemble the mini-batch bound on the tape.
///
/// `leaves` must align with `model.params()`.  `eps` holds one P_b × D_H
/// standard-normal draw per Monte-Carlo sample (ignored when the model has
/// no latent coordinates).  The caller controls the noise, which keeps the
/// estimator reproducible and lets fixed-sample identities hold exactly.
pub fn elbo_parts(
    leaves: &[Var],
    x: &Tensor,
    batch: &Batch,
    model: &mut Model,
    scale: &DataScale,
    eps: &[Tensor],
) -> Result<ElboParts> {
    if batch.pairs.is_empty() {
        return Err(Error::argument("elbo", "batch holds no observed pairs"));
    }
    if batch.input_count == 0 || batch.outputs.is_empty() {
        return Err(Error::argument("elbo", "batch must sample at least one input and one output"));
    }
    let tape = leaves[0].tape();
    let lay = model.layout();
    let j = model.bound.mc_samples;

    let kv = kernel::transform(&leaves[lay.kernel.start], &leaves[lay.kernel.start + 1]);
    let ind_vars = model.inducing.vars(&leaves[lay.inducing.clone()]);
    let lik_leaves: Vec<Var> = leaves[lay.likelihood.clone()].to_vec();

    // Per-pair row positions within the sampled output batch.
    let mut positions = Vec::with_capacity(batch.pairs.len());
    for &(n, p, y) in &batch.pairs {
        if n >= x.rows() {
            return Err(Error::argument("elbo", format!("input index {n} out of range")));
        }
        let pos = batch
            .outputs
            .iter()
            .position(|&q| q == p)
            .ok_or_else(|| {
                Error::argument("elbo", format!("pair output {p} is not in the sampled output batch"))
            })?;
        positions.push(pos);
        model.likelihood.validate_observation(y).map_err(|e| {
            Error::argument("elbo", format!("invalid observation for pair ({n}, {p}): {e}"))
        })?;
    }

    let latent_vars = model
        .latents
        .as_ref()
        .map(|state| (state.vars(&leaves[lay.latent.clone()]), state));
    if latent_vars.is_some() && eps.len() < j {
        return Err(Error::argument(
            "elbo",
            format!("need {j} latent noise draws, got {}", eps.len()),
        ));
    }

    let b = batch.pairs.len();
    let d_x = x.cols();
    let mut x_rows = Vec::with_capacity(b * d_x);
    for &(n, _, _) in &batch.pairs {
        x_rows.extend_from_slice(x.row(n));
    }
    let x_pairs = tape.leaf(Tensor::matrix(b, d_x, x_rows));
    let y_batch = Tensor::vector(batch.pairs.iter().map(|&(_, _, y)| y).collect());

    let k_zz = kernel::rbf_gram(&ind_vars.z, &ind_vars.z, &kv);
    let l = k_zz.cholesky(0.0, "k_zz")?;

    let tighter = model.bound.kind == BoundKind::Tighter;
    let gaussian = matches!(model.likelihood, Likelihood::Gaussian(_));
    let v_var = if tighter && !gaussian {
        Some(leaves[lay.bound.start].softplus())
    } else {
        None
    };

    let mut ell_sum = tape.scalar(0.0);
    let mut delta_sum = if tighter && gaussian { Some(tape.scalar(0.0)) } else { None };
    for jj in 0..j {
        let rows = match &latent_vars {
            Some((lv, _)) => {
                let draw = &eps[jj];
                if draw.rows() != batch.outputs.len() {
                    return Err(Error::argument(
                        "elbo",
                        "latent noise draw does not cover the sampled output batch",
                    ));
                }
                let h = lv.sample_rows(&batch.outputs, &tape.leaf(draw.clone()));
                x_pairs.hstack(&h.gather_rows(&positions))
            }
            None => x_pairs.clone(),
        };
        let embedded = model
            .embedder
            .embed_batch_graph(&rows, &leaves[lay.embedder.clone()]);
        let parts = marginal_parts(&embedded, &ind_vars, &kv, &l)?;
        let var = match &v_var {
            Some(v) => parts.d.mul(v).add(&parts.s_quad),
            None => parts.d.add(&parts.s_quad),
        };
        let ell = model
            .likelihood
            .inner_expectation_rows(&y_batch, &parts.mu, &var, &lik_leaves)
            .sum();
        ell_sum = ell_sum.add(&ell);
        if let Some(acc) = delta_sum.take() {
            let noise = match &model.likelihood {
                Likelihood::Gaussian(g) => g.noise_var(&lik_leaves),
                Likelihood::Zinb(_) => unreachable!("correction only under Gaussian"),
            };
            delta_sum = Some(acc.add(&gaussian_correction_rows(&parts.d, &noise)));
        }
    }

    let s = scale.observed_pairs as f64 / (batch.input_count * batch.outputs.len()) as f64;
    let expected_log_lik = ell_sum.scale(s / j as f64);
    let correction = delta_sum.map(|d| d.scale(s / j as f64));
    let penalty = v_var
        .as_ref()
        .map(|v| nongaussian_tighter_penalty(v, scale.observed_pairs as f64));
    let kl_inducing = kl_u(&ind_vars, &l)?;
    let kl_latent = latent_vars.map(|(lv, state)| {
        lv.kl_sum(&batch.outputs, state)
            .scale(scale.total_outputs as f64 / batch.outputs.len() as f64)
    });

    let mut objective = expected_log_lik.sub(&kl_inducing);
    if let Some(c) = &correction {
        objective = objective.add(c);
    }
    if let Some(p) = &penalty {
        objective = objective.add(p);
    }
    if let Some(k) = &kl_latent {
        objective = objective.sub(k);
    }
    Ok(ElboParts {
        objective,
        expected_log_lik,
        correction,
        penalty,
        kl_inducing,
        kl_latent,
    })
}

/// The mini-batch bound as a single tape scalar.
pub fn elbo_graph(
    leaves: &[Var],
    x: &Tensor,
    batch: &Batch,
    model: &mut Model,
    scale: &DataScale,
    eps: &[Tensor],
) -> Result<Var> {
    Ok(elbo_parts(leaves, x, batch, model, scale, eps)?.objective)
}

/// Evaluate the mini-batch bound as a plain value, drawing the latent
/// noise from `rng`.
pub fn elbo_minibatch(
    x: &Tensor,
    batch: &Batch,
    model: &mut Model,
    scale: &DataScale,
    rng: &mut impl Rng,
) -> Result<f64> {
    let tape = Tape::new();
    let params = model.params();
    let leaves: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let eps = draw_latent_noise(model, batch.outputs.len(), rng);
    let v = elbo_graph(&leaves, x, batch, model, scale, &eps)?;
    Ok(v.value().item())
}

/// One standard-normal draw per Monte-Carlo sample, each covering the
/// sampled output batch; empty when the model has no latent coordinates.
pub fn draw_latent_noise(model: &Model, batch_outputs: usize, rng: &mut impl Rng) -> Vec<Tensor> {
    match &model.latents {
        Some(state) => {
            let d_h = state.config.d_h;
            (0..model.bound.mc_samples)
                .map(|_| Tensor::matrix(batch_outputs, d_h, standard_normal_vec(rng, batch_outputs * d_h)))
                .collect()
        }
        None => Vec::new(),
    }
}
