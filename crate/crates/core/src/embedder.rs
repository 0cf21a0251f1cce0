//! The embedding map Φ: R^{D_X} × R^{D_H} → R^{D_T}.
//!
//! The main variant is a residual network whose blocks are kept
//! near-isometric by spectral normalization:
//!
//!   z₀ = E·[x; h]            (entry map, only when D_X + D_H ≠ D_T)
//!   z_l = z_{l−1} + tanh(W̃_l z_{l−1} + b_l),   l = 1…L
//!
//! with W̃_l = W_l when σ̃(W_l) ≤ c, else c·W_l/σ̃(W_l).  The leading
//! singular value σ̃ is estimated by alternating power iteration
//!
//!   repeat T times:  ũ ← Wṽ/‖Wṽ‖,  ṽ ← Wᵀũ/‖Wᵀũ‖;   σ̃ = ũᵀWṽ
//!
//! with ũ, ṽ persisted across training steps (T = 1 warm-started per
//! forward pass; T = 50 when freezing for audits) and excluded from
//! gradient propagation.  Because each residual branch is then c-Lipschitz,
//! the whole stack distorts distances by at most κ·(1 + c)^L — and, for
//! c < 1, at least (1 − c)^L when the entry map is the identity — which is
//! what keeps the learned geometry of the latent space trustworthy.
//!
//! Two ablation variants share the interface: `identity` (raw
//! concatenation, requires D_T = D_X + D_H) and `blockwise-scaling`
//! ([x ⊘ ℓ_X; h ⊘ ℓ_H], the classical latent-variable MOGP geometry).

use rand::Rng;

use crate::diffmath::{dense, softplus_inverse, softplus_scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::standard_normal_vec;

/// Power-iteration count used when freezing an embedder for audits and
/// prediction.
pub const AUDIT_POWER_ITERATIONS: usize = 50;

/// Smooth 1-Lipschitz activations (C_φ = 1, so a block's Lipschitz bound is
/// its weight's spectral norm).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Activation> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }

    fn apply_graph(&self, z: &Var) -> Var {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    fn apply_scalar(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderVariant {
    Rcnn,
    Identity,
    BlockwiseScaling,
}

impl EmbedderVariant {
    pub fn name(&self) -> &'static str {
        match self {
            EmbedderVariant::Rcnn => "rcnn",
            EmbedderVariant::Identity => "identity",
            EmbedderVariant::BlockwiseScaling => "blockwise-scaling",
        }
    }

    pub fn parse(s: &str) -> Result<EmbedderVariant> {
        match s {
            "rcnn" => Ok(EmbedderVariant::Rcnn),
            "identity" => Ok(EmbedderVariant::Identity),
            "blockwise-scaling" => Ok(EmbedderVariant::BlockwiseScaling),
            other => Err(Error::Config(format!("unknown embedder variant '{other}'"))),
        }
    }
}

/// Architecture descriptor; serialized inside checkpoints.
#[derive(Debug, Clone)]
pub struct EmbedderConfig {
    pub variant: EmbedderVariant,
    pub d_x: usize,
    pub d_h: usize,
    /// Embedding width D_T.
    pub d_t: usize,
    /// Residual block count L (rcnn only).
    pub blocks: usize,
    /// Spectral-norm upper bound c (rcnn only); `None` disables
    /// normalization (the "unconstrained" ablation arm).
    pub sn_bound: Option<f64>,
    /// Power iterations per training forward pass.
    pub t_train: usize,
    pub activation: Activation,
}

impl EmbedderConfig {
    pub fn in_dim(&self) -> usize {
        self.d_x + self.d_h
    }

    pub fn validate(&self) -> Result<()> {
        match self.variant {
            EmbedderVariant::Identity | EmbedderVariant::BlockwiseScaling => {
                if self.d_t != self.in_dim() {
                    return Err(Error::Config(format!(
                        "embedder variant {} requires D_T = D_X + D_H, got D_T = {} with D_X + D_H = {}",
                        self.variant.name(),
                        self.d_t,
                        self.in_dim()
                    )));
                }
            }
            EmbedderVariant::Rcnn => {
                if self.blocks == 0 {
                    return Err(Error::Config("rcnn embedder needs at least one residual block".into()));
                }
                if let Some(c) = self.sn_bound {
                    if c <= 0.0 {
                        return Err(Error::Config(format!("spectral-norm bound must be positive, got {c}")));
                    }
                }
                if self.t_train == 0 {
                    return Err(Error::Config("power-iteration count must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Persistent power-iteration vectors for one weight matrix.
#[derive(Debug, Clone)]
pub struct PowerState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl PowerState {
    fn init(m: usize, n: usize, rng: &mut impl Rng) -> PowerState {
        let mut s = PowerState {
            u: standard_normal_vec(rng, m),
            v: standard_normal_vec(rng, n),
        };
        normalize(&mut s.u);
        normalize(&mut s.v);
        s
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Run T alternating power iterations in place and return the spectral-norm
/// estimate σ̃ = ũᵀWṽ.  A zero (or numerically dead) matrix reports 0 and
/// leaves the state untouched.
pub fn power_iterate(m: usize, n: usize, w: &[f64], state: &mut PowerState, t: usize) -> f64 {
    assert_eq!(state.u.len(), m, "power state u has wrong length");
    assert_eq!(state.v.len(), n, "power state v has wrong length");
    for _ in 0..t {
        let wu = dense::mat_mul(m, n, 1, w, &state.v);
        let norm_u = wu.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm_u == 0.0 {
            return 0.0;
        }
        for (dst, src) in state.u.iter_mut().zip(&wu) {
            *dst = src / norm_u;
        }
        let wv = dense::mat_mul_tn(m, n, 1, w, &state.u);
        let norm_v = wv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm_v == 0.0 {
            return 0.0;
        }
        for (dst, src) in state.v.iter_mut().zip(&wv) {
            *dst = src / norm_v;
        }
    }
    let wv = dense::mat_mul(m, n, 1, w, &state.v);
    dense::dot(&state.u, &wv)
}

/// Spectrally normalize a weight matrix on the tape.
///
/// Estimates σ̃ with T power iterations (mutating `state`), then returns W
/// unchanged when σ̃ ≤ c and c·W/σ̃ otherwise.  The scaling is
/// differentiable through both W factors; ũ and ṽ are stop-gradient
/// constants.
pub fn spectral_normalise(w: &Var, c: f64, t: usize, state: &mut PowerState) -> (Var, f64) {
    assert!(c > 0.0, "spectral_normalise: bound must be positive, got {c}");
    assert!(t >= 1, "spectral_normalise: need at least one power iteration");
    let wv = w.value();
    let (m, n) = (wv.rows(), wv.cols());
    let sigma = power_iterate(m, n, wv.data(), state, t);
    if sigma <= c {
        return (w.clone(), sigma);
    }
    let tape = w.tape();
    let u = tape.leaf(Tensor::vector(state.u.clone()));
    let v = tape.leaf(Tensor::vector(state.v.clone()));
    // σ̃ as a graph scalar: ũᵀWṽ, linear in W.
    let sigma_var = u.dot(&w.matmul(&v));
    let ratio = sigma_var.recip().scale(c);
    (w.mul(&ratio), sigma)
}

/// Dense (tape-free) spectral normalization for frozen embedders.
pub fn spectral_normalise_dense(w: &Tensor, c: f64, t: usize, state: &mut PowerState) -> (Tensor, f64) {
    let (m, n) = (w.rows(), w.cols());
    let sigma = power_iterate(m, n, w.data(), state, t);
    if sigma <= c {
        (w.clone(), sigma)
    } else {
        (w.map(|x| x * c / sigma), sigma)
    }
}

/// Trainable state of the embedding map.
#[derive(Debug, Clone)]
pub struct Embedder {
    pub config: EmbedderConfig,
    state: EmbedderState,
}

#[derive(Debug, Clone)]
enum EmbedderState {
    Rcnn {
        /// Entry map E (D_T × (D_X + D_H)), present iff dimensions differ.
        entry: Option<Tensor>,
        entry_power: Option<PowerState>,
        /// (W_l, b_l) per residual block; W_l is D_T × D_T.
        blocks: Vec<(Tensor, Tensor)>,
        block_power: Vec<PowerState>,
    },
    Identity,
    Blockwise {
        /// Unconstrained scales; softplus maps them to ℓ_X, ℓ_H > 0.
        raw_scale_x: Tensor,
        raw_scale_h: Tensor,
    },
}

impl Embedder {
    /// Initialize for the given architecture: weights zero-mean with
    /// standard deviation 1/√fan-in, biases zero, power vectors random unit.
    pub fn new(config: EmbedderConfig, rng: &mut impl Rng) -> Result<Embedder> {
        config.validate()?;
        let state = match config.variant {
            EmbedderVariant::Identity => EmbedderState::Identity,
            EmbedderVariant::BlockwiseScaling => EmbedderState::Blockwise {
                raw_scale_x: Tensor::vector(vec![softplus_inverse(1.0); config.d_x]),
                raw_scale_h: Tensor::vector(vec![softplus_inverse(1.0); config.d_h]),
            },
            EmbedderVariant::Rcnn => {
                let (d_in, d_t) = (config.in_dim(), config.d_t);
                let (entry, entry_power) = if d_in != d_t {
                    let std = 1.0 / (d_in as f64).sqrt();
                    let w = Tensor::matrix(
                        d_t,
                        d_in,
                        standard_normal_vec(rng, d_t * d_in)
                            .into_iter()
                            .map(|v| v * std)
                            .collect(),
                    );
                    (Some(w), Some(PowerState::init(d_t, d_in, rng)))
                } else {
                    (None, None)
                };
                let std = 1.0 / (d_t as f64).sqrt();
                let mut blocks = Vec::with_capacity(config.blocks);
                let mut block_power = Vec::with_capacity(config.blocks);
                for _ in 0..config.blocks {
                    let w = Tensor::matrix(
                        d_t,
                        d_t,
                        standard_normal_vec(rng, d_t * d_t)
                            .into_iter()
                            .map(|v| v * std)
                            .collect(),
                    );
                    blocks.push((w, Tensor::zeros(&[d_t])));
                    block_power.push(PowerState::init(d_t, d_t, rng));
                }
                EmbedderState::Rcnn {
                    entry,
                    entry_power,
                    blocks,
                    block_power,
                }
            }
        };
        Ok(Embedder { config, state })
    }

    /// Named trainable tensors, in a stable order.
    pub fn params(&self) -> Vec<(String, Tensor)> {
        match &self.state {
            EmbedderState::Identity => Vec::new(),
            EmbedderState::Blockwise {
                raw_scale_x,
                raw_scale_h,
            } => vec![
                ("embedder.raw_scale_x".into(), raw_scale_x.clone()),
                ("embedder.raw_scale_h".into(), raw_scale_h.clone()),
            ],
            EmbedderState::Rcnn { entry, blocks, .. } => {
                let mut out = Vec::new();
                if let Some(e) = entry {
                    out.push(("embedder.entry".into(), e.clone()));
                }
                for (l, (w, b)) in blocks.iter().enumerate() {
                    out.push((format!("embedder.w{l}"), w.clone()));
                    out.push((format!("embedder.b{l}"), b.clone()));
                }
                out
            }
        }
    }

    /// Replace the trainable tensors; `values` must align with [`params`].
    pub fn set_params(&mut self, values: &[Tensor]) {
        match &mut self.state {
            EmbedderState::Identity => assert!(values.is_empty()),
            EmbedderState::Blockwise {
                raw_scale_x,
                raw_scale_h,
            } => {
                *raw_scale_x = values[0].clone();
                *raw_scale_h = values[1].clone();
            }
            EmbedderState::Rcnn { entry, blocks, .. } => {
                let mut it = values.iter();
                if let Some(e) = entry {
                    *e = it.next().expect("missing entry tensor").clone();
                }
                for (w, b) in blocks.iter_mut() {
                    *w = it.next().expect("missing block weight").clone();
                    *b = it.next().expect("missing block bias").clone();
                }
            }
        }
    }

    /// Persistent power-iteration vectors, flattened for checkpointing:
    /// entry state first (if present), then one per block.
    pub fn power_states(&self) -> Vec<PowerState> {
        match &self.state {
            EmbedderState::Rcnn {
                entry_power,
                block_power,
                ..
            } => {
                let mut out = Vec::new();
                if let Some(p) = entry_power {
                    out.push(p.clone());
                }
                out.extend(block_power.iter().cloned());
                out
            }
            _ => Vec::new(),
        }
    }

    pub fn set_power_states(&mut self, states: &[PowerState]) {
        if let EmbedderState::Rcnn {
            entry_power,
            block_power,
            ..
        } = &mut self.state
        {
            let mut it = states.iter();
            if let Some(p) = entry_power {
                *p = it.next().expect("missing entry power state").clone();
            }
            for p in block_power.iter_mut() {
                *p = it.next().expect("missing block power state").clone();
            }
        }
    }

    /// Differentiable batched embedding of row-stacked [x; h] inputs.
    ///
    /// `leaves` must align with [`params`]; the persistent power vectors are
    /// advanced by `t_train` iterations per normalized matrix.
    pub fn embed_batch_graph(&mut self, rows: &Var, leaves: &[Var]) -> Var {
        let in_dim = self.config.in_dim();
        assert_eq!(
            rows.value().cols(),
            in_dim,
            "embed: input rows have {} columns, architecture expects {}",
            rows.value().cols(),
            in_dim
        );
        let t = self.config.t_train;
        let c = self.config.sn_bound;
        let activation = self.config.activation;
        match &mut self.state {
            EmbedderState::Identity => rows.clone(),
            EmbedderState::Blockwise { .. } => {
                let d_x = self.config.d_x;
                let sx = leaves[0].softplus();
                let sh = leaves[1].softplus();
                let x_part = rows.slice_cols(0, d_x).mul_rowvec(&sx.recip());
                let h_part = rows.slice_cols(d_x, in_dim).mul_rowvec(&sh.recip());
                x_part.hstack(&h_part)
            }
            EmbedderState::Rcnn {
                entry,
                entry_power,
                blocks,
                block_power,
                ..
            } => {
                let mut it = leaves.iter();
                let mut z = if entry.is_some() {
                    let e_leaf = it.next().expect("missing entry leaf");
                    let e_eff = match c {
                        Some(c) => {
                            spectral_normalise(e_leaf, c, t, entry_power.as_mut().unwrap()).0
                        }
                        None => e_leaf.clone(),
                    };
                    rows.matmul(&e_eff.transpose())
                } else {
                    rows.clone()
                };
                for (l, _) in blocks.iter().enumerate() {
                    let w_leaf = it.next().expect("missing block weight leaf");
                    let b_leaf = it.next().expect("missing block bias leaf");
                    let w_eff = match c {
                        Some(c) => spectral_normalise(w_leaf, c, t, &mut block_power[l]).0,
                        None => w_leaf.clone(),
                    };
                    let pre = z.matmul(&w_eff.transpose()).add_rowvec(b_leaf);
                    z = z.add(&activation.apply_graph(&pre));
                }
                z
            }
        }
    }

    /// Freeze into an immutable evaluator: spectral normalization is
    /// re-estimated with [`AUDIT_POWER_ITERATIONS`] on copies of the power
    /// vectors, so freezing never perturbs training state.
    pub fn freeze(&self) -> FrozenEmbedder {
        let effective = match &self.state {
            EmbedderState::Identity => FrozenState::Identity,
            EmbedderState::Blockwise {
                raw_scale_x,
                raw_scale_h,
            } => FrozenState::Blockwise {
                scale_x: raw_scale_x.map(softplus_scalar),
                scale_h: raw_scale_h.map(softplus_scalar),
            },
            EmbedderState::Rcnn {
                entry,
                entry_power,
                blocks,
                block_power,
            } => {
                let freeze_one = |w: &Tensor, p: &PowerState| match self.config.sn_bound {
                    Some(c) => {
                        let mut state = p.clone();
                        spectral_normalise_dense(w, c, AUDIT_POWER_ITERATIONS, &mut state).0
                    }
                    None => w.clone(),
                };
                FrozenState::Rcnn {
                    entry: entry
                        .as_ref()
                        .map(|e| freeze_one(e, entry_power.as_ref().unwrap())),
                    blocks: blocks
                        .iter()
                        .zip(block_power)
                        .map(|((w, b), p)| (freeze_one(w, p), b.clone()))
                        .collect(),
                }
            }
        };
        FrozenEmbedder {
            config: self.config.clone(),
            effective,
        }
    }
}

/// Post-training embedder with spectral normalization baked in; immutable
/// and safe to share across threads.
#[derive(Debug, Clone)]
pub struct FrozenEmbedder {
    pub config: EmbedderConfig,
    effective: FrozenState,
}

#[derive(Debug, Clone)]
enum FrozenState {
    Rcnn {
        entry: Option<Tensor>,
        blocks: Vec<(Tensor, Tensor)>,
    },
    Identity,
    Blockwise {
        scale_x: Tensor,
        scale_h: Tensor,
    },
}

impl FrozenEmbedder {
    /// Embed `count` row-stacked [x; h] inputs without building a tape.
    pub fn embed_rows(&self, rows: &[f64], count: usize) -> Vec<f64> {
        let in_dim = self.config.in_dim();
        assert_eq!(rows.len(), count * in_dim, "embed_rows: ragged input");
        match &self.effective {
            FrozenState::Identity => rows.to_vec(),
            FrozenState::Blockwise { scale_x, scale_h } => {
                let mut out = Vec::with_capacity(rows.len());
                for r in 0..count {
                    let row = &rows[r * in_dim..(r + 1) * in_dim];
                    for (j, v) in row.iter().enumerate() {
                        if j < self.config.d_x {
                            out.push(v / scale_x.data()[j]);
                        } else {
                            out.push(v / scale_h.data()[j - self.config.d_x]);
                        }
                    }
                }
                out
            }
            FrozenState::Rcnn { entry, blocks } => {
                let d_t = self.config.d_t;
                let mut z = match entry {
                    Some(e) => dense::mat_mul_nt(count, in_dim, d_t, rows, e.data()),
                    None => rows.to_vec(),
                };
                for (w, b) in blocks {
                    let pre = dense::mat_mul_nt(count, d_t, d_t, &z, w.data());
                    for r in 0..count {
                        for j in 0..d_t {
                            z[r * d_t + j] += self
                                .config
                                .activation
                                .apply_scalar(pre[r * d_t + j] + b.data()[j]);
                        }
                    }
                }
                z
            }
        }
    }

    /// Embed a single [x; h] input.
    pub fn embed_one(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(x.len() + h.len());
        row.extend_from_slice(x);
        row.extend_from_slice(h);
        self.embed_rows(&row, 1)
    }
}

/// Result of a sampled distance-distortion audit of a frozen embedder.
#[derive(Debug, Clone)]
pub struct LipschitzAudit {
    /// Largest observed ‖Φ(a)−Φ(b)‖ / ‖a−b‖.
    pub max_ratio: f64,
    /// Smallest observed ratio.
    pub min_ratio: f64,
    /// Upper bound κ·(1+c)^L the ratios must respect.
    pub upper_bound: f64,
    /// Lower bound (1−c)^L, present only for c < 1 with an identity entry.
    pub lower_bound: Option<f64>,
    /// Operator norm of the effective entry map (1 when absent).
    pub kappa: f64,
    pub pairs: usize,
}

impl LipschitzAudit {
    /// Whether every sampled ratio sits inside the envelope (with a small
    /// floating-point slack).
    pub fn passes(&self) -> bool {
        let slack = 1e-9 * self.upper_bound.max(1.0);
        self.max_ratio <= self.upper_bound + slack
            && self
                .lower_bound
                .map_or(true, |lb| self.min_ratio >= lb - slack)
    }
}

/// Audit a frozen residual embedder on `pairs` random input pairs: every
/// distance ratio must lie in [(1−c)^L (identity entry, c < 1), κ·(1+c)^L].
pub fn lipschitz_audit(frozen: &FrozenEmbedder, pairs: usize, seed: u64) -> Result<LipschitzAudit> {
    let config = &frozen.config;
    if config.variant != EmbedderVariant::Rcnn {
        return Err(Error::NotApplicable {
            op: "lipschitz_audit".into(),
            reason: format!("embedder variant is {}", config.variant.name()),
        });
    }
    let c = config.sn_bound.ok_or_else(|| Error::NotApplicable {
        op: "lipschitz_audit".into(),
        reason: "spectral normalization is disabled".into(),
    })?;
    let l = config.blocks as i32;
    let (entry, has_entry) = match &frozen.effective {
        FrozenState::Rcnn { entry, .. } => (entry.as_ref(), entry.is_some()),
        _ => unreachable!("variant checked above"),
    };
    let kappa = match entry {
        Some(e) => {
            let mut rng = crate::rng::stream(seed, &[crate::rng::purpose::AUDIT, 0]);
            let mut state = PowerState::init(e.rows(), e.cols(), &mut rng);
            power_iterate(e.rows(), e.cols(), e.data(), &mut state, 500)
        }
        None => 1.0,
    };
    let upper_bound = kappa * (1.0 + c).powi(l);
    let lower_bound = if c < 1.0 && !has_entry {
        Some((1.0 - c).powi(l))
    } else {
        None
    };
    let in_dim = config.in_dim();
    let mut rng = crate::rng::stream(seed, &[crate::rng::purpose::AUDIT, 1]);
    let mut max_ratio = f64::NEG_INFINITY;
    let mut min_ratio = f64::INFINITY;
    let mut used = 0;
    while used < pairs {
        let a = standard_normal_vec(&mut rng, in_dim);
        let b = standard_normal_vec(&mut rng, in_dim);
        let dist: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        if dist < 1e-9 {
            continue;
        }
        let mut rows = a.clone();
        rows.extend_from_slice(&b);
        let out = frozen.embed_rows(&rows, 2);
        let d_t = config.d_t;
        let odist: f64 = (0..d_t)
            .map(|j| (out[j] - out[d_t + j]).powi(2))
            .sum::<f64>()
            .sqrt();
        let ratio = odist / dist;
        max_ratio = max_ratio.max(ratio);
        min_ratio = min_ratio.min(ratio);
        used += 1;
    }
    Ok(LipschitzAudit {
        max_ratio,
        min_ratio,
        upper_bound,
        lower_bound,
        kappa,
        pairs: used,
    })
}

/// Worst-case distance-distortion envelope of the residual stack:
/// ((1−c)^L, (1+c)^L) for c < 1, else (0, (1+c)^L).  The entry map (when
/// present) multiplies the upper bound by its operator norm κ; this function
/// covers the residual stack only.
pub fn lipschitz_envelope(config: &EmbedderConfig) -> Result<(f64, f64)> {
    if config.variant != EmbedderVariant::Rcnn {
        return Err(Error::NotApplicable {
            op: "lipschitz_envelope".into(),
            reason: format!("embedder variant is {}", config.variant.name()),
        });
    }
    let c = config.sn_bound.ok_or_else(|| Error::NotApplicable {
        op: "lipschitz_envelope".into(),
        reason: "spectral normalization is disabled".into(),
    })?;
    let l = config.blocks as i32;
    let upper = (1.0 + c).powi(l);
    let lower = if c < 1.0 { (1.0 - c).powi(l) } else { 0.0 };
    Ok((lower, upper))
}
