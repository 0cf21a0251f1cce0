//! Stochastic training: doubly mini-batched Adam ascent on the bound.
//!
//! Each step samples a batch of inputs and a batch of outputs uniformly
//! without replacement, keeps the observed pairs in their cross product
//! (resampling when that intersection is empty), differentiates the
//! unbiased mini-batch objective, and takes one Adam step (β₁ = 0.9,
//! β₂ = 0.999, ε = 1e-8) on every non-frozen parameter.  An epoch is
//! ⌈|Ω|/(N_b·P_b)⌉ steps.  All randomness comes from per-(purpose,
//! epoch, step) counter-derived streams, so a run is a pure function of
//! the seed, and two runs with the same seed produce bit-identical
//! parameters and history.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use crate::data::{format_float, Dataset};
use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::{self, purpose};
use crate::svgp::{self, Batch, DataScale};

/// Parameter families that can be held fixed during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreezeTarget {
    /// Kernel lengthscales and outputscale.
    Kernel,
    /// The Gaussian observation-noise variance.
    Noise,
    /// Inducing locations in the embedded space.
    InducingLocations,
}

impl FreezeTarget {
    pub fn parse(s: &str) -> Result<FreezeTarget> {
        match s {
            "kernel" => Ok(FreezeTarget::Kernel),
            "noise" => Ok(FreezeTarget::Noise),
            "inducing_locations" => Ok(FreezeTarget::InducingLocations),
            other => Err(Error::argument(
                "freeze",
                format!("unknown freeze target {other:?} (expected kernel, noise, or inducing_locations)"),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FreezeTarget::Kernel => "kernel",
            FreezeTarget::Noise => "noise",
            FreezeTarget::InducingLocations => "inducing_locations",
        }
    }

    fn covers(self, param: &str) -> bool {
        match self {
            FreezeTarget::Kernel => param.starts_with("kernel."),
            FreezeTarget::Noise => param == "likelihood.raw_noise",
            FreezeTarget::InducingLocations => param == "inducing.z",
        }
    }
}

/// Optimization settings.
#[derive(Clone, Debug)]
pub struct TrainSettings {
    /// Inputs per batch (N_b); clamped to N.
    pub input_batch: usize,
    /// Outputs per batch (P_b); clamped to P.
    pub output_batch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub freeze: Vec<FreezeTarget>,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.input_batch == 0 || self.output_batch == 0 {
            return Err(Error::argument("train", "batch sizes must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::argument("train", "need at least one epoch"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::argument("train", "learning rate must be finite and non-negative"));
        }
        Ok(())
    }
}

/// One epoch of the training record.
#[derive(Clone, Copy, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch objective over the epoch's steps.
    pub elbo: f64,
    /// Wall-clock seconds the epoch took.
    pub seconds: f64,
    /// Euclidean norm of the full parameter vector after the epoch.
    pub param_norm: f64,
}

/// Per-epoch training record.
#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_elbo(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.elbo)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,elbo,seconds\n");
        for e in &self.epochs {
            writeln!(s, "{},{},{:.6}", e.epoch, format_float(e.elbo), e.seconds).unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// The observed index set Ω with O(1) membership lookup.
pub struct ObservedSet {
    total_inputs: usize,
    total_outputs: usize,
    pairs: HashMap<(usize, usize), f64>,
}

impl ObservedSet {
    pub fn from_dataset(ds: &Dataset) -> ObservedSet {
        ObservedSet {
            total_inputs: ds.input_count(),
            total_outputs: ds.output_count(),
            pairs: ds.observations.iter().map(|o| ((o.input, o.output), o.y)).collect(),
        }
    }

    pub fn observed_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn get(&self, input: usize, output: usize) -> Option<f64> {
        self.pairs.get(&(input, output)).copied()
    }

    pub fn data_scale(&self) -> DataScale {
        DataScale {
            total_inputs: self.total_inputs,
            total_outputs: self.total_outputs,
            observed_pairs: self.pairs.len(),
        }
    }

    /// Every observed pair as a full-data batch.
    pub fn full_batch(&self, ds: &Dataset) -> Batch {
        Batch::full(self.total_inputs, self.total_outputs, ds.triples())
    }
}

/// Sample a mini-batch: uniform input and output subsets without
/// replacement, keeping observed pairs in the cross product and
/// resampling while the intersection is empty.
pub fn sample_batch(
    obs: &ObservedSet,
    input_batch: usize,
    output_batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    if obs.pairs.is_empty() {
        return Err(Error::argument("sample_batch", "dataset has no observed pairs"));
    }
    let n_b = input_batch.min(obs.total_inputs).max(1);
    let p_b = output_batch.min(obs.total_outputs).max(1);
    for _ in 0..10_000 {
        let inputs = index::sample(rng, obs.total_inputs, n_b).into_vec();
        let outputs = index::sample(rng, obs.total_outputs, p_b).into_vec();
        let mut pairs = Vec::new();
        for &n in &inputs {
            for &p in &outputs {
                if let Some(y) = obs.get(n, p) {
                    pairs.push((n, p, y));
                }
            }
        }
        if !pairs.is_empty() {
            return Ok(Batch { input_count: n_b, outputs, pairs });
        }
    }
    Err(Error::argument(
        "sample_batch",
        "no sampled batch intersected the observed pairs in 10000 attempts",
    ))
}

/// Euclidean norm of a flat parameter list.
pub fn param_norm(params: &[(String, Tensor)]) -> f64 {
    params
        .iter()
        .flat_map(|(_, t)| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, sizes: &[usize]) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// One ascent step over the non-frozen parameters.
    fn ascend(&mut self, params: &mut [(String, Tensor)], grads: &[Tensor], frozen: &[bool]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, value)) in params.iter_mut().enumerate() {
            if frozen[i] {
                continue;
            }
            let g = grads[i].data();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut out = Vec::with_capacity(g.len());
            for (k, (old, gk)) in value.iter().zip(g.iter()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                out.push(old + self.lr * mhat / (vhat.sqrt() + self.eps));
            }
            *value = value.with_data(out);
        }
    }
}

/// Check that the model and dataset agree before training or evaluation.
pub fn check_model_dataset(model: &Model, ds: &Dataset) -> Result<()> {
    model.validate()?;
    ds.validate()?;
    let d_h = model.latents.as_ref().map_or(0, |l| l.config.d_h);
    if model.embedder.config.d_x != ds.input_dim() || model.embedder.config.d_h != d_h {
        return Err(Error::argument(
            "train",
            format!(
                "embedder expects {} input + {} latent coordinates, dataset provides {} (+{})",
                model.embedder.config.d_x,
                model.embedder.config.d_h,
                ds.input_dim(),
                d_h
            ),
        ));
    }
    if let Some(l) = &model.latents {
        if l.config.outputs != ds.output_count() {
            return Err(Error::argument(
                "train",
                format!(
                    "model carries latent coordinates for {} outputs, dataset has {}",
                    l.config.outputs,
                    ds.output_count()
                ),
            ));
        }
    }
    for (k, o) in ds.observations.iter().enumerate() {
        model.likelihood.validate_observation(o.y).map_err(|e| {
            Error::argument("train", format!("observation {k} is invalid for the likelihood: {e}"))
        })?;
    }
    Ok(())
}

/// Run the training loop, mutating the model's parameters in place.
pub fn train(ds: &Dataset, model: &mut Model, settings: &TrainSettings) -> Result<TrainHistory> {
    settings.validate()?;
    check_model_dataset(model, ds)?;
    let obs = ObservedSet::from_dataset(ds);
    if obs.observed_count() == 0 {
        return Err(Error::argument("train", "dataset has no observations"));
    }
    let scale = obs.data_scale();
    let n_b = settings.input_batch.min(scale.total_inputs).max(1);
    let p_b = settings.output_batch.min(scale.total_outputs).max(1);
    let steps_per_epoch = scale.observed_pairs.div_ceil(n_b * p_b);

    let mut params = model.params();
    let frozen: Vec<bool> = params
        .iter()
        .map(|(name, _)| settings.freeze.iter().any(|f| f.covers(name)))
        .collect();
    let sizes: Vec<usize> = params.iter().map(|(_, t)| t.len()).collect();
    let mut adam = Adam::new(settings.learning_rate, &sizes);
    let mut history = TrainHistory::default();
    let mut global_step = 0usize;

    for epoch in 0..settings.epochs {
        let started = Instant::now();
        let mut elbo_sum = 0.0;
        for step in 0..steps_per_epoch {
            let mut batch_rng =
                rng::stream(settings.seed, &[purpose::BATCH, epoch as u64, step as u64]);
            let mut noise_rng =
                rng::stream(settings.seed, &[purpose::NOISE, epoch as u64, step as u64]);
            let batch = sample_batch(&obs, n_b, p_b, &mut batch_rng)?;

            let tape = Tape::new();
            let leaves: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
            let eps = svgp::draw_latent_noise(model, batch.outputs.len(), &mut noise_rng);
            let objective = svgp::elbo_graph(&leaves, &ds.inputs, &batch, model, &scale, &eps)?;
            let value = objective.value().item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step: global_step,
                    epoch,
                    value,
                    param_norm: param_norm(&params),
                });
            }
            let grads = objective.backward();
            let gs: Vec<Tensor> = leaves.iter().map(|l| grads.get(l)).collect();
            if gs.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged {
                    step: global_step,
                    epoch,
                    value,
                    param_norm: param_norm(&params),
                });
            }
            adam.ascend(&mut params, &gs, &frozen);
            elbo_sum += value;
            global_step += 1;
        }
        history.epochs.push(EpochRecord {
            epoch,
            elbo: elbo_sum / steps_per_epoch as f64,
            seconds: started.elapsed().as_secs_f64(),
            param_norm: param_norm(&params),
        });
    }
    model.set_params(&params.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>());
    Ok(history)
}

/// The full-data objective at the model's current parameters (one pass
/// over every observed pair; Monte-Carlo latent draws from the given seed).
pub fn full_data_elbo(ds: &Dataset, model: &mut Model, seed: u64) -> Result<f64> {
    check_model_dataset(model, ds)?;
    let obs = ObservedSet::from_dataset(ds);
    if obs.observed_count() == 0 {
        return Err(Error::argument("elbo", "dataset has no observations"));
    }
    let scale = obs.data_scale();
    let batch = obs.full_batch(ds);
    let mut noise_rng = rng::stream(seed, &[purpose::NOISE, 0, 0]);
    svgp::elbo_minibatch(&ds.inputs, &batch, model, &scale, &mut noise_rng)
}

/// Validate the full-objective gradients on this dataset against central
/// finite differences at a fixed latent-noise draw.
///
/// Differentiating through an active spectral normalization treats the
/// power vectors as constants, which is exact only at their fixed point;
/// a normalized embedder therefore gets its iteration count raised and a
/// warm-up phase so every displaced evaluation re-converges.  Returns the
/// per-parameter report; callers decide their own tolerance.
pub fn gradient_check_model(
    ds: &Dataset,
    model: &Model,
    seed: u64,
    step: f64,
) -> Result<crate::diffmath::GradReport> {
    check_model_dataset(model, ds)?;
    let obs = ObservedSet::from_dataset(ds);
    if obs.observed_count() == 0 {
        return Err(Error::argument("grad_check", "dataset has no observations"));
    }
    let mut model = model.clone();
    let normalized = model.embedder.config.sn_bound.is_some()
        && model.embedder.config.variant == crate::embedder::EmbedderVariant::Rcnn;
    if normalized {
        model.embedder.config.t_train = 30;
    }
    let scale = obs.data_scale();
    let batch = obs.full_batch(ds);
    let mut noise_rng = rng::stream(seed, &[purpose::NOISE, 0, 0]);
    let eps = svgp::draw_latent_noise(&model, batch.outputs.len(), &mut noise_rng);
    let cell = std::cell::RefCell::new(model);
    if normalized {
        for _ in 0..300 {
            let m = &mut cell.borrow_mut();
            let tape = Tape::new();
            let params = m.params();
            let leaves: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
            svgp::elbo_graph(&leaves, &ds.inputs, &batch, m, &scale, &eps)?;
        }
    }
    let params = cell.borrow().params();
    crate::diffmath::grad_check(
        |_tape, vars| {
            svgp::elbo_graph(vars, &ds.inputs, &batch, &mut cell.borrow_mut(), &scale, &eps)
        },
        &params,
        step,
    )
}
