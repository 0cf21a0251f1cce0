//! Flat key-value configuration files.
//!
//! Format: one `key = value` per line, `#` starts a comment, blank lines
//! are skipped.  Keys are typed and grouped by dotted prefix (`model.*`,
//! `likelihood.*`, `bound.*`, `train.*`, `split.*`, `synth.*`).  Unknown
//! or duplicate keys are errors — a silent typo in a hyperparameter name
//! is the top reproduction hazard, so nothing is ignored.
//!
//! Two file kinds share the syntax: run configurations
//! ([`parse_run_config`]) driving `train`/`gradcheck`, and generator
//! specs ([`parse_synth_spec`]) driving `synth`.

use std::collections::HashMap;

use crate::data::Dataset;
use crate::embedder::{Activation, Embedder, EmbedderConfig, EmbedderVariant};
use crate::error::{Error, Result};
use crate::kernel::KernelHyperparams;
use crate::latent::{LatentConfig, LatentState};
use crate::likelihood::{GaussianLik, Likelihood, ZinbLik};
use crate::model::{initial_inducing_locations, Model};
use crate::rng::{purpose, stream};
use crate::split::{SplitScheme, SplitSpec};
use crate::svgp::{BoundKind, BoundOptions, InducingState};
use crate::synth::{SynthLikelihood, SynthSpec};
use crate::trainer::{FreezeTarget, TrainSettings};

/// Parsed but untyped key-value entries; typed accessors consume keys so
/// that leftovers can be reported as unknown.
pub struct ConfigMap {
    entries: HashMap<String, (String, usize)>,
}

pub fn parse_kv(text: &str) -> Result<ConfigMap> {
    let mut entries = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(at) => &raw[..at],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {line_no}: expected 'key = value', got '{line}'"
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config(format!(
                "line {line_no}: empty key or value in '{line}'"
            )));
        }
        if let Some((_, first)) = entries.insert(key.clone(), (value, line_no)) {
            return Err(Error::Config(format!(
                "duplicate key '{key}' on line {line_no} (first set on line {first})"
            )));
        }
    }
    Ok(ConfigMap { entries })
}

impl ConfigMap {
    /// Remove and return a raw value.
    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(v, _)| v)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str, kind: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("key '{key}': cannot parse '{v}' as {kind}"))
            }),
        }
    }

    pub fn f64_opt(&mut self, key: &str) -> Result<Option<f64>> {
        let v: Option<f64> = self.parsed(key, "a number")?;
        if let Some(x) = v {
            if !x.is_finite() {
                return Err(Error::Config(format!("key '{key}': value must be finite")));
            }
        }
        Ok(v)
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    pub fn usize_opt(&mut self, key: &str) -> Result<Option<usize>> {
        self.parsed(key, "a non-negative integer")
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        Ok(self.usize_opt(key)?.unwrap_or(default))
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        Ok(self.parsed(key, "a non-negative integer")?.unwrap_or(default))
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::Config(format!(
                "key '{key}': expected 'true' or 'false', got '{v}'"
            ))),
        }
    }

    pub fn f64_list_opt(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|piece| {
                    piece.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!(
                            "key '{key}': cannot parse '{}' as a number",
                            piece.trim()
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    /// Error out if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let listed = keys.iter().map(|k| format!("'{k}'")).collect::<Vec<_>>().join(", ");
        Err(Error::Config(format!("unknown configuration keys: {listed}")))
    }
}

/// Architecture choices for [`RunConfig::build_model`].
#[derive(Clone, Debug)]
pub struct ModelSettings {
    pub variant: EmbedderVariant,
    /// Latent output dimension D_H; 0 disables per-output latents.
    pub latent_dim: usize,
    /// Embedding width D_T; `None` means D_X + D_H.
    pub embed_dim: Option<usize>,
    pub blocks: usize,
    pub lipschitz_bound: Option<f64>,
    pub power_iterations: usize,
    pub inducing: usize,
    pub latent_dense: bool,
    pub prior_scale: f64,
}

#[derive(Clone, Debug)]
pub enum LikelihoodSettings {
    Gaussian { noise: f64 },
    Zinb { alpha: f64, k_m: f64, scale: f64, nodes: usize },
}

#[derive(Clone, Debug)]
pub struct BoundSettings {
    pub kind: BoundKind,
    pub v: f64,
    pub samples: usize,
}

/// Batch sizes stay optional until a dataset fixes the full extents.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub input_batch: Option<usize>,
    pub output_batch: Option<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub freeze: Vec<FreezeTarget>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelSettings,
    pub likelihood: LikelihoodSettings,
    pub bound: BoundSettings,
    pub train: TrainConfig,
    pub split: Option<SplitSpec>,
}

pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut map = parse_kv(text)?;
    let cfg = run_config_from_map(&mut map)?;
    map.finish()?;
    Ok(cfg)
}

/// Extract the run-config keys from an already-parsed map (shared with
/// grid files, which append their own sections).
pub fn run_config_from_map(map: &mut ConfigMap) -> Result<RunConfig> {
    let variant = match map.take("model.variant") {
        None => EmbedderVariant::Rcnn,
        Some(v) => EmbedderVariant::parse(&v)?,
    };
    let rcnn_only =
        ["model.blocks", "model.lipschitz_bound", "model.power_iterations"];
    if variant != EmbedderVariant::Rcnn {
        for key in rcnn_only {
            if map.contains(key) {
                return Err(Error::Config(format!(
                    "key '{key}' only applies to the rcnn embedder variant"
                )));
            }
        }
    }
    let lipschitz_bound = match map.take("model.lipschitz_bound") {
        None => Some(1.0),
        Some(v) if v == "none" => None,
        Some(v) => {
            let c: f64 = v.parse().map_err(|_| {
                Error::Config(format!(
                    "key 'model.lipschitz_bound': expected a number or 'none', got '{v}'"
                ))
            })?;
            Some(c)
        }
    };
    let model = ModelSettings {
        variant,
        latent_dim: map.usize_or("model.latent_dim", 2)?,
        embed_dim: map.usize_opt("model.embed_dim")?,
        blocks: map.usize_or("model.blocks", 3)?,
        lipschitz_bound,
        power_iterations: map.usize_or("model.power_iterations", 1)?,
        inducing: map.usize_or("model.inducing", 50)?,
        latent_dense: map.bool_or("model.latent_dense", false)?,
        prior_scale: map.f64_or("model.prior_scale", 1.0)?,
    };

    let kind = map.take("likelihood.kind").unwrap_or_else(|| "gaussian".into());
    let likelihood = match kind.as_str() {
        "gaussian" => {
            for key in ["likelihood.alpha", "likelihood.k_m", "likelihood.scale", "likelihood.nodes"] {
                if map.contains(key) {
                    return Err(Error::Config(format!(
                        "key '{key}' only applies to the zinb likelihood"
                    )));
                }
            }
            LikelihoodSettings::Gaussian { noise: map.f64_or("likelihood.noise", 1.0)? }
        }
        "zinb" => {
            if map.contains("likelihood.noise") {
                return Err(Error::Config(
                    "key 'likelihood.noise' only applies to the gaussian likelihood".into(),
                ));
            }
            LikelihoodSettings::Zinb {
                alpha: map.f64_or("likelihood.alpha", 1.0)?,
                k_m: map.f64_or("likelihood.k_m", 0.1)?,
                scale: map.f64_or("likelihood.scale", 1.0)?,
                nodes: map.usize_or("likelihood.nodes", 20)?,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "key 'likelihood.kind': expected 'gaussian' or 'zinb', got '{other}'"
            )))
        }
    };

    let bound = BoundSettings {
        kind: match map.take("bound.kind").as_deref() {
            None | Some("standard") => BoundKind::Standard,
            Some("tighter") => BoundKind::Tighter,
            Some(other) => {
                return Err(Error::Config(format!(
                    "key 'bound.kind': expected 'standard' or 'tighter', got '{other}'"
                )))
            }
        },
        v: map.f64_or("bound.v", 1.0)?,
        samples: map.usize_or("bound.samples", 1)?,
    };

    let freeze = match map.take("train.freeze") {
        None => Vec::new(),
        Some(list) => list
            .split(',')
            .map(|piece| FreezeTarget::parse(piece.trim()))
            .collect::<Result<Vec<_>>>()?,
    };
    let train = TrainConfig {
        input_batch: map.usize_opt("train.input_batch")?,
        output_batch: map.usize_opt("train.output_batch")?,
        epochs: map.usize_or("train.epochs", 100)?,
        learning_rate: map.f64_or("train.learning_rate", 0.01)?,
        seed: map.u64_or("train.seed", 0)?,
        freeze,
    };

    let split = split_spec_from_map(map)?;
    Ok(RunConfig { model, likelihood, bound, train, split })
}

/// Optional `split.*` group; present iff `split.scheme` is set.
pub fn split_spec_from_map(map: &mut ConfigMap) -> Result<Option<SplitSpec>> {
    let Some(scheme) = map.take("split.scheme") else {
        for key in
            ["split.fraction", "split.outputs_per_block", "split.block_length", "split.seed"]
        {
            if map.contains(key) {
                return Err(Error::Config(format!(
                    "key '{key}' needs 'split.scheme' to be set"
                )));
            }
        }
        return Ok(None);
    };
    let scheme = match scheme.as_str() {
        "random" => SplitScheme::Random { fraction: map.f64_or("split.fraction", 0.2)? },
        "block-wise" => SplitScheme::BlockWise {
            outputs_per_block: map.usize_or("split.outputs_per_block", 1)?,
            block_length: map.usize_or("split.block_length", 1)?,
        },
        other => {
            return Err(Error::Config(format!(
                "key 'split.scheme': expected 'random' or 'block-wise', got '{other}'"
            )))
        }
    };
    Ok(Some(SplitSpec { scheme, seed: map.u64_or("split.seed", 0)? }))
}

pub fn parse_synth_spec(text: &str) -> Result<SynthSpec> {
    let mut map = parse_kv(text)?;
    let spec = synth_spec_from_map(&mut map)?;
    map.finish()?;
    spec.validate()?;
    Ok(spec)
}

pub fn synth_spec_from_map(map: &mut ConfigMap) -> Result<SynthSpec> {
    let inputs = map.usize_or("synth.inputs", 40)?;
    let outputs = map.usize_or("synth.outputs", 10)?;
    let input_dim = map.usize_or("synth.input_dim", 1)?;
    let latent_dim = map.usize_or("synth.latent_dim", 2)?;
    let input_lengthscales = map
        .f64_list_opt("synth.input_lengthscales")?
        .unwrap_or_else(|| vec![1.0; input_dim]);
    let latent_lengthscales = map
        .f64_list_opt("synth.latent_lengthscales")?
        .unwrap_or_else(|| vec![1.0; latent_dim]);
    let kind = map.take("synth.likelihood").unwrap_or_else(|| "gaussian".into());
    let likelihood = match kind.as_str() {
        "gaussian" => SynthLikelihood::Gaussian { noise: map.f64_or("synth.noise", 0.1)? },
        "zinb" => SynthLikelihood::Zinb {
            alpha: map.f64_or("synth.alpha", 1.0)?,
            k_m: map.f64_or("synth.k_m", 0.1)?,
            scale: map.f64_or("synth.scale", 1.0)?,
        },
        other => {
            return Err(Error::Config(format!(
                "key 'synth.likelihood': expected 'gaussian' or 'zinb', got '{other}'"
            )))
        }
    };
    Ok(SynthSpec {
        inputs,
        outputs,
        input_dim,
        latent_dim,
        input_lengthscales,
        latent_lengthscales,
        outputscale: map.f64_or("synth.outputscale", 1.0)?,
        input_low: map.f64_or("synth.input_low", -2.0)?,
        input_high: map.f64_or("synth.input_high", 2.0)?,
        likelihood,
        latent_priors: map.bool_or("synth.latent_priors", false)?,
    })
}

impl RunConfig {
    /// Assemble a freshly initialized model for the given dataset, with
    /// every random draw taken from the init stream of `train.seed`.
    pub fn build_model(&self, ds: &Dataset) -> Result<Model> {
        let d_x = ds.input_dim();
        let d_h = self.model.latent_dim;
        let d_t = match (self.model.variant, self.model.embed_dim) {
            (EmbedderVariant::Rcnn, dim) => dim.unwrap_or(d_x + d_h),
            (_, None) => d_x + d_h,
            (_, Some(dim)) if dim == d_x + d_h => dim,
            (v, Some(dim)) => {
                return Err(Error::Config(format!(
                    "embedder variant {} fixes the embedding width to D_X + D_H = {}, got model.embed_dim = {dim}",
                    v.name(),
                    d_x + d_h
                )))
            }
        };
        let emb_cfg = EmbedderConfig {
            variant: self.model.variant,
            d_x,
            d_h,
            d_t,
            blocks: self.model.blocks,
            sn_bound: match self.model.variant {
                EmbedderVariant::Rcnn => self.model.lipschitz_bound,
                _ => None,
            },
            t_train: self.model.power_iterations,
            activation: Activation::Tanh,
        };
        let mut rng = stream(self.train.seed, &[purpose::INIT]);
        let embedder = Embedder::new(emb_cfg, &mut rng)?;
        let latents = if d_h > 0 {
            let mut state = LatentState::new(
                LatentConfig {
                    outputs: ds.output_count(),
                    d_h,
                    dense_factor: self.model.latent_dense,
                    prior_scale: self.model.prior_scale,
                },
                &mut rng,
            )?;
            if let Some(priors) = &ds.output_priors {
                if priors.cols() != d_h {
                    return Err(Error::Config(format!(
                        "dataset provides {}-dimensional output priors but model.latent_dim = {d_h}",
                        priors.cols()
                    )));
                }
                state.set_prior_means(priors.clone())?;
            }
            Some(state)
        } else {
            None
        };
        let likelihood = match &self.likelihood {
            LikelihoodSettings::Gaussian { noise } => Likelihood::Gaussian(GaussianLik::new(*noise)?),
            LikelihoodSettings::Zinb { alpha, k_m, scale, nodes } => {
                Likelihood::Zinb(ZinbLik::new(*alpha, *k_m, *scale, *nodes)?)
            }
        };
        let z = initial_inducing_locations(
            &embedder,
            latents.as_ref(),
            &ds.inputs,
            self.model.inducing,
            &mut rng,
        )?;
        let model = Model {
            kernel: KernelHyperparams::unit(d_t),
            embedder,
            latents,
            likelihood,
            inducing: InducingState::new(z)?,
            bound: BoundOptions::new(self.bound.kind, self.bound.v, self.bound.samples)?,
        };
        model.validate()?;
        Ok(model)
    }

    /// Resolve batch sizes against the dataset extents.
    pub fn train_settings(&self, ds: &Dataset) -> TrainSettings {
        TrainSettings {
            input_batch: self.train.input_batch.unwrap_or_else(|| ds.input_count()),
            output_batch: self.train.output_batch.unwrap_or_else(|| ds.output_count()),
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            seed: self.train.seed,
            freeze: self.train.freeze.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::synth;

    fn toy_dataset() -> Dataset {
        let spec = SynthSpec {
            inputs: 6,
            outputs: 3,
            input_dim: 2,
            latent_dim: 2,
            input_lengthscales: vec![1.0, 1.0],
            latent_lengthscales: vec![1.0, 1.0],
            outputscale: 1.0,
            input_low: -1.0,
            input_high: 1.0,
            likelihood: SynthLikelihood::Gaussian { noise: 0.05 },
            latent_priors: false,
        };
        synth::generate(&spec, 1).unwrap().0
    }

    #[test]
    fn defaults_build_a_valid_model() {
        let cfg = parse_run_config("").unwrap();
        let ds = toy_dataset();
        let model = cfg.build_model(&ds).unwrap();
        assert_eq!(model.embedder.config.d_x, 2);
        assert_eq!(model.embedder.config.d_h, 2);
        assert_eq!(model.embedder.config.d_t, 4);
        assert_eq!(model.embedder.config.blocks, 3);
        assert_eq!(model.embedder.config.sn_bound, Some(1.0));
        assert_eq!(model.inducing.count(), 50);
        assert!(model.latents.is_some());
        let s = cfg.train_settings(&ds);
        assert_eq!((s.input_batch, s.output_batch), (6, 3));
        assert_eq!(s.epochs, 100);
    }

    #[test]
    fn unknown_keys_are_reported_by_name() {
        let err = parse_run_config("model.latnt_dim = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown configuration keys"), "{msg}");
        assert!(msg.contains("model.latnt_dim"), "{msg}");
    }

    #[test]
    fn duplicate_and_malformed_lines_are_rejected() {
        assert!(parse_kv("a = 1\na = 2\n").is_err());
        assert!(parse_kv("just words\n").is_err());
        assert!(parse_kv("x =\n").is_err());
        // Comments and blanks are fine, including trailing comments.
        let mut map = parse_kv("# header\n\ntrain.epochs = 7 # tuned\n").unwrap();
        assert_eq!(map.usize_or("train.epochs", 0).unwrap(), 7);
        map.finish().unwrap();
    }

    #[test]
    fn typed_keys_reject_wrong_types() {
        assert!(parse_run_config("train.epochs = soon\n").is_err());
        assert!(parse_run_config("train.learning_rate = fast\n").is_err());
        assert!(parse_run_config("model.latent_dense = yes\n").is_err());
        assert!(parse_run_config("likelihood.kind = poisson\n").is_err());
        assert!(parse_run_config("bound.kind = loosest\n").is_err());
        assert!(parse_run_config("train.freeze = kernel, everything\n").is_err());
    }

    #[test]
    fn likelihood_keys_must_match_the_kind() {
        let err = parse_run_config("likelihood.kind = gaussian\nlikelihood.alpha = 0.5\n")
            .unwrap_err();
        assert!(err.to_string().contains("likelihood.alpha"), "{err}");
        let err = parse_run_config("likelihood.kind = zinb\nlikelihood.noise = 0.5\n")
            .unwrap_err();
        assert!(err.to_string().contains("likelihood.noise"), "{err}");
        let cfg = parse_run_config(
            "likelihood.kind = zinb\nlikelihood.alpha = 0.5\nlikelihood.nodes = 10\n",
        )
        .unwrap();
        match cfg.likelihood {
            LikelihoodSettings::Zinb { alpha, nodes, .. } => {
                assert_eq!(alpha, 0.5);
                assert_eq!(nodes, 10);
            }
            _ => panic!("expected zinb settings"),
        }
    }

    #[test]
    fn rcnn_only_keys_are_rejected_for_other_variants() {
        let err =
            parse_run_config("model.variant = identity\nmodel.blocks = 2\n").unwrap_err();
        assert!(err.to_string().contains("model.blocks"), "{err}");
        // Identity with a mismatched explicit width is caught at build time.
        let cfg = parse_run_config("model.variant = identity\nmodel.embed_dim = 9\n").unwrap();
        assert!(cfg.build_model(&toy_dataset()).is_err());
    }

    #[test]
    fn lipschitz_bound_accepts_none_and_numbers() {
        let cfg = parse_run_config("model.lipschitz_bound = none\n").unwrap();
        assert_eq!(cfg.model.lipschitz_bound, None);
        let cfg = parse_run_config("model.lipschitz_bound = 0.005\n").unwrap();
        assert_eq!(cfg.model.lipschitz_bound, Some(0.005));
        assert!(parse_run_config("model.lipschitz_bound = tight\n").is_err());
    }

    #[test]
    fn split_group_parses_and_requires_its_scheme() {
        let cfg = parse_run_config(
            "split.scheme = random\nsplit.fraction = 0.25\nsplit.seed = 4\n",
        )
        .unwrap();
        assert_eq!(
            cfg.split,
            Some(SplitSpec { scheme: SplitScheme::Random { fraction: 0.25 }, seed: 4 })
        );
        let err = parse_run_config("split.fraction = 0.25\n").unwrap_err();
        assert!(err.to_string().contains("split.scheme"), "{err}");
        let cfg = parse_run_config(
            "split.scheme = block-wise\nsplit.outputs_per_block = 2\nsplit.block_length = 5\n",
        )
        .unwrap();
        assert!(matches!(
            cfg.split,
            Some(SplitSpec { scheme: SplitScheme::BlockWise { outputs_per_block: 2, block_length: 5 }, .. })
        ));
    }

    #[test]
    fn synth_specs_parse_with_defaults_and_validation() {
        let spec = parse_synth_spec("").unwrap();
        assert_eq!((spec.inputs, spec.outputs), (40, 10));
        assert_eq!(spec.input_lengthscales, vec![1.0]);
        assert_eq!(spec.likelihood, SynthLikelihood::Gaussian { noise: 0.1 });

        let spec = parse_synth_spec(
            "synth.inputs = 20\nsynth.input_dim = 2\nsynth.input_lengthscales = 0.5, 0.8\n\
             synth.likelihood = zinb\nsynth.alpha = 0.7\nsynth.latent_priors = true\n",
        )
        .unwrap();
        assert_eq!(spec.input_lengthscales, vec![0.5, 0.8]);
        assert!(spec.latent_priors);
        assert!(matches!(spec.likelihood, SynthLikelihood::Zinb { alpha, .. } if alpha == 0.7));

        // Validation runs at parse time: mismatched lengthscale count.
        let err = parse_synth_spec("synth.input_dim = 2\nsynth.input_lengthscales = 0.5\n")
            .unwrap_err();
        assert!(err.to_string().contains("lengthscales"), "{err}");
    }

    #[test]
    fn dataset_priors_flow_into_the_latent_state() {
        let spec = SynthSpec {
            inputs: 5,
            outputs: 3,
            input_dim: 1,
            latent_dim: 2,
            input_lengthscales: vec![1.0],
            latent_lengthscales: vec![1.0, 1.0],
            outputscale: 1.0,
            input_low: -1.0,
            input_high: 1.0,
            likelihood: SynthLikelihood::Gaussian { noise: 0.0 },
            latent_priors: true,
        };
        let (ds, truth) = synth::generate(&spec, 2).unwrap();
        let cfg = parse_run_config("model.latent_dim = 2\n").unwrap();
        let model = cfg.build_model(&ds).unwrap();
        let priors = model.latents.as_ref().unwrap().prior_means();
        for j in 0..3 {
            assert_eq!(priors.row(j), &truth.latents[j][..]);
        }
        // Mismatched width is an error.
        let cfg = parse_run_config("model.latent_dim = 3\n").unwrap();
        assert!(cfg.build_model(&ds).is_err());

        // Degenerate mode: no latents at all.
        let mut flat = ds.clone();
        flat.output_priors = None;
        let cfg = parse_run_config("model.latent_dim = 0\n").unwrap();
        let model = cfg.build_model(&flat).unwrap();
        assert!(model.latents.is_none());
        assert_eq!(model.embedder.config.d_t, 1);
    }

    #[test]
    fn observations_do_not_affect_model_construction() {
        // Building depends on the tables, not on which cells are observed.
        let ds = toy_dataset();
        let mut sparse = ds.clone();
        sparse.observations =
            vec![Observation { input: 0, output: 0, y: 1.0 }, Observation {
                input: 3,
                output: 2,
                y: -0.5,
            }];
        let cfg = parse_run_config("train.seed = 9\n").unwrap();
        let a = cfg.build_model(&ds).unwrap();
        let b = cfg.build_model(&sparse).unwrap();
        for ((na, ta), (nb, tb)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "parameter {na} differs");
        }
    }
}
