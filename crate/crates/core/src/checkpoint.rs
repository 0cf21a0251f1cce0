//! Self-describing, bit-stable model checkpoints.
//!
//! Layout: a version line, a checksum line, then a JSON payload —
//!
//! ```text
//! mogp-checkpoint v1
//! checksum <sha256 of the payload bytes>
//! { ... }
//! ```
//!
//! Every float is stored as the 16-hex-digit big-endian encoding of its
//! IEEE-754 bits, so a save → load → save cycle is byte-identical and no
//! decimal rounding can perturb reloaded models.  The payload carries the
//! full architecture (embedder, latents, likelihood constants, bound),
//! the output identities, every trainable parameter by registry name, and
//! the persistent power-iteration vectors — reloading must not have to
//! re-converge anything.
//!
//! The checksum is verified before any parsing: a corrupted file fails
//! closed with no partially constructed model.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffmath::Tensor;
use crate::embedder::{Activation, Embedder, EmbedderConfig, EmbedderVariant, PowerState};
use crate::error::{Error, Result};
use crate::kernel::KernelHyperparams;
use crate::latent::{LatentConfig, LatentState};
use crate::likelihood::{GaussianLik, Likelihood, ZinbLik};
use crate::model::Model;
use crate::rng::stream;
use crate::svgp::{BoundKind, BoundOptions, InducingState};

const VERSION_LINE: &str = "mogp-checkpoint v1";

/// A trained model together with the output identities it was fit to.
#[derive(Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub output_ids: Vec<String>,
}

// --- exact float encoding ---------------------------------------------

fn floats_to_hex(vals: &[f64]) -> String {
    let mut s = String::with_capacity(vals.len() * 16);
    for v in vals {
        s.push_str(&format!("{:016x}", v.to_bits()));
    }
    s
}

fn hex_to_floats(s: &str, what: &str) -> Result<Vec<f64>> {
    if s.len() % 16 != 0 || !s.is_ascii() {
        return Err(Error::Checkpoint(format!(
            "{what}: hex float block has invalid length {}",
            s.len()
        )));
    }
    s.as_bytes()
        .chunks(16)
        .map(|chunk| {
            let text = std::str::from_utf8(chunk).expect("ascii checked above");
            u64::from_str_radix(text, 16)
                .map(f64::from_bits)
                .map_err(|_| Error::Checkpoint(format!("{what}: invalid hex digits '{text}'")))
        })
        .collect()
}

fn f64_to_hex(v: f64) -> String {
    floats_to_hex(&[v])
}

fn hex_to_f64(s: &str, what: &str) -> Result<f64> {
    let vals = hex_to_floats(s, what)?;
    if vals.len() != 1 {
        return Err(Error::Checkpoint(format!("{what}: expected one float")));
    }
    Ok(vals[0])
}

// --- payload schema ----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: String,
}

impl TensorRecord {
    fn from(name: &str, t: &Tensor) -> TensorRecord {
        TensorRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: floats_to_hex(t.data()),
        }
    }

    fn decode(&self) -> Result<Tensor> {
        let vals = hex_to_floats(&self.data, &self.name)?;
        if vals.len() != self.shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!(
                "parameter '{}': {} values do not fill shape {:?}",
                self.name,
                vals.len(),
                self.shape
            )));
        }
        Ok(Tensor::new(self.shape.clone(), vals))
    }
}

#[derive(Serialize, Deserialize)]
struct EmbedderRecord {
    variant: String,
    d_x: usize,
    d_h: usize,
    d_t: usize,
    blocks: usize,
    /// Hex float, or absent for the unconstrained variant.
    sn_bound: Option<String>,
    t_train: usize,
    activation: String,
}

#[derive(Serialize, Deserialize)]
struct LatentRecord {
    outputs: usize,
    d_h: usize,
    dense_factor: bool,
    prior_scale: String,
    prior_means: TensorRecord,
}

#[derive(Serialize, Deserialize)]
struct LikelihoodRecord {
    kind: String,
    /// ZINB constants (hex floats); absent for gaussian.
    k_m: Option<String>,
    scale: Option<String>,
    nodes: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct BoundRecord {
    kind: String,
    mc_samples: usize,
    raw_v: String,
}

#[derive(Serialize, Deserialize)]
struct PowerRecord {
    u: String,
    v: String,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    embedder: EmbedderRecord,
    latent: Option<LatentRecord>,
    likelihood: LikelihoodRecord,
    bound: BoundRecord,
    output_ids: Vec<String>,
    params: Vec<TensorRecord>,
    power_states: Vec<PowerRecord>,
}

// --- save ---------------------------------------------------------------

fn encode(ckpt: &Checkpoint) -> String {
    let model = &ckpt.model;
    let ec = &model.embedder.config;
    let embedder = EmbedderRecord {
        variant: ec.variant.name().to_string(),
        d_x: ec.d_x,
        d_h: ec.d_h,
        d_t: ec.d_t,
        blocks: ec.blocks,
        sn_bound: ec.sn_bound.map(f64_to_hex),
        t_train: ec.t_train,
        activation: ec.activation.name().to_string(),
    };
    let latent = model.latents.as_ref().map(|l| LatentRecord {
        outputs: l.config.outputs,
        d_h: l.config.d_h,
        dense_factor: l.config.dense_factor,
        prior_scale: f64_to_hex(l.config.prior_scale),
        prior_means: TensorRecord::from("latent.prior_means", l.prior_means()),
    });
    let likelihood = match &model.likelihood {
        Likelihood::Gaussian(_) => LikelihoodRecord {
            kind: "gaussian".into(),
            k_m: None,
            scale: None,
            nodes: None,
        },
        Likelihood::Zinb(z) => LikelihoodRecord {
            kind: "zinb".into(),
            k_m: Some(f64_to_hex(z.k_m)),
            scale: Some(f64_to_hex(z.scale)),
            nodes: Some(z.nodes),
        },
    };
    let bound = BoundRecord {
        kind: match model.bound.kind {
            BoundKind::Standard => "standard".into(),
            BoundKind::Tighter => "tighter".into(),
        },
        mc_samples: model.bound.mc_samples,
        raw_v: {
            let raw = model.bound.params();
            f64_to_hex(raw[0].1.data()[0])
        },
    };
    let params = model
        .params()
        .iter()
        .map(|(name, t)| TensorRecord::from(name, t))
        .collect();
    let power_states = model
        .embedder
        .power_states()
        .iter()
        .map(|s| PowerRecord { u: floats_to_hex(&s.u), v: floats_to_hex(&s.v) })
        .collect();
    let payload = Payload {
        embedder,
        latent,
        likelihood,
        bound,
        output_ids: ckpt.output_ids.clone(),
        params,
        power_states,
    };
    serde_json::to_string_pretty(&payload).expect("checkpoint payload serializes")
}

/// Render the full checkpoint file contents.
pub fn render_checkpoint(ckpt: &Checkpoint) -> String {
    let payload = encode(ckpt);
    let digest = Sha256::digest(payload.as_bytes());
    format!("{VERSION_LINE}\nchecksum {digest:x}\n{payload}")
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, render_checkpoint(ckpt))?;
    Ok(())
}

// --- load ---------------------------------------------------------------

fn rebuild(payload: &Payload) -> Result<Checkpoint> {
    let er = &payload.embedder;
    let config = EmbedderConfig {
        variant: EmbedderVariant::parse(&er.variant)?,
        d_x: er.d_x,
        d_h: er.d_h,
        d_t: er.d_t,
        blocks: er.blocks,
        sn_bound: match &er.sn_bound {
            None => None,
            Some(h) => Some(hex_to_f64(h, "embedder.sn_bound")?),
        },
        t_train: er.t_train,
        activation: match er.activation.as_str() {
            "tanh" => Activation::Tanh,
            other => {
                return Err(Error::Checkpoint(format!("unknown activation '{other}'")))
            }
        },
    };
    // Construction randomness is irrelevant: every trainable value and
    // power vector is overwritten from the payload below.
    let mut scratch_rng = stream(0, &[0]);
    let mut embedder = Embedder::new(config, &mut scratch_rng)?;

    let stored_power: Vec<PowerState> = payload
        .power_states
        .iter()
        .map(|r| {
            Ok(PowerState {
                u: hex_to_floats(&r.u, "power state u")?,
                v: hex_to_floats(&r.v, "power state v")?,
            })
        })
        .collect::<Result<_>>()?;
    let have = embedder.power_states().len();
    if stored_power.len() != have {
        return Err(Error::Checkpoint(format!(
            "architecture expects {have} power states, payload has {}",
            stored_power.len()
        )));
    }
    embedder.set_power_states(&stored_power);

    let latents = match &payload.latent {
        None => None,
        Some(lr) => {
            let mut state = LatentState::new(
                LatentConfig {
                    outputs: lr.outputs,
                    d_h: lr.d_h,
                    dense_factor: lr.dense_factor,
                    prior_scale: hex_to_f64(&lr.prior_scale, "latent.prior_scale")?,
                },
                &mut scratch_rng,
            )?;
            state.set_prior_means(lr.prior_means.decode()?)?;
            Some(state)
        }
    };

    let likelihood = match payload.likelihood.kind.as_str() {
        "gaussian" => Likelihood::Gaussian(GaussianLik::new(1.0)?),
        "zinb" => {
            let missing =
                || Error::Checkpoint("zinb likelihood is missing its constants".into());
            let lr = &payload.likelihood;
            Likelihood::Zinb(ZinbLik::new(
                1.0,
                hex_to_f64(lr.k_m.as_ref().ok_or_else(missing)?, "likelihood.k_m")?,
                hex_to_f64(lr.scale.as_ref().ok_or_else(missing)?, "likelihood.scale")?,
                lr.nodes.ok_or_else(missing)?,
            )?)
        }
        other => {
            return Err(Error::Checkpoint(format!("unknown likelihood kind '{other}'")))
        }
    };

    let bound_kind = match payload.bound.kind.as_str() {
        "standard" => BoundKind::Standard,
        "tighter" => BoundKind::Tighter,
        other => return Err(Error::Checkpoint(format!("unknown bound kind '{other}'"))),
    };
    let mut bound = BoundOptions::new(bound_kind, 1.0, payload.bound.mc_samples)?;
    bound.set_params(&[Tensor::vector(vec![hex_to_f64(
        &payload.bound.raw_v,
        "bound.raw_v",
    )?])]);

    let z = payload
        .params
        .iter()
        .find(|r| r.name == "inducing.z")
        .ok_or_else(|| Error::Checkpoint("payload has no inducing locations".into()))?
        .decode()?;

    let mut model = Model {
        kernel: KernelHyperparams::unit(payload.embedder.d_t),
        embedder,
        latents,
        likelihood,
        inducing: InducingState::new(z)?,
        bound,
    };

    // The registry of the rebuilt architecture must agree with the stored
    // parameter list name-for-name before any value is applied.
    let expected: Vec<String> = model.params().iter().map(|(n, _)| n.clone()).collect();
    let stored: Vec<&String> = payload.params.iter().map(|r| &r.name).collect();
    if expected.len() != stored.len()
        || expected.iter().zip(&stored).any(|(a, b)| &a != b)
    {
        return Err(Error::Checkpoint(format!(
            "parameter registry mismatch: architecture expects {expected:?}, payload has {stored:?}"
        )));
    }
    let values: Vec<Tensor> =
        payload.params.iter().map(|r| r.decode()).collect::<Result<_>>()?;
    model.set_params(&values);
    model.validate()?;
    Ok(Checkpoint { model, output_ids: payload.output_ids.clone() })
}

/// Parse checkpoint file contents; the checksum is verified before the
/// payload is interpreted.
pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = text.splitn(3, '\n');
    let version = lines.next().unwrap_or("");
    if version != VERSION_LINE {
        return Err(Error::Checkpoint(format!(
            "unsupported version line '{version}' (this build reads '{VERSION_LINE}')"
        )));
    }
    let checksum_line = lines.next().unwrap_or("");
    let Some(stated) = checksum_line.strip_prefix("checksum ") else {
        return Err(Error::Checkpoint("missing checksum line".into()));
    };
    let payload_text = lines.next().unwrap_or("");
    let digest = format!("{:x}", Sha256::digest(payload_text.as_bytes()));
    if digest != stated.trim() {
        return Err(Error::Checkpoint(
            "integrity checksum mismatch — the file is corrupted or was edited".into(),
        ));
    }
    let payload: Payload = serde_json::from_str(payload_text)
        .map_err(|e| Error::Checkpoint(format!("invalid payload JSON: {e}")))?;
    rebuild(&payload)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    parse_checkpoint(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_run_config;
    use crate::synth::{self, SynthLikelihood, SynthSpec};

    fn trained_style_checkpoint(text_cfg: &str) -> Checkpoint {
        let spec = SynthSpec {
            inputs: 6,
            outputs: 3,
            input_dim: 1,
            latent_dim: 2,
            input_lengthscales: vec![1.0],
            latent_lengthscales: vec![1.0, 1.0],
            outputscale: 1.0,
            input_low: -1.5,
            input_high: 1.5,
            likelihood: SynthLikelihood::Gaussian { noise: 0.05 },
            latent_priors: false,
        };
        let (ds, _) = synth::generate(&spec, 8).unwrap();
        let cfg = parse_run_config(text_cfg).unwrap();
        let model = cfg.build_model(&ds).unwrap();
        Checkpoint { model, output_ids: ds.output_ids.clone() }
    }

    fn assert_bit_identical(a: &Checkpoint, b: &Checkpoint) {
        let (pa, pb) = (a.model.params(), b.model.params());
        assert_eq!(pa.len(), pb.len());
        for ((na, ta), (nb, tb)) in pa.iter().zip(pb.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape(), "{na}");
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "parameter {na} drifted");
            }
        }
        let (wa, wb) = (a.model.embedder.power_states(), b.model.embedder.power_states());
        assert_eq!(wa.len(), wb.len());
        for (sa, sb) in wa.iter().zip(wb.iter()) {
            for (x, y) in sa.u.iter().zip(&sb.u) {
                assert_eq!(x.to_bits(), y.to_bits(), "power u drifted");
            }
            for (x, y) in sa.v.iter().zip(&sb.v) {
                assert_eq!(x.to_bits(), y.to_bits(), "power v drifted");
            }
        }
        assert_eq!(a.output_ids, b.output_ids);
    }

    #[test]
    fn round_trip_is_bit_exact_for_every_configuration() {
        let configs = [
            "",
            "likelihood.kind = zinb\nlikelihood.alpha = 0.4\nbound.kind = tighter\n",
            "model.variant = identity\nmodel.latent_dim = 2\n",
            "model.variant = blockwise-scaling\nmodel.latent_dim = 2\n",
            "model.lipschitz_bound = none\nmodel.latent_dense = true\n",
            "model.latent_dim = 0\n",
        ];
        for cfg in configs {
            let ckpt = trained_style_checkpoint(cfg);
            let text = render_checkpoint(&ckpt);
            let back = parse_checkpoint(&text).unwrap();
            assert_bit_identical(&ckpt, &back);
            // A second render is byte-identical: nothing drifts through
            // decode/encode.
            assert_eq!(text, render_checkpoint(&back), "config: {cfg}");
        }
    }

    #[test]
    fn save_and_load_work_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = trained_style_checkpoint("");
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_bit_identical(&ckpt, &back);
    }

    #[test]
    fn version_mismatch_is_a_named_error() {
        let ckpt = trained_style_checkpoint("");
        let text = render_checkpoint(&ckpt).replace("mogp-checkpoint v1", "mogp-checkpoint v9");
        let err = parse_checkpoint(&text).err().expect("must fail");
        assert!(matches!(err, Error::Checkpoint(_)));
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn every_corrupted_payload_byte_fails_the_checksum() {
        let ckpt = trained_style_checkpoint("");
        let text = render_checkpoint(&ckpt);
        let payload_start = text.find('{').unwrap();
        let mut bytes = text.clone().into_bytes();
        // Flip a spread of payload bytes, one at a time.
        let len = bytes.len();
        for k in 0..40 {
            let at = payload_start + (k * 997) % (len - payload_start);
            let original = bytes[at];
            bytes[at] = if original == b'0' { b'1' } else { b'0' };
            if bytes[at] == original {
                continue;
            }
            let corrupted = String::from_utf8(bytes.clone()).unwrap();
            let err = parse_checkpoint(&corrupted).err().expect("must fail");
            assert!(
                err.to_string().contains("checksum"),
                "byte {at}: expected a checksum failure, got {err}"
            );
            bytes[at] = original;
        }
    }

    #[test]
    fn registry_mismatch_is_rejected() {
        let ckpt = trained_style_checkpoint("");
        let text = render_checkpoint(&ckpt);
        // Rename a parameter inside the payload and re-stamp the checksum,
        // simulating a structurally inconsistent but uncorrupted file.
        let payload_start = text.find('{').unwrap();
        let payload =
            text[payload_start..].replace("kernel.raw_outputscale", "kernel.raw_outputscele");
        let digest = Sha256::digest(payload.as_bytes());
        let doctored = format!("{VERSION_LINE}\nchecksum {digest:x}\n{payload}");
        let err = parse_checkpoint(&doctored).err().expect("must fail");
        assert!(err.to_string().contains("registry"), "{err}");
    }

    #[test]
    fn hex_encoding_survives_extreme_values() {
        let vals = [
            0.0,
            -0.0,
            f64::MIN_POSITIVE,
            5e-324,
            f64::MAX,
            -1.2345678901234567e-300,
            std::f64::consts::PI,
        ];
        let hex = floats_to_hex(&vals);
        let back = hex_to_floats(&hex, "test").unwrap();
        for (a, b) in vals.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(hex_to_floats("xyz", "test").is_err());
        assert!(hex_to_floats("0123456789abcdeg", "test").is_err());
    }
}
