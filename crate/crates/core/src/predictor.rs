//! Predictive posterior as a Monte-Carlo mixture of Gaussians.
//!
//! For a test input x* and output p*, each of S samples draws a latent
//! coordinate h⁽ˢ⁾ from the variational posterior q(h_{p*}) (or, in prior
//! mode, from N(μ₀, 0.1·I)), embeds (x*, h⁽ˢ⁾), and reads the marginal
//! N(μ⁽ˢ⁾, σ²⁽ˢ⁾) of q(f) there.  The predictive density is the equal-
//! weight mixture over components; the test NLL is
//!
//!   NLL = ln S − logsumexp_s  log q(y* | h⁽ˢ⁾)
//!
//! with the Gaussian component density N(y* | μ⁽ˢ⁾, σ²⁽ˢ⁾ + σ_y²) and the
//! count likelihood evaluated by plugging the component mean into the
//! link, zinb_logpmf(y*, link(μ⁽ˢ⁾)).  Mean-squared error uses the
//! mixture's observation-space predictive mean.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::data::{format_float, Dataset};
use crate::diffmath::dense;
use crate::embedder::FrozenEmbedder;
use crate::error::{Error, Result};
use crate::likelihood::{zinb_link, zinb_logpmf, zinb_moments, Likelihood};
use crate::model::Model;
use crate::rng::{purpose, standard_normal_vec, stream};
use crate::svgp::PosteriorCache;

/// Latent-sample count used at evaluation time unless overridden.
pub const DEFAULT_SAMPLES: usize = 20;

/// Prior-mode latent variance (extrapolation to weakly-known outputs).
pub const PRIOR_MODE_VARIANCE: f64 = 0.1;

/// An equal-weight mixture of Gaussian components over the latent
/// function value, carrying the likelihood that maps it to observations.
#[derive(Clone, Debug)]
pub struct MixturePrediction {
    /// Component means μ⁽ˢ⁾.
    pub means: Vec<f64>,
    /// Component variances σ²⁽ˢ⁾ (all ≥ 0).
    pub variances: Vec<f64>,
    /// Observation model shared by every component.
    pub likelihood: Likelihood,
}

impl MixturePrediction {
    pub fn component_count(&self) -> usize {
        self.means.len()
    }

    /// Mixture mean of the latent function value: the average of the
    /// component means.
    pub fn mixture_mean(&self) -> f64 {
        self.means.iter().sum::<f64>() / self.means.len() as f64
    }

    /// Mixture variance of the latent function value:
    /// mean(σ² + μ²) − (mean μ)².
    pub fn mixture_variance(&self) -> f64 {
        let s = self.means.len() as f64;
        let second: f64 = self
            .means
            .iter()
            .zip(&self.variances)
            .map(|(&m, &v)| v + m * m)
            .sum::<f64>()
            / s;
        let mean = self.mixture_mean();
        (second - mean * mean).max(0.0)
    }

    /// Observation-space predictive mean and variance of the mixture.
    ///
    /// Gaussian: each component observes N(μ⁽ˢ⁾, σ²⁽ˢ⁾ + σ_y²).  Count
    /// model: each component's observation moments come from the
    /// distribution at the plugged-in mean, link(μ⁽ˢ⁾).
    pub fn predictive_moments(&self) -> (f64, f64) {
        let s = self.means.len() as f64;
        let per_component: Vec<(f64, f64)> = match &self.likelihood {
            Likelihood::Gaussian(g) => {
                let noise = g.noise_value();
                self.means
                    .iter()
                    .zip(&self.variances)
                    .map(|(&m, &v)| (m, v + noise))
                    .collect()
            }
            Likelihood::Zinb(z) => self
                .means
                .iter()
                .map(|&f| zinb_moments(zinb_link(f, z.scale), z))
                .collect(),
        };
        let mean = per_component.iter().map(|&(m, _)| m).sum::<f64>() / s;
        let second = per_component
            .iter()
            .map(|&(m, v)| v + m * m)
            .sum::<f64>()
            / s;
        (mean, (second - mean * mean).max(0.0))
    }
}

/// Negative log-likelihood of one observation under the mixture:
/// ln S − logsumexp_s log q(y | component s).
pub fn test_nll(pred: &MixturePrediction, y: f64) -> Result<f64> {
    let s = pred.component_count();
    if s == 0 {
        return Err(Error::argument("test_nll", "mixture has no components"));
    }
    let logs: Vec<f64> = match &pred.likelihood {
        Likelihood::Gaussian(g) => {
            let noise = g.noise_value();
            pred.means
                .iter()
                .zip(&pred.variances)
                .map(|(&m, &v)| dense::gaussian_log_density(y, m, v + noise))
                .collect()
        }
        Likelihood::Zinb(z) => {
            let mut out = Vec::with_capacity(s);
            for &f in &pred.means {
                out.push(zinb_logpmf(y, zinb_link(f, z.scale), z)?);
            }
            out
        }
    };
    Ok((s as f64).ln() - dense::log_sum_exp(&logs))
}

/// Mean of squared residuals between point predictions and targets.
pub fn mse(preds: &[f64], ys: &[f64]) -> Result<f64> {
    if preds.len() != ys.len() {
        return Err(Error::argument(
            "mse",
            format!("{} predictions vs {} targets", preds.len(), ys.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::argument("mse", "no predictions"));
    }
    Ok(preds
        .iter()
        .zip(ys)
        .map(|(&p, &y)| (p - y) * (p - y))
        .sum::<f64>()
        / preds.len() as f64)
}

/// A frozen model ready for repeated predictions: the embedder's
/// normalization scales are fixed at their converged values and the
/// inducing Cholesky factor is computed once.
pub struct Predictor {
    model: Model,
    frozen: FrozenEmbedder,
    cache: PosteriorCache,
}

impl Predictor {
    pub fn new(model: &Model) -> Result<Predictor> {
        model.validate()?;
        Ok(Predictor {
            frozen: model.embedder.freeze(),
            cache: PosteriorCache::new(&model.inducing, &model.kernel)?,
            model: model.clone(),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.model.latents.as_ref().map_or(0, |l| l.config.d_h)
    }

    pub fn input_dim(&self) -> usize {
        self.model.embedder.config.d_x
    }

    pub fn likelihood(&self) -> &Likelihood {
        &self.model.likelihood
    }

    fn mixture_from_draws(
        &self,
        x: &[f64],
        draws: &[Vec<f64>],
    ) -> Result<MixturePrediction> {
        let mut means = Vec::with_capacity(draws.len());
        let mut variances = Vec::with_capacity(draws.len());
        for h in draws {
            let xt = self.frozen.embed_one(x, h);
            let (mu, var) = self.cache.marginal(&xt)?;
            means.push(mu);
            variances.push(var);
        }
        Ok(MixturePrediction {
            means,
            variances,
            likelihood: self.model.likelihood.clone(),
        })
    }

    fn check_inputs(&self, x: &[f64], samples: usize) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::argument(
                "predict",
                format!("input has {} coordinates, model expects {}", x.len(), self.input_dim()),
            ));
        }
        if samples == 0 {
            return Err(Error::argument("predict", "need at least one mixture component"));
        }
        Ok(())
    }

    /// Predict output `p` at `x`: S latent draws from q(h_p), or from
    /// N(μ₀_p, 0.1·I) in prior mode.  An output index the model has no
    /// latent coordinates for is an error unless the model is latent-free.
    pub fn predict(
        &self,
        x: &[f64],
        p: usize,
        samples: usize,
        prior_mode: bool,
        rng: &mut impl Rng,
    ) -> Result<MixturePrediction> {
        self.check_inputs(x, samples)?;
        let draws: Vec<Vec<f64>> = match &self.model.latents {
            None => vec![Vec::new(); samples],
            Some(lat) => {
                if p >= lat.config.outputs {
                    return Err(Error::argument(
                        "predict",
                        format!(
                            "output {p} has no trained latent coordinates ({} outputs); \
                             use a fresh prior mean in prior mode",
                            lat.config.outputs
                        ),
                    ));
                }
                let d_h = lat.config.d_h;
                if prior_mode {
                    let mu0 = lat.prior_means().row(p).to_vec();
                    let sd = PRIOR_MODE_VARIANCE.sqrt();
                    (0..samples)
                        .map(|_| {
                            let eps = standard_normal_vec(rng, d_h);
                            mu0.iter().zip(&eps).map(|(&m, &e)| m + sd * e).collect()
                        })
                        .collect()
                } else {
                    let mut out = Vec::with_capacity(samples);
                    for _ in 0..samples {
                        let eps = standard_normal_vec(rng, d_h);
                        out.push(lat.sample_dense(p, &eps)?);
                    }
                    out
                }
            }
        };
        self.mixture_from_draws(x, &draws)
    }

    /// Predict an output unseen during training: latent draws come from
    /// N(μ₀, 0.1·I) around the supplied fresh prior mean.
    pub fn predict_fresh(
        &self,
        x: &[f64],
        mu0: &[f64],
        samples: usize,
        rng: &mut impl Rng,
    ) -> Result<MixturePrediction> {
        self.check_inputs(x, samples)?;
        if mu0.len() != self.latent_dim() {
            return Err(Error::argument(
                "predict",
                format!(
                    "fresh prior mean has {} coordinates, model expects {}",
                    mu0.len(),
                    self.latent_dim()
                ),
            ));
        }
        let sd = PRIOR_MODE_VARIANCE.sqrt();
        let draws: Vec<Vec<f64>> = (0..samples)
            .map(|_| {
                let eps = standard_normal_vec(rng, mu0.len());
                mu0.iter().zip(&eps).map(|(&m, &e)| m + sd * e).collect()
            })
            .collect();
        self.mixture_from_draws(x, &draws)
    }
}

/// One evaluated observation.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub input: usize,
    pub output: usize,
    pub y: f64,
    pub pred_mean: f64,
    pub pred_var: f64,
    pub nll: f64,
}

/// Evaluation over a dataset's observations.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mse: f64,
    pub mean_nll: f64,
}

/// Evaluate every observation in `ds` under the model.  Outputs are
/// matched to the model by id via `trained_output_ids` (the output table
/// the model was trained against); ids absent from it fall back to the
/// fresh-prior path when `prior_mode` is on and error otherwise.  Each
/// observation draws its latent samples from an independent stream of
/// `seed`, so reports are deterministic and order-independent.
pub fn evaluate(
    ds: &Dataset,
    model: &Model,
    trained_output_ids: &[String],
    samples: usize,
    prior_mode: bool,
    seed: u64,
) -> Result<EvalReport> {
    ds.validate()?;
    if ds.observations.is_empty() {
        return Err(Error::argument("evaluate", "dataset has no observations"));
    }
    let predictor = Predictor::new(model)?;
    if ds.input_dim() != predictor.input_dim() {
        return Err(Error::argument(
            "evaluate",
            format!(
                "dataset inputs have {} coordinates, model expects {}",
                ds.input_dim(),
                predictor.input_dim()
            ),
        ));
    }
    let index_of: HashMap<&str, usize> = trained_output_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let d_h = predictor.latent_dim();

    let mut rows = Vec::with_capacity(ds.observations.len());
    for (k, o) in ds.observations.iter().enumerate() {
        let mut r = stream(seed, &[purpose::PREDICT, k as u64]);
        let x = ds.inputs.row(o.input);
        let id = &ds.output_ids[o.output];
        let pred = match index_of.get(id.as_str()) {
            Some(&p) => predictor.predict(x, p, samples, prior_mode, &mut r)?,
            None if prior_mode => {
                let mu0 = match &ds.output_priors {
                    Some(t) if t.cols() == d_h => t.row(o.output).to_vec(),
                    Some(t) => {
                        return Err(Error::argument(
                            "evaluate",
                            format!(
                                "prior means for output {id:?} have {} coordinates, model expects {d_h}",
                                t.cols()
                            ),
                        ));
                    }
                    None => vec![0.0; d_h],
                };
                predictor.predict_fresh(x, &mu0, samples, &mut r)?
            }
            None => {
                return Err(Error::argument(
                    "evaluate",
                    format!("output {id:?} has no trained latent coordinates; rerun in prior mode"),
                ));
            }
        };
        let (pred_mean, pred_var) = pred.predictive_moments();
        let nll = test_nll(&pred, o.y)?;
        rows.push(EvalRow { input: o.input, output: o.output, y: o.y, pred_mean, pred_var, nll });
    }
    let mse = mse(
        &rows.iter().map(|r| r.pred_mean).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.y).collect::<Vec<_>>(),
    )?;
    let mean_nll = rows.iter().map(|r| r.nll).sum::<f64>() / rows.len() as f64;
    Ok(EvalReport { rows, mse, mean_nll })
}

/// Render a report as CSV: one row per observation plus a trailing
/// summary comment line.
pub fn report_csv(report: &EvalReport, ds: &Dataset) -> String {
    let mut s = String::from("input_id,output_id,y_true,pred_mean,pred_var,nll\n");
    for r in &report.rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            ds.input_ids[r.input],
            ds.output_ids[r.output],
            format_float(r.y),
            format_float(r.pred_mean),
            format_float(r.pred_var),
            format_float(r.nll),
        )
        .unwrap();
    }
    writeln!(
        s,
        "# summary mse={} mean_nll={}",
        format_float(report.mse),
        format_float(report.mean_nll)
    )
    .unwrap();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{GaussianLik, ZinbLik};
    use approx::assert_abs_diff_eq;

    fn gaussian_pred(means: Vec<f64>, variances: Vec<f64>, noise: f64) -> MixturePrediction {
        MixturePrediction {
            means,
            variances,
            likelihood: Likelihood::Gaussian(GaussianLik::new(noise).unwrap()),
        }
    }

    #[test]
    fn single_component_nll_is_the_exact_gaussian_density() {
        let pred = gaussian_pred(vec![0.7], vec![0.4], 0.25);
        let nll = test_nll(&pred, 1.3).unwrap();
        let direct = -dense::gaussian_log_density(1.3, 0.7, 0.4 + 0.25);
        assert_abs_diff_eq!(nll, direct, epsilon = 1e-14);
    }

    #[test]
    fn identical_components_collapse_to_the_single_component_nll() {
        let single = gaussian_pred(vec![-0.4], vec![0.9], 0.1);
        let many = gaussian_pred(vec![-0.4; 7], vec![0.9; 7], 0.1);
        let a = test_nll(&single, 0.2).unwrap();
        let b = test_nll(&many, 0.2).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-13);
    }

    #[test]
    fn mse_handles_trivial_cases_and_rejects_mismatch() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn mixture_moments_follow_the_closed_forms() {
        let pred = gaussian_pred(vec![1.0, 3.0], vec![0.5, 0.1], 0.2);
        assert_abs_diff_eq!(pred.mixture_mean(), 2.0, epsilon = 1e-15);
        // mean(sigma^2 + mu^2) - mean^2 = (0.5+1 + 0.1+9)/2 - 4 = 1.3
        assert_abs_diff_eq!(pred.mixture_variance(), 1.3, epsilon = 1e-12);
        let (pm, pv) = pred.predictive_moments();
        assert_abs_diff_eq!(pm, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pv, 1.3 + 0.2, epsilon = 1e-12);
    }

    #[test]
    fn count_model_predictive_mean_averages_the_plugged_in_means() {
        let z = ZinbLik::new(0.6, 0.1, 1.0, 20).unwrap();
        let pred = MixturePrediction {
            means: vec![0.2, 1.1],
            variances: vec![0.3, 0.3],
            likelihood: Likelihood::Zinb(z.clone()),
        };
        let (pm, _) = pred.predictive_moments();
        let expect = (zinb_moments(zinb_link(0.2, 1.0), &z).0
            + zinb_moments(zinb_link(1.1, 1.0), &z).0)
            / 2.0;
        assert_abs_diff_eq!(pm, expect, epsilon = 1e-14);
        // Plug-in NLL matches the direct formula for one component.
        let one = MixturePrediction {
            means: vec![0.2],
            variances: vec![0.3],
            likelihood: Likelihood::Zinb(z.clone()),
        };
        let nll = test_nll(&one, 2.0).unwrap();
        let direct = -zinb_logpmf(2.0, zinb_link(0.2, 1.0), &z).unwrap();
        assert_abs_diff_eq!(nll, direct, epsilon = 1e-14);
        // Non-count observations are rejected by the count likelihood.
        assert!(test_nll(&one, 1.5).is_err());
    }
}
