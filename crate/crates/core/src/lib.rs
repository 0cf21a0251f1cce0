//! Scalable multi-output Gaussian process regression with a learned,
//! Lipschitz-controlled output embedding.
//!
//! Each output p carries a low-dimensional latent vector h_p.  An input x
//! and a latent h are jointly mapped through a residual embedding network
//! whose layers are kept near-isometric by spectral normalization, and a
//! stationary RBF kernel on the embedded points induces the cross-output
//! covariance.  Inference is stochastic variational: a shared inducing-point
//! posterior q(u), Gaussian per-output latent posteriors q(h_p), and an
//! evidence bound estimated over joint input/output mini-batches.  Gaussian
//! and zero-inflated negative-binomial observation models are supported, each
//! under the standard bound or a tighter variant that keeps the Nyström
//! residual inside the likelihood term.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diffmath;
pub mod embedder;
pub mod error;
pub mod kernel;
pub mod latent;
pub mod likelihood;
pub mod model;
pub mod predictor;
pub mod rng;
pub mod split;
pub mod svgp;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
