//! Stationary ARD-RBF kernel on the embedding space.
//!
//!   k(z, z′) = σ² · exp(−½ (z − z′)ᵀ Λ⁻¹ (z − z′)),   Λ = diag(ℓ₁², …)
//!
//! Lengthscales and outputscale live as unconstrained reals mapped through
//! softplus, so the optimizer never has to respect a positivity boundary.
//! Besides Gram assembly this module computes the Nyström residual diagonal
//!
//!   d_n = k(x̃_n, x̃_n) − k_{x̃_n Z} K_ZZ⁻¹ k_{Z x̃_n} ≥ 0,
//!
//! the quantity the tighter evidence bounds keep inside the likelihood term.
//! The Gram op is fused (one tape node with a hand-written adjoint) rather
//! than composed from elementwise pieces: the backward loops cost the same
//! O(a·b·D_T) as the forward pass.

use crate::diffmath::{dense, softplus_inverse, Tensor, Var};
use crate::error::{Error, Result};

/// Unconstrained kernel hyperparameters: apply [`transform`] to use them.
#[derive(Debug, Clone)]
pub struct KernelHyperparams {
    /// Unconstrained lengthscales, length D_T.
    pub raw_lengthscales: Tensor,
    /// Unconstrained outputscale, a single element.
    pub raw_outputscale: Tensor,
}

impl KernelHyperparams {
    /// Unit lengthscales and unit outputscale — the initialization for
    /// standardized data.
    pub fn unit(embed_dim: usize) -> KernelHyperparams {
        KernelHyperparams::from_values(&vec![1.0; embed_dim], 1.0)
    }

    /// Store the given positive values through the inverse transform.
    pub fn from_values(lengthscales: &[f64], outputscale: f64) -> KernelHyperparams {
        KernelHyperparams {
            raw_lengthscales: Tensor::vector(
                lengthscales.iter().map(|&l| softplus_inverse(l)).collect(),
            ),
            raw_outputscale: Tensor::vector(vec![softplus_inverse(outputscale)]),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.raw_lengthscales.len()
    }
}

/// Positive-valued kernel hyperparameters on the tape.
#[derive(Clone)]
pub struct KernelVars {
    /// Lengthscales ℓ, length D_T, strictly positive.
    pub lengthscales: Var,
    /// Outputscale σ², single element, strictly positive.
    pub outputscale: Var,
}

/// Map unconstrained hyperparameter leaves through softplus.
pub fn transform(raw_lengthscales: &Var, raw_outputscale: &Var) -> KernelVars {
    KernelVars {
        lengthscales: raw_lengthscales.softplus(),
        outputscale: raw_outputscale.softplus(),
    }
}

/// Gram matrix k(A, B) of shape a×b for row-stacked points.
///
/// Entries lie in (0, σ²]; the matrix is symmetric when A and B hold the
/// same rows.  Differentiable with respect to both point sets and the
/// hyperparameters.
pub fn rbf_gram(a: &Var, b: &Var, hyp: &KernelVars) -> Var {
    let (av, bv) = (a.value(), b.value());
    let ls = hyp.lengthscales.value();
    let os = hyp.outputscale.value();
    let d = ls.len();
    assert_eq!(
        av.cols(),
        d,
        "rbf_gram: A has {} columns but {} lengthscales",
        av.cols(),
        d
    );
    assert_eq!(
        bv.cols(),
        d,
        "rbf_gram: B has {} columns but {} lengthscales",
        bv.cols(),
        d
    );
    let (m, n) = (av.rows(), bv.rows());
    let s = os.item();
    let gram = dense::rbf_gram(m, n, d, av.data(), bv.data(), ls.data(), s);
    let value = Tensor::matrix(m, n, gram);
    let (ac, bc, lc, kc) = (av.clone(), bv.clone(), ls.clone(), value.clone());
    a.tape().custom(
        value,
        &[a, b, &hyp.lengthscales, &hyp.outputscale],
        Box::new(move |g| {
            let inv_sq: Vec<f64> = lc.iter().map(|l| 1.0 / (l * l)).collect();
            let mut ga = vec![0.0; m * d];
            let mut gb = vec![0.0; n * d];
            let mut gl = vec![0.0; d];
            let mut gs = 0.0;
            for i in 0..m {
                for j in 0..n {
                    let w = g.at(i, j) * kc.at(i, j);
                    if w == 0.0 {
                        continue;
                    }
                    gs += w / s;
                    for dd in 0..d {
                        let diff = ac.at(i, dd) - bc.at(j, dd);
                        let coupled = w * diff * inv_sq[dd];
                        ga[i * d + dd] -= coupled;
                        gb[j * d + dd] += coupled;
                        gl[dd] += coupled * diff / lc.data()[dd];
                    }
                }
            }
            vec![
                Tensor::matrix(m, d, ga),
                Tensor::matrix(n, d, gb),
                Tensor::vector(gl),
                Tensor::vector(vec![gs]),
            ]
        }),
    )
}

/// The diagonal k(x, x) = σ² repeated `count` times, with gradient flow to
/// the outputscale.
pub fn rbf_diag(count: usize, hyp: &KernelVars) -> Var {
    let s = hyp.outputscale.value().item();
    hyp.outputscale
        .tape()
        .custom(
            Tensor::vector(vec![s; count]),
            &[&hyp.outputscale],
            Box::new(move |g| vec![Tensor::vector(vec![g.iter().sum()])]),
        )
}

/// Nyström residual diagonal before clamping; entries may carry tiny
/// negative round-off (bounded by 1e-10 on healthy inputs).
pub fn nystrom_diag_raw(xtilde: &Var, z: &Var, hyp: &KernelVars, k_zz_chol: &Var) -> Result<Var> {
    let m = z.value().rows();
    if m == 0 {
        return Err(Error::argument("nystrom_diag", "no inducing points"));
    }
    let k_zx = rbf_gram(z, xtilde, hyp);
    let a = k_zz_chol.solve_lower(&k_zx)?;
    let q_diag = a.col_sumsq();
    Ok(rbf_diag(xtilde.value().rows(), hyp).sub(&q_diag))
}

/// Nyström residual diagonal d, clamped from below at 0 so that
/// log(1 + d/σ²) stays defined.  In debug builds the clamp is verified to
/// remove at most 1e-10.
pub fn nystrom_diag(xtilde: &Var, z: &Var, hyp: &KernelVars, k_zz_chol: &Var) -> Result<Var> {
    let raw = nystrom_diag_raw(xtilde, z, hyp, k_zz_chol)?;
    debug_assert!(
        raw.value().iter().all(|&v| v > -1e-10),
        "nystrom_diag: clamp would remove more than 1e-10 (min entry {:e})",
        raw.value().iter().cloned().fold(f64::INFINITY, f64::min)
    );
    Ok(raw.clamp_min0())
}
