//! Plain float64 linear-algebra kernels on row-major slices.
//!
//! These are the single source of numeric truth: the differentiable tape ops
//! call them for their forward passes, and gradient-free code (prediction,
//! data synthesis) calls them directly.  Everything is written for the
//! desk-scale regime (matrices up to a few hundred rows), so the loops are
//! straightforward triple loops with no blocking.

use crate::error::{Error, Result};

/// C = A·B for A (m×k), B (k×n).
pub fn mat_mul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// C = Aᵀ·B for A (k×m), B (k×n).
pub fn mat_mul_tn(k: usize, m: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for l in 0..k {
        for i in 0..m {
            let av = a[l * m + i];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// C = A·Bᵀ for A (m×k), B (n×k).
pub fn mat_mul_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for l in 0..k {
                s += arow[l] * brow[l];
            }
            c[i * n + j] = s;
        }
    }
    c
}

pub fn transpose(m: usize, n: usize, a: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mean_diagonal(n: usize, a: &[f64]) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|i| a[i * n + i]).sum::<f64>() / n as f64
}

/// Lower Cholesky factor of A + jitter·I, reading only the lower triangle of
/// A.  Returns an error (without naming the matrix — callers add that) when a
/// pivot is non-positive.
pub fn cholesky(n: usize, a: &[f64], jitter: f64) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Factorization {
                        name: String::new(),
                        attempts: 1,
                        last_jitter: jitter,
                    });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Factor A + jitter·I, escalating the jitter on failure: start at
/// 1e-8 × mean diagonal and double at most 14 times before giving up.
/// Returns the factor and the jitter that succeeded.
pub fn cholesky_escalating(n: usize, a: &[f64], jitter: f64, name: &str) -> Result<(Vec<f64>, f64)> {
    if let Ok(l) = cholesky(n, a, jitter) {
        return Ok((l, jitter));
    }
    let base = mean_diagonal(n, a).abs().max(f64::MIN_POSITIVE);
    let mut attempts = 1;
    let mut j = 1e-8 * base;
    for _ in 0..14 {
        let total = jitter + j;
        attempts += 1;
        if let Ok(l) = cholesky(n, a, total) {
            return Ok((l, total));
        }
        j *= 2.0;
    }
    Err(Error::Factorization {
        name: name.to_string(),
        attempts,
        last_jitter: jitter + j / 2.0,
    })
}

/// Solve L·X = B for lower-triangular L (n×n) and B (n×nrhs).
pub fn solve_lower(n: usize, l: &[f64], nrhs: usize, b: &[f64]) -> Result<Vec<f64>> {
    check_diagonal(n, l)?;
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let lik = l[i * n + k];
            if lik == 0.0 {
                continue;
            }
            for j in 0..nrhs {
                x[i * nrhs + j] -= lik * x[k * nrhs + j];
            }
        }
        let d = l[i * n + i];
        for j in 0..nrhs {
            x[i * nrhs + j] /= d;
        }
    }
    Ok(x)
}

/// Solve Lᵀ·X = B for lower-triangular L (n×n) and B (n×nrhs).
pub fn solve_lower_t(n: usize, l: &[f64], nrhs: usize, b: &[f64]) -> Result<Vec<f64>> {
    check_diagonal(n, l)?;
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[k * n + i];
            if lki == 0.0 {
                continue;
            }
            for j in 0..nrhs {
                x[i * nrhs + j] -= lki * x[k * nrhs + j];
            }
        }
        let d = l[i * n + i];
        for j in 0..nrhs {
            x[i * nrhs + j] /= d;
        }
    }
    Ok(x)
}

fn check_diagonal(n: usize, l: &[f64]) -> Result<()> {
    for i in 0..n {
        if l[i * n + i] == 0.0 {
            return Err(Error::argument(
                "tri_solve",
                format!("singular system: zero diagonal element at index {i}"),
            ));
        }
    }
    Ok(())
}

/// Squared Euclidean distance between rows with per-dimension lengthscales.
fn scaled_sqdist(a: &[f64], b: &[f64], inv_ls_sq: &[f64]) -> f64 {
    let mut s = 0.0;
    for d in 0..inv_ls_sq.len() {
        let diff = a[d] - b[d];
        s += diff * diff * inv_ls_sq[d];
    }
    s
}

/// RBF Gram matrix: K[i,j] = outputscale · exp(−½ Σ_d (a_id − b_jd)²/ℓ_d²)
/// for A (m×d) and B (n×d) with lengthscales ℓ (length d).
pub fn rbf_gram(
    m: usize,
    n: usize,
    d: usize,
    a: &[f64],
    b: &[f64],
    lengthscales: &[f64],
    outputscale: f64,
) -> Vec<f64> {
    debug_assert_eq!(lengthscales.len(), d);
    let inv: Vec<f64> = lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    let mut k = vec![0.0; m * n];
    for i in 0..m {
        let ai = &a[i * d..(i + 1) * d];
        for j in 0..n {
            let bj = &b[j * d..(j + 1) * d];
            k[i * n + j] = outputscale * (-0.5 * scaled_sqdist(ai, bj, &inv)).exp();
        }
    }
    k
}

/// log N(y | mean, var) for a scalar observation.
pub fn gaussian_log_density(y: f64, mean: f64, var: f64) -> f64 {
    let resid = y - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + resid * resid / var)
}

/// log Σ exp(x_i), shifted by the maximum for overflow safety.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
