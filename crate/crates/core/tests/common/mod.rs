//! Independent oracles shared by the integration-test suites.
//!
//! Everything here is deliberately written against different algorithms
//! than the library uses (Gauss–Jordan instead of Cholesky solves, Jacobi
//! eigeniteration instead of power iteration), so agreement is evidence
//! rather than tautology.

#![allow(dead_code)]

use mogp::diffmath::dense;
use rand::Rng;

/// Dense inverse by Gauss–Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(n: usize, a: &[f64]) -> Vec<f64> {
    let mut aug = vec![0.0; n * 2 * n];
    for i in 0..n {
        for j in 0..n {
            aug[i * 2 * n + j] = a[i * n + j];
        }
        aug[i * 2 * n + n + i] = 1.0;
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| {
                aug[r1 * 2 * n + col]
                    .abs()
                    .total_cmp(&aug[r2 * 2 * n + col].abs())
            })
            .unwrap();
        assert!(
            aug[pivot_row * 2 * n + col].abs() > 1e-300,
            "gauss_jordan_inverse: singular matrix"
        );
        if pivot_row != col {
            for j in 0..2 * n {
                aug.swap(col * 2 * n + j, pivot_row * 2 * n + j);
            }
        }
        let piv = aug[col * 2 * n + col];
        for j in 0..2 * n {
            aug[col * 2 * n + j] /= piv;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = aug[r * 2 * n + col];
            if f == 0.0 {
                continue;
            }
            for j in 0..2 * n {
                aug[r * 2 * n + j] -= f * aug[col * 2 * n + j];
            }
        }
    }
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            inv[i * n + j] = aug[i * 2 * n + n + j];
        }
    }
    inv
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// sorted descending.
pub fn jacobi_eigenvalues(n: usize, a: &[f64]) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// Singular values of an m×n matrix, sorted descending, via the Jacobi
/// eigenvalues of the smaller Gram matrix.
pub fn singular_values(m: usize, n: usize, a: &[f64]) -> Vec<f64> {
    let gram = if m >= n {
        dense::mat_mul_tn(m, n, n, a, a) // AᵀA, n×n
    } else {
        dense::mat_mul_nt(m, n, m, a, a) // AAᵀ, m×m
    };
    let k = m.min(n);
    jacobi_eigenvalues(k, &gram)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}

/// A Haar-ish random orthogonal matrix as a product of random Householder
/// reflections.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut q: Vec<f64> = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    for _ in 0..n {
        let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        if norm2 < 1e-12 {
            continue;
        }
        // Q ← Q(I − 2vvᵀ/‖v‖²)
        let mut qv = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                qv[i] += q[i * n + j] * v[j];
            }
        }
        for i in 0..n {
            for j in 0..n {
                q[i * n + j] -= 2.0 * qv[i] * v[j] / norm2;
            }
        }
    }
    q
}

/// Exact single-output GP log marginal likelihood
/// log N(y | 0, K + noise·I), evaluated through the Gauss–Jordan inverse
/// and an LU-free determinant via Jacobi eigenvalues.
pub fn exact_gp_log_marginal(n: usize, k: &[f64], noise: f64, y: &[f64]) -> f64 {
    let mut c = k.to_vec();
    for i in 0..n {
        c[i * n + i] += noise;
    }
    let inv = gauss_jordan_inverse(n, &c);
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += y[i] * inv[i * n + j] * y[j];
        }
    }
    let log_det: f64 = jacobi_eigenvalues(n, &c).iter().map(|e| e.ln()).sum();
    -0.5 * (quad + log_det + n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// KL(N(m0, S0) ‖ N(m1, S1)) for dense covariances, via generic matrix
/// identities (inverse, trace, eigen-log-determinants).
pub fn gaussian_kl_dense(d: usize, m0: &[f64], s0: &[f64], m1: &[f64], s1: &[f64]) -> f64 {
    let inv1 = gauss_jordan_inverse(d, s1);
    let mut trace = 0.0;
    for i in 0..d {
        for j in 0..d {
            trace += inv1[i * d + j] * s0[j * d + i];
        }
    }
    let mut quad = 0.0;
    for i in 0..d {
        for j in 0..d {
            quad += (m1[i] - m0[i]) * inv1[i * d + j] * (m1[j] - m0[j]);
        }
    }
    let logdet0: f64 = jacobi_eigenvalues(d, s0).iter().map(|e| e.ln()).sum();
    let logdet1: f64 = jacobi_eigenvalues(d, s1).iter().map(|e| e.ln()).sum();
    0.5 * (trace + quad - d as f64 + logdet1 - logdet0)
}
