//! Differentiable operations on [`Var`] handles.
//!
//! Every operation records its forward value plus a backward closure with a
//! hand-derived adjoint; `grad_check` against central finite differences is
//! the arbiter for all of them.  Elementwise arithmetic broadcasts a
//! single-element operand against any shape.  Shape mismatches are
//! programming errors and panic with the operation name and both shapes.
//!
//! Matrix-calculus references for the less obvious adjoints:
//! - Cholesky: I. Murray, "Differentiation of the Cholesky decomposition"
//!   (2016), the unblocked level-2 form.
//! - Triangular solves: standard solve adjoints B̄ = L⁻ᵀX̄, L̄ = −tril(B̄Xᵀ).

use statrs::function::gamma::{digamma, ln_gamma};

use super::dense;
use super::tape::Var;
use super::tensor::Tensor;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// elementwise helpers

fn same_or_scalar(op: &str, a: &Tensor, b: &Tensor) {
    if a.shape() != b.shape() && !a.is_scalar() && !b.is_scalar() {
        panic!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
    }
}

/// Reduce a full-shape gradient back to a broadcast operand's shape.
fn reduce_for(operand: &Tensor, grad: &[f64]) -> Tensor {
    if operand.len() == grad.len() {
        Tensor::new(operand.shape().to_vec(), grad.to_vec())
    } else {
        Tensor::new(operand.shape().to_vec(), vec![grad.iter().sum()])
    }
}

fn ew_binary(
    op: &'static str,
    a: &Var,
    b: &Var,
    f: impl Fn(f64, f64) -> f64,
    da: impl Fn(f64, f64) -> f64 + 'static,
    db: impl Fn(f64, f64) -> f64 + 'static,
) -> Var {
    let av = a.value();
    let bv = b.value();
    same_or_scalar(op, &av, &bv);
    let n = av.len().max(bv.len());
    let shape = if av.len() >= bv.len() { av.shape() } else { bv.shape() };
    let pick = |t: &Tensor, i: usize| if t.is_scalar() { t.data()[0] } else { t.data()[i] };
    let out: Vec<f64> = (0..n).map(|i| f(pick(&av, i), pick(&bv, i))).collect();
    let value = Tensor::new(shape.to_vec(), out);
    let (ac, bc) = (av.clone(), bv.clone());
    a.tape().custom(value, &[a, b], Box::new(move |g| {
        let gd = g.data();
        let ga: Vec<f64> = (0..gd.len())
            .map(|i| gd[i] * da(pick(&ac, i), pick(&bc, i)))
            .collect();
        let gb: Vec<f64> = (0..gd.len())
            .map(|i| gd[i] * db(pick(&ac, i), pick(&bc, i)))
            .collect();
        vec![reduce_for(&ac, &ga), reduce_for(&bc, &gb)]
    }))
}

fn ew_unary(
    op_name: &'static str,
    a: &Var,
    f: impl Fn(f64) -> f64,
    // derivative as a function of (input, output)
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var {
    let _ = op_name;
    let av = a.value();
    let out = av.map(&f);
    let (ac, oc) = (av.clone(), out.clone());
    a.tape().custom(out, &[a], Box::new(move |g| {
        let gd: Vec<f64> = g
            .iter()
            .zip(ac.iter().zip(oc.iter()))
            .map(|(g, (x, y))| g * df(*x, *y))
            .collect();
        vec![ac.with_data(gd)]
    }))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe log(1 + eˣ).
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus_scalar`]: log(eʸ − 1), safe for large y.
pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inverse: argument must be positive");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

// ---------------------------------------------------------------------------
// public operations

impl Var {
    pub fn add(&self, o: &Var) -> Var {
        ew_binary("add", self, o, |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, o: &Var) -> Var {
        ew_binary("sub", self, o, |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, o: &Var) -> Var {
        ew_binary("mul", self, o, |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, o: &Var) -> Var {
        ew_binary("div", self, o, |a, b| a / b, |_, b| 1.0 / b, |a, b| -a / (b * b))
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    /// Multiply by a constant.
    pub fn scale(&self, c: f64) -> Var {
        ew_unary("scale", self, |x| c * x, move |_, _| c)
    }

    /// Add a constant.
    pub fn shift(&self, c: f64) -> Var {
        ew_unary("shift", self, move |x| x + c, |_, _| 1.0)
    }

    pub fn exp(&self) -> Var {
        ew_unary("exp", self, f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var {
        ew_unary("ln", self, f64::ln, |x, _| 1.0 / x)
    }

    /// log(1 + x), accurate near zero.
    pub fn ln_1p(&self) -> Var {
        ew_unary("ln_1p", self, f64::ln_1p, |x, _| 1.0 / (1.0 + x))
    }

    pub fn sqrt(&self) -> Var {
        ew_unary("sqrt", self, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Var {
        ew_unary("square", self, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn recip(&self) -> Var {
        ew_unary("recip", self, |x| 1.0 / x, |_, y| -y * y)
    }

    pub fn tanh(&self) -> Var {
        ew_unary("tanh", self, f64::tanh, |_, y| 1.0 - y * y)
    }

    /// Smooth positivity transform log(1 + eˣ); derivative is the logistic
    /// sigmoid.
    pub fn softplus(&self) -> Var {
        ew_unary("softplus", self, softplus_scalar, |x, _| sigmoid(x))
    }

    /// Log-gamma, the piece the negative-binomial log-mass is built from.
    pub fn ln_gamma(&self) -> Var {
        ew_unary("ln_gamma", self, ln_gamma, |x, _| digamma(x))
    }

    /// max(x, 0) elementwise; gradients pass only through the positive part.
    pub fn clamp_min0(&self) -> Var {
        ew_unary("clamp_min0", self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    // -- reductions ---------------------------------------------------------

    pub fn sum(&self) -> Var {
        let av = self.value();
        let value = Tensor::scalar(av.sum());
        let ac = av.clone();
        self.tape().custom(value, &[self], Box::new(move |g| {
            let gv = g.item();
            vec![Tensor::new(ac.shape().to_vec(), vec![gv; ac.len()])]
        }))
    }

    /// Σ xᵢ² over all entries.
    pub fn sumsq(&self) -> Var {
        let av = self.value();
        let value = Tensor::scalar(av.iter().map(|v| v * v).sum());
        let ac = av.clone();
        self.tape().custom(value, &[self], Box::new(move |g| {
            let gv = g.item();
            vec![ac.map(|x| 2.0 * gv * x)]
        }))
    }

    /// Column-wise Σ xᵢⱼ² of a matrix: (m×n) → (n).
    pub fn col_sumsq(&self) -> Var {
        let av = self.value();
        let (m, n) = (av.rows(), av.cols());
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                let v = av.at(i, j);
                out[j] += v * v;
            }
        }
        let ac = av.clone();
        self.tape().custom(Tensor::vector(out), &[self], Box::new(move |g| {
            let gd = g.data();
            let mut ga = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    ga[i * n + j] = 2.0 * gd[j] * ac.at(i, j);
                }
            }
            vec![Tensor::matrix(m, n, ga)]
        }))
    }

    /// Inner product of two equal-length vectors.
    pub fn dot(&self, o: &Var) -> Var {
        let (av, bv) = (self.value(), o.value());
        assert_eq!(
            av.shape(),
            bv.shape(),
            "dot: shape mismatch {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let value = Tensor::scalar(dense::dot(av.data(), bv.data()));
        let (ac, bc) = (av.clone(), bv.clone());
        self.tape().custom(value, &[self, o], Box::new(move |g| {
            let gv = g.item();
            vec![bc.map(|b| gv * b), ac.map(|a| gv * a)]
        }))
    }

    // -- structure ----------------------------------------------------------

    pub fn transpose(&self) -> Var {
        let av = self.value();
        let (m, n) = (av.rows(), av.cols());
        let value = Tensor::matrix(n, m, dense::transpose(m, n, av.data()));
        self.tape().custom(value, &[self], Box::new(move |g| {
            vec![Tensor::matrix(m, n, dense::transpose(n, m, g.data()))]
        }))
    }

    /// Diagonal of a square matrix: (n×n) → (n).
    pub fn diag_part(&self) -> Var {
        let av = self.value();
        let n = av.rows();
        assert_eq!(n, av.cols(), "diag_part: matrix not square: {:?}", av.shape());
        let out: Vec<f64> = (0..n).map(|i| av.at(i, i)).collect();
        self.tape().custom(Tensor::vector(out), &[self], Box::new(move |g| {
            let mut ga = vec![0.0; n * n];
            for i in 0..n {
                ga[i * n + i] = g.data()[i];
            }
            vec![Tensor::matrix(n, n, ga)]
        }))
    }

    /// Diagonal matrix from a vector: (n) → (n×n).
    pub fn diag_embed(&self) -> Var {
        let av = self.value();
        let n = av.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            out[i * n + i] = av.data()[i];
        }
        self.tape().custom(Tensor::matrix(n, n, out), &[self], Box::new(move |g| {
            let gd = g.data();
            vec![Tensor::vector((0..n).map(|i| gd[i * n + i]).collect())]
        }))
    }

    /// Keep the strictly-lower triangle of a square matrix, zero elsewhere.
    pub fn strict_lower(&self) -> Var {
        let av = self.value();
        let n = av.rows();
        assert_eq!(n, av.cols(), "strict_lower: matrix not square: {:?}", av.shape());
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                out[i * n + j] = av.at(i, j);
            }
        }
        self.tape().custom(Tensor::matrix(n, n, out), &[self], Box::new(move |g| {
            let mut ga = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..i {
                    ga[i * n + j] = g.data()[i * n + j];
                }
            }
            vec![Tensor::matrix(n, n, ga)]
        }))
    }

    /// Scatter a packed strictly-lower triangle into an n×n matrix.  The
    /// packed vector lists rows in order: (1,0), (2,0), (2,1), (3,0), …
    /// Packing keeps every parameter entry live — a dense matrix parameter
    /// whose upper triangle is never read would carry structurally zero
    /// gradients.
    pub fn scatter_strict_lower(&self, n: usize) -> Var {
        let av = self.value();
        assert_eq!(
            av.len(),
            n * (n - 1) / 2,
            "scatter_strict_lower: {} entries cannot fill a strict lower triangle of size {n}",
            av.len()
        );
        let mut out = vec![0.0; n * n];
        let mut k = 0;
        for i in 1..n {
            for j in 0..i {
                out[i * n + j] = av.data()[k];
                k += 1;
            }
        }
        self.tape().custom(Tensor::matrix(n, n, out), &[self], Box::new(move |g| {
            let mut ga = Vec::with_capacity(n * (n - 1) / 2);
            for i in 1..n {
                for j in 0..i {
                    ga.push(g.at(i, j));
                }
            }
            vec![Tensor::vector(ga)]
        }))
    }

    /// Select rows of a matrix by index, with repetition allowed.
    pub fn gather_rows(&self, idx: &[usize]) -> Var {
        let av = self.value();
        let (m, n) = (av.rows(), av.cols());
        for &i in idx {
            assert!(i < m, "gather_rows: index {i} out of range for {m} rows");
        }
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(av.row(i));
        }
        let idxc = idx.to_vec();
        self.tape().custom(
            Tensor::matrix(idx.len(), n, out),
            &[self],
            Box::new(move |g| {
                let mut ga = vec![0.0; m * n];
                for (r, &i) in idxc.iter().enumerate() {
                    for j in 0..n {
                        ga[i * n + j] += g.at(r, j);
                    }
                }
                vec![Tensor::matrix(m, n, ga)]
            }),
        )
    }

    /// Reinterpret the same data under a new shape (element count preserved).
    pub fn reshape(&self, shape: &[usize]) -> Var {
        let av = self.value();
        assert_eq!(
            shape.iter().product::<usize>(),
            av.len(),
            "reshape: cannot view {:?} as {:?}",
            av.shape(),
            shape
        );
        let old_shape = av.shape().to_vec();
        self.tape().custom(
            Tensor::new(shape.to_vec(), av.data().to_vec()),
            &[self],
            Box::new(move |g| vec![Tensor::new(old_shape.clone(), g.data().to_vec())]),
        )
    }

    /// Repeat each row of a matrix `k` times consecutively:
    /// rows (a, b) become (a, a, …, b, b, …).
    pub fn repeat_each_row(&self, k: usize) -> Var {
        assert!(k >= 1, "repeat_each_row: need k >= 1");
        let av = self.value();
        let (m, n) = (av.rows(), av.cols());
        let mut out = Vec::with_capacity(m * k * n);
        for i in 0..m {
            for _ in 0..k {
                out.extend_from_slice(av.row(i));
            }
        }
        self.tape().custom(
            Tensor::matrix(m * k, n, out),
            &[self],
            Box::new(move |g| {
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    for r in 0..k {
                        for j in 0..n {
                            ga[i * n + j] += g.at(i * k + r, j);
                        }
                    }
                }
                vec![Tensor::matrix(m, n, ga)]
            }),
        )
    }

    /// Tile the whole row block `k` times: rows (a, b) become (a, b, a, b, …).
    pub fn tile_rows(&self, k: usize) -> Var {
        assert!(k >= 1, "tile_rows: need k >= 1");
        let av = self.value();
        let (m, n) = (av.rows(), av.cols());
        let mut out = Vec::with_capacity(m * k * n);
        for _ in 0..k {
            out.extend_from_slice(av.data());
        }
        self.tape().custom(
            Tensor::matrix(m * k, n, out),
            &[self],
            Box::new(move |g| {
                let mut ga = vec![0.0; m * n];
                for r in 0..k {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g.at(r * m + i, j);
                        }
                    }
                }
                vec![Tensor::matrix(m, n, ga)]
            }),
        )
    }

    /// Concatenate two matrices with equal row counts along columns.
    pub fn hstack(&self, o: &Var) -> Var {
        let (av, bv) = (self.value(), o.value());
        let m = av.rows();
        assert_eq!(
            m,
            bv.rows(),
            "hstack: row mismatch {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let (ca, cb) = (av.cols(), bv.cols());
        let mut out = Vec::with_capacity(m * (ca + cb));
        for i in 0..m {
            out.extend_from_slice(av.row(i));
            out.extend_from_slice(bv.row(i));
        }
        self.tape().custom(
            Tensor::matrix(m, ca + cb, out),
            &[self, o],
            Box::new(move |g| {
                let mut ga = vec![0.0; m * ca];
                let mut gb = vec![0.0; m * cb];
                for i in 0..m {
                    let row = g.row(i);
                    ga[i * ca..(i + 1) * ca].copy_from_slice(&row[..ca]);
                    gb[i * cb..(i + 1) * cb].copy_from_slice(&row[ca..]);
                }
                vec![Tensor::matrix(m, ca, ga), Tensor::matrix(m, cb, gb)]
            }),
        )
    }

    /// Columns [from, to) of a matrix as a new (m × (to−from)) matrix.
    pub fn slice_cols(&self, from: usize, to: usize) -> Var {
        let av = self.value();
        let (m, n) = (av.rows(), av.cols());
        assert!(
            from < to && to <= n,
            "slice_cols: range {from}..{to} out of bounds for {n} columns"
        );
        let w = to - from;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&av.row(i)[from..to]);
        }
        self.tape().custom(Tensor::matrix(m, w, out), &[self], Box::new(move |g| {
            let mut ga = vec![0.0; m * n];
            for i in 0..m {
                ga[i * n + from..i * n + to].copy_from_slice(g.row(i));
            }
            vec![Tensor::matrix(m, n, ga)]
        }))
    }

    /// Multiply every row of an (m×n) matrix elementwise by a length-n
    /// vector.
    pub fn mul_rowvec(&self, row: &Var) -> Var {
        let (av, rv) = (self.value(), row.value());
        let (m, n) = (av.rows(), av.cols());
        assert_eq!(
            rv.len(),
            n,
            "mul_rowvec: row length {} vs {} columns",
            rv.len(),
            n
        );
        let mut out = av.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] *= rv.data()[j];
            }
        }
        let (ac, rc) = (av.clone(), rv.clone());
        self.tape().custom(
            Tensor::matrix(m, n, out),
            &[self, row],
            Box::new(move |g| {
                let mut ga = vec![0.0; m * n];
                let mut gr = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = g.at(i, j) * rc.data()[j];
                        gr[j] += g.at(i, j) * ac.at(i, j);
                    }
                }
                vec![Tensor::matrix(m, n, ga), Tensor::vector(gr)]
            }),
        )
    }

    /// Add a length-n vector to every row of an (m×n) matrix.
    pub fn add_rowvec(&self, row: &Var) -> Var {
        let (av, rv) = (self.value(), row.value());
        let (m, n) = (av.rows(), av.cols());
        assert_eq!(
            rv.len(),
            n,
            "add_rowvec: row length {} vs {} columns",
            rv.len(),
            n
        );
        let mut out = av.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += rv.data()[j];
            }
        }
        self.tape().custom(
            Tensor::matrix(m, n, out),
            &[self, row],
            Box::new(move |g| {
                let mut gr = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        gr[j] += g.at(i, j);
                    }
                }
                vec![g.clone(), Tensor::vector(gr)]
            }),
        )
    }

    // -- linear algebra -----------------------------------------------------

    /// Matrix product: (m×k)·(k×n) → (m×n), or (m×k)·(k) → (m).
    pub fn matmul(&self, o: &Var) -> Var {
        let (av, bv) = (self.value(), o.value());
        let (m, k) = (av.rows(), av.cols());
        let vector_rhs = bv.shape().len() == 1;
        let n = if vector_rhs {
            assert_eq!(
                bv.len(),
                k,
                "matmul: inner dimensions {:?} vs {:?}",
                av.shape(),
                bv.shape()
            );
            1
        } else {
            assert_eq!(
                bv.rows(),
                k,
                "matmul: inner dimensions {:?} vs {:?}",
                av.shape(),
                bv.shape()
            );
            bv.cols()
        };
        let out = dense::mat_mul(m, k, n, av.data(), bv.data());
        let value = if vector_rhs {
            Tensor::vector(out)
        } else {
            Tensor::matrix(m, n, out)
        };
        let (ac, bc) = (av.clone(), bv.clone());
        self.tape().custom(value, &[self, o], Box::new(move |g| {
            // Ā = Ḡ·Bᵀ, B̄ = Aᵀ·Ḡ.
            let ga = dense::mat_mul_nt(m, n, k, g.data(), bc.data());
            let gb = dense::mat_mul_tn(m, k, n, ac.data(), g.data());
            let gb = if vector_rhs {
                Tensor::vector(gb)
            } else {
                Tensor::matrix(k, n, gb)
            };
            vec![Tensor::matrix(m, k, ga), gb]
        }))
    }

    /// Lower Cholesky factor of a symmetric positive-definite matrix plus
    /// `jitter`·I.  On failure the jitter escalates from 1e-8 × mean
    /// diagonal, doubling at most 14 times, before reporting a
    /// factorization error naming `label`.
    pub fn cholesky(&self, jitter: f64, label: &str) -> Result<Var> {
        let av = self.value();
        let n = av.rows();
        assert_eq!(n, av.cols(), "cholesky: matrix not square: {:?}", av.shape());
        let (l, _used) = dense::cholesky_escalating(n, av.data(), jitter, label)
            .map_err(|e| match e {
                Error::Factorization { attempts, last_jitter, .. } => Error::Factorization {
                    name: label.to_string(),
                    attempts,
                    last_jitter,
                },
                other => other,
            })?;
        let lt = Tensor::matrix(n, n, l);
        let lc = lt.clone();
        Ok(self.tape().custom(lt, &[self], Box::new(move |g| {
            vec![cholesky_backward(n, lc.data(), g.data())]
        })))
    }

    /// Solve L·X = B for lower-triangular L; B is a matrix or vector.
    pub fn solve_lower(&self, b: &Var) -> Result<Var> {
        solve_op(self, b, false)
    }

    /// Solve Lᵀ·X = B for lower-triangular L; B is a matrix or vector.
    pub fn solve_lower_t(&self, b: &Var) -> Result<Var> {
        solve_op(self, b, true)
    }
}

/// Stack parts as rows of one matrix.  Each part is either a row vector
/// (length `cols`) or a matrix with `cols` columns; gradients split back.
pub fn vstack(parts: &[Var]) -> Var {
    assert!(!parts.is_empty(), "vstack: need at least one part");
    let cols = {
        let v = parts[0].value();
        if v.shape().len() == 2 {
            v.cols()
        } else {
            v.len()
        }
    };
    let mut rows = 0;
    let mut data = Vec::new();
    let mut part_rows = Vec::with_capacity(parts.len());
    for p in parts {
        let v = p.value();
        let r = if v.shape().len() == 2 {
            assert_eq!(v.cols(), cols, "vstack: column mismatch");
            v.rows()
        } else {
            assert_eq!(v.len(), cols, "vstack: row-vector length mismatch");
            1
        };
        part_rows.push((r, v.shape().to_vec()));
        rows += r;
        data.extend_from_slice(v.data());
    }
    let parents: Vec<&Var> = parts.iter().collect();
    parts[0].tape().custom(
        Tensor::matrix(rows, cols, data),
        &parents,
        Box::new(move |g| {
            let mut out = Vec::with_capacity(part_rows.len());
            let mut offset = 0;
            for (r, shape) in &part_rows {
                let chunk = g.data()[offset * cols..(offset + r) * cols].to_vec();
                out.push(Tensor::new(shape.clone(), chunk));
                offset += r;
            }
            out
        }),
    )
}

/// Free-entry adjoint of the Cholesky factorization.  The forward op reads
/// only the lower triangle of A, so the returned gradient lives there too.
fn cholesky_backward(n: usize, l: &[f64], lbar: &[f64]) -> Tensor {
    // Mask the upstream gradient to the lower triangle: the factor's upper
    // entries are structural zeros, so anything flowing into them must drop.
    let mut lbar_tril = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            lbar_tril[i * n + j] = lbar[i * n + j];
        }
    }
    // P = Φ(Lᵀ·L̄) with Φ = lower triangle, diagonal halved.
    let m = dense::mat_mul_tn(n, n, n, l, &lbar_tril);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            p[i * n + j] = m[i * n + j];
        }
        p[i * n + i] = 0.5 * m[i * n + i];
    }
    // S = L⁻ᵀ·P·L⁻¹ via two triangular solves.
    let s1 = dense::solve_lower_t(n, l, n, &p).expect("cholesky factor has positive diagonal");
    let s1t = dense::transpose(n, n, &s1);
    let s2 = dense::solve_lower_t(n, l, n, &s1t).expect("cholesky factor has positive diagonal");
    let s = dense::transpose(n, n, &s2);
    // Fold symmetric sensitivity onto the lower triangle actually read.
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            g[i * n + j] = s[i * n + j] + s[j * n + i];
        }
        g[i * n + i] = s[i * n + i];
    }
    Tensor::matrix(n, n, g)
}

fn solve_op(l: &Var, b: &Var, transposed: bool) -> Result<Var> {
    let (lv, bv) = (l.value(), b.value());
    let n = lv.rows();
    assert_eq!(n, lv.cols(), "tri_solve: L not square: {:?}", lv.shape());
    let vector_rhs = bv.shape().len() == 1;
    let nrhs = if vector_rhs {
        assert_eq!(bv.len(), n, "tri_solve: B length {} vs L size {n}", bv.len());
        1
    } else {
        assert_eq!(bv.rows(), n, "tri_solve: B has {} rows vs L size {n}", bv.rows());
        bv.cols()
    };
    let x = if transposed {
        dense::solve_lower_t(n, lv.data(), nrhs, bv.data())?
    } else {
        dense::solve_lower(n, lv.data(), nrhs, bv.data())?
    };
    let value = if vector_rhs {
        Tensor::vector(x)
    } else {
        Tensor::matrix(n, nrhs, x)
    };
    let lc = lv.clone();
    let xc = value.clone();
    Ok(l.tape().custom(value, &[l, b], Box::new(move |g| {
        // For X = L⁻¹B:  B̄ = L⁻ᵀ·X̄ and L̄ = −tril(B̄·Xᵀ).
        // For X = L⁻ᵀB:  B̄ = L⁻¹·X̄ and L̄ = −tril(X·B̄ᵀ).
        let gb = if transposed {
            dense::solve_lower(n, lc.data(), nrhs, g.data())
        } else {
            dense::solve_lower_t(n, lc.data(), nrhs, g.data())
        }
        .expect("diagonal checked in forward pass");
        let gl_full = if transposed {
            dense::mat_mul_nt(n, nrhs, n, xc.data(), &gb)
        } else {
            dense::mat_mul_nt(n, nrhs, n, &gb, xc.data())
        };
        let mut gl = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                gl[i * n + j] = -gl_full[i * n + j];
            }
        }
        let gb = if vector_rhs {
            Tensor::vector(gb)
        } else {
            Tensor::matrix(n, nrhs, gb)
        };
        vec![Tensor::matrix(n, n, gl), gb]
    })))
}

// ---------------------------------------------------------------------------
// operator sugar

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $op:ident) => {
        impl std::ops::$trait<&Var> for &Var {
            type Output = Var;
            fn $method(self, rhs: &Var) -> Var {
                Var::$op(self, rhs)
            }
        }
        impl std::ops::$trait<f64> for &Var {
            type Output = Var;
            fn $method(self, rhs: f64) -> Var {
                let c = self.tape().scalar(rhs);
                Var::$op(self, &c)
            }
        }
    };
}

impl_binop!(Add, add, add);
impl_binop!(Sub, sub, sub);
impl_binop!(Mul, mul, mul);
impl_binop!(Div, div, div);

impl std::ops::Neg for &Var {
    type Output = Var;
    fn neg(self) -> Var {
        Var::neg(self)
    }
}
