//! Small dense linear-algebra helpers shared by the polyhedral and projection code.
//!
//! Matrices here are plain row-major `Vec<f64>` buffers paired with explicit
//! dimensions. Heavy factorizations are delegated to `nalgebra`.

use nalgebra::{DMatrix, DVector};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Scales `v` to unit Euclidean length. Returns the original norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Orthonormal basis of the row space of an `m x d` row-major matrix.
///
/// Returns the basis vectors (each of length `d`). The numerical rank uses the
/// usual `sigma > max(m, d) * eps * sigma_max` cut with a floor of `rel_tol`.
pub fn row_space_basis(rows: &[Vec<f64>], d: usize, rel_tol: f64) -> Vec<Vec<f64>> {
    let m = rows.len();
    if m == 0 || d == 0 {
        return Vec::new();
    }
    let mat = DMatrix::from_fn(m, d, |i, j| rows[i][j]);
    let svd = mat.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma_max = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
    if sigma_max == 0.0 {
        return Vec::new();
    }
    let cut = sigma_max * rel_tol.max(m.max(d) as f64 * f64::EPSILON);
    let mut basis: Vec<Vec<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > cut)
        .map(|(k, _)| v_t.row(k).iter().copied().collect())
        .collect();
    // SVD output is already orthonormal; one Gram-Schmidt sweep removes drift.
    gram_schmidt_in_place(&mut basis);
    basis
}

fn gram_schmidt_in_place(vs: &mut Vec<Vec<f64>>) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vs.len());
    for mut v in vs.drain(..) {
        for _ in 0..2 {
            for q in &out {
                let c = dot(q, &v);
                axpy(-c, q, &mut v);
            }
        }
        if normalize(&mut v) > 1e-12 {
            out.push(v);
        }
    }
    *vs = out;
}

/// Completes an orthonormal set `basis` (vectors of length `d`) to a basis of
/// R^d and returns only the added vectors, i.e. an orthonormal basis of the
/// orthogonal complement of `span(basis)`.
pub fn orthogonal_complement(basis: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    let want = d.saturating_sub(basis.len());
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(want);
    if want == 0 {
        return out;
    }
    // Two passes: a strict acceptance threshold first, then a looser one to
    // pick up whatever the first pass skipped.
    for threshold in [1e-3, 1e-9] {
        for i in 0..d {
            if out.len() == want {
                return out;
            }
            let mut v = vec![0.0; d];
            v[i] = 1.0;
            for _ in 0..2 {
                for q in basis.iter().chain(out.iter()) {
                    let c = dot(q, &v);
                    if c != 0.0 {
                        axpy(-c, q, &mut v);
                    }
                }
            }
            if norm2(&v) > threshold {
                normalize(&mut v);
                out.push(v);
            }
        }
    }
    out
}

/// Least-squares solution of `cols * x ≈ b` where `cols` are the columns.
fn lstsq_columns(cols: &[&[f64]], b: &[f64]) -> Vec<f64> {
    let n = cols.len();
    let d = b.len();
    let mat = DMatrix::from_fn(d, n, |i, j| cols[j][i]);
    let rhs = DVector::from_column_slice(b);
    let svd = mat.svd(true, true);
    let sigma_max = svd.singular_values.iter().fold(0.0_f64, |a, &s| a.max(s));
    let eps = sigma_max * 1e-13;
    match svd.solve(&rhs, eps) {
        Ok(x) => x.iter().copied().collect(),
        Err(_) => vec![0.0; n],
    }
}

/// Result of a nonnegative least-squares solve.
#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Lawson–Hanson active-set nonnegative least squares:
/// `min ||G x - z||_2  s.t.  x >= 0`, with `G` given by its columns.
pub fn nnls(columns: &[Vec<f64>], z: &[f64]) -> NnlsSolution {
    let n = columns.len();
    let d = z.len();
    let mut x = vec![0.0; n];
    if n == 0 {
        return NnlsSolution {
            x,
            residual: norm2(z),
            iterations: 0,
        };
    }
    let scale = columns
        .iter()
        .map(|c| norm2(c))
        .fold(0.0_f64, f64::max)
        .max(1.0)
        * norm2(z).max(1e-300);
    let tol = 1e-13 * scale;

    let residual_vec = |x: &[f64]| {
        let mut r = z.to_vec();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                axpy(-xj, &columns[j], &mut r);
            }
        }
        r
    };

    let mut passive = vec![false; n];
    let max_outer = 3 * n.max(d) + 10;
    let mut iterations = 0;
    loop {
        if iterations >= max_outer {
            break;
        }
        let r = residual_vec(&x);
        let w: Vec<f64> = columns.iter().map(|c| dot(c, &r)).collect();
        let pick = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = pick else { break };
        passive[j] = true;
        iterations += 1;

        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let cols: Vec<&[f64]> = idx.iter().map(|&k| columns[k].as_slice()).collect();
            let s_p = lstsq_columns(&cols, z);
            if s_p.iter().all(|&s| s > 0.0) {
                x.iter_mut().for_each(|v| *v = 0.0);
                for (&k, &s) in idx.iter().zip(&s_p) {
                    x[k] = s;
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (&k, &s) in idx.iter().zip(&s_p) {
                if s <= 0.0 {
                    let denom = x[k] - s;
                    if denom > 0.0 {
                        alpha = alpha.min(x[k] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (&k, &s) in idx.iter().zip(&s_p) {
                x[k] += alpha * (s - x[k]);
            }
            let mut dropped = false;
            for &k in &idx {
                if x[k] <= 1e-15 * scale.max(1.0) {
                    x[k] = 0.0;
                    passive[k] = false;
                    dropped = true;
                }
            }
            if !dropped || !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    let residual = norm2(&residual_vec(&x));
    NnlsSolution {
        x,
        residual,
        iterations,
    }
}

/// Solves the square system `m x = b` (row-major `n x n`). `None` when singular.
pub fn solve_square(m: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mat = DMatrix::from_fn(n, n, |i, j| m[i][j]);
    let lu = mat.lu();
    lu.solve(&DVector::from_column_slice(b))
        .map(|x| x.iter().copied().collect())
}

/// Inverse of a square row-major matrix, or `None` when singular.
pub fn inverse(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mat = DMatrix::from_fn(n, n, |i, j| m[i][j]);
    mat.try_inverse()
        .map(|inv| (0..n).map(|i| inv.row(i).iter().copied().collect()).collect())
}
