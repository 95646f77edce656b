//! Euclidean projection onto `{ z | A z <= 0 }`, optionally intersected with
//! the unit box `[-1, 1]^d`, by Dykstra's cyclic correction scheme.
//!
//! Every half-space and the box have closed-form projections; the half-space
//! corrections are always multiples of the row, so each is kept as a scalar.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::linalg::{axpy, dot};
use crate::polyhedra::HRep;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ProjectionError {
    #[error("cannot project onto a half-space with an all-zero normal")]
    ZeroRow,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Dykstra iteration stopped after {} cycles with displacement {:.3e}", .0.iterations, .0.residual)]
    NotConverged(Projection),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DykstraOptions {
    /// Stop once a full cycle moves the iterate and every correction by less
    /// than this (max-norm). The iterate alone can stall while the
    /// corrections are still changing. Also requires `a.z <= tol` for every
    /// row.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DykstraOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionProblem<'a> {
    pub h: &'a HRep,
    pub boxed: bool,
    pub y: &'a [f64],
    pub options: DykstraOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub z: Vec<f64>,
    pub iterations: usize,
    /// Largest change of the iterate or a correction in the last cycle.
    pub residual: f64,
}

/// `z - max(0, a.z) / ||a||^2 * a`
pub fn project_halfspace(a: &[f64], z: &[f64]) -> Result<Vec<f64>, ProjectionError> {
    if a.len() != z.len() {
        return Err(ProjectionError::DimensionMismatch {
            expected: a.len(),
            got: z.len(),
        });
    }
    let nn = dot(a, a);
    if nn == 0.0 {
        return Err(ProjectionError::ZeroRow);
    }
    let mut out = z.to_vec();
    let t = dot(a, z).max(0.0) / nn;
    if t > 0.0 {
        axpy(-t, a, &mut out);
    }
    Ok(out)
}

pub fn dykstra_project(p: &ProjectionProblem<'_>) -> Result<Projection, ProjectionError> {
    let h = p.h;
    let d = h.d();
    if p.y.len() != d {
        return Err(ProjectionError::DimensionMismatch {
            expected: d,
            got: p.y.len(),
        });
    }
    let rows: Vec<(&[f64], f64, f64)> = h
        .rows()
        .map(|a| (a, dot(a, a), a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))))
        .filter(|&(_, nn, _)| nn > 0.0)
        .collect();

    let mut x = p.y.to_vec();
    let mut prev = vec![0.0; d];
    // correction for half-space k is `corr[k] * a_k`
    let mut corr = vec![0.0; rows.len()];
    let mut box_corr = vec![0.0; if p.boxed { d } else { 0 }];
    let mut residual = f64::INFINITY;

    for cycle in 1..=p.options.max_iter.max(1) {
        prev.copy_from_slice(&x);
        let mut corr_change = 0.0_f64;
        for ((a, nn, amax), c) in rows.iter().zip(corr.iter_mut()) {
            // v = x + c a ;  a.v = a.x + c ||a||^2
            let av = dot(a, &x) + *c * nn;
            let t = av.max(0.0) / nn;
            let delta = *c - t;
            if delta != 0.0 {
                axpy(delta, a, &mut x);
                corr_change = corr_change.max(delta.abs() * amax);
            }
            *c = t;
        }
        if p.boxed {
            for (xi, pi) in x.iter_mut().zip(box_corr.iter_mut()) {
                let v = *xi + *pi;
                let clamped = v.clamp(-1.0, 1.0);
                corr_change = corr_change.max((v - clamped - *pi).abs());
                *pi = v - clamped;
                *xi = clamped;
            }
        }
        residual = x
            .iter()
            .zip(&prev)
            .fold(corr_change, |m, (a, b)| m.max((a - b).abs()));
        // the box clamp runs last, so only the half-spaces can be violated
        if residual < p.options.tol && rows.iter().all(|(a, _, _)| dot(a, &x) <= p.options.tol) {
            return Ok(Projection {
                z: x,
                iterations: cycle,
                residual,
            });
        }
    }
    Err(ProjectionError::NotConverged(Projection {
        z: x,
        iterations: p.options.max_iter,
        residual,
    }))
}

#[derive(Debug, Clone)]
pub struct BatchProjection {
    /// Row-major `batch x d`.
    pub z: Vec<f64>,
    pub iterations: Vec<usize>,
    /// Rows that hit `max_iter`; their entries hold the last iterate.
    pub not_converged: Vec<usize>,
}

/// Row-wise [`dykstra_project`] over a row-major `batch x d` buffer.
pub fn project_batch(
    h: &HRep,
    boxed: bool,
    ys: &[f64],
    options: DykstraOptions,
) -> Result<BatchProjection, ProjectionError> {
    let d = h.d();
    if d == 0 || !ys.len().is_multiple_of(d) {
        return Err(ProjectionError::DimensionMismatch {
            expected: d,
            got: ys.len(),
        });
    }
    let one = |y: &[f64]| {
        let prob = ProjectionProblem {
            h,
            boxed,
            y,
            options,
        };
        match dykstra_project(&prob) {
            Ok(p) => Ok((p, true)),
            Err(ProjectionError::NotConverged(p)) => Ok((p, false)),
            Err(e) => Err(e),
        }
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = ys.par_chunks(d).map(one).collect::<Result<_, _>>()?;
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = ys.chunks(d).map(one).collect::<Result<_, _>>()?;

    let mut out = BatchProjection {
        z: Vec::with_capacity(ys.len()),
        iterations: Vec::with_capacity(results.len()),
        not_converged: Vec::new(),
    };
    for (i, (p, ok)) in results.into_iter().enumerate() {
        out.z.extend_from_slice(&p.z);
        out.iterations.push(p.iterations);
        if !ok {
            out.not_converged.push(i);
        }
    }
    Ok(out)
}
