//! Post-hoc soundness and completeness check of a V-representation against
//! its source H-representation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{expand_generators, HRep, VRep};
use crate::linalg::{axpy, dot, nnls, norm2, norm_inf};
use crate::projector::{dykstra_project, DykstraOptions, ProjectionProblem};

const SOUNDNESS_TOL: f64 = 1e-9;
const COMPLETENESS_TOL: f64 = 1e-6;
const ORTHONORMALITY_TOL: f64 = 1e-10;
const EPS_CLASS: f64 = 1e-9;

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct VerificationReport {
    pub pass: bool,
    /// `max_g max(A g) / (||g||_inf ||A||_max)` over expanded generators.
    pub soundness_max_violation: f64,
    /// `max_b max|A b| / ||A||_max` over lineality vectors.
    pub lineality_max_violation: f64,
    /// `max_{i,j} |<b_i, b_j> - delta_ij|` over lineality vectors.
    pub orthonormality_error: f64,
    /// Largest `NNLS residual / ||z||_2` over the sampled feasible points.
    pub completeness_max_residual: f64,
    pub samples_checked: usize,
    pub samples_from_rejection: usize,
    /// Samples obtained as Dykstra projections of Gaussian draws onto the cone.
    pub samples_from_projection: usize,
    /// Generator/row products within a factor 10 of the classification threshold.
    pub near_threshold: usize,
    pub failures: Vec<String>,
}

/// Checks that every expanded generator of `v` lies in `{A z <= 0}` and that
/// feasible points of the cone are reproduced by nonnegative combinations.
///
/// Feasible points are first drawn by rejection from `N(0, I)` (at most
/// `10 * n_samples` draws); a shortfall is filled with projections of
/// Gaussian draws onto the cone, which depend on `h` only, and only if those
/// also fail with random nonnegative combinations of the generators.
pub fn verify_vrep(h: &HRep, v: &VRep, n_samples: usize, seed: u64) -> VerificationReport {
    let mut report = VerificationReport::default();
    if h.d() != v.d {
        report
            .failures
            .push(format!("dimension mismatch: H has d={}, V has d={}", h.d(), v.d));
        return report;
    }
    let d = h.d();
    let a_max = h.max_abs().max(f64::MIN_POSITIVE);

    // soundness
    let generators = expand_generators(v);
    for (k, g) in generators.iter().enumerate() {
        let g_inf = norm_inf(g);
        if g_inf == 0.0 {
            report.failures.push(format!("generator {k} is zero"));
            continue;
        }
        for row in h.rows() {
            let s = dot(row, g);
            let rel = s / (g_inf * a_max);
            report.soundness_max_violation = report.soundness_max_violation.max(rel);
            let thr = EPS_CLASS * norm2(row) * norm2(g);
            let mag = s.abs();
            if thr > 0.0 && mag >= thr / 10.0 && mag <= thr * 10.0 {
                report.near_threshold += 1;
            }
        }
    }
    if report.soundness_max_violation > SOUNDNESS_TOL {
        report.failures.push(format!(
            "soundness: max scaled violation {:.3e} > {SOUNDNESS_TOL:e}",
            report.soundness_max_violation
        ));
    }
    for b in &v.lineality {
        for row in h.rows() {
            report.lineality_max_violation =
                report.lineality_max_violation.max(dot(row, b).abs() / a_max);
        }
    }
    if report.lineality_max_violation > SOUNDNESS_TOL {
        report.failures.push(format!(
            "lineality not in ker(A): {:.3e}",
            report.lineality_max_violation
        ));
    }
    for (i, bi) in v.lineality.iter().enumerate() {
        for (j, bj) in v.lineality.iter().enumerate().skip(i) {
            let target = if i == j { 1.0 } else { 0.0 };
            report.orthonormality_error = report.orthonormality_error.max((dot(bi, bj) - target).abs());
        }
    }
    if report.orthonormality_error > ORTHONORMALITY_TOL {
        report.failures.push(format!(
            "lineality basis not orthonormal: {:.3e}",
            report.orthonormality_error
        ));
    }

    // completeness
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(n_samples);
    for _ in 0..10 * n_samples {
        if samples.len() == n_samples {
            break;
        }
        let z = gaussian(&mut rng);
        if h.rows().all(|row| dot(row, &z) <= 0.0) {
            samples.push(z);
        }
    }
    report.samples_from_rejection = samples.len();
    let options = DykstraOptions {
        tol: 1e-12,
        max_iter: 10_000,
    };
    let mut attempts = 0;
    while samples.len() < n_samples && attempts < 10 * n_samples {
        attempts += 1;
        let y = gaussian(&mut rng);
        let prob = ProjectionProblem {
            h,
            boxed: false,
            y: &y,
            options,
        };
        // Slowly converging runs (typically near the apex of thin cones) are skipped.
        let Ok(p) = dykstra_project(&prob) else { continue };
        let zn = norm2(&p.z);
        if zn <= 1e-8 * norm2(&y) {
            continue;
        }
        let feasible = h
            .rows()
            .all(|row| dot(row, &p.z) <= 1e-9 * a_max * zn);
        if feasible {
            samples.push(p.z);
        }
    }
    report.samples_from_projection = samples.len() - report.samples_from_rejection;
    // Last resort: random nonnegative combinations of the generators.
    while samples.len() < n_samples && !generators.is_empty() {
        let mut z = vec![0.0; d];
        for g in &generators {
            let w: f64 = rng.sample::<f64, _>(StandardNormal).abs();
            axpy(w, g, &mut z);
        }
        samples.push(z);
    }

    // Free lineality coefficients are eliminated exactly: with an orthonormal
    // basis L, NNLS over {R, L, -L} equals NNLS over (I - L L^T) R.
    let strip = |x: &[f64]| -> Vec<f64> {
        let mut out = x.to_vec();
        for b in &v.lineality {
            let c = dot(b, &out);
            axpy(-c, b, &mut out);
        }
        out
    };
    let reduced_rays: Vec<Vec<f64>> = v.rays.iter().map(|r| strip(r)).collect();
    for z in &samples {
        let zn = norm2(z);
        if zn == 0.0 {
            continue;
        }
        let target = strip(z);
        let sol = nnls(&reduced_rays, &target);
        let rel = sol.residual / zn;
        report.completeness_max_residual = report.completeness_max_residual.max(rel);
    }
    report.samples_checked = samples.len();
    if report.completeness_max_residual >= COMPLETENESS_TOL {
        report.failures.push(format!(
            "completeness: max relative NNLS residual {:.3e} >= {COMPLETENESS_TOL:e}",
            report.completeness_max_residual
        ));
    }

    report.pass = report.failures.is_empty();
    report
}
