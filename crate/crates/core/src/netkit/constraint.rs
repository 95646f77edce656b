use rand::Rng;

use super::{BatchNorm, Bound, Linear, NetError, ParamId, ParamStore};
use crate::linalg::{dot, norm_inf};
use crate::polyhedra::{expand_generators, HRep, VRep};
use crate::tensorkit::{Tape, Tensor, Var};

/// Output layer whose rows always lie in the cone `{ z | A z <= 0 }`:
/// `z = R |W BN(a) + b|`, where the columns of `R` are the expanded
/// generators of the cone. With `box_active` each row is additionally
/// divided by `max(||z||_inf, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintLayer {
    pub bn: BatchNorm,
    pub affine: Linear,
    /// `d x n_r` buffer.
    pub rays: ParamId,
    pub box_active: bool,
    pub d: usize,
    pub n_r: usize,
}

/// Intermediate values of one [`ConstraintLayer`] pass.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintOutput {
    /// Affine output before the absolute value.
    pub pre: Var,
    /// Conical coefficients `|pre|`.
    pub mu: Var,
    pub z: Var,
}

impl ConstraintLayer {
    /// Builds the layer from a converted cone. Every expanded generator must
    /// satisfy `h` within `eps_feas * ||g||_inf * ||A||_max`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        h: &HRep,
        v: &VRep,
        eps_feas: f64,
        box_active: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, NetError> {
        if h.d() != v.d {
            return Err(NetError::DimensionMismatch {
                expected: h.d(),
                got: v.d,
            });
        }
        let gens = expand_generators(v);
        let a_max = h.max_abs();
        for (index, g) in gens.iter().enumerate() {
            let scale = norm_inf(g) * a_max;
            for row in h.rows() {
                let s = dot(row, g);
                if s > eps_feas * scale {
                    return Err(NetError::InfeasibleRay {
                        index,
                        violation: s / scale.max(f64::MIN_POSITIVE),
                    });
                }
            }
        }
        let (d, n_r) = (v.d, gens.len());
        let mut cols = vec![0.0; d * n_r];
        for (j, g) in gens.iter().enumerate() {
            for i in 0..d {
                cols[i * n_r + j] = g[i];
            }
        }
        let bn = BatchNorm::new(store, &format!("{name}.bn"), in_dim);
        let affine = Linear::new(store, &format!("{name}.affine"), in_dim, n_r, rng);
        let rays = store.add(
            format!("{name}.rays"),
            Tensor::matrix(d, n_r, cols).expect("sized"),
            false,
        );
        Ok(Self {
            bn,
            affine,
            rays,
            box_active,
            d,
            n_r,
        })
    }

    /// Feasibility tolerance of the layer output, `1e-8 * n_r`.
    pub fn eps_layer(&self) -> f64 {
        1e-8 * self.n_r as f64
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        store: &mut ParamStore,
        a: Var,
        training: bool,
    ) -> Result<Var, NetError> {
        Ok(self.forward_parts(tape, bound, store, a, training)?.z)
    }

    pub fn forward_parts(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        store: &mut ParamStore,
        a: Var,
        training: bool,
    ) -> Result<ConstraintOutput, NetError> {
        let x = self.bn.forward(tape, bound, store, a, training)?;
        let pre = self.affine.forward(tape, bound, x)?;
        let mu = tape.abs(pre);
        let mut z = tape.matmul_nt(mu, bound.var(self.rays))?;
        if self.box_active {
            z = tape.box_scale(z);
        }
        Ok(ConstraintOutput { pre, mu, z })
    }
}

/// `softmax(logits) V^T + |mu_pre| R^T`: convex combinations of the columns
/// of `vertices` (`d x n`) plus conical combinations of the columns of
/// `rays` (`d x s`).
pub fn general_polyhedron_combine(
    tape: &mut Tape,
    vertices: Var,
    rays: Option<Var>,
    logits: Var,
    mu_pre: Var,
) -> Result<Var, NetError> {
    let lambda = tape.softmax(logits);
    let mut out = tape.matmul_nt(lambda, vertices)?;
    if let Some(r) = rays {
        let mu = tape.abs(mu_pre);
        let cone = tape.matmul_nt(mu, r)?;
        out = tape.add(out, cone)?;
    }
    Ok(out)
}
