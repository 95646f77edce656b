//! Homogeneous polyhedral cones `{ z | A z <= 0 }` in half-space (H) and
//! generator (V) form, and the double description conversion between them.

mod checkerboard;
mod dd;
mod io;
mod verify;

pub use checkerboard::checkerboard_hrep;
pub use dd::{
    adjacency_test, dd_convert, dd_insert_halfspace, expand_generators, split_lineality, Conversion,
    ConversionStats, DDPair, Generator, InsertOutcome, LinealitySplit,
};
pub use io::{
    format_hrep, format_matrix, format_vrep, parse_hrep, parse_matrix, parse_vrep, read_hrep, read_vrep, write_hrep, write_vrep,
    ParseError,
};
pub use verify::{verify_vrep, VerificationReport};

use crate::linalg;

#[derive(Debug, thiserror::Error)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid grid: side {side} is not divisible by {tiles} tiles")]
    InvalidGrid { side: usize, tiles: usize },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Order in which the remaining constraints are fed to the DD iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsertionOrder {
    /// Rows are inserted exactly in file order.
    Input,
    /// Each step inserts the row that cuts off the fewest current generators.
    #[default]
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceConfig {
    /// `|a . r| <= eps_class * ||a||` classifies a unit generator as lying on
    /// the hyperplane of row `a`.
    pub eps_class: f64,
    /// Relative feasibility tolerance for generators, scaled by
    /// `||g||_inf * ||A||_max`.
    pub eps_feas: f64,
    /// Orthonormality tolerance for the lineality basis.
    pub eps_orth: f64,
    /// Relative singular-value cut used to determine `rank(A)`.
    pub rank_tol: f64,
    pub order: InsertionOrder,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            eps_class: 1e-9,
            eps_feas: 1e-9,
            eps_orth: 1e-10,
            rank_tol: 1e-10,
            order: InsertionOrder::Greedy,
        }
    }
}

/// H-representation of a homogeneous cone: `m` rows of length `d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HRep {
    m: usize,
    d: usize,
    a: Vec<f64>,
}

impl HRep {
    pub fn new(m: usize, d: usize, a: Vec<f64>) -> Result<Self, PolyError> {
        if a.len() != m * d {
            return Err(PolyError::DimensionMismatch {
                expected: m * d,
                got: a.len(),
            });
        }
        if let Some(k) = a.iter().position(|x| !x.is_finite()) {
            return Err(PolyError::NonFinite {
                row: k / d.max(1),
                col: k % d.max(1),
            });
        }
        Ok(Self { m, d, a })
    }

    pub fn from_rows(d: usize, rows: &[Vec<f64>]) -> Result<Self, PolyError> {
        let mut a = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(PolyError::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            a.extend_from_slice(row);
        }
        Self::new(rows.len(), d, a)
    }

    /// The unconstrained space R^d.
    pub fn empty(d: usize) -> Self {
        Self { m: 0, d, a: Vec::new() }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.m).map(move |i| self.row(i))
    }

    /// Row-major `m x d` buffer.
    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    /// Copy with all-zero rows removed.
    pub fn canonical(&self) -> HRep {
        let rows: Vec<Vec<f64>> = self
            .rows()
            .filter(|r| r.iter().any(|&x| x != 0.0))
            .map(<[f64]>::to_vec)
            .collect();
        HRep::from_rows(self.d, &rows).expect("rows taken from a valid HRep")
    }

    /// Largest absolute entry of `A`.
    pub fn max_abs(&self) -> f64 {
        linalg::norm_inf(&self.a)
    }

    /// `A z`
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>, PolyError> {
        self.check_dim(z.len())?;
        Ok(self.rows().map(|r| linalg::dot(r, z)).collect())
    }

    /// `max_i (A z)_i`, or `-inf` when there are no rows.
    pub fn max_violation(&self, z: &[f64]) -> Result<f64, PolyError> {
        Ok(self.apply(z)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Rows permuted by `perm` (row `k` of the result is row `perm[k]` of `self`).
    pub fn permuted(&self, perm: &[usize]) -> HRep {
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| self.row(i).to_vec()).collect();
        HRep::from_rows(self.d, &rows).expect("permutation of a valid HRep")
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<(), PolyError> {
        if got != self.d {
            return Err(PolyError::DimensionMismatch {
                expected: self.d,
                got,
            });
        }
        Ok(())
    }
}

/// `true` iff `max_i (A z)_i <= eps`.
pub fn membership(h: &HRep, z: &[f64], eps: f64) -> Result<bool, PolyError> {
    Ok(h.max_violation(z)? <= eps)
}

/// V-representation of a cone: pointed generators plus an orthonormal basis of
/// the lineality space. The cone is `{ R mu + L w | mu >= 0 }`.
#[derive(Debug, Clone, PartialEq)]
pub struct VRep {
    pub d: usize,
    pub rays: Vec<Vec<f64>>,
    pub lineality: Vec<Vec<f64>>,
}

impl VRep {
    pub fn new(d: usize, rays: Vec<Vec<f64>>, lineality: Vec<Vec<f64>>) -> Result<Self, PolyError> {
        for v in rays.iter().chain(&lineality) {
            if v.len() != d {
                return Err(PolyError::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        Ok(Self { d, rays, lineality })
    }

    pub fn n_pointed(&self) -> usize {
        self.rays.len()
    }

    pub fn n_lin(&self) -> usize {
        self.lineality.len()
    }

    /// Column count after materializing `±` lineality pairs.
    pub fn n_r(&self) -> usize {
        self.n_pointed() + 2 * self.n_lin()
    }

    /// Expanded generators as a row-major `d x n_r` matrix.
    pub fn generator_matrix(&self) -> Vec<f64> {
        let cols = expand_generators(self);
        let n = cols.len();
        let mut out = vec![0.0; self.d * n];
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                out[i * n + j] = v;
            }
        }
        out
    }
}
