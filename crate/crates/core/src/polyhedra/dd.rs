//! Double description conversion from H- to V-representation.
//!
//! The kernel of `A` is split off first, so the incremental iteration always
//! runs on a pointed cone of dimension `rank(A)`. Generators are kept at unit
//! length and carry the set of inserted constraints they satisfy with equality;
//! adjacency is decided purely combinatorially from those sets.

#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
use std::time::Instant;
// std's clock panics on bare wasm
#[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
use web_time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::{HRep, InsertionOrder, PolyError, ToleranceConfig, VRep};
use crate::linalg::{self, dot, norm2, normalize};

/// Growable bitset over constraint indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActiveSet {
    words: Vec<u64>,
}

impl ActiveSet {
    pub fn insert(&mut self, i: usize) {
        let w = i / 64;
        if self.words.len() <= w {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words.get(i / 64).is_some_and(|w| w & (1 << (i % 64)) != 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersection(&self, other: &ActiveSet) -> ActiveSet {
        ActiveSet {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &ActiveSet) -> bool {
        self.words.iter().enumerate().all(|(k, &w)| {
            let o = other.words.get(k).copied().unwrap_or(0);
            w & !o == 0
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(k, &w)| {
            (0..64).filter(move |b| w & (1 << b) != 0).map(move |b| k * 64 + b)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub ray: Vec<f64>,
    /// Indices (into [`DDPair::rows`]) of constraints tight at this ray.
    pub active: ActiveSet,
}

/// Intermediate double description pair: the inserted rows and the
/// generators of the cone they define.
#[derive(Debug, Clone)]
pub struct DDPair {
    dim: usize,
    rows: Vec<Vec<f64>>,
    generators: Vec<Generator>,
    eps_class: f64,
    /// Lower bound on `|active(i) ∩ active(j)|` for adjacent pairs. For a
    /// pointed cone in `dim` dimensions a 2-face is tight on at least
    /// `dim - 2` constraints; pairs built from arbitrary rays use 0.
    min_common_active: usize,
}

/// Counts produced by one half-space insertion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InsertOutcome {
    pub positive: usize,
    pub zero: usize,
    pub negative: usize,
    pub created: usize,
    /// Classification values that fell within a factor 10 of the threshold.
    pub near_threshold: usize,
}

impl DDPair {
    /// Builds a pair from explicit rows and rays. Active sets are evaluated
    /// numerically with `eps_class` (scaled by row norm, rays normalized).
    pub fn from_generators(
        dim: usize,
        rows: Vec<Vec<f64>>,
        rays: Vec<Vec<f64>>,
        eps_class: f64,
    ) -> Result<Self, PolyError> {
        for v in rows.iter().chain(&rays) {
            if v.len() != dim {
                return Err(PolyError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        let generators = rays
            .into_iter()
            .map(|mut ray| {
                normalize(&mut ray);
                let mut active = ActiveSet::default();
                for (k, row) in rows.iter().enumerate() {
                    if dot(row, &ray).abs() <= eps_class * norm2(row) {
                        active.insert(k);
                    }
                }
                Generator { ray, active }
            })
            .collect();
        Ok(Self {
            dim,
            rows,
            generators,
            eps_class,
            min_common_active: 0,
        })
    }

    /// Initial pair for a pointed cone: `basis_rows` must be `dim` linearly
    /// independent rows. The generators are the columns of `-B^{-1}`, each
    /// tight on every basis row but one.
    fn from_basis(basis_rows: Vec<Vec<f64>>, eps_class: f64) -> Option<Self> {
        let dim = basis_rows.len();
        let inv = linalg::inverse(&basis_rows)?;
        let generators = (0..dim)
            .map(|k| {
                let mut ray: Vec<f64> = (0..dim).map(|i| -inv[i][k]).collect();
                normalize(&mut ray);
                let mut active = ActiveSet::default();
                for j in (0..dim).filter(|&j| j != k) {
                    active.insert(j);
                }
                Generator { ray, active }
            })
            .collect();
        Some(Self {
            dim,
            rows: basis_rows,
            generators,
            eps_class,
            min_common_active: dim.saturating_sub(2),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn rays(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.generators.iter().map(|g| g.ray.as_slice())
    }

    /// Combinatorial adjacency: `i` and `j` span a 2-face iff no third
    /// generator is tight on every constraint that both are tight on.
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        let common = self.generators[i].active.intersection(&self.generators[j].active);
        if common.len() < self.min_common_active {
            return false;
        }
        !self
            .generators
            .iter()
            .enumerate()
            .any(|(k, g)| k != i && k != j && common.is_subset_of(&g.active))
    }

    /// Number of current generators strictly on the infeasible side of `row`.
    pub fn cutoff_count(&self, row: &[f64]) -> usize {
        let thr = self.eps_class * norm2(row);
        self.generators.iter().filter(|g| dot(row, &g.ray) > thr).count()
    }

    /// Adds the constraint `row . z <= 0` and updates the generators.
    pub fn insert(&mut self, row: Vec<f64>) -> Result<InsertOutcome, PolyError> {
        if row.len() != self.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        let thr = self.eps_class * norm2(&row);
        let mut outcome = InsertOutcome::default();
        let values: Vec<f64> = self.generators.iter().map(|g| dot(&row, &g.ray)).collect();
        let (mut pos, mut neg, mut zero) = (Vec::new(), Vec::new(), Vec::new());
        for (i, &s) in values.iter().enumerate() {
            let a = s.abs();
            if thr > 0.0 && a >= thr / 10.0 && a <= thr * 10.0 {
                outcome.near_threshold += 1;
            }
            if s > thr {
                pos.push(i);
            } else if s < -thr {
                neg.push(i);
            } else {
                zero.push(i);
            }
        }
        outcome.positive = pos.len();
        outcome.negative = neg.len();
        outcome.zero = zero.len();

        let k = self.rows.len();
        let combine = |n: usize, p: usize| -> Option<Generator> {
            if !self.adjacent(n, p) {
                return None;
            }
            let (sn, sp) = (values[n], values[p]);
            let mut ray: Vec<f64> = self.generators[n]
                .ray
                .iter()
                .zip(&self.generators[p].ray)
                .map(|(rn, rp)| sp * rn - sn * rp)
                .collect();
            if normalize(&mut ray) <= f64::MIN_POSITIVE {
                return None;
            }
            let mut active = self.generators[n].active.intersection(&self.generators[p].active);
            active.insert(k);
            Some(Generator { ray, active })
        };
        #[cfg(feature = "parallel")]
        let created: Vec<Generator> = neg
            .par_iter()
            .flat_map_iter(|&n| pos.iter().filter_map(move |&p| combine(n, p)))
            .collect();
        #[cfg(not(feature = "parallel"))]
        let created: Vec<Generator> = neg
            .iter()
            .flat_map(|&n| pos.iter().filter_map(move |&p| combine(n, p)))
            .collect();
        outcome.created = created.len();

        let mut keep = vec![false; self.generators.len()];
        for &i in neg.iter().chain(&zero) {
            keep[i] = true;
        }
        let old = std::mem::take(&mut self.generators);
        let mut next: Vec<Generator> = Vec::with_capacity(neg.len() + zero.len() + created.len());
        for (i, mut g) in old.into_iter().enumerate() {
            if keep[i] {
                if values[i].abs() <= thr {
                    g.active.insert(k);
                }
                next.push(g);
            }
        }
        next.extend(created);
        self.generators = next;
        self.rows.push(row);
        Ok(outcome)
    }
}

/// Functional form of [`DDPair::insert`].
pub fn dd_insert_halfspace(mut pair: DDPair, row: &[f64]) -> Result<DDPair, PolyError> {
    pair.insert(row.to_vec())?;
    Ok(pair)
}

pub fn adjacency_test(pair: &DDPair, i: usize, j: usize) -> bool {
    pair.adjacent(i, j)
}

/// `A` split into its kernel and the induced pointed system on the row space.
#[derive(Debug, Clone)]
pub struct LinealitySplit {
    /// Orthonormal basis of `ker(A)`.
    pub lineality: Vec<Vec<f64>>,
    /// `A U`, an `m x rank(A)` system whose cone is pointed.
    pub reduced: HRep,
    /// Orthonormal basis `U` of the row space of `A`.
    pub row_basis: Vec<Vec<f64>>,
}

impl LinealitySplit {
    /// Maps reduced coordinates `y` back to `U y` in R^d.
    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        let d = self.lineality.first().or(self.row_basis.first()).map_or(0, Vec::len);
        let mut z = vec![0.0; d];
        for (yk, u) in y.iter().zip(&self.row_basis) {
            linalg::axpy(*yk, u, &mut z);
        }
        z
    }

    pub fn rank(&self) -> usize {
        self.row_basis.len()
    }
}

pub fn split_lineality(h: &HRep, rank_tol: f64) -> LinealitySplit {
    let d = h.d();
    let rows: Vec<Vec<f64>> = h.rows().map(<[f64]>::to_vec).collect();
    let row_basis = linalg::row_space_basis(&rows, d, rank_tol);
    let lineality = linalg::orthogonal_complement(&row_basis, d);
    let r = row_basis.len();
    let reduced_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|a| row_basis.iter().map(|u| dot(a, u)).collect())
        .collect();
    let reduced = HRep::from_rows(r, &reduced_rows).expect("reduced rows have rank(A) entries");
    LinealitySplit {
        lineality,
        reduced,
        row_basis,
    }
}

/// Materializes `±` lineality pairs: rays first, then `b, -b` for every
/// lineality vector. The cone is the nonnegative span of the result.
pub fn expand_generators(v: &VRep) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(v.n_r());
    out.extend(v.rays.iter().cloned());
    for b in &v.lineality {
        out.push(b.clone());
        out.push(b.iter().map(|x| -x).collect());
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct ConversionStats {
    pub rank: usize,
    /// Row indices of the canonical H-rep in the order they entered the iteration.
    pub insertion_sequence: Vec<usize>,
    pub max_intermediate: usize,
    pub near_threshold: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Conversion {
    pub vrep: VRep,
    pub stats: ConversionStats,
}

/// Converts `{ z | A z <= 0 }` to generator form.
pub fn dd_convert(h: &HRep, tol: &ToleranceConfig) -> Result<Conversion, PolyError> {
    let start = Instant::now();
    let h = h.canonical();
    let split = split_lineality(&h, tol.rank_tol);
    let r = split.rank();
    let mut stats = ConversionStats {
        rank: r,
        ..Default::default()
    };

    let reduced_rays: Vec<Vec<f64>> = if r == 0 {
        Vec::new()
    } else {
        let reduced = &split.reduced;
        let mut basis_idx = Vec::with_capacity(r);
        let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(r);
        for i in 0..reduced.m() {
            if basis_idx.len() == r {
                break;
            }
            let mut v = reduced.row(i).to_vec();
            let n0 = norm2(&v);
            for _ in 0..2 {
                for q in &ortho {
                    let c = dot(q, &v);
                    linalg::axpy(-c, q, &mut v);
                }
            }
            if norm2(&v) > 1e-8 * n0 {
                normalize(&mut v);
                ortho.push(v);
                basis_idx.push(i);
            }
        }
        let basis_rows: Vec<Vec<f64>> = basis_idx.iter().map(|&i| reduced.row(i).to_vec()).collect();
        let mut pair = DDPair::from_basis(basis_rows, tol.eps_class).ok_or(
            PolyError::DimensionMismatch {
                expected: r,
                got: basis_idx.len(),
            },
        )?;
        stats.insertion_sequence.extend(&basis_idx);
        stats.max_intermediate = pair.generators.len();

        let mut remaining: Vec<usize> = (0..reduced.m()).filter(|i| !basis_idx.contains(i)).collect();
        while !remaining.is_empty() {
            let pick = match tol.order {
                InsertionOrder::Input => 0,
                InsertionOrder::Greedy => remaining
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, &i)| pair.cutoff_count(reduced.row(i)))
                    .map(|(k, _)| k)
                    .unwrap_or(0),
            };
            let i = remaining.remove(pick);
            let outcome = pair.insert(reduced.row(i).to_vec())?;
            stats.insertion_sequence.push(i);
            stats.near_threshold += outcome.near_threshold;
            stats.max_intermediate = stats.max_intermediate.max(pair.generators.len());
        }
        pair.generators.into_iter().map(|g| g.ray).collect()
    };

    let mut rays: Vec<Vec<f64>> = Vec::with_capacity(reduced_rays.len());
    for y in &reduced_rays {
        let mut z = split.lift(y);
        normalize(&mut z);
        let duplicate = rays.iter().any(|q| {
            q.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < 1e-9
        });
        if !duplicate {
            rays.push(z);
        }
    }
    stats.seconds = start.elapsed().as_secs_f64();
    Ok(Conversion {
        vrep: VRep::new(h.d(), rays, split.lineality)?,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(d: usize, i: usize, s: f64) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = s;
        v
    }

    fn neg_identity(d: usize) -> HRep {
        HRep::from_rows(d, &(0..d).map(|i| unit(d, i, -1.0)).collect::<Vec<_>>()).unwrap()
    }

    fn contains_dir(set: &[Vec<f64>], v: &[f64]) -> bool {
        set.iter().any(|r| r.iter().zip(v).all(|(a, b)| (a - b).abs() < 1e-9))
    }

    #[test]
    fn orthant_rays() {
        let c = dd_convert(&neg_identity(3), &ToleranceConfig::default()).unwrap();
        assert_eq!(c.vrep.n_pointed(), 3);
        assert_eq!(c.vrep.n_lin(), 0);
        for i in 0..3 {
            assert!(contains_dir(&c.vrep.rays, &unit(3, i, 1.0)));
        }
    }

    #[test]
    fn unconstrained_plane_is_all_lineality() {
        let c = dd_convert(&HRep::empty(2), &ToleranceConfig::default()).unwrap();
        assert!(c.vrep.rays.is_empty());
        assert_eq!(c.vrep.lineality, vec![unit(2, 0, 1.0), unit(2, 1, 1.0)]);
    }

    #[test]
    fn expand_examples() {
        let v = VRep::new(1, vec![], vec![vec![1.0]]).unwrap();
        assert_eq!(expand_generators(&v), vec![vec![1.0], vec![-1.0]]);
        let v = VRep::new(2, vec![unit(2, 0, 1.0), unit(2, 1, 1.0)], vec![]).unwrap();
        assert_eq!(expand_generators(&v), v.rays);
    }

    #[test]
    fn split_examples() {
        let s = split_lineality(&neg_identity(2), 1e-10);
        assert!(s.lineality.is_empty());
        assert_eq!(s.rank(), 2);

        let h = HRep::from_rows(2, &[vec![1.0, 0.0]]).unwrap();
        let s = split_lineality(&h, 1e-10);
        assert_eq!(s.lineality.len(), 1);
        assert!(s.lineality[0][0].abs() < 1e-12 && (s.lineality[0][1].abs() - 1.0).abs() < 1e-12);
        assert_eq!(s.reduced.d(), 1);
        let c = dd_convert(&h, &ToleranceConfig::default()).unwrap();
        assert_eq!(c.vrep.rays.len(), 1);
        assert!((c.vrep.rays[0][0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn insert_cuts_square_cone() {
        let rays = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ];
        let pair = DDPair::from_generators(2, vec![], rays, 1e-9).unwrap();
        let pair = dd_insert_halfspace(pair, &[1.0, 0.0]).unwrap();
        let got: Vec<Vec<f64>> = pair.rays().map(<[f64]>::to_vec).collect();
        assert_eq!(got.len(), 3);
        for want in [vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]] {
            assert!(contains_dir(&got, &want), "{got:?}");
        }
    }

    #[test]
    fn orthogonal_row_leaves_pair_unchanged() {
        let rows = vec![vec![0.0, 0.0, -1.0]];
        let rays = vec![unit(3, 0, 1.0), unit(3, 1, 1.0)];
        let pair = DDPair::from_generators(3, rows, rays.clone(), 1e-9).unwrap();
        let pair = dd_insert_halfspace(pair, &[0.0, 0.0, 1.0]).unwrap();
        let got: Vec<Vec<f64>> = pair.rays().map(<[f64]>::to_vec).collect();
        assert_eq!(got, rays);
    }

    #[test]
    fn orthant_cut_to_zero_cone() {
        let h = neg_identity(3);
        let rows: Vec<Vec<f64>> = h.rows().map(<[f64]>::to_vec).collect();
        let rays: Vec<Vec<f64>> = (0..3).map(|i| unit(3, i, 1.0)).collect();
        let pair = DDPair::from_generators(3, rows, rays, 1e-9).unwrap();
        let pair = dd_insert_halfspace(pair, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(pair.generators().len(), 0);

        let mut all = h.as_slice().to_vec();
        all.extend([1.0, 1.0, 1.0]);
        let c = dd_convert(&HRep::new(4, 3, all).unwrap(), &ToleranceConfig::default()).unwrap();
        assert!(c.vrep.rays.is_empty() && c.vrep.lineality.is_empty());
    }

    #[test]
    fn adjacency_examples() {
        let h = neg_identity(3);
        let rows: Vec<Vec<f64>> = h.rows().map(<[f64]>::to_vec).collect();
        let rays: Vec<Vec<f64>> = (0..3).map(|i| unit(3, i, 1.0)).collect();
        let pair = DDPair::from_generators(3, rows, rays, 1e-9).unwrap();
        assert!(adjacency_test(&pair, 0, 1));

        // cone over the square [-1,1]^2 x {1}
        let rows = vec![
            vec![1.0, 0.0, -1.0],
            vec![-1.0, 0.0, -1.0],
            vec![0.0, 1.0, -1.0],
            vec![0.0, -1.0, -1.0],
        ];
        let rays = vec![
            vec![1.0, 1.0, 1.0],
            vec![1.0, -1.0, 1.0],
            vec![-1.0, -1.0, 1.0],
            vec![-1.0, 1.0, 1.0],
        ];
        let pair = DDPair::from_generators(3, rows, rays, 1e-9).unwrap();
        assert!(!adjacency_test(&pair, 0, 2));
        assert!(!adjacency_test(&pair, 1, 3));
        assert!(adjacency_test(&pair, 0, 1));
        assert!(adjacency_test(&pair, 3, 0));

        let rows = vec![vec![-1.0, 0.0], vec![0.0, -1.0]];
        let rays = vec![unit(2, 0, 1.0), unit(2, 1, 1.0)];
        let pair = DDPair::from_generators(2, rows, rays, 1e-9).unwrap();
        assert!(adjacency_test(&pair, 0, 1));
    }

    #[test]
    fn dimension_mismatch_on_insert() {
        let pair = DDPair::from_generators(2, vec![], vec![vec![1.0, 0.0]], 1e-9).unwrap();
        assert!(dd_insert_halfspace(pair, &[1.0]).is_err());
    }

    #[test]
    fn active_set_ops() {
        let mut a = ActiveSet::default();
        a.insert(3);
        a.insert(70);
        let mut b = ActiveSet::default();
        b.insert(70);
        assert!(b.is_subset_of(&a));
        assert!(!a.is_subset_of(&b));
        assert_eq!(a.intersection(&b).iter().collect::<Vec<_>>(), vec![70]);
        assert_eq!(a.len(), 2);
        assert!(ActiveSet::default().is_subset_of(&b));
    }
}
