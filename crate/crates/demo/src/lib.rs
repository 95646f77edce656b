//! Browser demo over a 2-d cone: ray conversion, click-to-project and a
//! scatter of constraint-layer outputs. [`Demo`] is plain Rust; the
//! exported [`ConeDemo`] wraps it for JavaScript.

use conecraft::linalg::dot;
use conecraft::netkit::{ConstraintLayer, ParamStore};
use conecraft::polyhedra::{dd_convert, HRep, ToleranceConfig, VRep};
use conecraft::projector::{dykstra_project, DykstraOptions, ProjectionProblem};
use conecraft::tensorkit::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wasm_bindgen::prelude::*;

/// Input width of the demo constraint layer.
const LAYER_IN: usize = 2;

#[derive(Debug, Clone)]
pub struct Demo {
    h: HRep,
    v: VRep,
    store: ParamStore,
    layer: ConstraintLayer,
}

impl Demo {
    /// `normals` holds `(a_x, a_y)` pairs of the constraints `a . z <= 0`.
    pub fn new(normals: &[f64], seed: u64) -> Result<Self, String> {
        if !normals.len().is_multiple_of(2) {
            return Err("normals must come in (x, y) pairs".into());
        }
        let rows: Vec<Vec<f64>> = normals
            .chunks(2)
            .filter(|r| r[0] != 0.0 || r[1] != 0.0)
            .map(|r| r.to_vec())
            .collect();
        let h = HRep::from_rows(2, &rows).map_err(|e| e.to_string())?;
        let v = dd_convert(&h, &ToleranceConfig::default()).map_err(|e| e.to_string())?.vrep;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = ConstraintLayer::new(&mut store, "demo", LAYER_IN, &h, &v, 1e-9, false, &mut rng)
            .map_err(|e| e.to_string())?;
        Ok(Self { h, v, store, layer })
    }

    /// Pointed generators, flattened `(x, y)` pairs.
    pub fn rays(&self) -> Vec<f64> {
        self.v.rays.concat()
    }

    /// Lineality basis, flattened `(x, y)` pairs; each spans a full line.
    pub fn lineality(&self) -> Vec<f64> {
        self.v.lineality.concat()
    }

    /// True when the cone is `{0}` (no generators at all).
    pub fn is_trivial(&self) -> bool {
        self.v.n_r() == 0
    }

    /// Dykstra projection of `(x, y)`, optionally intersected with `[-1, 1]^2`.
    /// Returns `[z_x, z_y, cycles]`.
    pub fn project(&self, x: f64, y: f64, boxed: bool) -> Vec<f64> {
        let p = ProjectionProblem {
            h: &self.h,
            boxed,
            y: &[x, y],
            options: DykstraOptions::default(),
        };
        let r = match dykstra_project(&p) {
            Ok(r) => r,
            Err(conecraft::projector::ProjectionError::NotConverged(r)) => r,
            Err(_) => return vec![x, y, 0.0],
        };
        vec![r.z[0], r.z[1], r.iterations as f64]
    }

    /// Outputs of the constraint layer (eval mode) for `n` Gaussian inputs of
    /// standard deviation `spread`, flattened `(x, y)` pairs.
    pub fn layer_outputs(&mut self, n: usize, spread: f64, seed: u64, boxed: bool) -> Vec<f64> {
        if n == 0 || self.is_trivial() {
            return vec![0.0; 2 * n];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * LAYER_IN).map(|_| spread * rng.sample::<f64, _>(StandardNormal)).collect();
        let x = Tensor::matrix(n, LAYER_IN, data).expect("sized");
        self.layer.box_active = boxed;
        let mut tape = Tape::new();
        let b = self.store.bind(&mut tape);
        let xv = tape.constant(x);
        let z = self
            .layer
            .forward(&mut tape, &b, &mut self.store, xv, false)
            .expect("shapes fixed at construction");
        tape.value(z).data().to_vec()
    }

    /// Redraws the layer's affine weights.
    pub fn reinit(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in [self.layer.affine.weight, self.layer.affine.bias] {
            for w in self.store.get_mut(id).data_mut() {
                *w = rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    /// `max_k a_k . z` over flattened points.
    pub fn max_violation(&self, points: &[f64]) -> f64 {
        points
            .chunks(2)
            .flat_map(|p| self.h.rows().map(move |r| dot(r, p)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn eps_layer(&self) -> f64 {
        self.layer.eps_layer()
    }
}

/// JavaScript handle; seeds are `u32` so plain numbers work.
#[wasm_bindgen]
pub struct ConeDemo(Demo);

#[wasm_bindgen]
impl ConeDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(normals: Vec<f64>, seed: u32) -> Result<ConeDemo, JsError> {
        Demo::new(&normals, seed.into()).map(ConeDemo).map_err(|e| JsError::new(&e))
    }

    pub fn rays(&self) -> Vec<f64> {
        self.0.rays()
    }

    pub fn lineality(&self) -> Vec<f64> {
        self.0.lineality()
    }

    #[wasm_bindgen(js_name = isTrivial)]
    pub fn is_trivial(&self) -> bool {
        self.0.is_trivial()
    }

    pub fn project(&self, x: f64, y: f64, boxed: bool) -> Vec<f64> {
        self.0.project(x, y, boxed)
    }

    #[wasm_bindgen(js_name = layerOutputs)]
    pub fn layer_outputs(&mut self, n: usize, spread: f64, seed: u32, boxed: bool) -> Vec<f64> {
        self.0.layer_outputs(n, spread, seed.into(), boxed)
    }

    pub fn reinit(&mut self, seed: u32) {
        self.0.reinit(seed.into())
    }

    #[wasm_bindgen(js_name = maxViolation)]
    pub fn max_violation(&self, points: Vec<f64>) -> f64 {
        self.0.max_violation(&points)
    }

    #[wasm_bindgen(js_name = epsLayer)]
    pub fn eps_layer(&self) -> f64 {
        self.0.eps_layer()
    }
}
