use conecraft::linalg::{dot, nnls};
use conecraft::netkit::{
    adam_step, general_polyhedron_combine, load_checkpoint, save_checkpoint, AdamState, ConstraintLayer, NetError,
    ParamStore,
};
use conecraft::polyhedra::{checkerboard_hrep, dd_convert, HRep, ToleranceConfig, VRep};
use conecraft::tensorkit::{grad_check, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn desk() -> (HRep, VRep) {
    let h = checkerboard_hrep(16, 2).unwrap();
    let v = dd_convert(&h, &ToleranceConfig::default()).unwrap().vrep;
    (h, v)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, p: usize, scale: f64) -> Tensor {
    Tensor::matrix(n, p, (0..n * p).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

fn max_violation(h: &HRep, z: &Tensor) -> f64 {
    let (n, _) = z.dims2();
    (0..n)
        .flat_map(|i| h.rows().map(move |r| dot(r, z.row(i))))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Random affine/BN parameters, including large magnitudes.
fn randomize(store: &mut ParamStore, layer: &ConstraintLayer, rng: &mut ChaCha8Rng) {
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    for id in [layer.affine.weight, layer.affine.bias, layer.bn.gamma, layer.bn.beta] {
        for v in store.get_mut(id).data_mut() {
            *v = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn forward(store: &mut ParamStore, layer: &ConstraintLayer, x: &Tensor, training: bool) -> Tensor {
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let z = layer.forward(&mut tape, &b, store, xv, training).unwrap();
    tape.value(z).clone()
}

#[test]
fn zero_affine_gives_zero_output() {
    let (h, v) = desk();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layer = ConstraintLayer::new(&mut store, "c", 5, &h, &v, 1e-9, false, &mut rng).unwrap();
    store.get_mut(layer.affine.weight).data_mut().fill(0.0);
    let x = gaussian(&mut rng, 4, 5, 1.0);
    let z = forward(&mut store, &layer, &x, true);
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn orthant_outputs_are_nonnegative() {
    let d = 4;
    let rows: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { -1.0 } else { 0.0 }).collect()).collect();
    let h = HRep::from_rows(d, &rows).unwrap();
    let v = dd_convert(&h, &ToleranceConfig::default()).unwrap().vrep;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = ConstraintLayer::new(&mut store, "c", 3, &h, &v, 1e-9, false, &mut rng).unwrap();
    let x = gaussian(&mut rng, 50, 3, 3.0);
    let z = forward(&mut store, &layer, &x, true);
    assert!(z.data().iter().all(|&v| v >= 0.0));
}

#[test]
fn infeasible_rays_are_rejected() {
    let h = HRep::from_rows(2, &[vec![-1.0, 0.0]]).unwrap();
    let v = VRep::new(2, vec![vec![-1.0, 0.0]], vec![]).unwrap();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = ConstraintLayer::new(&mut store, "c", 2, &h, &v, 1e-9, false, &mut rng).unwrap_err();
    assert!(matches!(err, NetError::InfeasibleRay { index: 0, .. }));
}

#[test]
fn desk_checkerboard_hard_constraint_on_many_inputs() {
    let (h, v) = desk();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let layer = ConstraintLayer::new(&mut store, "c", 256, &h, &v, 1e-9, false, &mut rng).unwrap();
    let x = gaussian(&mut rng, 10_000, 256, 1.0);
    let z = forward(&mut store, &layer, &x, true);
    assert!(max_violation(&h, &z) <= layer.eps_layer());
    // eval mode uses running statistics
    let z = forward(&mut store, &layer, &x, false);
    assert!(max_violation(&h, &z) <= layer.eps_layer());
}

#[test]
fn constraint_layer_passes_grad_check() {
    let h = HRep::from_rows(
        4,
        &[
            vec![1.0, -2.0, 0.5, 0.0],
            vec![-1.0, 0.3, 0.2, 1.0],
            vec![0.2, 0.4, -1.0, 0.1],
        ],
    )
    .unwrap();
    let v = dd_convert(&h, &ToleranceConfig::default()).unwrap().vrep;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let layer = ConstraintLayer::new(&mut store, "c", 3, &h, &v, 1e-9, false, &mut rng).unwrap();
    let c = gaussian(&mut rng, 5, 4, 1.0);
    // draw inputs until every pre-activation is 1e-2 away from the kink
    let x = loop {
        let x = gaussian(&mut rng, 5, 3, 1.0);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let mut s = store.clone();
        let out = layer.forward_parts(&mut tape, &b, &mut s, xv, true).unwrap();
        if tape.value(out.pre).data().iter().all(|v| v.abs() > 1e-2) {
            break x;
        }
    };
    let base = store.clone();
    let loss = |tape: &mut Tape, z| {
        let cv = tape.constant(c.clone());
        let p = tape.mul(z, cv).unwrap();
        tape.sum(p)
    };
    let err = grad_check(
        |tape, xv| {
            let mut s = base.clone();
            let b = s.bind(tape);
            let z = layer.forward(tape, &b, &mut s, xv, true).unwrap();
            loss(tape, z)
        },
        &x,
        1e-5,
    );
    assert!(err < 1e-5, "input: {err:e}");
    let w = base.get(layer.affine.weight).clone();
    let err = grad_check(
        |tape, wv| {
            let mut s = base.clone();
            let mut b = s.bind(tape);
            b.replace(layer.affine.weight, wv);
            let xv = tape.constant(x.clone());
            let z = layer.forward(tape, &b, &mut s, xv, true).unwrap();
            loss(tape, z)
        },
        &w,
        1e-5,
    );
    assert!(err < 1e-5, "weight: {err:e}");
}

#[test]
fn abs_keeps_gradient_magnitude_where_relu_drops_it() {
    let (h, v) = desk();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let layer = ConstraintLayer::new(&mut store, "c", 16, &h, &v, 1e-9, false, &mut rng).unwrap();
    let x = gaussian(&mut rng, 8, 16, 1.0);
    let c = gaussian(&mut rng, 8, 256, 1.0);

    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let xv = tape.constant(x);
    let out = layer.forward_parts(&mut tape, &b, &mut store, xv, true).unwrap();
    let cv = tape.constant(c.clone());
    let p = tape.mul(out.z, cv).unwrap();
    let l = tape.sum(p);
    tape.backward(l).unwrap();
    let pre = tape.value(out.pre).data().to_vec();
    let g_pre = tape.grad(out.pre).unwrap().to_vec();
    let g_mu = tape.grad(out.mu).unwrap().to_vec();
    for k in 0..pre.len() {
        if pre[k].abs() > 1e-2 {
            assert_eq!(g_pre[k].abs(), g_mu[k].abs());
        }
    }

    // same pre-activations through relu
    let mut tape = Tape::new();
    let pv = tape.param(tape_value(&pre, 8));
    let mu = tape.relu(pv);
    let rays = tape.constant(store.get(layer.rays).clone());
    let z = tape.matmul_nt(mu, rays).unwrap();
    let cv = tape.constant(c);
    let p = tape.mul(z, cv).unwrap();
    let l = tape.sum(p);
    tape.backward(l).unwrap();
    let g = tape.grad(pv).unwrap();
    let mut dead = 0;
    for k in 0..pre.len() {
        if pre[k] < -1e-2 {
            assert_eq!(g[k], 0.0);
            dead += 1;
        }
    }
    assert!(dead > 0);
}

fn tape_value(data: &[f64], n: usize) -> Tensor {
    Tensor::matrix(n, data.len() / n, data.to_vec()).unwrap()
}

#[test]
fn polyhedron_combine_examples() {
    // single vertex, no rays
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::matrix(2, 1, vec![0.3, -0.7]).unwrap());
    let logits = tape.constant(Tensor::matrix(3, 1, vec![5.0, -2.0, 0.0]).unwrap());
    let mu = tape.constant(Tensor::zeros(&[3, 0]));
    let out = general_polyhedron_combine(&mut tape, v, None, logits, mu).unwrap();
    for i in 0..3 {
        assert_eq!(tape.value(out).row(i), &[0.3, -0.7]);
    }
    // segment
    let v = tape.constant(Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap());
    let logits = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
    let out = general_polyhedron_combine(&mut tape, v, None, logits, mu).unwrap();
    assert_eq!(tape.value(out).data(), &[0.5, 0.0]);
}

#[test]
fn polyhedron_combine_membership_oracle() {
    // triangle (0,0), (1,0), (0,1) plus ray (1,1)
    let verts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let ray = [1.0, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 200;
    let mut tape = Tape::new();
    let vt = tape.constant(Tensor::matrix(2, 3, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
    let rt = tape.constant(Tensor::matrix(2, 1, ray.to_vec()).unwrap());
    let logits = tape.constant(gaussian(&mut rng, n, 3, 3.0));
    let mu = tape.constant(gaussian(&mut rng, n, 1, 2.0));
    let out = general_polyhedron_combine(&mut tape, vt, Some(rt), logits, mu).unwrap();
    let lam = tape.softmax(logits);
    // augmented NNLS: [v_i; 1], [r; 0] against [p; 1]
    let mut cols: Vec<Vec<f64>> = verts.iter().map(|v| vec![v[0], v[1], 1.0]).collect();
    cols.push(vec![ray[0], ray[1], 0.0]);
    for i in 0..n {
        assert!((tape.value(lam).row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let p = tape.value(out).row(i);
        let sol = nnls(&cols, &[p[0], p[1], 1.0]);
        assert!(sol.residual < 1e-9, "{sol:?}");
    }
    // a point outside is rejected by the same oracle
    assert!(nnls(&cols, &[-0.5, 0.2, 1.0]).residual > 1e-3);
}

#[test]
fn adam_matches_reference_on_quadratic() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::scalar(1.0), true);
    let mut st = AdamState::new(&store);
    // scalar reference
    let (mut w, mut m, mut v) = (1.0_f64, 0.0_f64, 0.0_f64);
    for t in 1..=200 {
        let g = 2.0 * store.get(id).item();
        adam_step(&mut st, &mut store, &[Some(vec![g])], 0.1);
        let gr = 2.0 * w;
        m = 0.9 * m + 0.1 * gr;
        v = 0.999 * v + 0.001 * gr * gr;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        w -= 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((store.get(id).item() - w).abs() < 1e-12);
    }
    assert!(w.abs() < 1e-2, "{w}");
}

#[test]
fn adam_first_step_has_size_lr() {
    let lr = 1e-4;
    for g in [1.0, -3.0, 17.5, -100.0] {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.25), true);
        let mut st = AdamState::new(&store);
        adam_step(&mut st, &mut store, &[Some(vec![g])], lr);
        let dw = store.get(id).item() - 0.25;
        let closed = lr * g.abs() / (g.abs() + 1e-8);
        assert!((dw.abs() - closed).abs() < 1e-15);
        assert!((dw.abs() - lr).abs() <= 1e-12);
        assert_eq!(dw.signum(), -g.signum());
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = ParamStore::new();
    store.add(
        "a.weight",
        Tensor::matrix(2, 3, vec![0.1, -0.0, f64::MIN_POSITIVE / 4.0, 1e300, f64::NAN, -7.25]).unwrap(),
        true,
    );
    store.add("a.rays", Tensor::zeros(&[4, 0]), false);
    store.add("b", Tensor::scalar(std::f64::consts::PI), true);
    let meta = serde_json::json!({"box_active": true, "hrep": "h.txt"});
    save_checkpoint(dir.path(), &store, &meta).unwrap();
    let ck = load_checkpoint(dir.path()).unwrap();
    assert_eq!(ck.meta, meta);
    assert_eq!(ck.store.len(), 3);
    for (a, b) in store.entries().iter().zip(ck.store.entries()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.trainable, b.trainable);
        assert_eq!(a.tensor.shape(), b.tensor.shape());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.tensor), bits(&b.tensor));
    }
    // truncated tensor file
    let f = dir.path().join("b.bin");
    std::fs::write(&f, [0u8; 5]).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(NetError::CheckpointCorrupt(_))));
    assert!(matches!(
        load_checkpoint(dir.path().join("missing")),
        Err(NetError::CheckpointCorrupt(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_parameters_stay_feasible(seed in any::<u64>(), boxed in any::<bool>(), training in any::<bool>()) {
        let (h, v) = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layer = ConstraintLayer::new(&mut store, "c", 32, &h, &v, 1e-9, boxed, &mut rng).unwrap();
        randomize(&mut store, &layer, &mut rng);
        let xs = 10f64.powf(rng.random_range(-1.0..1.0));
        let x = gaussian(&mut rng, 200, 32, xs);
        let z = forward(&mut store, &layer, &x, training);
        prop_assert!(max_violation(&h, &z) <= layer.eps_layer());
        if boxed {
            prop_assert!(z.data().iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn scaling_coefficients_keeps_feasibility(seed in any::<u64>(), alpha in 0.0..1e3f64) {
        let (h, v) = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layer = ConstraintLayer::new(&mut store, "c", 8, &h, &v, 1e-9, false, &mut rng).unwrap();
        let x = gaussian(&mut rng, 50, 8, 1.0);
        let z1 = forward(&mut store.clone(), &layer, &x, false);
        // |alpha * (W x + b)| = alpha |W x + b|
        for id in [layer.affine.weight, layer.affine.bias] {
            store.get_mut(id).data_mut().iter_mut().for_each(|w| *w *= alpha);
        }
        let za = forward(&mut store, &layer, &x, false);
        prop_assert!(max_violation(&h, &za) <= layer.eps_layer());
        for (a, b) in za.data().iter().zip(z1.data()) {
            prop_assert!((a - alpha * b).abs() <= 1e-9 * (1.0 + alpha * b.abs()));
        }
    }
}

#[test]
fn gradcheck_suite_passes() {
    let results = conecraft::netkit::gradcheck_suite(0);
    assert!(results.len() > 40);
    for r in &results {
        assert!(r.error < 1e-5, "{}: {:e}", r.name, r.error);
    }
}
