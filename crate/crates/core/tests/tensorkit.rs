use conecraft::tensorkit::{grad_check, BNState, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

/// Entries uniform in [-2, 2] at least 1e-2 away from 0 (the kinks of abs and relu).
fn sample(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.01..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces a vector output to a scalar with fixed random weights.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = sample(&mut rng, &shape);
    let c = tape.constant(c);
    let p = tape.mul(y, c).unwrap();
    tape.sum(p)
}

fn check_unary(name: &str, op: impl Fn(&mut Tape, Var) -> Var, x: Tensor) {
    let err = grad_check(
        |t, v| {
            let y = op(t, v);
            weighted_sum(t, y, 5)
        },
        &x,
        H,
    );
    assert!(err < TOL, "{name}: {err:e}");
}

#[test]
fn grad_check_elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = sample(&mut rng, &[3, 4]);
    check_unary("relu", |t, v| t.relu(v), x.clone());
    check_unary("abs", |t, v| t.abs(v), x.clone());
    check_unary("sigmoid", |t, v| t.sigmoid(v), x.clone());
    check_unary("exp", |t, v| t.exp(v), x.clone());
    check_unary("square", |t, v| t.square(v), x.clone());
    check_unary("neg", |t, v| t.neg(v), x.clone());
    check_unary("scale", |t, v| t.scale(v, 2.5), x.clone());
    check_unary("add_scalar", |t, v| t.add_scalar(v, -0.3), x.clone());
    let pos = Tensor::new(vec![3, 4], x.data().iter().map(|v| v.abs() + 0.1).collect()).unwrap();
    check_unary("log", |t, v| t.log(v), pos);
    check_unary("softmax", |t, v| t.softmax(v), x.clone());
    check_unary("sum_axis0", |t, v| t.sum_axis(v, 0).unwrap(), x.clone());
    check_unary("sum_axis1", |t, v| t.sum_axis(v, 1).unwrap(), x.clone());
    check_unary("mean_axis0", |t, v| t.mean_axis(v, 0).unwrap(), x.clone());
    check_unary("mean", |t, v| t.mean(v), x.clone());
    check_unary("sum", |t, v| t.sum(v), x);
}

#[test]
fn grad_check_box_scale() {
    // rows inside and outside the box, unique maxima, away from the tie
    let x = Tensor::new(
        vec![3, 3],
        vec![0.5, -0.2, 0.7, 2.0, -0.5, 1.2, -0.3, -3.0, 1.5],
    )
    .unwrap();
    check_unary("box_scale", |t, v| t.box_scale(v), x);
}

#[test]
fn grad_check_binary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = sample(&mut rng, &[4, 3]);
    for (label, bshape) in [("same", vec![4, 3]), ("row", vec![3]), ("scalar", vec![1])] {
        let b = sample(&mut rng, &bshape);
        for op in ["add", "sub", "mul"] {
            let apply = |t: &mut Tape, x: Var, y: Var| match op {
                "add" => t.add(x, y).unwrap(),
                "sub" => t.sub(x, y).unwrap(),
                _ => t.mul(x, y).unwrap(),
            };
            // with respect to the left operand
            let bc = b.clone();
            let err = grad_check(
                |t, v| {
                    let y = t.constant(bc.clone());
                    let o = apply(t, v, y);
                    weighted_sum(t, o, 9)
                },
                &a,
                H,
            );
            assert!(err < TOL, "{op}/{label} lhs: {err:e}");
            // with respect to the broadcast operand
            let ac = a.clone();
            let err = grad_check(
                |t, v| {
                    let x = t.constant(ac.clone());
                    let o = apply(t, x, v);
                    weighted_sum(t, o, 9)
                },
                &b,
                H,
            );
            assert!(err < TOL, "{op}/{label} rhs: {err:e}");
        }
    }
}

#[test]
fn grad_check_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = sample(&mut rng, &[3, 4]);
    let b = sample(&mut rng, &[4, 5]);
    let bt = sample(&mut rng, &[5, 4]);
    let cases: [(&Tensor, &Tensor, bool); 2] = [(&a, &b, false), (&a, &bt, true)];
    for (x, y, nt) in cases {
        let mm = |t: &mut Tape, p: Var, q: Var| if nt { t.matmul_nt(p, q).unwrap() } else { t.matmul(p, q).unwrap() };
        let err = grad_check(
            |t, v| {
                let q = t.constant(y.clone());
                let o = mm(t, v, q);
                weighted_sum(t, o, 3)
            },
            x,
            H,
        );
        assert!(err < TOL, "matmul lhs nt={nt}: {err:e}");
        let err = grad_check(
            |t, v| {
                let p = t.constant(x.clone());
                let o = mm(t, p, v);
                weighted_sum(t, o, 3)
            },
            y,
            H,
        );
        assert!(err < TOL, "matmul rhs nt={nt}: {err:e}");
    }
}

#[test]
fn grad_check_batch_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = sample(&mut rng, &[6, 3]);
    let gamma = sample(&mut rng, &[3]);
    let beta = sample(&mut rng, &[3]);
    for training in [true, false] {
        let mut eval_state = BNState::new(3);
        eval_state.running_mean = vec![0.2, -0.1, 0.4];
        eval_state.running_var = vec![0.5, 1.5, 2.0];
        let run = |t: &mut Tape, xv: Var, gv: Var, bv: Var| {
            let mut st = eval_state.clone();
            let y = t.batch_norm(xv, gv, bv, &mut st, training).unwrap();
            weighted_sum(t, y, 4)
        };
        let err = grad_check(
            |t, v| {
                let g = t.constant(gamma.clone());
                let b = t.constant(beta.clone());
                run(t, v, g, b)
            },
            &x,
            H,
        );
        assert!(err < TOL, "bn x training={training}: {err:e}");
        let err = grad_check(
            |t, v| {
                let xx = t.constant(x.clone());
                let b = t.constant(beta.clone());
                run(t, xx, v, b)
            },
            &gamma,
            H,
        );
        assert!(err < TOL, "bn gamma training={training}: {err:e}");
        let err = grad_check(
            |t, v| {
                let xx = t.constant(x.clone());
                let g = t.constant(gamma.clone());
                run(t, xx, g, v)
            },
            &beta,
            H,
        );
        assert!(err < TOL, "bn beta training={training}: {err:e}");
    }
}

#[test]
fn grad_check_spec_examples() {
    let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
    let err = grad_check(
        |t, v| {
            let s = t.square(v);
            t.sum(s)
        },
        &x,
        1e-5,
    );
    assert!(err < 1e-7, "{err:e}");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = sample(&mut rng, &[10]);
    let err = grad_check(
        |t, v| {
            let s = t.sigmoid(v);
            t.sum(s)
        },
        &x,
        1e-5,
    );
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn softmax_jacobian_vanishes_when_one_coordinate_dominates() {
    let x = Tensor::new(vec![1, 3], vec![30.0, 0.0, 0.0]).unwrap();
    // closed form J = diag(y) - y y^T
    let e: Vec<f64> = x.data().iter().map(|v| (v - 30.0_f64).exp()).collect();
    let s: f64 = e.iter().sum();
    let y: Vec<f64> = e.iter().map(|v| v / s).collect();
    let mut norm_closed = 0.0_f64;
    let mut norm_tape = 0.0_f64;
    for i in 0..3 {
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let out = tape.softmax(v);
        let mut sel = vec![0.0; 3];
        sel[i] = 1.0;
        let sel = tape.constant(Tensor::new(vec![1, 3], sel).unwrap());
        let p = tape.mul(out, sel).unwrap();
        let o = tape.sum(p);
        tape.backward(o).unwrap();
        let row = tape.grad(v).unwrap();
        let mut sum_closed = 0.0;
        for j in 0..3 {
            let jij = y[i] * (if i == j { 1.0 } else { 0.0 } - y[j]);
            assert!((row[j] - jij).abs() < 1e-15);
            sum_closed += jij.abs();
        }
        norm_closed = norm_closed.max(sum_closed);
        norm_tape = norm_tape.max(row.iter().map(|v| v.abs()).sum());
    }
    assert!(norm_closed < 1e-12, "{norm_closed:e}");
    assert!(norm_tape < 1e-12, "{norm_tape:e}");
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = sample(&mut rng, &[4, 3]);
    let w = sample(&mut rng, &[3, 2]);
    let losses = |t: &mut Tape, xv: Var| {
        let wv = t.constant(w.clone());
        let h = t.matmul(xv, wv).unwrap();
        let s = t.sigmoid(h);
        let l1 = t.sum(s);
        let q = t.square(xv);
        let l2 = t.mean(q);
        (l1, l2)
    };
    let grad_of = |pick: usize| {
        let mut t = Tape::new();
        let xv = t.param(x.clone());
        let (l1, l2) = losses(&mut t, xv);
        let l = match pick {
            0 => l1,
            1 => l2,
            _ => t.add(l1, l2).unwrap(),
        };
        t.backward(l).unwrap();
        t.grad(xv).unwrap().to_vec()
    };
    let (g1, g2, g12) = (grad_of(0), grad_of(1), grad_of(2));
    for k in 0..g1.len() {
        assert!((g12[k] - g1[k] - g2[k]).abs() < 1e-14);
    }
}

#[test]
fn batch_norm_standardizes_random_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, f) = (32, 4);
    let data: Vec<f64> = (0..n * f)
        .map(|k| 3.0 * (k % f) as f64 + rng.random_range(-20.0..20.0))
        .collect();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(n, f, data.clone()).unwrap());
    let g = tape.constant(Tensor::full(&[f], 1.0));
    let b = tape.constant(Tensor::zeros(&[f]));
    let mut st = BNState::new(f);
    let y = tape.batch_norm(x, g, b, &mut st, true).unwrap();
    let out = tape.value(y).data();
    for j in 0..f {
        let col: Vec<f64> = (0..n).map(|i| data[i * f + j]).collect();
        let mu = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        let ys: Vec<f64> = (0..n).map(|i| out[i * f + j]).collect();
        let m = ys.iter().sum::<f64>() / n as f64;
        let v = ys.iter().map(|u| (u - m) * (u - m)).sum::<f64>() / n as f64;
        assert!(m.abs() < 1e-10);
        assert!((v - var / (var + 1e-5)).abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-6, "{v}");
        // running statistics after one step from (0, 1), unbiased variance
        assert!((st.running_mean[j] - 0.1 * mu).abs() < 1e-12);
        let unbiased = var * n as f64 / (n as f64 - 1.0);
        assert!((st.running_var[j] - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in prop::collection::vec(prop::collection::vec(-1e4..1e4f64, 1..8), 1..6)) {
        let p = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().cycle().take(p).copied()).collect();
        let n = rows.len();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(n, p, data).unwrap());
        let s = tape.softmax(x);
        for i in 0..n {
            let row = tape.value(s).row(i);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
