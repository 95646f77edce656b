//! Finite-difference check of every tape op and of the constraint layer,
//! run by `conecraft gradcheck`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ConstraintLayer, ParamStore};
use crate::polyhedra::{checkerboard_hrep, dd_convert, HRep, ToleranceConfig};
use crate::tensorkit::{grad_check, BNState, Tape, Tensor, Var};

const H: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckResult {
    pub name: String,
    /// Max relative error `|a - n| / max(|a|, 1)`.
    pub error: f64,
}

/// Entries uniform in `±[0.01, 2)`, so at least 1e-2 from the kinks of
/// `abs` and `relu`.
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
    Tensor::new(shape.to_vec(), data).expect("sized")
}

fn weighted_sum(tape: &mut Tape, y: Var, w: &Tensor) -> Var {
    let c = tape.constant(w.clone());
    let p = tape.mul(y, c).expect("same shape");
    tape.sum(p)
}

struct Suite {
    rng: ChaCha8Rng,
    out: Vec<GradCheckResult>,
}

impl Suite {
    /// Checks `sum(w * op(x))` for a random fixed `w`.
    fn unary(&mut self, name: &str, x: &Tensor, op: impl Fn(&mut Tape, Var) -> Var) {
        let mut probe = Tape::new();
        let v = probe.constant(x.clone());
        let y = op(&mut probe, v);
        let w = sample(&mut self.rng, probe.value(y).shape());
        let error = grad_check(
            |t, v| {
                let y = op(t, v);
                weighted_sum(t, y, &w)
            },
            x,
            H,
        );
        self.out.push(GradCheckResult { name: name.into(), error });
    }
}

fn constraint_layer_checks(s: &mut Suite, label: &str, h: &HRep, in_dim: usize, batch: usize) {
    let v = dd_convert(h, &ToleranceConfig::default()).expect("valid cone").vrep;
    let mut store = ParamStore::new();
    let layer = ConstraintLayer::new(&mut store, "c", in_dim, h, &v, 1e-9, false, &mut s.rng).expect("feasible rays");
    // redraw inputs until every pre-activation is 1e-2 away from the kink of abs
    let x = loop {
        let x = sample(&mut s.rng, &[batch, in_dim]);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let mut st = store.clone();
        let out = layer.forward_parts(&mut tape, &b, &mut st, xv, true).expect("shapes");
        if tape.value(out.pre).data().iter().all(|p| p.abs() > 1e-2) {
            break x;
        }
    };
    let w = sample(&mut s.rng, &[batch, h.d()]);
    let base = store;
    let error = grad_check(
        |tape, xv| {
            let mut st = base.clone();
            let b = st.bind(tape);
            let z = layer.forward(tape, &b, &mut st, xv, true).expect("shapes");
            weighted_sum(tape, z, &w)
        },
        &x,
        H,
    );
    s.out.push(GradCheckResult {
        name: format!("constraint_layer[{label}] input"),
        error,
    });
    for (pname, id) in [
        ("weight", layer.affine.weight),
        ("bias", layer.affine.bias),
        ("bn.gamma", layer.bn.gamma),
        ("bn.beta", layer.bn.beta),
    ] {
        let p0 = base.get(id).clone();
        let error = grad_check(
            |tape, pv| {
                let mut st = base.clone();
                let mut b = st.bind(tape);
                b.replace(id, pv);
                let xv = tape.constant(x.clone());
                let z = layer.forward(tape, &b, &mut st, xv, true).expect("shapes");
                weighted_sum(tape, z, &w)
            },
            &p0,
            H,
        );
        s.out.push(GradCheckResult {
            name: format!("constraint_layer[{label}] {pname}"),
            error,
        });
    }
}

/// Runs the full check; every error should stay below 1e-5.
pub fn gradcheck_suite(seed: u64) -> Vec<GradCheckResult> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: Vec::new(),
    };
    let x = sample(&mut s.rng, &[3, 4]);
    s.unary("relu", &x, |t, v| t.relu(v));
    s.unary("abs", &x, |t, v| t.abs(v));
    s.unary("sigmoid", &x, |t, v| t.sigmoid(v));
    s.unary("exp", &x, |t, v| t.exp(v));
    s.unary("square", &x, |t, v| t.square(v));
    s.unary("neg", &x, |t, v| t.neg(v));
    s.unary("scale", &x, |t, v| t.scale(v, 2.5));
    s.unary("add_scalar", &x, |t, v| t.add_scalar(v, -0.3));
    let pos = Tensor::new(vec![3, 4], x.data().iter().map(|v| v.abs() + 0.1).collect()).expect("sized");
    s.unary("log", &pos, |t, v| t.log(v));
    s.unary("softmax", &x, |t, v| t.softmax(v));
    s.unary("sum", &x, |t, v| t.sum(v));
    s.unary("mean", &x, |t, v| t.mean(v));
    s.unary("sum_axis0", &x, |t, v| t.sum_axis(v, 0).expect("2-d"));
    s.unary("sum_axis1", &x, |t, v| t.sum_axis(v, 1).expect("2-d"));
    s.unary("mean_axis1", &x, |t, v| t.mean_axis(v, 1).expect("2-d"));
    let boxed = Tensor::new(vec![3, 3], vec![0.5, -0.2, 0.7, 2.0, -0.5, 1.2, -0.3, -3.0, 1.5]).expect("sized");
    s.unary("box_scale", &boxed, |t, v| t.box_scale(v));

    for (label, shape) in [("same", vec![3, 4]), ("row", vec![4]), ("scalar", vec![1])] {
        let b = sample(&mut s.rng, &shape);
        for op in ["add", "sub", "mul"] {
            let apply = move |t: &mut Tape, p: Var, q: Var| match op {
                "add" => t.add(p, q).expect("broadcast"),
                "sub" => t.sub(p, q).expect("broadcast"),
                _ => t.mul(p, q).expect("broadcast"),
            };
            let bc = b.clone();
            s.unary(&format!("{op}[{label}] lhs"), &x, move |t, v| {
                let q = t.constant(bc.clone());
                apply(t, v, q)
            });
            let xc = x.clone();
            s.unary(&format!("{op}[{label}] rhs"), &b, move |t, v| {
                let p = t.constant(xc.clone());
                apply(t, p, v)
            });
        }
    }

    let b = sample(&mut s.rng, &[4, 5]);
    let bt = sample(&mut s.rng, &[5, 4]);
    let (bc, xc) = (b.clone(), x.clone());
    s.unary("matmul lhs", &x, move |t, v| {
        let q = t.constant(bc.clone());
        t.matmul(v, q).expect("shapes")
    });
    s.unary("matmul rhs", &b, move |t, v| {
        let p = t.constant(xc.clone());
        t.matmul(p, v).expect("shapes")
    });
    let (bc, xc) = (bt.clone(), x.clone());
    s.unary("matmul_nt lhs", &x, move |t, v| {
        let q = t.constant(bc.clone());
        t.matmul_nt(v, q).expect("shapes")
    });
    s.unary("matmul_nt rhs", &bt, move |t, v| {
        let p = t.constant(xc.clone());
        t.matmul_nt(p, v).expect("shapes")
    });

    let xb = sample(&mut s.rng, &[6, 3]);
    let gamma = sample(&mut s.rng, &[3]);
    let beta = sample(&mut s.rng, &[3]);
    for training in [true, false] {
        let mode = if training { "train" } else { "eval" };
        let mut st = BNState::new(3);
        st.running_mean = vec![0.2, -0.1, 0.4];
        st.running_var = vec![0.5, 1.5, 2.0];
        let bn = move |t: &mut Tape, x: Var, g: Var, b: Var| {
            let mut st = st.clone();
            t.batch_norm(x, g, b, &mut st, training).expect("batch of 6")
        };
        let (g, b) = (gamma.clone(), beta.clone());
        let bn1 = bn.clone();
        s.unary(&format!("batch_norm[{mode}] x"), &xb, move |t, v| {
            let (gv, bv) = (t.constant(g.clone()), t.constant(b.clone()));
            bn1(t, v, gv, bv)
        });
        let (xc, b) = (xb.clone(), beta.clone());
        let bn2 = bn.clone();
        s.unary(&format!("batch_norm[{mode}] gamma"), &gamma, move |t, v| {
            let (xv, bv) = (t.constant(xc.clone()), t.constant(b.clone()));
            bn2(t, xv, v, bv)
        });
        let (xc, g) = (xb.clone(), gamma.clone());
        s.unary(&format!("batch_norm[{mode}] beta"), &beta, move |t, v| {
            let (xv, gv) = (t.constant(xc.clone()), t.constant(g.clone()));
            bn(t, xv, gv, v)
        });
    }

    let small = HRep::from_rows(
        4,
        &[
            vec![1.0, -2.0, 0.5, 0.0],
            vec![-1.0, 0.3, 0.2, 1.0],
            vec![0.2, 0.4, -1.0, 0.1],
        ],
    )
    .expect("finite rows");
    constraint_layer_checks(&mut s, "random 3x4", &small, 3, 5);
    let desk = checkerboard_hrep(8, 2).expect("8 divisible by 2");
    constraint_layer_checks(&mut s, "checkerboard 8x8", &desk, 3, 4);
    s.out
}
