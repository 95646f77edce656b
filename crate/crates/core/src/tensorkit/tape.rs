use super::{gemm, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    SumAxis { x: Var, axis: usize },
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    },
    BoxScale { x: Var, scale: Vec<(f64, usize)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BNState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BNState {
    pub fn new(features: usize) -> Self {
        Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Records operations for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn bcast_mode(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast, TensorError> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if b.numel() == 1 {
        Ok(Bcast::Scalar)
    } else if a.shape().len() == 2 && b.numel() == a.shape()[1] && b.shape().iter().rev().skip(1).all(|&s| s == 1) {
        Ok(Bcast::Row)
    } else {
        Err(shape_err(op, a, b))
    }
}

#[inline]
fn bidx(mode: Bcast, i: usize, p: usize) -> usize {
    match mode {
        Bcast::Same => i,
        Bcast::Row => i % p,
        Bcast::Scalar => 0,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`Tape::backward`] output with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T`, the layout used by fully-connected layers (`weight` is `out x in`).
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let (n, k) = (ta.shape()[0], ta.shape()[1]);
        let (p, kb) = if transpose_b {
            (tb.shape()[0], tb.shape()[1])
        } else {
            (tb.shape()[1], tb.shape()[0])
        };
        if k != kb {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; n * p];
        let b_strides = if transpose_b { (1, k) } else { (p, 1) };
        gemm(n, k, p, 1.0, ta.data(), (k, 1), tb.data(), b_strides, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::matrix(n, p, out)?,
            Op::MatMul { a, b, transpose_b },
            rg,
        ))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(Var, Var, Bcast) -> Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mode = bcast_mode(name, ta, tb)?;
        let p = tb.numel();
        let data: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[bidx(mode, i, p)]))
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, mk(a, b, mode), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Reduction of a 2-d tensor over `axis` (0: over rows -> `[p]`, 1: over columns -> `[n]`).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.shape().len() != 2 || axis > 1 {
            return Err(TensorError::ShapeMismatch {
                op: "sum_axis",
                lhs: t.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        let (n, p) = t.dims2();
        let out = if axis == 0 {
            let mut acc = vec![0.0; p];
            for i in 0..n {
                for (a, v) in acc.iter_mut().zip(t.row(i)) {
                    *a += v;
                }
            }
            Tensor::new(vec![p], acc)?
        } else {
            Tensor::new(vec![n], (0..n).map(|i| t.row(i).iter().sum()).collect())?
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::SumAxis { x, axis }, rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let (n, p) = self.value(x).dims2();
        let count = if axis == 0 { n } else { p };
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / count.max(1) as f64))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (n, p) = t.dims2();
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let row = t.row(i);
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let o = &mut out[i * p..(i + 1) * p];
            let mut s = 0.0;
            for (oj, &v) in o.iter_mut().zip(row) {
                *oj = (v - mx).exp();
                s += *oj;
            }
            o.iter_mut().for_each(|v| *v /= s);
        }
        let out = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Softmax(x), rg)
    }

    /// Batch normalization over the rows of `x` (`n x f`) with per-feature
    /// scale `gamma` and shift `beta`. Training mode normalizes by the batch
    /// statistics and updates `state`; eval mode uses the running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BNState,
        training: bool,
    ) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(shape_err("batch_norm", t, self.value(gamma)));
        }
        let (n, f) = t.dims2();
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.numel() != f || tb.numel() != f || state.running_mean.len() != f {
            return Err(shape_err("batch_norm", t, tg));
        }
        let (mean, var) = if training {
            if n < 2 {
                return Err(TensorError::DegenerateBatch(n));
            }
            let mut mean = vec![0.0; f];
            for i in 0..n {
                for (m, v) in mean.iter_mut().zip(t.row(i)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; f];
            for i in 0..n {
                for ((s, v), m) in var.iter_mut().zip(t.row(i)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            (mean, var)
        } else {
            (state.running_mean.clone(), state.running_var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let mut xhat = vec![0.0; n * f];
        let mut out = vec![0.0; n * f];
        for i in 0..n {
            for j in 0..f {
                let k = i * f + j;
                xhat[k] = (t.data()[k] - mean[j]) * inv_std[j];
                out[k] = tg.data()[j] * xhat[k] + tb.data()[j];
            }
        }
        if training {
            let mo = state.momentum;
            let unbias = n as f64 / (n as f64 - 1.0);
            for j in 0..f {
                state.running_mean[j] = (1.0 - mo) * state.running_mean[j] + mo * mean[j];
                state.running_var[j] = (1.0 - mo) * state.running_var[j] + mo * var[j] * unbias;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            rg,
        ))
    }

    /// Per-row `x / max(||x||_inf, 1)`. At `||x||_inf == 1` the identity
    /// branch is taken.
    pub fn box_scale(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (n, p) = t.dims2();
        let mut out = t.data().to_vec();
        let mut scale = Vec::with_capacity(n);
        for i in 0..n {
            let row = &mut out[i * p..(i + 1) * p];
            let (k, m) = row
                .iter()
                .enumerate()
                .fold((0, 0.0_f64), |(bk, bm), (j, v)| if v.abs() > bm { (j, v.abs()) } else { (bk, bm) });
            if m > 1.0 {
                row.iter_mut().for_each(|v| *v /= m);
                scale.push((m, k));
            } else {
                scale.push((1.0, usize::MAX));
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::BoxScale { x, scale }, rg)
    }

    /// Reverse pass from the scalar `out`. Gradients of earlier passes are cleared.
    pub fn backward(&mut self, out: Var) -> Result<(), TensorError> {
        let t = self.value(out);
        if t.numel() != 1 {
            return Err(TensorError::NotScalar(t.shape().to_vec()));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64], &[Node])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot, &self.nodes);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b, transpose_b } => {
                let (n, k) = self.nodes[a.0].value.dims2();
                let p = self.nodes[i].value.shape()[1];
                let tb = *transpose_b;
                // dA = dC * op(B)^T
                self.acc(*a, |da, nodes| {
                    let bd = nodes[b.0].value.data();
                    let strides = if tb { (k, 1) } else { (1, p) };
                    gemm(n, p, k, 1.0, g, (p, 1), bd, strides, 1.0, da);
                });
                self.acc(*b, |db, nodes| {
                    let ad = nodes[a.0].value.data();
                    if tb {
                        // dB (p x k) = dC^T * A
                        gemm(p, n, k, 1.0, g, (1, p), ad, (k, 1), 1.0, db);
                    } else {
                        // dB (k x p) = A^T * dC
                        gemm(k, n, p, 1.0, ad, (1, k), g, (p, 1), 1.0, db);
                    }
                });
            }
            Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let mode = *mode;
                self.acc(*a, |da, _| da.iter_mut().zip(g).for_each(|(d, gi)| *d += gi));
                self.acc(*b, |db, _| {
                    let p = db.len();
                    for (k, gi) in g.iter().enumerate() {
                        db[bidx(mode, k, p)] += sign * gi;
                    }
                });
            }
            Op::Mul(a, b, mode) => {
                let mode = *mode;
                self.acc(*a, |da, nodes| {
                    let bd = nodes[b.0].value.data();
                    let p = bd.len();
                    for (k, (d, gi)) in da.iter_mut().zip(g).enumerate() {
                        *d += gi * bd[bidx(mode, k, p)];
                    }
                });
                self.acc(*b, |db, nodes| {
                    let ad = nodes[a.0].value.data();
                    let p = db.len();
                    for (k, (gi, av)) in g.iter().zip(ad).enumerate() {
                        db[bidx(mode, k, p)] += gi * av;
                    }
                });
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.acc(*x, |dx, _| dx.iter_mut().zip(g).for_each(|(d, gi)| *d += c * gi));
            }
            Op::AddScalar(x) => {
                self.acc(*x, |dx, _| dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi));
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.acc(*x, |dx, _| dx.iter_mut().for_each(|d| *d += g0));
            }
            Op::SumAxis { x, axis } => {
                let axis = *axis;
                self.acc(*x, |dx, nodes| {
                    let (_, p) = nodes[x.0].value.dims2();
                    for (k, d) in dx.iter_mut().enumerate() {
                        *d += if axis == 0 { g[k % p] } else { g[k / p] };
                    }
                });
            }
            Op::Relu(x) => self.elementwise_back(*x, g, |xv, _| if xv > 0.0 { 1.0 } else { 0.0 }, i),
            Op::Sigmoid(x) => self.elementwise_back(*x, g, |_, y| y * (1.0 - y), i),
            Op::Abs(x) => self.elementwise_back(
                *x,
                g,
                |xv, _| {
                    if xv > 0.0 {
                        1.0
                    } else if xv < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                },
                i,
            ),
            Op::Exp(x) => self.elementwise_back(*x, g, |_, y| y, i),
            Op::Log(x) => self.elementwise_back(*x, g, |xv, _| 1.0 / xv, i),
            Op::Square(x) => self.elementwise_back(*x, g, |xv, _| 2.0 * xv, i),
            Op::Softmax(x) => {
                let y = self.nodes[i].value.data().to_vec();
                let (n, p) = self.nodes[i].value.dims2();
                self.acc(*x, |dx, _| {
                    for r in 0..n {
                        let ys = &y[r * p..(r + 1) * p];
                        let gs = &g[r * p..(r + 1) * p];
                        let dotp: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..p {
                            dx[r * p + j] += ys[j] * (gs[j] - dotp);
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let (n, f) = self.nodes[x.0].value.dims2();
                let gam = self.nodes[gamma.0].value.data().to_vec();
                self.acc(*beta, |db, _| {
                    for r in 0..n {
                        for j in 0..f {
                            db[j] += g[r * f + j];
                        }
                    }
                });
                self.acc(*gamma, |dg, _| {
                    for r in 0..n {
                        for j in 0..f {
                            dg[j] += g[r * f + j] * xhat[r * f + j];
                        }
                    }
                });
                let training = *training;
                self.acc(*x, |dx, _| {
                    if !training {
                        for r in 0..n {
                            for j in 0..f {
                                dx[r * f + j] += g[r * f + j] * gam[j] * inv_std[j];
                            }
                        }
                        return;
                    }
                    let nf = n as f64;
                    for j in 0..f {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for r in 0..n {
                            let dxh = g[r * f + j] * gam[j];
                            s1 += dxh;
                            s2 += dxh * xhat[r * f + j];
                        }
                        for r in 0..n {
                            let k = r * f + j;
                            let dxh = g[k] * gam[j];
                            dx[k] += inv_std[j] / nf * (nf * dxh - s1 - xhat[k] * s2);
                        }
                    }
                });
            }
            Op::BoxScale { x, scale } => {
                let (n, p) = self.nodes[x.0].value.dims2();
                self.acc(*x, |dx, nodes| {
                    let xd = nodes[x.0].value.data();
                    for (r, &(m, k)) in scale.iter().enumerate().take(n) {
                        let gs = &g[r * p..(r + 1) * p];
                        if k == usize::MAX {
                            for j in 0..p {
                                dx[r * p + j] += gs[j];
                            }
                            continue;
                        }
                        let xs = &xd[r * p..(r + 1) * p];
                        let gx: f64 = gs.iter().zip(xs).map(|(a, b)| a * b).sum();
                        for j in 0..p {
                            dx[r * p + j] += gs[j] / m;
                        }
                        dx[r * p + k] -= gx / (m * m) * xs[k].signum();
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }

    /// `dx += g * f'(x, y)` where `y` is this node's output.
    fn elementwise_back(&mut self, x: Var, g: &[f64], deriv: impl Fn(f64, f64) -> f64, out: usize) {
        let y = std::mem::replace(&mut self.nodes[out].value, Tensor::zeros(&[0]));
        self.acc(x, |dx, nodes| {
            let xd = nodes[x.0].value.data();
            for (k, d) in dx.iter_mut().enumerate() {
                *d += g[k] * deriv(xd[k], y.data()[k]);
            }
        });
        self.nodes[out].value = y;
    }
}
