use super::{Tape, Tensor, Var};

/// Largest relative difference between the tape gradient of the scalar
/// `f(x)` and central differences with step `h`.
///
/// The error of entry `i` is `|a - n| / max(|a|, 1)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> f64
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let eval = |t: &Tensor| -> f64 {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone());
        let out = f(&mut tape, v);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v);
    tape.backward(out).expect("scalar output");
    let analytic = tape
        .grad(v)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);
    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let x0 = x.data()[i];
        probe.data_mut()[i] = x0 + h;
        let fp = eval(&probe);
        probe.data_mut()[i] = x0 - h;
        let fm = eval(&probe);
        probe.data_mut()[i] = x0;
        let numeric = (fp - fm) / (2.0 * h);
        let err = (a - numeric).abs() / a.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
