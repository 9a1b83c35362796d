use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Largest relative disagreement between the tape gradient of a scalar
/// function and central finite differences:
/// `max_i |analytic_i − fd_i| / max(1, |analytic_i|)`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return invalid("grad_check", format!("step must be positive and finite, got {eps}"));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let out = f(&mut tape, xv)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |probe: Tensor<T>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(probe, false);
        let o = f(&mut t, v)?;
        Ok(t.value(o).item().as_f64())
    };
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        let base = plus.data()[i];
        plus.data_mut()[i] = base + T::lit(eps);
        let mut minus = x.clone();
        minus.data_mut()[i] = base - T::lit(eps);
        // use the representable step actually taken
        let h = (plus.data()[i] - minus.data()[i]).as_f64();
        let fd = (eval(plus)? - eval(minus)?) / h;
        let a = analytic.data()[i].as_f64();
        worst = worst.max((a - fd).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
