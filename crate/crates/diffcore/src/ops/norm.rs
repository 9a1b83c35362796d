use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Per-channel normalization of `[C, spatial...]` to zero mean and unit
/// (population) variance: `(x - μ) / sqrt(var + eps)`.
struct InstanceNorm {
    inv_std: Vec<f64>,
}

fn normalize<T: Real>(x: &Tensor<T>, eps: f64) -> (Tensor<T>, Vec<f64>) {
    let c = x.shape()[0];
    let n = x.numel() / c;
    let mut out = Vec::with_capacity(x.numel());
    let mut inv = Vec::with_capacity(c);
    for chunk in x.data().chunks(n) {
        let mean = chunk.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        let var = chunk.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n as f64;
        let is = 1.0 / (var + eps).sqrt();
        out.extend(chunk.iter().map(|v| T::lit((v.as_f64() - mean) * is)));
        inv.push(is);
    }
    (Tensor::new(x.shape().to_vec(), out).expect("shape"), inv)
}

impl<T: Real> Op<T> for InstanceNorm {
    fn name(&self) -> &'static str {
        "instance_norm"
    }

    fn backward(&self, _i: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        let c = output.shape()[0];
        let n = output.numel() / c;
        let mut gx = Vec::with_capacity(output.numel());
        for ch in 0..c {
            let y = &output.data()[ch * n..(ch + 1) * n];
            let g = &grad.data()[ch * n..(ch + 1) * n];
            let gm = g.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
            let gym = g.iter().zip(y).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>() / n as f64;
            let is = self.inv_std[ch];
            gx.extend(
                g.iter()
                    .zip(y)
                    .map(|(gv, yv)| T::lit(is * (gv.as_f64() - gm - yv.as_f64() * gym))),
            );
        }
        vec![Some(Tensor::new(output.shape().to_vec(), gx).expect("shape"))]
    }
}

impl<T: Real> Tape<T> {
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() < 2 {
            return invalid("instance_norm", format!("expected [C, spatial...], got {shape:?}"));
        }
        let (value, inv_std) = normalize(self.value(x), eps);
        Ok(self.push_op(Box::new(InstanceNorm { inv_std }), &[x], value))
    }
}
