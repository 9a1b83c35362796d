use diffcore::{Module, Real, Tensor};

use crate::error::{invalid, Result};

/// Adam with bias correction; weight decay is not applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    /// Zeroed moments shaped like the module's parameters (visit order).
    pub fn new<M: Module<T>>(module: &M, lr: f64, beta0: f64, beta1: f64, eps: f64) -> Self {
        let mut m = Vec::new();
        module.visit("", &mut |_, p| m.push(Tensor::zeros(p.shape())));
        Adam {
            lr,
            beta0,
            beta1,
            eps,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step<M: Module<T>>(&mut self, module: &mut M, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return invalid(format!("{} gradients for {} optimizer slots", grads.len(), self.m.len()));
        }
        self.t += 1;
        let c0 = 1.0 - self.beta0.powi(self.t as i32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let (b0, b1) = (T::lit(self.beta0), T::lit(self.beta1));
        let (a0, a1) = (T::lit(1.0 - self.beta0), T::lit(1.0 - self.beta1));
        let lr = T::lit(self.lr);
        let (c0, c1, eps) = (T::lit(c0), T::lit(c1), T::lit(self.eps));
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut shape_error = None;
        module.visit_mut("", &mut |name, p| {
            let g = &grads[i];
            if g.shape() != p.shape() {
                shape_error.get_or_insert_with(|| format!("gradient for {name} has shape {:?}", g.shape()));
                i += 1;
                return;
            }
            let m = ms[i].data_mut();
            let v = vs[i].data_mut();
            let w = p.value_mut().data_mut();
            for (((w, m), v), g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = b0 * *m + a0 * *g;
                *v = b1 * *v + a1 * *g * *g;
                let mh = *m / c0;
                let vh = *v / c1;
                *w = *w - lr * mh / (vh.sqrt() + eps);
            }
            i += 1;
        });
        match shape_error {
            Some(e) => invalid(e),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnlayers::Linear;

    #[test]
    fn beta0_zero_uses_raw_gradient() {
        let mut layer = Linear::<f64>::from_parts(Tensor::from_f64(&[1, 2], &[1.0, -1.0]).unwrap(), None);
        let mut opt = Adam::new(&layer, 0.1, 0.0, 0.999, 1e-8);
        let g = Tensor::from_f64(&[1, 2], &[0.5, -2.0]).unwrap();
        opt.step(&mut layer, std::slice::from_ref(&g)).unwrap();
        assert_eq!(opt.m[0], g);
        // first step: m̂ = g, v̂ = g², update = lr·sign(g) up to eps
        let w = layer.w.value().data();
        assert!((w[0] - 0.9).abs() < 1e-7 && (w[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut layer = Linear::<f32>::from_parts(Tensor::from_f64(&[1, 2], &[1.0, -1.0]).unwrap(), None);
        let before = layer.w.value().clone();
        let mut opt = Adam::new(&layer, 0.0, 0.0, 0.999, 1e-8);
        opt.step(&mut layer, &[Tensor::ones(&[1, 2])]).unwrap();
        assert_eq!(layer.w.value(), &before);
    }
}
