use crate::error::{DiffError, Result};
use crate::scalar::{gemm, Real};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// 2-D matrix product `op(a) · op(b)` where `op` optionally transposes.
struct MatMul {
    ta: bool,
    tb: bool,
}

fn dims(shape: &[usize], t: bool) -> (usize, usize) {
    if t {
        (shape[1], shape[0])
    } else {
        (shape[0], shape[1])
    }
}

pub fn matmul_values<T: Real>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(DiffError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k) = dims(a.shape(), ta);
    let (k2, n) = dims(b.shape(), tb);
    if k != k2 {
        return Err(DiffError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    gemm(ta, tb, m, k, n, a.data(), b.data(), &mut out, false);
    Tensor::new(vec![m, n], out)
}

impl<T: Real> Op<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let ga = needs[0].then(|| {
            if self.ta {
                matmul_values(b, g, self.tb, true)
            } else {
                matmul_values(g, b, false, !self.tb)
            }
            .expect("shapes validated")
        });
        let gb = needs[1].then(|| {
            if self.tb {
                matmul_values(g, a, true, self.ta)
            } else {
                matmul_values(a, g, !self.ta, false)
            }
            .expect("shapes validated")
        });
        vec![ga, gb]
    }

    fn backward_graph(&self, tape: &mut Tape<T>, inputs: &[Var], _o: Var, g: Var, needs: &[bool]) -> Result<Vec<Option<Var>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let ga = if needs[0] {
            Some(if self.ta {
                tape.matmul_t(b, g, self.tb, true)?
            } else {
                tape.matmul_t(g, b, false, !self.tb)?
            })
        } else {
            None
        };
        let gb = if needs[1] {
            Some(if self.tb {
                tape.matmul_t(g, a, true, self.ta)?
            } else {
                tape.matmul_t(a, g, !self.ta, false)?
            })
        } else {
            None
        };
        Ok(vec![ga, gb])
    }
}

impl<T: Real> Tape<T> {
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let value = matmul_values(self.value(a), self.value(b), ta, tb)?;
        Ok(self.push_op(Box::new(MatMul { ta, tb }), &[a, b], value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Affine map over the last axis: `x[..., in] · Wᵀ + b` with
    /// `W: [out, in]` and `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[1] {
            return Err(DiffError::ShapeMismatch {
                op: "linear",
                lhs: xs,
                rhs: ws,
            });
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(DiffError::ShapeMismatch {
                    op: "linear bias",
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![ws[0]],
                });
            }
        }
        let inner = ws[1];
        let rows = xs.iter().product::<usize>() / inner;
        let x2 = self.reshape(x, &[rows, inner])?;
        let mut y = self.matmul_t(x2, w, false, true)?;
        if let Some(b) = b {
            y = self.add(y, b)?;
        }
        let mut out_shape = xs;
        *out_shape.last_mut().expect("rank ≥ 1") = ws[0];
        self.reshape(y, &out_shape)
    }
}
