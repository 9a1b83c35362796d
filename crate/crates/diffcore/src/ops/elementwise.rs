use crate::error::Result;
use crate::ops::broadcast::{broadcast_to, sum_to, zip_broadcast};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Leaky ReLU slope used throughout the networks.
pub const LRELU_SLOPE: f64 = 0.2;

/// Overflow-safe `log(1 + exp(t))`.
pub fn softplus<T: Real>(t: T) -> T {
    t.max(T::zero()) + (-t.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Real>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

pub fn leaky_relu<T: Real>(t: T, slope: T) -> T {
    if t > T::zero() {
        t
    } else {
        t * slope
    }
}

/// Pointwise functions of one argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Neg,
    Sin,
    Cos,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Softplus,
    LeakyRelu(f64),
    Square,
    Sqrt,
    Powf(f64),
    Scale(f64),
    AddScalar(f64),
}

impl Unary {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::LeakyRelu(s) => leaky_relu(x, T::lit(s)),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Powf(p) => x.powf(T::lit(p)),
            Unary::Scale(c) => x * T::lit(c),
            Unary::AddScalar(c) => x + T::lit(c),
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Unary::Neg => -T::one(),
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Exp => y,
            Unary::Ln => T::one() / x,
            Unary::Tanh => T::one() - y * y,
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Softplus => sigmoid(x),
            Unary::LeakyRelu(s) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::lit(s)
                }
            }
            Unary::Square => x + x,
            Unary::Sqrt => T::lit(0.5) / y,
            Unary::Powf(p) => T::lit(p) * x.powf(T::lit(p - 1.0)),
            Unary::Scale(c) => T::lit(c),
            Unary::AddScalar(_) => T::one(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Powf(_) => "powf",
            Unary::Scale(_) => "scale",
            Unary::AddScalar(_) => "add_scalar",
        }
    }
}

struct UnaryOp(Unary);

impl<T: Real> Op<T> for UnaryOp {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0].data();
        let y = output.data();
        let g = grad.data();
        let data = (0..g.len())
            .map(|i| g[i] * self.0.derivative(x[i], y[i]))
            .collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), data).expect("shape"))]
    }

    fn backward_graph(
        &self,
        tape: &mut Tape<T>,
        inputs: &[Var],
        output: Var,
        grad: Var,
        _needs: &[bool],
    ) -> Result<Vec<Option<Var>>> {
        let x = inputs[0];
        let gx = match self.0 {
            Unary::Neg => tape.neg(grad),
            Unary::Scale(c) => tape.scale(grad, c),
            Unary::AddScalar(_) => grad,
            Unary::LeakyRelu(s) => {
                // piecewise-constant derivative: a constant mask
                let mask = tape.value(x).map(|v| if v > T::zero() { T::one() } else { T::lit(s) });
                let m = tape.constant(mask);
                tape.mul(grad, m)?
            }
            Unary::Square => {
                let two_x = tape.scale(x, 2.0);
                tape.mul(grad, two_x)?
            }
            Unary::Sin => {
                let c = tape.unary(x, Unary::Cos);
                tape.mul(grad, c)?
            }
            Unary::Cos => {
                let s = tape.unary(x, Unary::Sin);
                let s = tape.neg(s);
                tape.mul(grad, s)?
            }
            Unary::Exp => tape.mul(grad, output)?,
            Unary::Softplus => {
                let s = tape.unary(x, Unary::Sigmoid);
                tape.mul(grad, s)?
            }
            Unary::Sigmoid => {
                let one_minus = tape_neg_plus_one(tape, output);
                let d = tape.mul(output, one_minus)?;
                tape.mul(grad, d)?
            }
            Unary::Tanh => {
                let y2 = tape.unary(output, Unary::Square);
                let d = tape_neg_plus_one(tape, y2);
                tape.mul(grad, d)?
            }
            other => return Err(crate::DiffError::NoGraphBackward(other.name())),
        };
        Ok(vec![Some(gx)])
    }
}

fn tape_neg_plus_one<T: Real>(tape: &mut Tape<T>, v: Var) -> Var {
    let n = tape.neg(v);
    tape.unary(n, Unary::AddScalar(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }
}

struct BinaryOp(Binary);

impl<T: Real> Op<T> for BinaryOp {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let mut ga = None;
        let mut gb = None;
        let bc = |op, x: &Tensor<T>, y: &Tensor<T>, f: fn(T, T) -> T| {
            zip_broadcast(op, x, y, f).expect("validated in forward")
        };
        match self.0 {
            Binary::Add => {
                if needs[0] {
                    ga = Some(sum_to(grad, a.shape()));
                }
                if needs[1] {
                    gb = Some(sum_to(grad, b.shape()));
                }
            }
            Binary::Sub => {
                if needs[0] {
                    ga = Some(sum_to(grad, a.shape()));
                }
                if needs[1] {
                    gb = Some(sum_to(&grad.map(|v| -v), b.shape()));
                }
            }
            Binary::Mul => {
                if needs[0] {
                    ga = Some(sum_to(&bc("mul", grad, b, |g, y| g * y), a.shape()));
                }
                if needs[1] {
                    gb = Some(sum_to(&bc("mul", grad, a, |g, x| g * x), b.shape()));
                }
            }
            Binary::Div => {
                if needs[0] {
                    ga = Some(sum_to(&bc("div", grad, b, |g, y| g / y), a.shape()));
                }
                if needs[1] {
                    let q = bc("div", a, b, |x, y| x / y);
                    let t = bc("div", &q, b, |q, y| q / y);
                    gb = Some(sum_to(&bc("mul", grad, &t, |g, t| -g * t), b.shape()));
                }
            }
        }
        vec![ga, gb]
    }

    fn backward_graph(
        &self,
        tape: &mut Tape<T>,
        inputs: &[Var],
        _output: Var,
        grad: Var,
        needs: &[bool],
    ) -> Result<Vec<Option<Var>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let a_shape = tape.shape(a).to_vec();
        let b_shape = tape.shape(b).to_vec();
        let mut ga = None;
        let mut gb = None;
        match self.0 {
            Binary::Add | Binary::Sub => {
                if needs[0] {
                    ga = Some(tape.sum_to(grad, &a_shape)?);
                }
                if needs[1] {
                    let g = tape.sum_to(grad, &b_shape)?;
                    gb = Some(if self.0 == Binary::Sub { tape.neg(g) } else { g });
                }
            }
            Binary::Mul => {
                if needs[0] {
                    let p = tape.mul(grad, b)?;
                    ga = Some(tape.sum_to(p, &a_shape)?);
                }
                if needs[1] {
                    let p = tape.mul(grad, a)?;
                    gb = Some(tape.sum_to(p, &b_shape)?);
                }
            }
            Binary::Div => {
                if needs[0] {
                    let p = tape.div(grad, b)?;
                    ga = Some(tape.sum_to(p, &a_shape)?);
                }
                if needs[1] {
                    let q = tape.div(a, b)?;
                    let q = tape.div(q, b)?;
                    let p = tape.mul(grad, q)?;
                    let p = tape.neg(p);
                    gb = Some(tape.sum_to(p, &b_shape)?);
                }
            }
        }
        Ok(vec![ga, gb])
    }
}

struct SumTo;

impl<T: Real> Op<T> for SumTo {
    fn name(&self) -> &'static str {
        "sum_to"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, grad: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(broadcast_to(grad, inputs[0].shape()).expect("validated"))]
    }

    fn backward_graph(&self, tape: &mut Tape<T>, inputs: &[Var], _o: Var, grad: Var, _n: &[bool]) -> Result<Vec<Option<Var>>> {
        let shape = tape.shape(inputs[0]).to_vec();
        Ok(vec![Some(tape.broadcast_to(grad, &shape)?)])
    }
}

struct BroadcastTo;

impl<T: Real> Op<T> for BroadcastTo {
    fn name(&self) -> &'static str {
        "broadcast_to"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, grad: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(sum_to(grad, inputs[0].shape()))]
    }

    fn backward_graph(&self, tape: &mut Tape<T>, inputs: &[Var], _o: Var, grad: Var, _n: &[bool]) -> Result<Vec<Option<Var>>> {
        let shape = tape.shape(inputs[0]).to_vec();
        Ok(vec![Some(tape.sum_to(grad, &shape)?)])
    }
}

impl<T: Real> Tape<T> {
    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let value = self.value(x).map(|v| f.apply(v));
        self.push_op(Box::new(UnaryOp(f)), &[x], value)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Neg)
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sin)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Unary::LeakyRelu(slope))
    }

    pub fn lrelu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, LRELU_SLOPE)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::Scale(c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::AddScalar(c))
    }

    pub fn binary(&mut self, a: Var, b: Var, op: Binary) -> Result<Var> {
        let f: fn(T, T) -> T = match op {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
            Binary::Div => |x, y| x / y,
        };
        let value = zip_broadcast(op.name(), self.value(a), self.value(b), f)?;
        Ok(self.push_op(Box::new(BinaryOp(op)), &[a, b], value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    /// Sums `x` down to a shape it broadcasts from.
    pub fn sum_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        // validates that `shape` broadcasts to x's shape
        let probe = Tensor::<T>::zeros(shape);
        broadcast_to(&probe, self.shape(x))?;
        let value = sum_to(self.value(x), shape);
        Ok(self.push_op(Box::new(SumTo), &[x], value))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        let value = broadcast_to(self.value(x), shape)?;
        Ok(self.push_op(Box::new(BroadcastTo), &[x], value))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        self.sum_to(x, &[]).expect("every shape reduces to a scalar")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over one axis, keeping it with extent 1.
    pub fn sum_axis_keep(&mut self, x: Var, axis: usize) -> Result<Var> {
        let mut shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return crate::error::invalid("sum_axis", format!("axis {axis} out of range for {shape:?}"));
        }
        shape[axis] = 1;
        self.sum_to(x, &shape)
    }
}
