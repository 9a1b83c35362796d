use crate::error::{invalid, DiffError, Result};
use crate::scalar::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::{strides, Tensor};

struct Reshape;

impl<T: Real> Op<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.reshape(inputs[0].shape()).expect("same numel"))]
    }

    fn backward_graph(&self, tape: &mut Tape<T>, inputs: &[Var], _o: Var, g: Var, _n: &[bool]) -> Result<Vec<Option<Var>>> {
        let shape = tape.shape(inputs[0]).to_vec();
        Ok(vec![Some(tape.reshape(g, &shape)?)])
    }
}

fn permute_values<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.numel();
    let xd = x.data();
    let mut data = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        data.push(xd[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, data).expect("permutation preserves numel")
}

struct Permute {
    axes: Vec<usize>,
}

impl Permute {
    fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.axes.len()];
        for (i, &a) in self.axes.iter().enumerate() {
            inv[a] = i;
        }
        inv
    }
}

impl<T: Real> Op<T> for Permute {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(permute_values(g, &self.inverse()))]
    }

    fn backward_graph(&self, tape: &mut Tape<T>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Result<Vec<Option<Var>>> {
        Ok(vec![Some(tape.permute(g, &self.inverse())?)])
    }
}

/// Concatenation along one axis.
struct Concat {
    axis: usize,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

impl<T: Real> Op<T> for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (outer, inner) = outer_inner(g.shape(), self.axis);
        let total = g.shape()[self.axis];
        let gd = g.data();
        let mut start = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (x, &need) in inputs.iter().zip(needs) {
            let len = x.shape()[self.axis];
            if need {
                let mut data = Vec::with_capacity(x.numel());
                for o in 0..outer {
                    let base = (o * total + start) * inner;
                    data.extend_from_slice(&gd[base..base + len * inner]);
                }
                out.push(Some(Tensor::new(x.shape().to_vec(), data).expect("slice shape")));
            } else {
                out.push(None);
            }
            start += len;
        }
        out
    }

    fn backward_graph(&self, tape: &mut Tape<T>, inputs: &[Var], _o: Var, g: Var, needs: &[bool]) -> Result<Vec<Option<Var>>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (&x, &need) in inputs.iter().zip(needs) {
            let len = tape.shape(x)[self.axis];
            out.push(if need { Some(tape.narrow(g, self.axis, start, len)?) } else { None });
            start += len;
        }
        Ok(out)
    }
}

struct Narrow {
    axis: usize,
    start: usize,
}

impl<T: Real> Op<T> for Narrow {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        let shape = inputs[0].shape();
        let (outer, inner) = outer_inner(shape, self.axis);
        let total = shape[self.axis];
        let len = g.shape()[self.axis];
        let mut data = vec![T::zero(); inputs[0].numel()];
        let gd = g.data();
        for o in 0..outer {
            let dst = (o * total + self.start) * inner;
            let src = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
        }
        vec![Some(Tensor::new(shape.to_vec(), data).expect("shape"))]
    }
}

/// Geometry of a `[C, spatial...]` tensor viewed as `[C, D, H, W]`.
#[derive(Debug, Clone, Copy)]
struct Vol {
    c: usize,
    d: usize,
    h: usize,
    w: usize,
}

fn vol_of(shape: &[usize], dims: usize, op: &'static str) -> Result<Vol> {
    match (dims, shape.len()) {
        (2, 3) => Ok(Vol {
            c: shape[0],
            d: 1,
            h: shape[1],
            w: shape[2],
        }),
        (3, 4) => Ok(Vol {
            c: shape[0],
            d: shape[1],
            h: shape[2],
            w: shape[3],
        }),
        _ => invalid(op, format!("expected [C, spatial×{dims}], got {shape:?}")),
    }
}

fn vol_shape(v: Vol, dims: usize) -> Vec<usize> {
    if dims == 2 {
        vec![v.c, v.h, v.w]
    } else {
        vec![v.c, v.d, v.h, v.w]
    }
}

fn upsample_values<T: Real>(x: &Tensor<T>, s: usize, dims: usize) -> Tensor<T> {
    let v = vol_of(x.shape(), dims, "upsample").expect("validated");
    let sd = if dims == 3 { s } else { 1 };
    let o = Vol {
        c: v.c,
        d: v.d * sd,
        h: v.h * s,
        w: v.w * s,
    };
    let xd = x.data();
    let mut data = Vec::with_capacity(o.c * o.d * o.h * o.w);
    for c in 0..o.c {
        for z in 0..o.d {
            for y in 0..o.h {
                let row = ((c * v.d + z / sd) * v.h + y / s) * v.w;
                for xx in 0..o.w {
                    data.push(xd[row + xx / s]);
                }
            }
        }
    }
    Tensor::new(vol_shape(o, dims), data).expect("shape")
}

/// Sums non-overlapping `s`-blocks, then multiplies by `k`.
fn block_sum_values<T: Real>(x: &Tensor<T>, s: usize, dims: usize, k: T) -> Tensor<T> {
    let v = vol_of(x.shape(), dims, "pool").expect("validated");
    let sd = if dims == 3 { s } else { 1 };
    let o = Vol {
        c: v.c,
        d: v.d / sd,
        h: v.h / s,
        w: v.w / s,
    };
    let xd = x.data();
    let mut data = vec![T::zero(); o.c * o.d * o.h * o.w];
    for c in 0..v.c {
        for z in 0..v.d {
            for y in 0..v.h {
                let src = ((c * v.d + z) * v.h + y) * v.w;
                let dst = ((c * o.d + z / sd) * o.h + y / s) * o.w;
                for xx in 0..v.w {
                    data[dst + xx / s] = data[dst + xx / s] + xd[src + xx];
                }
            }
        }
    }
    for val in &mut data {
        *val = *val * k;
    }
    Tensor::new(vol_shape(o, dims), data).expect("shape")
}

struct Upsample {
    s: usize,
    dims: usize,
}

impl<T: Real> Op<T> for Upsample {
    fn name(&self) -> &'static str {
        "upsample_nearest"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(block_sum_values(g, self.s, self.dims, T::one()))]
    }

    fn backward_graph(&self, tape: &mut Tape<T>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Result<Vec<Option<Var>>> {
        let pooled = tape.avg_pool(g, self.s, self.dims)?;
        let count = self.s.pow(self.dims as u32) as f64;
        Ok(vec![Some(tape.scale(pooled, count))])
    }
}

struct AvgPool {
    s: usize,
    dims: usize,
}

impl<T: Real> Op<T> for AvgPool {
    fn name(&self) -> &'static str {
        "avg_pool"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        let k = T::one() / T::lit(self.s.pow(self.dims as u32) as f64);
        vec![Some(upsample_values(g, self.s, self.dims).scale(k))]
    }

    fn backward_graph(&self, tape: &mut Tape<T>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Result<Vec<Option<Var>>> {
        let up = tape.upsample_nearest(g, self.s, self.dims)?;
        let count = self.s.pow(self.dims as u32) as f64;
        Ok(vec![Some(tape.scale(up, 1.0 / count))])
    }
}

/// Swaps the two channel axes of a convolution kernel and mirrors it
/// spatially; this turns the input-gradient of a same-padded convolution
/// into another same-padded convolution.
pub fn flip_transpose_values<T: Real>(w: &Tensor<T>) -> Tensor<T> {
    let s = w.shape();
    let (co, ci) = (s[0], s[1]);
    let k: usize = s[2..].iter().product();
    let wd = w.data();
    let mut data = vec![T::zero(); w.numel()];
    for o in 0..co {
        for i in 0..ci {
            for t in 0..k {
                data[(i * co + o) * k + (k - 1 - t)] = wd[(o * ci + i) * k + t];
            }
        }
    }
    let mut shape = s.to_vec();
    shape.swap(0, 1);
    Tensor::new(shape, data).expect("shape")
}

struct FlipTranspose;

impl<T: Real> Op<T> for FlipTranspose {
    fn name(&self) -> &'static str {
        "flip_transpose"
    }

    fn backward(&self, _i: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        vec![Some(flip_transpose_values(g))]
    }

    fn backward_graph(&self, tape: &mut Tape<T>, _i: &[Var], _o: Var, g: Var, _n: &[bool]) -> Result<Vec<Option<Var>>> {
        Ok(vec![Some(tape.flip_transpose(g)?)])
    }
}

impl<T: Real> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        let value = self.value(x).reshape(shape)?;
        Ok(self.push_op(Box::new(Reshape), &[x], value))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let rank = self.shape(x).len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return invalid("permute", format!("{axes:?} is not a permutation of rank {rank}"));
        }
        let value = permute_values(self.value(x), axes);
        Ok(self.push_op(Box::new(Permute { axes: axes.to_vec() }), &[x], value))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return invalid("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return invalid("concat", format!("axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(DiffError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut out_shape = base;
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis] * inner;
                data.extend_from_slice(&self.value(x).data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push_op(Box::new(Concat { axis }), xs, value))
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return invalid("narrow", format!("{start}+{len} on axis {axis} of {shape:?}"));
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push_op(Box::new(Narrow { axis, start }), &[x], value))
    }

    /// Nearest-neighbour upsampling of `[C, spatial...]` by `s ∈ {1, 2}`.
    pub fn upsample_nearest(&mut self, x: Var, s: usize, dims: usize) -> Result<Var> {
        vol_of(self.shape(x), dims, "upsample_nearest")?;
        if !(s == 1 || s == 2) {
            return invalid("upsample_nearest", format!("scale must be 1 or 2, got {s}"));
        }
        if s == 1 {
            return Ok(x);
        }
        let value = upsample_values(self.value(x), s, dims);
        Ok(self.push_op(Box::new(Upsample { s, dims }), &[x], value))
    }

    /// Average pooling over non-overlapping `s`-blocks of `[C, spatial...]`.
    pub fn avg_pool(&mut self, x: Var, s: usize, dims: usize) -> Result<Var> {
        let v = vol_of(self.shape(x), dims, "avg_pool")?;
        let sd = if dims == 3 { s } else { 1 };
        if s == 0 || v.h % s != 0 || v.w % s != 0 || v.d % sd != 0 {
            return invalid("avg_pool", format!("extents {:?} not divisible by {s}", self.shape(x)));
        }
        let k = T::one() / T::lit(s.pow(dims as u32) as f64);
        let value = block_sum_values(self.value(x), s, dims, k);
        Ok(self.push_op(Box::new(AvgPool { s, dims }), &[x], value))
    }

    pub fn flip_transpose(&mut self, w: Var) -> Result<Var> {
        if self.shape(w).len() < 3 {
            return invalid("flip_transpose", format!("kernel rank too small: {:?}", self.shape(w)));
        }
        let value = flip_transpose_values(self.value(w));
        Ok(self.push_op(Box::new(FlipTranspose), &[w], value))
    }
}
