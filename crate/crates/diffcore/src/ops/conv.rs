use crate::error::{invalid, DiffError, Result};
use crate::scalar::{gemm, Real};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Geometry of a same-padded, stride-1 convolution on `[C, D, H, W]`
/// (2-D inputs use `D = 1` and a kernel depth of 1).
#[derive(Debug, Clone, Copy)]
struct Geom {
    cin: usize,
    cout: usize,
    d: usize,
    h: usize,
    w: usize,
    kd: usize,
    k: usize,
}

impl Geom {
    fn p(&self) -> usize {
        self.d * self.h * self.w
    }

    fn taps(&self) -> usize {
        self.kd * self.k * self.k
    }

    fn rows(&self) -> usize {
        self.cin * self.taps()
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.kd == 1
    }
}

fn geometry(x: &[usize], w: &[usize], dims: usize) -> Result<Geom> {
    let mismatch = || DiffError::ShapeMismatch {
        op: "conv",
        lhs: x.to_vec(),
        rhs: w.to_vec(),
    };
    if !(dims == 2 || dims == 3) {
        return invalid("conv", format!("dims must be 2 or 3, got {dims}"));
    }
    if x.len() != dims + 1 || w.len() != dims + 2 {
        return Err(mismatch());
    }
    let k = w[2];
    if w[2..].iter().any(|&e| e != k) {
        return invalid("conv", format!("kernel must be cubic/square, got {w:?}"));
    }
    if k.is_multiple_of(2) {
        return invalid("conv", format!("kernel size must be odd, got {k}"));
    }
    if w[1] != x[0] {
        return Err(mismatch());
    }
    let (d, h, wd) = if dims == 3 { (x[1], x[2], x[3]) } else { (1, x[1], x[2]) };
    Ok(Geom {
        cin: x[0],
        cout: w[0],
        d,
        h,
        w: wd,
        kd: if dims == 3 { k } else { 1 },
        k,
    })
}

/// Visits every (tap row, output position, input position) triple with a
/// valid (non-padding) source voxel, one contiguous x-run at a time.
fn for_each_run(g: &Geom, mut f: impl FnMut(usize, usize, usize, usize)) {
    let (pd, pk) = ((g.kd / 2) as isize, (g.k / 2) as isize);
    let p = g.p();
    for ci in 0..g.cin {
        for a in 0..g.kd {
            for b in 0..g.k {
                for c in 0..g.k {
                    let row = ((ci * g.kd + a) * g.k + b) * g.k + c;
                    let dx = c as isize - pk;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (g.w as isize - dx).min(g.w as isize);
                    if x1 <= x0 as isize {
                        continue;
                    }
                    let run = x1 as usize - x0;
                    for z in 0..g.d {
                        let sz = z as isize + a as isize - pd;
                        if sz < 0 || sz >= g.d as isize {
                            continue;
                        }
                        for y in 0..g.h {
                            let sy = y as isize + b as isize - pk;
                            if sy < 0 || sy >= g.h as isize {
                                continue;
                            }
                            let dst = row * p + (z * g.h + y) * g.w + x0;
                            let src = ((ci * g.d + sz as usize) * g.h + sy as usize) * g.w
                                + (x0 as isize + dx) as usize;
                            f(dst, src, run, row);
                        }
                    }
                }
            }
        }
    }
}

fn im2col<T: Real>(g: &Geom, x: &[T]) -> Vec<T> {
    let mut cols = vec![T::zero(); g.rows() * g.p()];
    for_each_run(g, |dst, src, run, _| {
        cols[dst..dst + run].copy_from_slice(&x[src..src + run]);
    });
    cols
}

fn col2im<T: Real>(g: &Geom, cols: &[T]) -> Vec<T> {
    let mut x = vec![T::zero(); g.cin * g.p()];
    for_each_run(g, |dst, src, run, _| {
        for i in 0..run {
            x[src + i] = x[src + i] + cols[dst + i];
        }
    });
    x
}

fn conv_forward<T: Real>(g: &Geom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let p = g.p();
    let mut out = vec![T::zero(); g.cout * p];
    if g.pointwise() {
        gemm(false, false, g.cout, g.cin, p, w, x, &mut out, false);
    } else {
        let cols = im2col(g, x);
        gemm(false, false, g.cout, g.rows(), p, w, &cols, &mut out, false);
    }
    if let Some(b) = b {
        for (o, chunk) in out.chunks_mut(p).enumerate() {
            for v in chunk {
                *v = *v + b[o];
            }
        }
    }
    out
}

struct Conv {
    geom: Geom,
    dims: usize,
}

impl<T: Real> Op<T> for Conv {
    fn name(&self) -> &'static str {
        "conv"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let g = &self.geom;
        let p = g.p();
        let (x, w) = (inputs[0], inputs[1]);
        let gd = grad.data();
        let cols = if needs[1] && !g.pointwise() {
            Some(im2col(g, x.data()))
        } else {
            None
        };
        let gx = needs[0].then(|| {
            let mut gcols = vec![T::zero(); g.rows() * p];
            gemm(true, false, g.rows(), g.cout, p, w.data(), gd, &mut gcols, false);
            let data = if g.pointwise() { gcols } else { col2im(g, &gcols) };
            Tensor::new(x.shape().to_vec(), data).expect("shape")
        });
        let gw = needs[1].then(|| {
            let mut gwd = vec![T::zero(); g.cout * g.rows()];
            let src = cols.as_deref().unwrap_or(x.data());
            gemm(false, true, g.cout, p, g.rows(), gd, src, &mut gwd, false);
            Tensor::new(w.shape().to_vec(), gwd).expect("shape")
        });
        let mut out = vec![gx, gw];
        if inputs.len() == 3 {
            out.push(needs[2].then(|| {
                let data = gd.chunks(p).map(|c| c.iter().copied().sum()).collect();
                Tensor::new(vec![g.cout], data).expect("shape")
            }));
        }
        out
    }

    fn backward_graph(&self, tape: &mut Tape<T>, inputs: &[Var], _o: Var, grad: Var, needs: &[bool]) -> Result<Vec<Option<Var>>> {
        if needs.iter().skip(1).any(|&n| n) {
            return Err(DiffError::NoGraphBackward("conv (kernel gradient)"));
        }
        let wt = tape.flip_transpose(inputs[1])?;
        let gx = tape.conv(grad, wt, None, self.dims)?;
        let mut out = vec![Some(gx), None];
        if inputs.len() == 3 {
            out.push(None);
        }
        Ok(out)
    }
}

/// Cross-correlation with zero "same" padding and unit stride.
pub fn conv_values<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, dims: usize) -> Result<Tensor<T>> {
    let g = geometry(x.shape(), w.shape(), dims)?;
    if let Some(b) = b {
        if b.shape() != [g.cout] {
            return Err(DiffError::ShapeMismatch {
                op: "conv bias",
                lhs: b.shape().to_vec(),
                rhs: vec![g.cout],
            });
        }
    }
    let data = conv_forward(&g, x.data(), w.data(), b.map(|b| b.data()));
    let mut shape = x.shape().to_vec();
    shape[0] = g.cout;
    Tensor::new(shape, data)
}

impl<T: Real> Tape<T> {
    /// Same-padded convolution of `x: [Cin, spatial...]` with
    /// `w: [Cout, Cin, k...]` over `dims ∈ {2, 3}` spatial axes.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, dims: usize) -> Result<Var> {
        let geom = geometry(self.shape(x), self.shape(w), dims)?;
        let value = conv_values(self.value(x), self.value(w), b.map(|b| self.value(b)), dims)?;
        let inputs: Vec<Var> = match b {
            Some(b) => vec![x, w, b],
            None => vec![x, w],
        };
        Ok(self.push_op(Box::new(Conv { geom, dims }), &inputs, value))
    }
}
