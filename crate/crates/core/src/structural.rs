//! Structural representation: a feature volume synthesized from a learnable
//! template, and trilinear descriptor queries into it.

use diffcore::{join, Module, Op, Param, Real, Tape, Tensor, Var};
use rand::Rng;

use crate::camera::Vec3;
use crate::error::{invalid, Result};
use crate::nnlayers::{adain, normal, Conv};

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeArch {
    pub template_channels: usize,
    pub template_res: usize,
    /// Output channels of each ×2 stage.
    pub stage_channels: Vec<usize>,
}

impl VolumeArch {
    pub fn out_channels(&self) -> usize {
        *self.stage_channels.last().unwrap_or(&self.template_channels)
    }

    pub fn out_res(&self) -> usize {
        self.template_res << self.stage_channels.len()
    }

    /// `[C, R, R, R]` after each stage, starting with the template.
    pub fn schedule(&self) -> Vec<[usize; 4]> {
        let mut r = self.template_res;
        let mut out = vec![[self.template_channels, r, r, r]];
        for &c in &self.stage_channels {
            r *= 2;
            out.push([c, r, r, r]);
        }
        out
    }
}

/// Template `V₀` followed by stages of upsample → 3³ conv → LReLU → AdaIN.
#[derive(Debug, Clone)]
pub struct FeatureVolumeNet<T: Real> {
    pub template: Param<T>,
    pub convs: Vec<Conv<T>>,
    arch: VolumeArch,
}

impl<T: Real> FeatureVolumeNet<T> {
    pub fn new<R: Rng>(arch: VolumeArch, rng: &mut R) -> Self {
        let r = arch.template_res;
        let template = Param::new(normal(&[arch.template_channels, r, r, r], 0.1, rng));
        let mut cin = arch.template_channels;
        let mut convs = Vec::new();
        for &c in &arch.stage_channels {
            convs.push(Conv::new(cin, c, 3, 3, 2f64.sqrt(), rng));
            cin = c;
        }
        FeatureVolumeNet { template, convs, arch }
    }

    pub fn arch(&self) -> &VolumeArch {
        &self.arch
    }

    /// AdaIN widths, in stage order.
    pub fn adain_channels(&self) -> Vec<usize> {
        self.arch.stage_channels.clone()
    }

    /// Runs every stage; `styles[i]` is the (scale, shift) pair of stage i.
    pub fn forward(&self, tape: &mut Tape<T>, styles: &[(Var, Var)]) -> Result<Var> {
        if styles.len() != self.convs.len() {
            return invalid(format!("{} volume styles for {} stages", styles.len(), self.convs.len()));
        }
        let mut v = tape.param(&self.template);
        for (conv, &(scale, shift)) in self.convs.iter().zip(styles) {
            v = tape.upsample_nearest(v, 2, 3)?;
            v = conv.forward(tape, v)?;
            v = tape.lrelu(v);
            v = adain(tape, v, scale, shift)?;
        }
        Ok(v)
    }
}

impl<T: Real> Module<T> for FeatureVolumeNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "template"), &self.template);
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&join(prefix, &format!("conv{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "template"), &mut self.template);
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("conv{i}")), f);
        }
    }
}

/// Interpolation stencil of one query: 8 flat voxel offsets and weights.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
}

fn axis(coord: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    // cell-centered voxels over [-1, 1]
    let u = ((coord + 1.0) * 0.5 * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = (u.floor() as usize).min(n - 2);
    (i0, i0 + 1, u - i0 as f64)
}

/// Stencil for a point in a `[D, H, W]` grid (D ↔ z, H ↔ y, W ↔ x).
pub fn stencil(dims: [usize; 3], p: &Vec3) -> Stencil {
    let [d, h, w] = dims;
    let (z0, z1, fz) = axis(p.z, d);
    let (y0, y1, fy) = axis(p.y, h);
    let (x0, x1, fx) = axis(p.x, w);
    let mut idx = [0; 8];
    let mut wt = [0.0; 8];
    let mut n = 0;
    for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
        for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
            for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                idx[n] = (zi * h + yi) * w + xi;
                wt[n] = wz * wy * wx;
                n += 1;
            }
        }
    }
    Stencil { idx, w: wt }
}

fn volume_dims(shape: &[usize]) -> Result<(usize, [usize; 3])> {
    if shape.len() != 4 {
        return invalid(format!("feature volume must be [C, D, H, W], got {shape:?}"));
    }
    Ok((shape[0], [shape[1], shape[2], shape[3]]))
}

fn gather<T: Real>(v: &Tensor<T>, stencils: &[Stencil]) -> Tensor<T> {
    let c = v.shape()[0];
    let vox = v.numel() / c;
    let data = v.data();
    let mut out = Vec::with_capacity(stencils.len() * c);
    for s in stencils {
        for ch in 0..c {
            let base = &data[ch * vox..];
            let mut acc = 0.0;
            for k in 0..8 {
                acc += s.w[k] * base[s.idx[k]].as_f64();
            }
            out.push(T::lit(acc));
        }
    }
    Tensor::new(vec![stencils.len(), c], out).expect("shape")
}

/// Descriptor for one point.
pub fn query_descriptor<T: Real>(v: &Tensor<T>, p: &Vec3) -> Result<Vec<T>> {
    let (_, dims) = volume_dims(v.shape())?;
    Ok(gather(v, &[stencil(dims, p)]).into_vec())
}

/// Descriptors for many points as a `[len, C]` matrix.
pub fn batch_query<T: Real>(v: &Tensor<T>, points: &[Vec3]) -> Result<Tensor<T>> {
    let (_, dims) = volume_dims(v.shape())?;
    if points.is_empty() {
        return invalid("batch_query needs at least one point");
    }
    let st: Vec<Stencil> = points.iter().map(|p| stencil(dims, p)).collect();
    Ok(gather(v, &st))
}

struct Trilinear {
    stencils: Vec<Stencil>,
}

impl<T: Real> Op<T> for Trilinear {
    fn name(&self) -> &'static str {
        "trilinear"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, grad: &Tensor<T>, _n: &[bool]) -> Vec<Option<Tensor<T>>> {
        let v = inputs[0];
        let c = v.shape()[0];
        let vox = v.numel() / c;
        let mut gv = vec![0.0f64; v.numel()];
        let g = grad.data();
        for (p, s) in self.stencils.iter().enumerate() {
            for ch in 0..c {
                let gp = g[p * c + ch].as_f64();
                let base = ch * vox;
                for k in 0..8 {
                    gv[base + s.idx[k]] += s.w[k] * gp;
                }
            }
        }
        let gv = gv.into_iter().map(T::lit).collect();
        vec![Some(Tensor::new(v.shape().to_vec(), gv).expect("shape"))]
    }
}

/// Differentiable (w.r.t. the volume) batch query producing `[len, C]`.
pub fn trilinear<T: Real>(tape: &mut Tape<T>, volume: Var, points: &[Vec3]) -> Result<Var> {
    let (_, dims) = volume_dims(tape.shape(volume))?;
    if points.is_empty() {
        return invalid("trilinear query needs at least one point");
    }
    let stencils: Vec<Stencil> = points.iter().map(|p| stencil(dims, p)).collect();
    let value = gather(tape.value(volume), &stencils);
    Ok(tape.push_op(Box::new(Trilinear { stencils }), &[volume], value))
}

/// World coordinate of voxel `(d, h, w)`'s center in a grid of extent `n`.
pub fn voxel_center(dims: [usize; 3], d: usize, h: usize, w: usize) -> Vec3 {
    let c = |i: usize, n: usize| (2.0 * i as f64 + 1.0) / n as f64 - 1.0;
    Vec3::new(c(w, dims[2]), c(h, dims[1]), c(d, dims[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_volume(c: usize, n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[c, n, n, n], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn voxel_centers_are_exact() {
        let v = random_volume(3, 4, 1);
        for (d, h, w) in [(0, 0, 0), (1, 2, 3), (3, 3, 3), (2, 0, 1)] {
            let q = query_descriptor(&v, &voxel_center([4, 4, 4], d, h, w)).unwrap();
            for (ch, val) in q.iter().enumerate() {
                assert_eq!(*val, v.at(&[ch, d, h, w]));
            }
        }
    }

    #[test]
    fn midpoint_is_mean_of_neighbours() {
        let v = random_volume(2, 4, 2);
        let a = voxel_center([4, 4, 4], 1, 2, 1);
        let b = voxel_center([4, 4, 4], 1, 2, 2);
        let q = query_descriptor(&v, &((a + b) / 2.0)).unwrap();
        for (ch, got) in q.iter().enumerate() {
            let expect = 0.5 * (v.at(&[ch, 1, 2, 1]) + v.at(&[ch, 1, 2, 2]));
            assert!((got - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn schedule_shapes() {
        let arch = VolumeArch {
            template_channels: 256,
            template_res: 4,
            stage_channels: vec![128, 64, 32],
        };
        let s = arch.schedule();
        assert_eq!(s[1], [128, 8, 8, 8]);
        assert_eq!(s[3], [32, 32, 32, 32]);
        assert_eq!(arch.out_res(), 32);
    }

    #[test]
    fn queries_clamp_outside_cube() {
        let v = random_volume(1, 4, 3);
        let inside = query_descriptor(&v, &Vec3::new(1.0, 1.0, 1.0)).unwrap();
        let outside = query_descriptor(&v, &Vec3::new(3.0, 5.0, 1.5)).unwrap();
        assert_eq!(inside, outside);
        assert_eq!(inside[0], v.at(&[0, 3, 3, 3]));
    }
}
