//! Volume-rendering accumulation into a 2D feature map and the modulated
//! 1×1 neural renderer.

use diffcore::{join, Module, Op, Param, Real, Tape, Tensor, Var};
use rand::Rng;

use crate::camera::RayGrid;
use crate::error::{invalid, Result};
use crate::nnlayers::{modconv1x1, normal, Conv};

/// Per-sample compositing weights of one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayWeights {
    pub weights: Vec<f64>,
    /// `T_k`, the transmittance before sample k (`T_1 = 1`).
    pub transmittance: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl RayWeights {
    pub fn compute(sigma: &[f64], delta: &[f64]) -> Result<Self> {
        if sigma.len() != delta.len() || sigma.is_empty() {
            return invalid(format!("{} densities for {} intervals", sigma.len(), delta.len()));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s >= 0.0)) {
            return invalid(format!("density {s} is negative or NaN"));
        }
        if let Some(d) = delta.iter().find(|d| !(**d > 0.0)) {
            return invalid(format!("interval {d} is not positive"));
        }
        let mut weights = Vec::with_capacity(sigma.len());
        let mut transmittance = Vec::with_capacity(sigma.len());
        let mut t = 1.0;
        for (s, d) in sigma.iter().zip(delta) {
            let att = (-s * d).exp();
            transmittance.push(t);
            weights.push(t * (1.0 - att));
            t *= att;
        }
        Ok(RayWeights {
            weights,
            transmittance,
            deltas: delta.to_vec(),
        })
    }

    pub fn opacity(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Transmittance after the last sample.
    pub fn residual(&self) -> f64 {
        1.0 - self.opacity()
    }
}

/// `m = Σ_k w_k f_k` for one ray.
pub fn accumulate(sigma: &[f64], delta: &[f64], features: &[Vec<f64>]) -> Result<(Vec<f64>, RayWeights)> {
    if features.len() != sigma.len() {
        return invalid(format!("{} feature rows for {} samples", features.len(), sigma.len()));
    }
    let rw = RayWeights::compute(sigma, delta)?;
    let dim = features.first().map_or(0, |f| f.len());
    let mut m = vec![0.0; dim];
    for (w, f) in rw.weights.iter().zip(features) {
        if f.len() != dim {
            return invalid("ragged feature rows");
        }
        for (a, b) in m.iter_mut().zip(f) {
            *a += w * b;
        }
    }
    Ok((m, rw))
}

/// Batched compositing over `[R, N]` densities and `[R, N, F]` features.
struct Accumulate {
    rays: Vec<RayWeights>,
}

impl<T: Real> Op<T> for Accumulate {
    fn name(&self) -> &'static str {
        "accumulate"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let feats = inputs[1];
        let (r, n, f) = (feats.shape()[0], feats.shape()[1], feats.shape()[2]);
        let fd = feats.data();
        let g = grad.data();
        let mut gsig = vec![T::zero(); r * n];
        let mut gf = if needs[1] { vec![T::zero(); r * n * f] } else { Vec::new() };
        let mut c = vec![0.0f64; n];
        for (ri, rw) in self.rays.iter().enumerate() {
            let gr = &g[ri * f..(ri + 1) * f];
            for k in 0..n {
                let row = &fd[(ri * n + k) * f..(ri * n + k + 1) * f];
                c[k] = row.iter().zip(gr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                if needs[1] {
                    let w = T::lit(rw.weights[k]);
                    let out = &mut gf[(ri * n + k) * f..(ri * n + k + 1) * f];
                    for (o, gv) in out.iter_mut().zip(gr) {
                        *o = w * *gv;
                    }
                }
            }
            if needs[0] {
                // gσ_j = δ_j (T_{j+1} c_j − Σ_{k>j} w_k c_k)
                let mut tail = 0.0;
                for j in (0..n).rev() {
                    let t_next = rw.transmittance[j] - rw.weights[j];
                    gsig[ri * n + j] = T::lit(rw.deltas[j] * (t_next * c[j] - tail));
                    tail += rw.weights[j] * c[j];
                }
            }
        }
        vec![
            needs[0].then(|| Tensor::new(vec![r, n], gsig).expect("shape")),
            needs[1].then(|| Tensor::new(vec![r, n, f], gf).expect("shape")),
        ]
    }
}

/// Composites `[R, N]` densities and `[R, N, F]` features into `[R, F]`.
/// Returns the per-ray weights alongside.
pub fn accumulate_rays<T: Real>(tape: &mut Tape<T>, sigma: Var, features: Var, deltas: &[f64]) -> Result<(Var, Vec<RayWeights>)> {
    let ss = tape.shape(sigma).to_vec();
    let fs = tape.shape(features).to_vec();
    if ss.len() != 2 || fs.len() != 3 || fs[..2] != ss[..] || deltas.len() != ss[0] * ss[1] {
        return invalid(format!(
            "accumulate: densities {ss:?}, features {fs:?}, {} intervals",
            deltas.len()
        ));
    }
    let (r, n, f) = (fs[0], fs[1], fs[2]);
    let sv = tape.value(sigma).data();
    let fv = tape.value(features).data();
    let mut rays = Vec::with_capacity(r);
    let mut out = vec![T::zero(); r * f];
    for ri in 0..r {
        let s: Vec<f64> = sv[ri * n..(ri + 1) * n].iter().map(|v| v.as_f64()).collect();
        let rw = RayWeights::compute(&s, &deltas[ri * n..(ri + 1) * n])?;
        let o = &mut out[ri * f..(ri + 1) * f];
        for (k, w) in rw.weights.iter().enumerate() {
            let w = T::lit(*w);
            let row = &fv[(ri * n + k) * f..(ri * n + k + 1) * f];
            for (a, b) in o.iter_mut().zip(row) {
                *a = *a + w * *b;
            }
        }
        rays.push(rw);
    }
    let value = Tensor::new(vec![r, f], out)?;
    let weights = rays.clone();
    Ok((tape.push_op(Box::new(Accumulate { rays }), &[sigma, features], value), weights))
}

/// Feature map `[F, H, W]` from per-sample field outputs laid out ray-major
/// (`sigma: [R·N]`, `features: [R·N, F]`).
pub fn render_feature_map<T: Real>(tape: &mut Tape<T>, rays: &RayGrid, sigma: Var, features: Var) -> Result<(Var, Vec<RayWeights>)> {
    let (r, n) = (rays.len(), rays.n_steps);
    let fs = tape.shape(features).to_vec();
    if tape.shape(sigma) != [r * n] || fs.len() != 2 || fs[0] != r * n {
        return invalid(format!(
            "{r} rays × {n} samples do not match densities {:?} and features {fs:?}",
            tape.shape(sigma)
        ));
    }
    let f = fs[1];
    let s = tape.reshape(sigma, &[r, n])?;
    let fe = tape.reshape(features, &[r, n, f])?;
    let (m, weights) = accumulate_rays(tape, s, fe, &rays.deltas())?;
    let mt = tape.transpose(m)?;
    Ok((tape.reshape(mt, &[f, rays.h, rays.w])?, weights))
}

/// Per-pixel depth in scene units; `None` marks background.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub h: usize,
    pub w: usize,
    pub depth: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn at(&self, row: usize, col: usize) -> Option<f64> {
        self.depth[row * self.w + col]
    }

    pub fn coverage(&self) -> f64 {
        self.depth.iter().filter(|d| d.is_some()).count() as f64 / self.depth.len() as f64
    }
}

/// Expected ray termination depth `Σ w_k t_k`; background where the ray's
/// opacity is below one half.
pub fn render_expected_depth(rays: &RayGrid, sigma: &[f64]) -> Result<DepthMap> {
    let n = rays.n_steps;
    if sigma.len() != rays.len() * n {
        return invalid(format!("{} densities for {} rays × {n} samples", sigma.len(), rays.len()));
    }
    let deltas = rays.deltas();
    let mut depth = Vec::with_capacity(rays.len());
    for r in 0..rays.len() {
        let rw = RayWeights::compute(&sigma[r * n..(r + 1) * n], &deltas[r * n..(r + 1) * n])?;
        let d = if rw.opacity() < 0.5 {
            None
        } else {
            Some(rw.weights.iter().zip(rays.ray_depths(r)).map(|(w, t)| w * t).sum())
        };
        depth.push(d);
    }
    Ok(DepthMap { h: rays.h, w: rays.w, depth })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RendererArch {
    pub in_channels: usize,
    pub channels: usize,
    pub ray_res: usize,
    pub max_res: usize,
    /// toRGB kernel, 3 or 1.
    pub rgb_kernel: usize,
    pub demod: bool,
}

impl RendererArch {
    pub fn stages(&self) -> usize {
        (self.max_res / self.ray_res).trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.ray_res > 0
            && self.max_res >= self.ray_res
            && self.max_res.is_multiple_of(self.ray_res)
            && (self.max_res / self.ray_res).is_power_of_two();
        if !ok {
            return invalid(format!(
                "image resolution {} must be the ray resolution {} times a power of two",
                self.max_res, self.ray_res
            ));
        }
        if self.rgb_kernel != 1 && self.rgb_kernel != 3 {
            return invalid(format!("toRGB kernel must be 1 or 3, got {}", self.rgb_kernel));
        }
        Ok(())
    }

    /// Input width of every modulated layer, in order.
    pub fn modconv_inputs(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for s in 0..self.stages() {
            out.push(if s == 0 { self.in_channels } else { self.channels });
            out.push(self.channels);
        }
        out
    }

    /// Output resolution at growth level `level`.
    pub fn res_at(&self, level: usize) -> usize {
        self.ray_res << level
    }

    pub fn level_of(&self, res: usize) -> Result<usize> {
        (0..=self.stages())
            .find(|&l| self.res_at(l) == res)
            .ok_or_else(|| crate::error::VganError::Invalid(format!("renderer cannot produce resolution {res}")))
    }
}

#[derive(Debug, Clone)]
pub struct ModLayer<T: Real> {
    pub w: Param<T>,
    pub b: Param<T>,
}

/// Upsample → two modulated 1×1 layers per doubling; one toRGB per level.
#[derive(Debug, Clone)]
pub struct NeuralRenderer<T: Real> {
    pub layers: Vec<ModLayer<T>>,
    pub to_rgb: Vec<Conv<T>>,
    arch: RendererArch,
}

impl<T: Real> NeuralRenderer<T> {
    pub fn new<R: Rng>(arch: RendererArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .modconv_inputs()
            .into_iter()
            .map(|cin| ModLayer {
                w: Param::new(normal(&[arch.channels, cin, 1, 1], 1.0, rng)),
                b: Param::new(Tensor::zeros(&[arch.channels])),
            })
            .collect();
        let to_rgb = (0..=arch.stages())
            .map(|l| {
                let cin = if l == 0 { arch.in_channels } else { arch.channels };
                Conv::new(cin, 3, arch.rgb_kernel, 2, 1.0, rng)
            })
            .collect();
        Ok(NeuralRenderer { layers, to_rgb, arch })
    }

    pub fn arch(&self) -> &RendererArch {
        &self.arch
    }

    fn mod_layer(&self, tape: &mut Tape<T>, x: Var, i: usize, style: Var) -> Result<Var> {
        let w = tape.param(&self.layers[i].w);
        let b = tape.param(&self.layers[i].b);
        let y = modconv1x1(tape, x, w, style, self.arch.demod)?;
        let bias = tape.reshape(b, &[self.arch.channels, 1, 1])?;
        let y = tape.add(y, bias)?;
        Ok(tape.lrelu(y))
    }

    /// Image `[3, r, r]` at growth level `level` (resolution `ray_res·2^level`).
    /// For `alpha < 1` the previous level's toRGB output, upsampled, is
    /// blended in with weight `1 − alpha` before the tanh.
    pub fn forward(&self, tape: &mut Tape<T>, m: Var, styles: &[Var], level: usize, alpha: f64) -> Result<Var> {
        let ms = tape.shape(m).to_vec();
        if ms != [self.arch.in_channels, self.arch.ray_res, self.arch.ray_res] {
            return invalid(format!(
                "feature map {ms:?} does not match renderer input [{}, {r}, {r}]",
                self.arch.in_channels,
                r = self.arch.ray_res
            ));
        }
        if level > self.arch.stages() {
            return invalid(format!("growth level {level} beyond {} stages", self.arch.stages()));
        }
        if styles.len() != self.layers.len() {
            return invalid(format!("{} styles for {} modulated layers", styles.len(), self.layers.len()));
        }
        let mut x = m;
        let mut prev = m;
        for s in 0..level {
            prev = x;
            x = tape.upsample_nearest(x, 2, 2)?;
            x = self.mod_layer(tape, x, 2 * s, styles[2 * s])?;
            x = self.mod_layer(tape, x, 2 * s + 1, styles[2 * s + 1])?;
        }
        let mut rgb = self.to_rgb[level].forward(tape, x)?;
        if level > 0 && alpha < 1.0 {
            let low = self.to_rgb[level - 1].forward(tape, prev)?;
            let low = tape.upsample_nearest(low, 2, 2)?;
            let low = tape.scale(low, 1.0 - alpha);
            let hi = tape.scale(rgb, alpha);
            rgb = tape.add(low, hi)?;
        }
        Ok(tape.tanh(rgb))
    }
}

impl<T: Real> Module<T> for NeuralRenderer<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            let p = join(prefix, &format!("mod{i}"));
            f(&join(&p, "w"), &l.w);
            f(&join(&p, "b"), &l.b);
        }
        for (i, c) in self.to_rgb.iter().enumerate() {
            c.visit(&join(prefix, &format!("rgb{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = join(prefix, &format!("mod{i}"));
            f(&join(&p, "w"), &mut l.w);
            f(&join(&p, "b"), &mut l.b);
        }
        for (i, c) in self.to_rgb.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("rgb{i}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_medium() {
        let f = vec![vec![1.0, 2.0]; 3];
        let (m, rw) = accumulate(&[0.0; 3], &[0.1; 3], &f).unwrap();
        assert_eq!(m, vec![0.0, 0.0]);
        assert!(rw.transmittance.iter().all(|&t| t == 1.0));
        assert!(rw.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn opaque_saturation() {
        let (m, rw) = accumulate(&[1e6], &[1.0], &[vec![0.3, -2.0]]).unwrap();
        assert_eq!(m, vec![0.3, -2.0]);
        assert_eq!(rw.weights[0], 1.0);
    }

    #[test]
    fn two_sample_hand_case() {
        let rw = RayWeights::compute(&[1.0, 1.0], &[0.5, 0.5]).unwrap();
        assert!((rw.weights[0] - 0.393469).abs() < 1e-6);
        assert!((rw.weights[1] - 0.238651).abs() < 1e-6);
    }

    #[test]
    fn rejects_negative_inputs() {
        assert!(RayWeights::compute(&[-1.0], &[0.5]).is_err());
        assert!(RayWeights::compute(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn stage_count() {
        let a = RendererArch {
            in_channels: 256,
            channels: 256,
            ray_res: 64,
            max_res: 256,
            rgb_kernel: 3,
            demod: true,
        };
        assert_eq!(a.stages(), 2);
        assert_eq!(a.modconv_inputs().len(), 4);
        assert!(RendererArch { max_res: 96, ..a.clone() }.validate().is_err());
    }
}
