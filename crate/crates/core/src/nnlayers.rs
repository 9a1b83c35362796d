//! Parameterized layers: dense and convolutional layers, AdaIN, FiLM-conditioned
//! sine layers, modulated 1×1 convolutions and the latent mapping network.

use diffcore::{gemm, join, Module, Op, Param, Real, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};

pub const ADAIN_EPS: f64 = 1e-8;
pub const DEMOD_EPS: f64 = 1e-8;

pub(crate) fn normal<T: Real, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        T::lit(v * std)
    })
}

pub(crate) fn uniform<T: Real, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
}

/// Dense layer `y = x Wᵀ + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub w: Param<T>,
    pub b: Option<Param<T>>,
}

impl<T: Real> Linear<T> {
    /// Normal weights with variance `gain² / fan_in`, zero bias.
    pub fn new<R: Rng>(fan_in: usize, fan_out: usize, gain: f64, bias: bool, rng: &mut R) -> Self {
        Linear {
            w: Param::new(normal(&[fan_out, fan_in], gain / (fan_in as f64).sqrt(), rng)),
            b: bias.then(|| Param::new(Tensor::zeros(&[fan_out]))),
        }
    }

    pub fn from_parts(w: Tensor<T>, b: Option<Tensor<T>>) -> Self {
        Linear {
            w: Param::new(w),
            b: b.map(Param::new),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.w);
        let b = self.b.as_ref().map(|b| tape.param(b));
        Ok(tape.linear(x, w, b)?)
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "w"), &self.w);
        if let Some(b) = &self.b {
            f(&join(prefix, "b"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "w"), &mut self.w);
        if let Some(b) = &mut self.b {
            f(&join(prefix, "b"), b);
        }
    }
}

/// Same-padded stride-1 convolution over `[C, spatial...]`.
#[derive(Debug, Clone)]
pub struct Conv<T: Real> {
    pub w: Param<T>,
    pub b: Param<T>,
    pub dims: usize,
}

impl<T: Real> Conv<T> {
    pub fn new<R: Rng>(cin: usize, cout: usize, kernel: usize, dims: usize, gain: f64, rng: &mut R) -> Self {
        let mut shape = vec![cout, cin];
        shape.extend(std::iter::repeat_n(kernel, dims));
        let fan_in = cin * kernel.pow(dims as u32);
        Conv {
            w: Param::new(normal(&shape, gain / (fan_in as f64).sqrt(), rng)),
            b: Param::new(Tensor::zeros(&[cout])),
            dims,
        }
    }

    pub fn cin(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn cout(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.w);
        let b = tape.param(&self.b);
        Ok(tape.conv(x, w, Some(b), self.dims)?)
    }
}

impl<T: Real> Module<T> for Conv<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}

/// Shape `[C, 1, 1, ...]` that broadcasts a per-channel vector over `shape`.
fn channel_shape(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    s[0] = shape[0];
    s
}

/// Adaptive instance normalization: per-channel normalization over the
/// spatial axes followed by `gamma_c * x̂ + beta_c`.
pub fn adain<T: Real>(tape: &mut Tape<T>, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() < 2 {
        return invalid(format!("adain expects [C, spatial...], got {shape:?}"));
    }
    let c = shape[0];
    for (name, v) in [("gamma", gamma), ("beta", beta)] {
        if tape.shape(v) != [c] {
            return invalid(format!("adain {name} has shape {:?}, expected [{c}]", tape.shape(v)));
        }
    }
    let cs = channel_shape(&shape);
    let xn = tape.instance_norm(x, ADAIN_EPS)?;
    let g = tape.reshape(gamma, &cs)?;
    let b = tape.reshape(beta, &cs)?;
    let y = tape.mul(xn, g)?;
    Ok(tape.add(y, b)?)
}

/// Fused `sin(γ ⊙ (x Wᵀ + b) + β)` over the last axis of `x`.
struct FilmSiren<T> {
    pre: Vec<T>,
    cos: Vec<T>,
    rows: usize,
}

impl<T: Real> Op<T> for FilmSiren<T> {
    fn name(&self) -> &'static str {
        "film_siren"
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, w, gamma) = (inputs[0], inputs[1], inputs[3]);
        let hidden = w.shape()[0];
        let fan_in = w.shape()[1];
        let rows = self.rows;
        let g = grad.data();
        let gam = gamma.data();
        let mut ga = vec![T::zero(); rows * hidden];
        for (i, v) in ga.iter_mut().enumerate() {
            *v = g[i] * self.cos[i];
        }
        let mut g_gamma = vec![T::zero(); hidden];
        let mut g_beta = vec![T::zero(); hidden];
        for r in 0..rows {
            let row = &ga[r * hidden..(r + 1) * hidden];
            let pre = &self.pre[r * hidden..(r + 1) * hidden];
            for h in 0..hidden {
                g_gamma[h] = g_gamma[h] + row[h] * pre[h];
                g_beta[h] = g_beta[h] + row[h];
            }
        }
        // gradient w.r.t. the pre-activation u = x Wᵀ + b
        let mut gu = ga;
        for row in gu.chunks_mut(hidden) {
            for (v, gm) in row.iter_mut().zip(gam) {
                *v = *v * *gm;
            }
        }
        let gx = needs[0].then(|| {
            let mut out = vec![T::zero(); rows * fan_in];
            gemm(false, false, rows, hidden, fan_in, &gu, w.data(), &mut out, false);
            Tensor::new(x.shape().to_vec(), out).expect("shape")
        });
        let gw = needs[1].then(|| {
            let mut out = vec![T::zero(); hidden * fan_in];
            gemm(true, false, hidden, rows, fan_in, &gu, x.data(), &mut out, false);
            Tensor::new(vec![hidden, fan_in], out).expect("shape")
        });
        let gb = needs[2].then(|| {
            let mut out = vec![T::zero(); hidden];
            for row in gu.chunks(hidden) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o = *o + *v;
                }
            }
            Tensor::new(vec![hidden], out).expect("shape")
        });
        let _ = output;
        vec![
            gx,
            gw,
            gb,
            needs[3].then(|| Tensor::new(vec![hidden], g_gamma).expect("shape")),
            needs[4].then(|| Tensor::new(vec![hidden], g_beta).expect("shape")),
        ]
    }
}

/// FiLM-conditioned sine layer `sin(γ ⊙ (x Wᵀ + b) + β)`.
pub fn film_siren<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var, gamma: Var, beta: Var) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(w).to_vec();
    if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[1] {
        return invalid(format!("film_siren: input {xs:?} incompatible with weight {ws:?}"));
    }
    let (hidden, fan_in) = (ws[0], ws[1]);
    for (name, v) in [("bias", b), ("gamma", gamma), ("beta", beta)] {
        if tape.shape(v) != [hidden] {
            return invalid(format!("film_siren {name} has shape {:?}, expected [{hidden}]", tape.shape(v)));
        }
    }
    let rows = tape.value(x).numel() / fan_in;
    let mut pre = vec![T::zero(); rows * hidden];
    gemm(false, true, rows, fan_in, hidden, tape.value(x).data(), tape.value(w).data(), &mut pre, false);
    let bias = tape.value(b).data();
    let gam = tape.value(gamma).data();
    let bet = tape.value(beta).data();
    let mut out = Vec::with_capacity(rows * hidden);
    let mut cos = Vec::with_capacity(rows * hidden);
    for row in pre.chunks_mut(hidden) {
        for h in 0..hidden {
            row[h] = row[h] + bias[h];
            let (sn, cs) = (gam[h] * row[h] + bet[h]).sin_cos();
            out.push(sn);
            cos.push(cs);
        }
    }
    let mut oshape = xs;
    *oshape.last_mut().expect("rank ≥ 1") = hidden;
    let value = Tensor::new(oshape, out)?;
    Ok(tape.push_op(Box::new(FilmSiren { pre, cos, rows }), &[x, w, b, gamma, beta], value))
}

/// Modulated 1×1 convolution on `[Cin, H, W]`.
///
/// Weights are scaled per input channel by `s`; with `demod` each output
/// filter is renormalized to unit norm.
pub fn modconv1x1<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, s: Var, demod: bool) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(w).to_vec();
    if xs.len() != 3 || ws.len() != 4 || ws[2] != 1 || ws[3] != 1 || ws[1] != xs[0] {
        return invalid(format!("modconv1x1: input {xs:?} incompatible with weight {ws:?}"));
    }
    let (cout, cin) = (ws[0], ws[1]);
    if tape.shape(s) != [cin] {
        return invalid(format!("modconv1x1 style has shape {:?}, expected [{cin}]", tape.shape(s)));
    }
    let w2 = tape.reshape(w, &[cout, cin])?;
    let mut wm = tape.mul(w2, s)?;
    if demod {
        let sq = tape.square(wm);
        let ss = tape.sum_axis_keep(sq, 1)?;
        let ss = tape.add_scalar(ss, DEMOD_EPS);
        let norm = tape.unary(ss, diffcore::ops::Unary::Sqrt);
        wm = tape.div(wm, norm)?;
    }
    let flat = tape.reshape(x, &[cin, xs[1] * xs[2]])?;
    let y = tape.matmul(wm, flat)?;
    Ok(tape.reshape(y, &[cout, xs[1], xs[2]])?)
}

/// Latent code `z ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T: Real>(pub Tensor<T>);

impl<T: Real> LatentCode<T> {
    pub fn sample<R: Rng>(dim: usize, rng: &mut R) -> Self {
        LatentCode(normal(&[dim], 1.0, rng))
    }

    pub fn dim(&self) -> usize {
        self.0.numel()
    }
}

/// Frequencies and phase shifts of one field layer.
#[derive(Debug, Clone, Copy)]
pub struct FiLMParams {
    pub gamma: Var,
    pub beta: Var,
}

/// Per-channel conditioning for one AdaIN or ModConv layer.
#[derive(Debug, Clone, Copy)]
pub enum StyleVector {
    AdaIn { scale: Var, shift: Var },
    Mod { scale: Var },
}

/// Conditioning for every consuming layer of the generator.
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub adain: Vec<(Var, Var)>,
    pub film: Vec<FiLMParams>,
    pub modconv: Vec<Var>,
}

impl Conditioning {
    pub fn len(&self) -> usize {
        self.adain.len() + self.film.len() + self.modconv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn styles(&self) -> Vec<StyleVector> {
        self.adain
            .iter()
            .map(|&(scale, shift)| StyleVector::AdaIn { scale, shift })
            .chain(self.modconv.iter().map(|&scale| StyleVector::Mod { scale }))
            .collect()
    }
}

/// Which layers the mapping network conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLayout {
    pub adain: Vec<usize>,
    pub film_width: usize,
    pub film_layers: usize,
    pub modconv: Vec<usize>,
}

/// Initial FiLM frequency; sine layers start at this angular scale.
pub const FILM_GAMMA_INIT: f64 = 15.0;

/// Modulation scales are `softplus(raw + ln(e - 1))`: positive, and 1 at raw = 0.
fn mod_offset() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

/// Shared LReLU trunk with one affine head per conditioned layer.
#[derive(Debug, Clone)]
pub struct MappingNetwork<T: Real> {
    pub trunk: Vec<Linear<T>>,
    pub adain_heads: Vec<Linear<T>>,
    pub film_heads: Vec<Linear<T>>,
    pub mod_heads: Vec<Linear<T>>,
    layout: HeadLayout,
}

/// Which latent a conditioning head reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Structural,
    Field,
    Renderer,
}

impl<T: Real> MappingNetwork<T> {
    pub fn new<R: Rng>(latent_dim: usize, width: usize, depth: usize, layout: HeadLayout, rng: &mut R) -> Self {
        let mut trunk = Vec::with_capacity(depth);
        let mut fan_in = latent_dim;
        for _ in 0..depth {
            trunk.push(Linear::new(fan_in, width, 2f64.sqrt(), true, rng));
            fan_in = width;
        }
        let adain_heads = layout
            .adain
            .iter()
            .map(|&c| Linear::new(fan_in, 2 * c, 0.25, true, rng))
            .collect();
        let film_heads = (0..layout.film_layers)
            .map(|_| {
                let mut head = Linear::new(fan_in, 2 * layout.film_width, 0.25, true, rng);
                if let Some(b) = &mut head.b {
                    let h = layout.film_width;
                    let v = Tensor::from_fn(&[2 * h], |i| T::lit(if i < h { FILM_GAMMA_INIT } else { 0.0 }));
                    b.set(v);
                }
                head
            })
            .collect();
        let mod_heads = layout
            .modconv
            .iter()
            .map(|&c| Linear::new(fan_in, c, 0.25, true, rng))
            .collect();
        MappingNetwork {
            trunk,
            adain_heads,
            film_heads,
            mod_heads,
            layout,
        }
    }

    pub fn layout(&self) -> &HeadLayout {
        &self.layout
    }

    pub fn latent_dim(&self) -> usize {
        self.trunk.first().map_or(0, |l| l.fan_in())
    }

    pub fn embed(&self, tape: &mut Tape<T>, z: &LatentCode<T>) -> Result<Var> {
        if z.dim() != self.latent_dim() {
            return invalid(format!("latent has {} entries, expected {}", z.dim(), self.latent_dim()));
        }
        if !z.0.is_finite() {
            return invalid("latent code is not finite");
        }
        let mut h = tape.constant(z.0.clone());
        for layer in &self.trunk {
            h = layer.forward(tape, h)?;
            h = tape.lrelu(h);
        }
        Ok(h)
    }

    /// Conditioning for all layers. Codes equal in value share one trunk pass.
    pub fn forward(&self, tape: &mut Tape<T>, zs: &LatentCode<T>, zf: &LatentCode<T>, zr: &LatentCode<T>) -> Result<Conditioning> {
        let ws = self.embed(tape, zs)?;
        let wf = if zf == zs { ws } else { self.embed(tape, zf)? };
        let wr = if zr == zs {
            ws
        } else if zr == zf {
            wf
        } else {
            self.embed(tape, zr)?
        };
        let mut adain = Vec::with_capacity(self.adain_heads.len());
        for (head, &c) in self.adain_heads.iter().zip(&self.layout.adain) {
            let out = head.forward(tape, ws)?;
            let raw = tape.narrow(out, 0, 0, c)?;
            let scale = tape.add_scalar(raw, 1.0);
            let shift = tape.narrow(out, 0, c, c)?;
            adain.push((scale, shift));
        }
        let h = self.layout.film_width;
        let mut film = Vec::with_capacity(self.film_heads.len());
        for head in &self.film_heads {
            let out = head.forward(tape, wf)?;
            let gamma = tape.narrow(out, 0, 0, h)?;
            let beta = tape.narrow(out, 0, h, h)?;
            film.push(FiLMParams { gamma, beta });
        }
        let mut modconv = Vec::with_capacity(self.mod_heads.len());
        for head in &self.mod_heads {
            let raw = head.forward(tape, wr)?;
            let shifted = tape.add_scalar(raw, mod_offset());
            modconv.push(tape.softplus(shifted));
        }
        Ok(Conditioning { adain, film, modconv })
    }
}

fn visit_list<T: Real>(layers: &[Linear<T>], prefix: &str, name: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
    for (i, l) in layers.iter().enumerate() {
        l.visit(&join(prefix, &format!("{name}{i}")), f);
    }
}

fn visit_list_mut<T: Real>(layers: &mut [Linear<T>], prefix: &str, name: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
    for (i, l) in layers.iter_mut().enumerate() {
        l.visit_mut(&join(prefix, &format!("{name}{i}")), f);
    }
}

impl<T: Real> Module<T> for MappingNetwork<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        visit_list(&self.trunk, prefix, "trunk", f);
        visit_list(&self.adain_heads, prefix, "adain", f);
        visit_list(&self.film_heads, prefix, "film", f);
        visit_list(&self.mod_heads, prefix, "mod", f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        visit_list_mut(&mut self.trunk, prefix, "trunk", f);
        visit_list_mut(&mut self.adain_heads, prefix, "adain", f);
        visit_list_mut(&mut self.film_heads, prefix, "film", f);
        visit_list_mut(&mut self.mod_heads, prefix, "mod", f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        (m, var.sqrt())
    }

    #[test]
    fn adain_moments() {
        // channel with mean 5 and std 2
        let data: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 3.0 } else { 7.0 }).collect();
        let x = Tensor::new(vec![1, 8, 8], data).unwrap();
        for (g, b) in [(1.0, 0.0), (2.0, 3.0)] {
            let mut tape = Tape::<f64>::new();
            let xv = tape.constant(x.clone());
            let gv = tape.constant(Tensor::full(&[1], g));
            let bv = tape.constant(Tensor::full(&[1], b));
            let y = adain(&mut tape, xv, gv, bv).unwrap();
            let (m, s) = moments(tape.value(y).data());
            assert!((m - b).abs() < 1e-9);
            assert!((s - g).abs() < 1e-6);
        }
    }

    #[test]
    fn adain_constant_channel_gives_shift() {
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::full(&[2, 4, 4], 3.0));
        let gv = tape.constant(Tensor::from_f64(&[2], &[2.0, 5.0]).unwrap());
        let bv = tape.constant(Tensor::from_f64(&[2], &[-1.0, 0.5]).unwrap());
        let y = adain(&mut tape, xv, gv, bv).unwrap();
        let v = tape.value(y);
        assert!(v.data()[..16].iter().all(|&a| a == -1.0));
        assert!(v.data()[16..].iter().all(|&a| a == 0.5));
    }

    #[test]
    fn adain_rejects_channel_mismatch() {
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::zeros(&[2, 4, 4]));
        let gv = tape.constant(Tensor::zeros(&[3]));
        assert!(adain(&mut tape, xv, gv, gv).is_err());
    }

    fn siren_scalar(x: f64, w: f64, b: f64, g: f64, beta: f64) -> f64 {
        let mut tape = Tape::<f64>::new();
        let vs: Vec<Var> = [(x, vec![1, 1]), (w, vec![1, 1]), (b, vec![1]), (g, vec![1]), (beta, vec![1])]
            .into_iter()
            .map(|(v, s)| tape.constant(Tensor::full(&s, v)))
            .collect();
        let y = film_siren(&mut tape, vs[0], vs[1], vs[2], vs[3], vs[4]).unwrap();
        tape.value(y).item()
    }

    #[test]
    fn film_siren_examples() {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        assert_eq!(siren_scalar(0.0, 1.0, 0.0, 1.0, 0.0), 0.0);
        assert!((siren_scalar(0.0, 1.0, 0.0, 1.0, FRAC_PI_2) - 1.0).abs() < 1e-15);
        assert!((siren_scalar(FRAC_PI_4, 1.0, 0.0, 2.0, 0.0) - 1.0).abs() < 1e-15);
    }

    fn modconv_scalar(w: f64, s: f64, x: f64, demod: bool) -> f64 {
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::full(&[1, 1, 1], x));
        let wv = tape.constant(Tensor::full(&[1, 1, 1, 1], w));
        let sv = tape.constant(Tensor::full(&[1], s));
        let y = modconv1x1(&mut tape, xv, wv, sv, demod).unwrap();
        tape.value(y).item()
    }

    #[test]
    fn modconv_examples() {
        assert_eq!(modconv_scalar(2.0, 3.0, 1.5, false), 9.0);
        let d = modconv_scalar(2.0, 3.0, 1.5, true);
        assert!((d - 1.5 * 6.0 / (36.0f64 + 1e-8).sqrt()).abs() < 1e-15);
        assert!((d - 1.5).abs() < 1e-9);
    }

    #[test]
    fn modconv_neutral_style_is_plain_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Tensor<f64> = normal(&[3, 2, 5], 1.0, &mut rng);
        let w: Tensor<f64> = normal(&[4, 3, 1, 1], 1.0, &mut rng);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let sv = tape.constant(Tensor::ones(&[3]));
        let y = modconv1x1(&mut tape, xv, wv, sv, false).unwrap();
        let reference = diffcore::ops::conv_values(&x, &w, None, 2).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn tiny_mapping(rng: &mut ChaCha8Rng) -> MappingNetwork<f64> {
        let layout = HeadLayout {
            adain: vec![4, 3],
            film_width: 5,
            film_layers: 4,
            modconv: vec![6, 6],
        };
        MappingNetwork::new(8, 16, 3, layout, rng)
    }

    #[test]
    fn mapping_is_deterministic_and_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = tiny_mapping(&mut rng);
        let z = LatentCode::sample(8, &mut rng);
        let run = |z: &LatentCode<f64>| {
            let mut tape = Tape::inference();
            let c = net.forward(&mut tape, z, z, z).unwrap();
            let mut flat = Vec::new();
            for (a, b) in &c.adain {
                flat.extend(tape.value(*a).to_f64_vec());
                flat.extend(tape.value(*b).to_f64_vec());
            }
            for f in &c.film {
                flat.extend(tape.value(f.gamma).to_f64_vec());
                flat.extend(tape.value(f.beta).to_f64_vec());
            }
            for s in &c.modconv {
                assert!(tape.value(*s).data().iter().all(|&v| v > 0.0));
                flat.extend(tape.value(*s).to_f64_vec());
            }
            (c.len(), flat)
        };
        let (n, a) = run(&z);
        let (_, b) = run(&z);
        assert_eq!(n, 4 + 2 + 2);
        assert_eq!(a, b);
    }

    #[test]
    fn film_gamma_starts_near_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = tiny_mapping(&mut rng);
        let z = LatentCode::sample(8, &mut rng);
        let mut tape = Tape::inference();
        let c = net.forward(&mut tape, &z, &z, &z).unwrap();
        let g = tape.value(c.film[0].gamma);
        assert!(g.data().iter().all(|&v| (v - FILM_GAMMA_INIT).abs() < 3.0));
    }
}
