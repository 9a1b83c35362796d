//! Generative feature field: descriptor + coordinate → (feature, density).

use diffcore::{join, Module, Param, Real, Tape, Tensor, Var};
use rand::Rng;

use crate::camera::Vec3;
use crate::error::{invalid, Result};
use crate::nnlayers::{film_siren, uniform, FiLMParams, Linear};

#[derive(Debug, Clone, PartialEq)]
pub struct FieldArch {
    pub descriptor_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub feature_dim: usize,
}

impl FieldArch {
    pub fn input_dim(&self) -> usize {
        self.descriptor_dim + 3
    }
}

#[derive(Debug, Clone)]
pub struct FieldNet<T: Real> {
    pub layers: Vec<Linear<T>>,
    pub density_head: Linear<T>,
    pub feature_head: Linear<T>,
    arch: FieldArch,
}

/// Outputs for a batch of points.
#[derive(Debug, Clone, Copy)]
pub struct FieldOutput {
    /// `[P]`
    pub sigma: Var,
    /// `[P, F]`
    pub feature: Var,
    /// Final hidden state `[P, hidden]`.
    pub hidden: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample<T> {
    pub feature: Vec<T>,
    pub sigma: T,
}

impl<T: Real> FieldNet<T> {
    pub fn new<R: Rng>(arch: FieldArch, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(arch.layers);
        let mut fan_in = arch.input_dim();
        for i in 0..arch.layers {
            let bound = if i == 0 {
                1.0 / fan_in as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / 15.0
            };
            let w = uniform(&[arch.hidden, fan_in], bound, rng);
            let b = uniform(&[arch.hidden], (1.0 / fan_in as f64).sqrt(), rng);
            layers.push(Linear::from_parts(w, Some(b)));
            fan_in = arch.hidden;
        }
        let density_head = Linear::new(arch.hidden, 1, 1.0, true, rng);
        let feature_head = Linear::new(arch.hidden + 3, arch.feature_dim, 1.0, true, rng);
        FieldNet {
            layers,
            density_head,
            feature_head,
            arch,
        }
    }

    pub fn arch(&self) -> &FieldArch {
        &self.arch
    }

    /// Evaluates the field at `P` points. `descriptors` is `[P, C]`; each
    /// point carries its own view direction.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        descriptors: Var,
        points: &[Vec3],
        dirs: &[Vec3],
        film: &[FiLMParams],
    ) -> Result<FieldOutput> {
        let p = points.len();
        let ds = tape.shape(descriptors).to_vec();
        if ds != [p, self.arch.descriptor_dim] || dirs.len() != p {
            return invalid(format!(
                "field batch: descriptors {ds:?}, {p} points and {} directions (descriptor width {})",
                dirs.len(),
                self.arch.descriptor_dim
            ));
        }
        if film.len() != self.layers.len() {
            return invalid(format!("{} FiLM pairs for {} field layers", film.len(), self.layers.len()));
        }
        let h = self.trunk(tape, descriptors, points, film)?;
        let raw = self.density_head.forward(tape, h)?;
        let raw = tape.reshape(raw, &[p])?;
        let sigma = tape.softplus(raw);
        let dv = tape.constant(to_tensor(dirs));
        let hd = tape.concat(&[h, dv], 1)?;
        let feature = self.feature_head.forward(tape, hd)?;
        Ok(FieldOutput { sigma, feature, hidden: h })
    }

    fn trunk(&self, tape: &mut Tape<T>, descriptors: Var, points: &[Vec3], film: &[FiLMParams]) -> Result<Var> {
        let xs = tape.constant(to_tensor(points));
        let mut h = tape.concat(&[descriptors, xs], 1)?;
        for (layer, cond) in self.layers.iter().zip(film) {
            let w = tape.param(&layer.w);
            let b = tape.param(layer.b.as_ref().expect("field layers carry a bias"));
            h = film_siren(tape, h, w, b, cond.gamma, cond.beta)?;
        }
        Ok(h)
    }

    /// Density only; skips the feature head.
    pub fn density(&self, tape: &mut Tape<T>, descriptors: Var, points: &[Vec3], film: &[FiLMParams]) -> Result<Var> {
        let p = points.len();
        let h = self.trunk(tape, descriptors, points, film)?;
        let raw = self.density_head.forward(tape, h)?;
        let raw = tape.reshape(raw, &[p])?;
        Ok(tape.softplus(raw))
    }

    /// Single-point evaluation.
    pub fn eval(&self, tape: &mut Tape<T>, v: &[T], x: Vec3, d: Vec3, film: &[FiLMParams]) -> Result<FieldSample<T>> {
        let dv = tape.constant(Tensor::new(vec![1, v.len()], v.to_vec())?);
        let out = self.forward(tape, dv, &[x], &[d], film)?;
        Ok(FieldSample {
            feature: tape.value(out.feature).data().to_vec(),
            sigma: tape.value(out.sigma).item(),
        })
    }
}

pub(crate) fn to_tensor<T: Real>(points: &[Vec3]) -> Tensor<T> {
    let data = points.iter().flat_map(|p| [p.x, p.y, p.z]).map(T::lit).collect();
    Tensor::new(vec![points.len(), 3], data).expect("non-empty point list")
}

impl<T: Real> Module<T> for FieldNet<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("siren{i}")), f);
        }
        self.density_head.visit(&join(prefix, "density"), f);
        self.feature_head.visit(&join(prefix, "feature"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("siren{i}")), f);
        }
        self.density_head.visit_mut(&join(prefix, "density"), f);
        self.feature_head.visit_mut(&join(prefix, "feature"), f);
    }
}
