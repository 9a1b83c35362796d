//! The full generator `G(z, ξ)`: mapping → feature volume → trilinear query →
//! feature field → volume rendering → neural renderer.

use diffcore::{join, Module, Param, Real, Tape, Tensor, Var};
use rand::Rng;

use crate::camera::{RayGrid, Vec3};
use crate::error::{invalid, Result};
use crate::field::{FieldArch, FieldNet};
use crate::nnlayers::{Conditioning, FiLMParams, HeadLayout, LatentCode, MappingNetwork};
use crate::renderer::{render_feature_map, NeuralRenderer, RayWeights, RendererArch};
use crate::structural::{trilinear, FeatureVolumeNet, VolumeArch};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorArch {
    pub latent_dim: usize,
    pub mapping_width: usize,
    pub mapping_depth: usize,
    pub volume: VolumeArch,
    pub field: FieldArch,
    pub renderer: RendererArch,
}

impl GeneratorArch {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.mapping_width == 0 || self.mapping_depth == 0 {
            return invalid("latent and mapping sizes must be positive");
        }
        if self.field.descriptor_dim != self.volume.out_channels() {
            return invalid(format!(
                "field descriptor width {} differs from volume channels {}",
                self.field.descriptor_dim,
                self.volume.out_channels()
            ));
        }
        if self.renderer.in_channels != self.field.feature_dim {
            return invalid(format!(
                "renderer input {} differs from field feature width {}",
                self.renderer.in_channels, self.field.feature_dim
            ));
        }
        if self.field.layers == 0 || self.field.hidden == 0 {
            return invalid("field needs at least one hidden layer");
        }
        self.renderer.validate()
    }

    pub fn head_layout(&self) -> HeadLayout {
        HeadLayout {
            adain: self.volume.stage_channels.clone(),
            film_width: self.field.hidden,
            film_layers: self.field.layers,
            modconv: self.renderer.modconv_inputs(),
        }
    }
}

/// Independent latent codes for the structural, field and renderer paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBundle<T: Real> {
    pub z_structural: LatentCode<T>,
    pub z_field: LatentCode<T>,
    pub z_renderer: LatentCode<T>,
}

impl<T: Real> CodeBundle<T> {
    pub fn tied(z: LatentCode<T>) -> Self {
        CodeBundle {
            z_structural: z.clone(),
            z_field: z.clone(),
            z_renderer: z,
        }
    }

    pub fn sample<R: Rng>(dim: usize, rng: &mut R) -> Self {
        Self::tied(LatentCode::sample(dim, rng))
    }
}

/// Recorded generator pass.
#[derive(Debug, Clone)]
pub struct GenOutput {
    pub image: Var,
    pub volume: Var,
    pub feature_map: Var,
    /// Per-sample densities `[R·N]`, ray-major.
    pub sigma: Var,
    pub descriptors: Var,
    pub weights: Vec<RayWeights>,
    pub cond: Conditioning,
}

/// Conditioning and volume evaluated once, as plain values.
#[derive(Debug, Clone)]
pub struct Frozen<T> {
    pub volume: Tensor<T>,
    pub film: Vec<(Tensor<T>, Tensor<T>)>,
    pub modconv: Vec<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Generator<T: Real> {
    pub mapping: MappingNetwork<T>,
    pub volume: FeatureVolumeNet<T>,
    pub field: FieldNet<T>,
    pub renderer: NeuralRenderer<T>,
    arch: GeneratorArch,
}

/// Points evaluated per tape when probing densities.
const PROBE_CHUNK: usize = 16384;

impl<T: Real> Generator<T> {
    pub fn new<R: Rng>(arch: GeneratorArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mapping = MappingNetwork::new(arch.latent_dim, arch.mapping_width, arch.mapping_depth, arch.head_layout(), rng);
        let volume = FeatureVolumeNet::new(arch.volume.clone(), rng);
        let field = FieldNet::new(arch.field.clone(), rng);
        let renderer = NeuralRenderer::new(arch.renderer.clone(), rng)?;
        Ok(Generator {
            mapping,
            volume,
            field,
            renderer,
            arch,
        })
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn condition(&self, tape: &mut Tape<T>, codes: &CodeBundle<T>) -> Result<Conditioning> {
        self.mapping
            .forward(tape, &codes.z_structural, &codes.z_field, &codes.z_renderer)
    }

    /// Renders `rays` to an image at growth `level` with fade weight `alpha`.
    pub fn forward(&self, tape: &mut Tape<T>, codes: &CodeBundle<T>, rays: &RayGrid, level: usize, alpha: f64) -> Result<GenOutput> {
        let cond = self.condition(tape, codes)?;
        let volume = self.volume.forward(tape, &cond.adain)?;
        let n = rays.n_steps;
        let mut points = Vec::with_capacity(rays.len() * n);
        let mut dirs = Vec::with_capacity(rays.len() * n);
        for r in 0..rays.len() {
            for k in 0..n {
                points.push(rays.point(r, k));
                dirs.push(rays.dirs[r]);
            }
        }
        let descriptors = trilinear(tape, volume, &points)?;
        let out = self.field.forward(tape, descriptors, &points, &dirs, &cond.film)?;
        let (feature_map, weights) = render_feature_map(tape, rays, out.sigma, out.feature)?;
        let image = self.renderer.forward(tape, feature_map, &cond.modconv, level, alpha)?;
        Ok(GenOutput {
            image,
            volume,
            feature_map,
            sigma: out.sigma,
            descriptors,
            weights,
            cond,
        })
    }

    /// Image value only, at full resolution.
    pub fn render(&self, codes: &CodeBundle<T>, rays: &RayGrid) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let out = self.forward(&mut tape, codes, rays, self.arch.renderer.stages(), 1.0)?;
        Ok(tape.value(out.image).clone())
    }

    pub fn freeze(&self, codes: &CodeBundle<T>) -> Result<Frozen<T>> {
        let mut tape = Tape::inference();
        let cond = self.condition(&mut tape, codes)?;
        let volume = self.volume.forward(&mut tape, &cond.adain)?;
        Ok(Frozen {
            volume: tape.value(volume).clone(),
            film: cond
                .film
                .iter()
                .map(|f| (tape.value(f.gamma).clone(), tape.value(f.beta).clone()))
                .collect(),
            modconv: cond.modconv.iter().map(|s| tape.value(*s).clone()).collect(),
        })
    }

    fn frozen_film(tape: &mut Tape<T>, frozen: &Frozen<T>) -> Vec<FiLMParams> {
        frozen
            .film
            .iter()
            .map(|(g, b)| FiLMParams {
                gamma: tape.constant(g.clone()),
                beta: tape.constant(b.clone()),
            })
            .collect()
    }

    /// Densities at arbitrary points; independent of view direction.
    pub fn density(&self, frozen: &Frozen<T>, points: &[Vec3]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(PROBE_CHUNK) {
            let mut tape = Tape::inference();
            let film = Self::frozen_film(&mut tape, frozen);
            let v = tape.constant(frozen.volume.clone());
            let desc = trilinear(&mut tape, v, chunk)?;
            let sigma = self.field.density(&mut tape, desc, chunk, &film)?;
            out.extend(tape.value(sigma).data().iter().map(|s| s.as_f64()));
        }
        Ok(out)
    }

    /// Densities and features at points with per-point view directions.
    pub fn probe(&self, frozen: &Frozen<T>, points: &[Vec3], dirs: &[Vec3]) -> Result<(Vec<f64>, Tensor<T>)> {
        let mut tape = Tape::inference();
        let film = Self::frozen_film(&mut tape, frozen);
        let v = tape.constant(frozen.volume.clone());
        let desc = trilinear(&mut tape, v, points)?;
        let out = self.field.forward(&mut tape, desc, points, dirs, &film)?;
        let sigma = tape.value(out.sigma).data().iter().map(|s| s.as_f64()).collect();
        Ok((sigma, tape.value(out.feature).clone()))
    }

    /// Inference-only pass returning the recorded values.
    pub fn trace(&self, codes: &CodeBundle<T>, rays: &RayGrid) -> Result<Trace<T>> {
        let mut tape = Tape::inference();
        let out = self.forward(&mut tape, codes, rays, self.arch.renderer.stages(), 1.0)?;
        Ok(Trace {
            image: tape.value(out.image).clone(),
            feature_map: tape.value(out.feature_map).clone(),
            sigma: tape.value(out.sigma).to_f64_vec(),
            descriptors: tape.value(out.descriptors).clone(),
            weights: out.weights,
        })
    }
}

/// Values of one generator pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub image: Tensor<T>,
    pub feature_map: Tensor<T>,
    pub sigma: Vec<f64>,
    pub descriptors: Tensor<T>,
    pub weights: Vec<RayWeights>,
}

impl<T: Real> Module<T> for Generator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.mapping.visit(&join(prefix, "mapping"), f);
        self.volume.visit(&join(prefix, "volume"), f);
        self.field.visit(&join(prefix, "field"), f);
        self.renderer.visit(&join(prefix, "renderer"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.mapping.visit_mut(&join(prefix, "mapping"), f);
        self.volume.visit_mut(&join(prefix, "volume"), f);
        self.field.visit_mut(&join(prefix, "field"), f);
        self.renderer.visit_mut(&join(prefix, "renderer"), f);
    }
}
