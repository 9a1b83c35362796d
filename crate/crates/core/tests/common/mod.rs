#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgan::adversary::DiscArch;
use vgan::camera::{CameraConfig, SampleDist};
use vgan::dataio::{generate_synthetic, Dataset, SyntheticSceneConfig};
use vgan::diffcore::{Tape, Tensor, Var};
use vgan::field::FieldArch;
use vgan::generator::GeneratorArch;
use vgan::renderer::RendererArch;
use vgan::structural::VolumeArch;
use vgan::trainer::{Stage, TrainConfig};

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// `Σ y ⊙ R` for a fixed random `R`, so every output entry matters.
pub fn probe_sum(t: &mut Tape<f64>, y: Var, seed: u64) -> vgan::diffcore::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = uniform(&mut rng, t.shape(y), -1.0, 1.0);
    let r = t.constant(r);
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

pub fn lift(op: &'static str) -> impl Fn(vgan::VganError) -> vgan::diffcore::DiffError {
    move |e| vgan::diffcore::DiffError::InvalidArgument { op, msg: e.to_string() }
}

/// A generator small enough to train for a few steps in a test.
pub fn tiny_arch() -> GeneratorArch {
    GeneratorArch {
        latent_dim: 8,
        mapping_width: 8,
        mapping_depth: 2,
        volume: VolumeArch {
            template_channels: 4,
            template_res: 2,
            stage_channels: vec![4],
        },
        field: FieldArch {
            descriptor_dim: 4,
            hidden: 8,
            layers: 2,
            feature_dim: 4,
        },
        renderer: RendererArch {
            in_channels: 4,
            channels: 4,
            ray_res: 4,
            max_res: 8,
            rgb_kernel: 3,
            demod: true,
        },
    }
}

pub fn tiny_camera() -> CameraConfig {
    CameraConfig {
        fov: 30.0,
        near: 0.5,
        far: 1.5,
        n_steps: 6,
        range_h: [FRAC_PI_2 - 0.3, FRAC_PI_2 + 0.3],
        range_v: [FRAC_PI_2 - 0.2, FRAC_PI_2 + 0.2],
        sample_dist: SampleDist::Uniform,
        ray_res: 4,
    }
}

pub fn tiny_disc() -> DiscArch {
    DiscArch {
        max_res: 8,
        base_channels: 4,
        max_channels: 8,
        min_res: 4,
    }
}

/// Two stages, 4² then 8², 32 images each.
pub fn tiny_train() -> TrainConfig {
    TrainConfig {
        batch: 4,
        g_lr: 1e-3,
        d_lr: 1e-3,
        schedule: vec![Stage { res: 4, kimg: 0.032 }, Stage { res: 8, kimg: 0.032 }],
        fade_fraction: 0.25,
        seed: 5,
        ..TrainConfig::default()
    }
}

pub fn tiny_data(count: usize) -> Dataset<f64> {
    let cfg = SyntheticSceneConfig::desk(count, 8, tiny_camera(), 3);
    Dataset::from_records(generate_synthetic(&cfg).unwrap()).unwrap()
}
