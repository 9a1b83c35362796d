//! Whole-generator behaviour on a tiny architecture.

mod common;

use common::{probe_sum, tiny_arch, tiny_camera};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgan::camera::{CameraPose, Vec3};
use vgan::diffcore::{Module, Tape, Tensor};
use vgan::generator::{CodeBundle, Generator};
use vgan::nnlayers::LatentCode;
use vgan::studio::fixed_rays;

fn setup() -> (Generator<f64>, CodeBundle<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = Generator::new(tiny_arch(), &mut rng).unwrap();
    let codes = CodeBundle {
        z_structural: LatentCode::sample(8, &mut rng),
        z_field: LatentCode::sample(8, &mut rng),
        z_renderer: LatentCode::sample(8, &mut rng),
    };
    (g, codes)
}

#[test]
fn image_shape_and_range() {
    let (g, codes) = setup();
    let img = g.render(&codes, &fixed_rays(&CameraPose::from_yaw_pitch(0.1, 0.0), &tiny_camera())).unwrap();
    assert_eq!(img.shape(), &[3, 8, 8]);
    assert!(img.data().iter().all(|v| v.is_finite()));
}

#[test]
fn rendering_is_repeatable() {
    let (g, codes) = setup();
    let rays = fixed_rays(&CameraPose::from_yaw_pitch(-0.2, 0.1), &tiny_camera());
    assert_eq!(g.render(&codes, &rays).unwrap(), g.render(&codes, &rays).unwrap());
}

#[test]
fn frozen_density_matches_traced_density() {
    let (g, codes) = setup();
    let rays = fixed_rays(&CameraPose::from_yaw_pitch(0.0, 0.0), &tiny_camera());
    let trace = g.trace(&codes, &rays).unwrap();
    let n = rays.depths.len() / rays.len();
    let pts: Vec<Vec3> = (0..rays.len()).flat_map(|r| (0..n).map(move |k| (r, k))).map(|(r, k)| rays.point(r, k)).collect();
    let probed = g.density(&g.freeze(&codes).unwrap(), &pts).unwrap();
    assert_eq!(probed.len(), trace.sigma.len());
    for (a, b) in probed.iter().zip(&trace.sigma) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn appearance_codes_leave_geometry_alone() {
    let (g, codes) = setup();
    let rays = fixed_rays(&CameraPose::from_yaw_pitch(0.2, -0.1), &tiny_camera());
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let other_renderer = CodeBundle {
        z_renderer: LatentCode::sample(8, &mut rng),
        ..codes.clone()
    };
    let other_field = CodeBundle {
        z_field: LatentCode::sample(8, &mut rng),
        ..codes.clone()
    };
    let base = g.trace(&codes, &rays).unwrap();
    let r = g.trace(&other_renderer, &rays).unwrap();
    let f = g.trace(&other_field, &rays).unwrap();
    assert_eq!(base.sigma, r.sigma);
    assert_eq!(base.feature_map, r.feature_map);
    assert_ne!(base.image, r.image);
    assert_eq!(base.descriptors, f.descriptors);
    assert_ne!(base.sigma, f.sigma);
}

#[test]
fn density_does_not_depend_on_view_direction() {
    let (g, codes) = setup();
    let frozen = g.freeze(&codes).unwrap();
    let pts = vec![Vec3::new(0.1, -0.2, 0.3); 3];
    let dirs = vec![Vec3::new(0.0, 0.0, -1.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.6, 0.8)];
    let (sigma, feats) = g.probe(&frozen, &pts, &dirs).unwrap();
    assert!(sigma.iter().all(|s| s.to_bits() == sigma[0].to_bits()));
    let f = feats.shape()[1];
    assert_ne!(&feats.data()[..f], &feats.data()[f..2 * f]);
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let (g, codes) = setup();
    let rays = fixed_rays(&CameraPose::from_yaw_pitch(0.05, 0.05), &tiny_camera());
    let level = g.arch().renderer.stages();
    let loss = |g: &Generator<f64>, t: &mut Tape<f64>| {
        let out = g.forward(t, &codes, &rays, level, 1.0).unwrap();
        probe_sum(t, out.image, 23).unwrap()
    };
    let mut tape = Tape::new();
    let l = loss(&g, &mut tape);
    let grads = tape.backward(l).unwrap();
    let mut analytic = Vec::new();
    g.visit("", &mut |name, p| {
        let gr = grads.param(&tape, p).cloned().unwrap_or_else(|| Tensor::zeros(p.shape()));
        analytic.push((name.to_string(), gr));
    });
    let eval = |g: &Generator<f64>| {
        let mut t = Tape::inference();
        let l = loss(g, &mut t);
        t.value(l).item()
    };
    let h = 1e-6;
    for (name, gr) in &analytic {
        let i = gr.numel() / 2;
        let nudge = |delta: f64| {
            let mut gc = g.clone();
            gc.visit_mut("", &mut |n, p| {
                if n == name {
                    p.value_mut().data_mut()[i] += delta;
                }
            });
            gc
        };
        let fd = (eval(&nudge(h)) - eval(&nudge(-h))) / (2.0 * h);
        let a = gr.data()[i];
        assert!((a - fd).abs() / a.abs().max(1.0) < 1e-6, "{name}[{i}]: {a} vs {fd}");
    }
}
