//! Gradient checks and invariants of the differentiable building blocks.

mod common;

use common::{lift, probe_sum, uniform};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgan::camera::Vec3;
use vgan::diffcore::{grad_check, Tape, Tensor};
use vgan::nnlayers::{adain, modconv1x1, Linear};
use vgan::renderer::{accumulate, accumulate_rays, RayWeights};
use vgan::structural::{batch_query, trilinear, FeatureVolumeNet, VolumeArch};

const TOL: f64 = 1e-6;

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = Linear::<f64>::new(3, 4, 1.0, true, &mut rng);
    let x = uniform(&mut rng, &[5, 3], -1.0, 1.0);
    let err = grad_check(
        |t, v| {
            let y = layer.forward(t, v).map_err(lift("linear"))?;
            probe_sum(t, y, 2)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn adain_shift_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = uniform(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
    let g = uniform(&mut rng, &[2], 0.5, 1.5);
    let b = uniform(&mut rng, &[2], -1.0, 1.0);
    let err = grad_check(
        |t, v| {
            let (xv, gv) = (t.constant(x.clone()), t.constant(g.clone()));
            let y = adain(t, xv, gv, v).map_err(lift("adain"))?;
            probe_sum(t, y, 3)
        },
        &b,
        1e-5,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn modconv_commutes_with_channel_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (cin, cout) = (5, 3);
    let x = uniform(&mut rng, &[cin, 2, 3], -1.0, 1.0);
    let w = uniform(&mut rng, &[cout, cin, 1, 1], -1.0, 1.0);
    let s = uniform(&mut rng, &[cin], 0.2, 2.0);
    let perm = [3usize, 0, 4, 1, 2];
    let xp = Tensor::from_fn(&[cin, 2, 3], |i| x.data()[perm[i / 6] * 6 + i % 6]);
    let wp = Tensor::from_fn(&[cout, cin, 1, 1], |i| w.data()[(i / cin) * cin + perm[i % cin]]);
    let sp = Tensor::from_fn(&[cin], |i| s.data()[perm[i]]);
    for demod in [false, true] {
        let run = |x: &Tensor<f64>, w: &Tensor<f64>, s: &Tensor<f64>| {
            let mut t = Tape::inference();
            let (x, w, s) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(s.clone()));
            let y = modconv1x1(&mut t, x, w, s, demod).unwrap();
            t.value(y).clone()
        };
        let (a, b) = (run(&x, &w, &s), run(&xp, &wp, &sp));
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12, "demod {demod}: {u} vs {v}");
        }
    }
}

#[test]
fn demodulated_output_ignores_style_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = uniform(&mut rng, &[3, 2, 2], -1.0, 1.0);
    let w = uniform(&mut rng, &[2, 3, 1, 1], -1.0, 1.0);
    let s = uniform(&mut rng, &[3], 0.5, 1.5);
    let run = |s: Tensor<f64>| {
        let mut t = Tape::inference();
        let (xv, wv, sv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(s));
        let y = modconv1x1(&mut t, xv, wv, sv, true).unwrap();
        t.value(y).clone()
    };
    let a = run(s.clone());
    let b = run(s.scale(7.0));
    for (u, v) in a.data().iter().zip(b.data()) {
        // only the demodulation epsilon separates the two
        assert!((u - v).abs() < 1e-7, "{u} vs {v}");
    }
}

#[test]
fn feature_volume_gradients_reach_the_template() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = FeatureVolumeNet::<f64>::new(
        VolumeArch {
            template_channels: 2,
            template_res: 2,
            stage_channels: vec![2],
        },
        &mut rng,
    );
    let styles: Vec<(Tensor<f64>, Tensor<f64>)> = net
        .adain_channels()
        .iter()
        .map(|&c| (uniform(&mut rng, &[c], 0.5, 1.5), uniform(&mut rng, &[c], -0.5, 0.5)))
        .collect();
    let g0 = styles[0].0.clone();
    let err = grad_check(
        |t, v| {
            let mut vars = Vec::new();
            for (k, (g, b)) in styles.iter().enumerate() {
                let gv = if k == 0 { v } else { t.constant(g.clone()) };
                vars.push((gv, t.constant(b.clone())));
            }
            let y = net.forward(t, &vars).map_err(lift("volume"))?;
            probe_sum(t, y, 6)
        },
        &g0,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn accumulate_rays_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (rays, n, c) = (3, 5, 2);
    let sigma = uniform(&mut rng, &[rays, n], 0.0, 3.0);
    let feats = uniform(&mut rng, &[rays, n, c], -1.0, 1.0);
    let deltas: Vec<f64> = (0..rays * n).map(|_| rng.random_range(0.05..0.3)).collect();
    let wrt_sigma = grad_check(
        |t, v| {
            let f = t.constant(feats.clone());
            let (y, _) = accumulate_rays(t, v, f, &deltas).map_err(lift("accumulate"))?;
            probe_sum(t, y, 7)
        },
        &sigma,
        1e-6,
    )
    .unwrap();
    let wrt_feats = grad_check(
        |t, v| {
            let s = t.constant(sigma.clone());
            let (y, _) = accumulate_rays(t, s, v, &deltas).map_err(lift("accumulate"))?;
            probe_sum(t, y, 7)
        },
        &feats,
        1e-6,
    )
    .unwrap();
    assert!(wrt_sigma < TOL && wrt_feats < TOL, "{wrt_sigma} {wrt_feats}");
}

#[test]
fn taped_accumulation_matches_plain_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 7;
    let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
    let delta: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.2)).collect();
    let feats: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let (plain, _) = accumulate(&sigma, &delta, &feats).unwrap();
    let mut t = Tape::<f64>::inference();
    let s = t.constant(Tensor::new(vec![1, n], sigma.clone()).unwrap());
    let f = t.constant(Tensor::new(vec![1, n, 2], feats.concat()).unwrap());
    let (y, _) = accumulate_rays(&mut t, s, f, &delta).unwrap();
    for (a, b) in plain.iter().zip(t.value(y).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn trilinear_gradient_wrt_volume() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vol = uniform(&mut rng, &[2, 3, 3, 3], -1.0, 1.0);
    let pts: Vec<Vec3> = (0..6)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let err = grad_check(
        |t, v| {
            let y = trilinear(t, v, &pts).map_err(lift("trilinear"))?;
            probe_sum(t, y, 10)
        },
        &vol,
        1e-6,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

proptest! {
    #[test]
    fn ray_weights_form_a_partition(
        sigma in prop::collection::vec(0.0f64..50.0, 1..24),
        delta_scale in 0.001f64..0.5,
    ) {
        let delta = vec![delta_scale; sigma.len()];
        let w = RayWeights::compute(&sigma, &delta).unwrap();
        prop_assert!(w.weights.iter().all(|&x| x >= 0.0));
        let total: f64 = w.weights.iter().sum();
        prop_assert!(total <= 1.0 + 1e-12);
        prop_assert!((total - w.opacity()).abs() < 1e-12);
        prop_assert!((w.opacity() + w.residual() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trilinear_stays_within_corner_bounds(
        seed in 0u64..10_000,
        x in -1.5f64..1.5, y in -1.5f64..1.5, z in -1.5f64..1.5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vol = uniform(&mut rng, &[2, 3, 4, 2], -1.0, 1.0);
        let q = batch_query(&vol, &[Vec3::new(x, y, z)]).unwrap();
        let per = 3 * 4 * 2;
        for c in 0..2 {
            let ch = &vol.data()[c * per..(c + 1) * per];
            let lo = ch.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = q.data()[c];
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
