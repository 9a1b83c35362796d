//! Reprojection error on a scene with known geometry, and how it grows as
//! the depth maps are corrupted.
//!
//!     cargo run --example reprojection

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgan::camera::Vec3;
use vgan::dataio::{Object, Scene, SceneViews, Shape};
use vgan::evalkit::{perturb_depth, render_views, reprojection_error, reprojection_poses, View};

fn main() -> vgan::Result<()> {
    let scene = Scene {
        objects: vec![
            Object {
                shape: Shape::Sphere {
                    center: Vec3::new(-0.1, 0.0, 0.0),
                    radius: 0.2,
                },
                color: [0.9, 0.5, 0.3],
            },
            Object {
                shape: Shape::Cuboid {
                    center: Vec3::new(0.15, -0.05, 0.05),
                    half: Vec3::new(0.1, 0.12, 0.1),
                },
                color: [0.3, 0.6, 0.9],
            },
        ],
        light: Vec3::new(0.4, 0.8, 0.6),
        ambient: 0.25,
        background: 0.0,
    };
    let mesh = scene.mesh();
    let fov = 30.0;
    for res in [32, 64] {
        let src = SceneViews {
            scene: &scene,
            mesh: Some(&mesh),
            fov,
            res,
        };
        let views = render_views(&src, &reprojection_poses(5, 0.3))?;
        let r = reprojection_error(&views, fov)?;
        println!("{res}²: intensity {:.5}, coordinate {:.5}", r.intensity, r.coordinate);
        for (i, p) in r.pairs.iter().enumerate() {
            println!("  pair {i}: {:.5} over {} pixels", p.intensity, p.pixels);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise: Vec<f64> = (0..res * res).map(|_| rng.random_range(-1.0..1.0)).collect();
        for amp in [0.005, 0.01, 0.02, 0.04] {
            let noisy: Vec<View> = views
                .iter()
                .map(|v| View {
                    depth: perturb_depth(&v.depth, &noise, amp),
                    ..v.clone()
                })
                .collect();
            println!("  depth noise {amp}: {:.5}", reprojection_error(&noisy, fov)?.intensity);
        }
    }
    Ok(())
}
