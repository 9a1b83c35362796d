//! Invariants of cameras, surfaces, metrics and the batch stream.

use std::collections::HashSet;

use proptest::prelude::*;
use vgan::camera::{pixel_uv, CameraPose, Vec3};
use vgan::dataio::BatchStream;
use vgan::evalkit::{frechet_distance, lattice_points, marching_cubes, render_mesh_depth, Features, Mesh};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pixels_project_back_onto_themselves(
        yaw in -1.2f64..1.2, pitch in -0.6f64..0.6,
        row in 0usize..16, col in 0usize..24, dist in 0.3f64..3.0,
    ) {
        let pose = CameraPose::from_yaw_pitch(yaw, pitch);
        let (h, w, fov) = (16, 24, 40.0);
        let (u, v) = pixel_uv(row as f64, col as f64, h, w);
        let p = pose.position() + pose.ray_dir(fov, u, v) * dist;
        let (c, r, d) = pose.project(fov, h, w, &p).unwrap();
        prop_assert!((c - col as f64).abs() < 1e-9 && (r - row as f64).abs() < 1e-9);
        prop_assert!((d - dist).abs() < 1e-9);
    }

    #[test]
    fn extracted_spheres_have_the_right_volume(
        r in 0.3f64..0.8,
        cx in -0.1f64..0.1, cy in -0.1f64..0.1, cz in -0.1f64..0.1,
    ) {
        let res = 40;
        let c = Vec3::new(cx, cy, cz);
        let vals: Vec<f64> = lattice_points(res).iter().map(|p| r - (p - c).norm()).collect();
        let mesh = marching_cubes(&vals, res, 0.0).unwrap();
        mesh.validate().unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        prop_assert!((mesh.signed_volume() - exact).abs() / exact < 0.03);
        for v in &mesh.vertices {
            prop_assert!(((v - c).norm() - r).abs() < 0.02);
        }
    }

    #[test]
    fn frechet_is_symmetric_and_non_negative(seed in 0u64..1000, shift in -1.0f64..1.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rows = |n: usize, s: f64| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0) + s).collect()).collect()
        };
        let a = Features::from_rows(&rows(40, 0.0)).unwrap();
        let b = Features::from_rows(&rows(30, shift)).unwrap();
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0 && (ab - ba).abs() < 1e-9 * (1.0 + ab));
    }

    #[test]
    fn every_epoch_visits_each_index_once(len in 1usize..40, batch in 1usize..9, seed in 0u64..100) {
        let mut s = BatchStream::new(len, batch, seed).unwrap();
        let drawn: Vec<usize> = (0..(3 * len).div_ceil(batch)).flat_map(|_| s.next_indices()).collect();
        for epoch in drawn.chunks(len).take(3).filter(|c| c.len() == len) {
            prop_assert_eq!(epoch.iter().collect::<HashSet<_>>().len(), len);
        }
    }
}

#[test]
fn stream_seek_replays_the_same_batches() {
    let mut a = BatchStream::new(10, 3, 4).unwrap();
    for _ in 0..5 {
        a.next_indices();
    }
    let (epoch, pos) = a.position();
    let mut b = BatchStream::new(10, 3, 4).unwrap();
    b.seek(epoch, pos).unwrap();
    for _ in 0..6 {
        assert_eq!(a.next_indices(), b.next_indices());
    }
    assert!(b.seek(0, 10).is_err());
}

#[test]
fn mesh_depth_sees_the_nearest_face() {
    let cube = Mesh::cuboid(Vec3::zeros(), Vec3::new(0.05, 0.05, 0.05));
    let pose = CameraPose::from_yaw_pitch(0.0, 0.0);
    let depth = render_mesh_depth(&cube, &pose, 30.0, 9, 0.1, 3.0);
    let centre = depth.at(4, 4).unwrap();
    assert!((centre - 0.95).abs() < 1e-6, "{centre}");
    assert_eq!(depth.at(0, 0), None);
}

#[test]
fn obj_files_round_trip() {
    let mesh = Mesh::uv_sphere(Vec3::new(0.1, 0.0, -0.2), 0.3, 6, 8);
    let back = Mesh::parse_obj(&mesh.to_obj()).unwrap();
    assert_eq!(back.triangles, mesh.triangles);
    for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
        assert!((a - b).norm() < 1e-9);
    }
}
