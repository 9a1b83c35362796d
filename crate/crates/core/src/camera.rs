//! Pose prior, pinhole rays and depth sampling.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Vec3 = Vector3<f64>;

/// Camera orbit radius; every preset's depth range brackets it.
pub const ORBIT_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleDist {
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraConfig {
    /// Vertical field of view in degrees.
    pub fov: f64,
    pub near: f64,
    pub far: f64,
    pub n_steps: usize,
    pub range_h: [f64; 2],
    pub range_v: [f64; 2],
    pub sample_dist: SampleDist,
    pub ray_res: usize,
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov < 180.0) {
            return invalid(format!("fov {} must lie in (0, 180) degrees", self.fov));
        }
        if !(self.near >= 0.0 && self.near < self.far) {
            return invalid(format!("depth range [{}, {}] must satisfy 0 <= near < far", self.near, self.far));
        }
        if self.n_steps < 2 {
            return invalid(format!("n_steps = {} must be at least 2", self.n_steps));
        }
        if self.ray_res == 0 {
            return invalid("ray_res must be positive");
        }
        let tau = 2.0 * std::f64::consts::PI;
        for (name, r) in [("range_h", self.range_h), ("range_v", self.range_v)] {
            let ok = r[0] <= r[1] && r[0] >= -1e-12 && r[1] <= tau + 1e-12;
            if !ok {
                return invalid(format!("{name} {r:?} must be an ordered interval within [0, 2pi]"));
            }
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        1.0 / (self.fov.to_radians() / 2.0).tan()
    }
}

/// Camera on a sphere around the origin, looking at the origin with the
/// world y axis as up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub theta_h: f64,
    pub theta_v: f64,
    pub radius: f64,
}

impl CameraPose {
    pub fn new(theta_h: f64, theta_v: f64) -> Self {
        CameraPose {
            theta_h,
            theta_v,
            radius: ORBIT_RADIUS,
        }
    }

    /// Frontal view is (π/2, π/2); yaw and pitch are offsets from it.
    pub fn from_yaw_pitch(yaw: f64, pitch: f64) -> Self {
        let half_pi = std::f64::consts::FRAC_PI_2;
        Self::new(half_pi + yaw, half_pi + pitch)
    }

    pub fn yaw(&self) -> f64 {
        self.theta_h - std::f64::consts::FRAC_PI_2
    }

    pub fn pitch(&self) -> f64 {
        self.theta_v - std::f64::consts::FRAC_PI_2
    }

    pub fn position(&self) -> Vec3 {
        let (sh, ch) = self.theta_h.sin_cos();
        let (sv, cv) = self.theta_v.sin_cos();
        Vec3::new(sv * ch, cv, sv * sh) * self.radius
    }

    /// Camera-to-world rotation with columns (right, up, back); the camera
    /// looks along its local −z axis.
    pub fn rotation(&self) -> Matrix3<f64> {
        let forward = (-self.position()).normalize();
        let mut world_up = Vec3::y();
        if forward.cross(&world_up).norm() < 1e-9 {
            world_up = -Vec3::z();
        }
        let right = forward.cross(&world_up).normalize();
        let up = right.cross(&forward);
        Matrix3::from_columns(&[right, up, -forward])
    }

    /// Unit direction through normalized image coordinates `(u, v)`; `u`
    /// grows to the right, `v` upwards, and `v = ±1` is the top/bottom edge.
    pub fn ray_dir(&self, fov: f64, u: f64, v: f64) -> Vec3 {
        let t = (fov.to_radians() / 2.0).tan();
        (self.rotation() * Vec3::new(u * t, v * t, -1.0)).normalize()
    }

    /// Continuous pixel coordinates (column, row) and distance from the
    /// camera of a world point, or `None` behind the camera.
    pub fn project(&self, fov: f64, h: usize, w: usize, p: &Vec3) -> Option<(f64, f64, f64)> {
        let local = self.rotation().transpose() * (p - self.position());
        if local.z >= -1e-12 {
            return None;
        }
        let t = (fov.to_radians() / 2.0).tan();
        let u = local.x / (-local.z * t);
        let v = local.y / (-local.z * t);
        let aspect = w as f64 / h as f64;
        let col = (u / aspect + 1.0) * w as f64 / 2.0 - 0.5;
        let row = (1.0 - v) * h as f64 / 2.0 - 0.5;
        Some((col, row, local.norm()))
    }
}

/// Normalized image coordinates of the center of pixel `(row, col)`.
pub fn pixel_uv(row: f64, col: f64, h: usize, w: usize) -> (f64, f64) {
    let aspect = w as f64 / h as f64;
    let u = (2.0 * (col + 0.5) / w as f64 - 1.0) * aspect;
    let v = 1.0 - 2.0 * (row + 0.5) / h as f64;
    (u, v)
}

pub fn sample_angle<R: Rng>(range: [f64; 2], dist: SampleDist, rng: &mut R) -> f64 {
    let (lo, hi) = (range[0], range[1]);
    if hi <= lo {
        return lo;
    }
    match dist {
        SampleDist::Uniform => rng.random_range(lo..hi),
        SampleDist::Gaussian => {
            let mean = 0.5 * (lo + hi);
            let std = 0.5 * (hi - lo);
            let n = Normal::new(mean, std).expect("positive std");
            n.sample(rng).clamp(mean - 2.0 * std, mean + 2.0 * std)
        }
    }
}

pub fn sample_pose<R: Rng>(cfg: &CameraConfig, rng: &mut R) -> CameraPose {
    let theta_h = sample_angle(cfg.range_h, cfg.sample_dist, rng);
    let theta_v = sample_angle(cfg.range_v, cfg.sample_dist, rng);
    CameraPose::new(theta_h, theta_v)
}

/// `n_steps` depths in `[near, far]`: one uniform draw per equal-width bin
/// when stratified, bin midpoints otherwise.
pub fn sample_depths<R: Rng>(cfg: &CameraConfig, stratified: bool, rng: &mut R) -> Vec<f64> {
    let n = cfg.n_steps;
    let width = (cfg.far - cfg.near) / n as f64;
    (0..n)
        .map(|k| {
            let offset = if stratified { rng.random::<f64>() } else { 0.5 };
            cfg.near + (k as f64 + offset) * width
        })
        .collect()
}

/// Rays of an `h×w` image with per-ray depth samples.
#[derive(Debug, Clone)]
pub struct RayGrid {
    pub origin: Vec3,
    pub h: usize,
    pub w: usize,
    pub n_steps: usize,
    pub far: f64,
    /// Row-major ray directions.
    pub dirs: Vec<Vec3>,
    /// `depths[r * n_steps + k]` is the k-th depth of ray r.
    pub depths: Vec<f64>,
}

impl RayGrid {
    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn ray_depths(&self, r: usize) -> &[f64] {
        &self.depths[r * self.n_steps..(r + 1) * self.n_steps]
    }

    pub fn point(&self, r: usize, k: usize) -> Vec3 {
        self.origin + self.dirs[r] * self.depths[r * self.n_steps + k]
    }

    /// Interval lengths `δ_k = t_{k+1} − t_k`, with the last interval
    /// running to the far bound.
    pub fn deltas(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.depths.len());
        for r in 0..self.len() {
            let t = self.ray_depths(r);
            for k in 0..t.len() {
                let next = if k + 1 < t.len() { t[k + 1] } else { self.far };
                out.push(next - t[k]);
            }
        }
        out
    }
}

pub fn generate_rays(pose: &CameraPose, fov: f64, h: usize, w: usize) -> Vec<Vec3> {
    let mut dirs = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let (u, v) = pixel_uv(i as f64, j as f64, h, w);
            dirs.push(pose.ray_dir(fov, u, v));
        }
    }
    dirs
}

/// Rays at the configured resolution with depths drawn per ray.
pub fn ray_grid<R: Rng>(pose: &CameraPose, cfg: &CameraConfig, stratified: bool, rng: &mut R) -> RayGrid {
    let (h, w) = (cfg.ray_res, cfg.ray_res);
    let dirs = generate_rays(pose, cfg.fov, h, w);
    let mut depths = Vec::with_capacity(h * w * cfg.n_steps);
    for _ in 0..dirs.len() {
        depths.extend(sample_depths(cfg, stratified, rng));
    }
    RayGrid {
        origin: pose.position(),
        h,
        w,
        n_steps: cfg.n_steps,
        far: cfg.far,
        dirs,
        depths,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn celeba() -> CameraConfig {
        CameraConfig {
            fov: 12.0,
            near: 0.88,
            far: 1.12,
            n_steps: 12,
            range_h: [FRAC_PI_2 - 0.3, FRAC_PI_2 + 0.3],
            range_v: [FRAC_PI_2 - 0.15, FRAC_PI_2 + 0.15],
            sample_dist: SampleDist::Gaussian,
            ray_res: 64,
        }
    }

    #[test]
    fn frontal_pose_sits_on_positive_z() {
        let p = CameraPose::new(FRAC_PI_2, FRAC_PI_2);
        assert!((p.position() - Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn center_pixel_looks_at_origin() {
        let pose = CameraPose::new(0.7, 1.2);
        let dirs = generate_rays(&pose, 30.0, 5, 5);
        let expect = (-pose.position()).normalize();
        assert!((dirs[12] - expect).norm() < 1e-12);
        assert!(dirs.iter().all(|d| (d.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn corner_ray_angle() {
        let pose = CameraPose::new(FRAC_PI_2, FRAC_PI_2);
        let axis = pose.ray_dir(12.0, 0.0, 0.0);
        let corner = pose.ray_dir(12.0, 1.0, 1.0);
        let angle = axis.dot(&corner).acos().to_degrees();
        let expect = (2f64.sqrt() * 6f64.to_radians().tan()).atan().to_degrees();
        assert!((angle - expect).abs() < 1e-9);
        assert!((angle - 8.4555).abs() < 1e-3);
    }

    #[test]
    fn rotations_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = CameraPose::new(rng.random_range(0.0..2.0 * PI), rng.random_range(0.05..PI - 0.05));
            let r = p.rotation();
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-6);
            assert!((r.determinant() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn projection_inverts_ray_generation() {
        let pose = CameraPose::new(1.3, 1.7);
        let dirs = generate_rays(&pose, 20.0, 6, 8);
        let (col, row, dist) = pose.project(20.0, 6, 8, &(pose.position() + dirs[13] * 0.9)).unwrap();
        assert!((col - 5.0).abs() < 1e-9 && (row - 1.0).abs() < 1e-9 && (dist - 0.9).abs() < 1e-12);
    }

    #[test]
    fn depth_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = celeba();
        let d = sample_depths(&cfg, true, &mut rng);
        assert_eq!(d.len(), 12);
        assert!(d.iter().all(|&t| (0.88..=1.12).contains(&t)));
        assert!(d.windows(2).all(|w| w[0] < w[1]));
        let unit = CameraConfig { near: 0.0, far: 1.0, n_steps: 2, ..cfg };
        assert_eq!(sample_depths(&unit, false, &mut rng), vec![0.25, 0.75]);
    }

    #[test]
    fn gaussian_samples_stay_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = celeba();
        for _ in 0..5000 {
            let p = sample_pose(&cfg, &mut rng);
            assert!((p.theta_h - FRAC_PI_2).abs() <= 0.6 + 1e-12);
            assert!((p.theta_v - FRAC_PI_2).abs() <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn uniform_mean_within_three_standard_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_angle([0.0, 2.0 * PI], SampleDist::Uniform, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = (2.0 * PI) / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - PI).abs() < 3.0 * se);
    }

    #[test]
    fn same_seed_same_pose() {
        let cfg = celeba();
        let a = sample_pose(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_pose(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn last_delta_reaches_far_bound() {
        let cfg = CameraConfig { near: 0.0, far: 1.0, n_steps: 2, ray_res: 1, ..celeba() };
        let g = ray_grid(&CameraPose::new(FRAC_PI_2, FRAC_PI_2), &cfg, false, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(g.deltas(), vec![0.5, 0.25]);
    }
}
