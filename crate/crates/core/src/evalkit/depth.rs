use rayon::prelude::*;

use crate::camera::{pixel_uv, CameraPose, Vec3};
use crate::renderer::DepthMap;

use super::mesh::Mesh;

/// Ray prepared for the watertight triangle test: the dominant direction
/// axis becomes z and the remaining shear maps the ray onto +z.
struct ShearRay {
    origin: Vec3,
    k: [usize; 3],
    s: [f64; 3],
}

impl ShearRay {
    fn new(origin: Vec3, dir: Vec3) -> Self {
        let a = dir.abs();
        let kz = if a.x > a.y { if a.x > a.z { 0 } else { 2 } } else if a.y > a.z { 1 } else { 2 };
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if dir[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        ShearRay {
            origin,
            k: [kx, ky, kz],
            s: [dir[kx] / dir[kz], dir[ky] / dir[kz], 1.0 / dir[kz]],
        }
    }

    /// Hit distance along the (unit) ray, edges and vertices included.
    fn hit(&self, tri: &[Vec3; 3]) -> Option<f64> {
        let [kx, ky, kz] = self.k;
        let [sx, sy, sz] = self.s;
        let rel = tri.map(|p| p - self.origin);
        let a = [rel[0][kx] - sx * rel[0][kz], rel[0][ky] - sy * rel[0][kz]];
        let b = [rel[1][kx] - sx * rel[1][kz], rel[1][ky] - sy * rel[1][kz]];
        let c = [rel[2][kx] - sx * rel[2][kz], rel[2][ky] - sy * rel[2][kz]];
        let u = c[0] * b[1] - c[1] * b[0];
        let v = a[0] * c[1] - a[1] * c[0];
        let w = b[0] * a[1] - b[1] * a[0];
        if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
            return None;
        }
        let det = u + v + w;
        if det == 0.0 {
            return None;
        }
        let t = (u * sz * rel[0][kz] + v * sz * rel[1][kz] + w * sz * rel[2][kz]) / det;
        (t > 0.0).then_some(t)
    }
}

/// Per-pixel distance to the nearest mesh intersection along each pixel's
/// ray, keeping hits in `[near, far]`. Ties resolve to the lowest triangle
/// index, so the result does not depend on triangle order.
pub fn render_mesh_depth(mesh: &Mesh, pose: &CameraPose, fov: f64, res: usize, near: f64, far: f64) -> DepthMap {
    let (h, w) = (res, res);
    let origin = pose.position();
    // screen-space bounding boxes; None when part of the triangle is behind the camera
    let boxes: Vec<Option<[f64; 4]>> = (0..mesh.triangles.len())
        .map(|i| {
            let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
            for p in mesh.triangle(i) {
                let (col, row, _) = pose.project(fov, h, w, &p)?;
                bb = [bb[0].min(col), bb[1].min(row), bb[2].max(col), bb[3].max(row)];
            }
            Some(bb)
        })
        .collect();
    let depth = (0..h * w)
        .into_par_iter()
        .map(|p| {
            let (row, col) = (p / w, p % w);
            let (u, v) = pixel_uv(row as f64, col as f64, h, w);
            let ray = ShearRay::new(origin, pose.ray_dir(fov, u, v));
            let (cf, rf) = (col as f64, row as f64);
            let mut best: Option<(f64, usize)> = None;
            for (i, bb) in boxes.iter().enumerate() {
                if let Some(b) = bb {
                    if cf < b[0] - 1.0 || cf > b[2] + 1.0 || rf < b[1] - 1.0 || rf > b[3] + 1.0 {
                        continue;
                    }
                }
                if let Some(t) = ray.hit(&mesh.triangle(i)) {
                    if t >= near && t <= far && best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, i));
                    }
                }
            }
            best.map(|(t, _)| t)
        })
        .collect();
    DepthMap { h, w, depth }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_center_depth() {
        let m = Mesh::uv_sphere(Vec3::zeros(), 0.3, 48, 96);
        let pose = CameraPose::from_yaw_pitch(0.0, 0.0);
        let d = render_mesh_depth(&m, &pose, 30.0, 33, 0.0, 2.0);
        let c = d.at(16, 16).unwrap();
        assert!((c - 0.7).abs() < 2e-3, "{c}");
        assert!(d.at(0, 0).is_none());
    }

    #[test]
    fn shared_edge_is_watertight() {
        // a ray through the diagonal of a quad must hit one of its two triangles
        let m = Mesh::cuboid(Vec3::zeros(), Vec3::new(0.2, 0.2, 0.2));
        let pose = CameraPose::from_yaw_pitch(0.0, 0.0);
        let d = render_mesh_depth(&m, &pose, 30.0, 64, 0.0, 2.0);
        for row in 20..44 {
            for col in 20..44 {
                assert!(d.at(row, col).is_some(), "hole at {row},{col}");
            }
        }
    }
}
