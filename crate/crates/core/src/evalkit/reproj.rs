use diffcore::{Real, Tensor};

use crate::camera::{pixel_uv, CameraPose, Vec3};
use crate::error::{Result, VganError};
use crate::renderer::DepthMap;

/// Pixels whose neighbours disagree with the warped distance by more than
/// this (scene units) are treated as occluded.
pub const OCCLUSION_TOL: f64 = 0.05;

/// One rendered view: image in [−1, 1], per-pixel ray distance and pose.
#[derive(Debug, Clone)]
pub struct View {
    pub image: Tensor<f64>,
    pub depth: DepthMap,
    pub pose: CameraPose,
}

impl View {
    pub fn new<T: Real>(image: &Tensor<T>, depth: DepthMap, pose: CameraPose) -> Self {
        View {
            image: image.cast(),
            depth,
            pose,
        }
    }
}

/// Anything that can render an image and a depth map from a pose.
pub trait ViewSource {
    fn view(&self, pose: &CameraPose) -> Result<View>;
}

/// Errors of one ordered or symmetric view pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairError {
    pub intensity: f64,
    /// Round-trip pixel offset in normalized image units.
    pub coordinate: f64,
    pub pixels: usize,
}

/// The evaluation protocol: yaw fixed at 0, `n` pitches spread evenly over
/// `[−range, range]`.
pub fn reprojection_poses(n: usize, range: f64) -> Vec<CameraPose> {
    (0..n)
        .map(|i| {
            let t = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            CameraPose::from_yaw_pitch(0.0, -range + 2.0 * range * t)
        })
        .collect()
}

fn unproject(view: &View, fov: f64, row: f64, col: f64, dist: f64) -> Vec3 {
    let (u, v) = pixel_uv(row, col, view.depth.h, view.depth.w);
    view.pose.position() + view.pose.ray_dir(fov, u, v) * dist
}

/// Bilinear stencil at continuous pixel coordinates; `None` near the border.
fn bilinear(h: usize, w: usize, col: f64, row: f64) -> Option<[(usize, f64); 4]> {
    if !(col >= 0.0 && row >= 0.0 && col <= (w - 1) as f64 && row <= (h - 1) as f64) {
        return None;
    }
    let (c0, r0) = ((col.floor() as usize).min(w.saturating_sub(2)), (row.floor() as usize).min(h.saturating_sub(2)));
    let (fc, fr) = (col - c0 as f64, row - r0 as f64);
    let (c1, r1) = ((c0 + 1).min(w - 1), (r0 + 1).min(h - 1));
    Some([
        (r0 * w + c0, (1.0 - fr) * (1.0 - fc)),
        (r0 * w + c1, (1.0 - fr) * fc),
        (r1 * w + c0, fr * (1.0 - fc)),
        (r1 * w + c1, fr * fc),
    ])
}

/// Forward-warps the foreground of `a` into `b`.
fn warp(a: &View, b: &View, fov: f64) -> (f64, f64, usize) {
    let (h, w) = (a.depth.h, a.depth.w);
    let (hb, wb) = (b.depth.h, b.depth.w);
    let ch = a.image.shape()[0];
    let (ia, ib) = (a.image.data(), b.image.data());
    let (mut si, mut sc, mut n) = (0.0, 0.0, 0usize);
    for row in 0..h {
        for col in 0..w {
            let Some(da) = a.depth.at(row, col) else { continue };
            let x = unproject(a, fov, row as f64, col as f64, da);
            let Some((cb, rb, dist)) = b.pose.project(fov, hb, wb, &x) else { continue };
            let Some(st) = bilinear(hb, wb, cb, rb) else { continue };
            // every neighbour must see the same surface point
            let mut db = 0.0;
            let mut visible = true;
            for &(p, wt) in &st {
                match b.depth.depth[p] {
                    Some(d) if (d - dist).abs() <= OCCLUSION_TOL => db += wt * d,
                    _ => visible = false,
                }
            }
            if !visible {
                continue;
            }
            let mut e = 0.0;
            for c in 0..ch {
                let vb: f64 = st.iter().map(|&(p, wt)| wt * ib[c * hb * wb + p]).sum();
                e += (ia[c * h * w + row * w + col] - vb).abs();
            }
            si += e / ch as f64;
            // back through b's depth into a
            let xb = unproject(b, fov, rb, cb, db);
            if let Some((ca, ra, _)) = a.pose.project(fov, h, w, &xb) {
                sc += ((ca - col as f64).abs() * 2.0 / w as f64 + (ra - row as f64).abs() * 2.0 / h as f64) / 2.0;
            }
            n += 1;
        }
    }
    (si, sc, n)
}

/// Symmetric warp error of two views.
pub fn pair_error(a: &View, b: &View, fov: f64) -> Result<PairError> {
    let (i1, c1, n1) = warp(a, b, fov);
    let (i2, c2, n2) = warp(b, a, fov);
    let n = n1 + n2;
    if n == 0 {
        return Err(VganError::Metric("no pixel survives the warp between the views".into()));
    }
    Ok(PairError {
        intensity: (i1 + i2) / n as f64,
        coordinate: (c1 + c2) / n as f64,
        pixels: n,
    })
}

/// Mean pair errors over consecutive views.
#[derive(Debug, Clone, PartialEq)]
pub struct Reprojection {
    pub intensity: f64,
    pub coordinate: f64,
    pub pairs: Vec<PairError>,
}

pub fn reprojection_error(views: &[View], fov: f64) -> Result<Reprojection> {
    if views.len() < 2 {
        return Err(VganError::Metric("reprojection needs at least two views".into()));
    }
    if views.iter().any(|v| v.depth.coverage() == 0.0) {
        return Err(VganError::Metric("a view has no foreground depth".into()));
    }
    let pairs = views
        .windows(2)
        .map(|p| pair_error(&p[0], &p[1], fov))
        .collect::<Result<Vec<_>>>()?;
    let k = pairs.len() as f64;
    Ok(Reprojection {
        intensity: pairs.iter().map(|p| p.intensity).sum::<f64>() / k,
        coordinate: pairs.iter().map(|p| p.coordinate).sum::<f64>() / k,
        pairs,
    })
}

/// Views of `source` at the protocol poses.
pub fn render_views<S: ViewSource + Sync>(source: &S, poses: &[CameraPose]) -> Result<Vec<View>> {
    use rayon::prelude::*;
    poses.par_iter().map(|p| source.view(p)).collect()
}

/// Adds `amplitude · noise[i]` to every foreground depth.
pub fn perturb_depth(depth: &DepthMap, noise: &[f64], amplitude: f64) -> DepthMap {
    let mut out = depth.clone();
    for (d, n) in out.depth.iter_mut().zip(noise) {
        if let Some(v) = d {
            *v += amplitude * n;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_view(pose: CameraPose) -> View {
        let res = 16;
        let image = Tensor::from_fn(&[3, res, res], |i| ((i % res) as f64 / res as f64) - 0.5);
        let depth = DepthMap {
            h: res,
            w: res,
            depth: vec![Some(1.0); res * res],
        };
        View { image, depth, pose }
    }

    #[test]
    fn identical_views_have_zero_error() {
        let v = flat_view(CameraPose::from_yaw_pitch(0.0, 0.1));
        let e = pair_error(&v, &v, 30.0).unwrap();
        assert!(e.intensity < 1e-12 && e.coordinate < 1e-12);
        assert!(e.pixels > 400);
    }

    #[test]
    fn protocol_poses() {
        let p = reprojection_poses(5, 0.3);
        assert_eq!(p.len(), 5);
        assert!((p[0].pitch() + 0.3).abs() < 1e-12 && (p[4].pitch() - 0.3).abs() < 1e-12);
        assert!(p.iter().all(|q| q.yaw().abs() < 1e-12));
    }
}
