//! Geometry extraction and 3D-consistency metrics: marching cubes, mesh
//! depth, reprojection error, Fréchet feature distance and pose error.

mod depth;
mod frechet;
mod mesh;
mod reproj;
mod tables;

use std::collections::BTreeMap;
use std::path::Path;

use diffcore::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use depth::render_mesh_depth;
pub use frechet::{frechet_distance, FeatureExtractor, Features, PooledProjection};
pub use mesh::{lattice_coord, lattice_points, marching_cubes, Mesh};
pub use reproj::{
    pair_error, perturb_depth, render_views, reprojection_error, reprojection_poses, PairError, Reprojection, View, ViewSource,
    OCCLUSION_TOL,
};

use crate::camera::{ray_grid, CameraConfig, CameraPose};
use crate::error::{io_err, Result, VganError};
use crate::generator::{CodeBundle, Frozen, Generator};

/// Density level of the extracted surface.
pub const DEFAULT_THRESHOLD: f64 = 10.0;

/// Isosurface of the generator's density for one latent on a `grid_res³`
/// lattice over [−1, 1]³.
pub fn extract_mesh<T: Real>(g: &Generator<T>, frozen: &Frozen<T>, grid_res: usize, threshold: f64) -> Result<Mesh> {
    if grid_res < 8 {
        return Err(VganError::Invalid(format!("grid resolution {grid_res} is below 8")));
    }
    let pts = lattice_points(grid_res);
    let sigma = g.density(frozen, &pts)?;
    marching_cubes(&sigma, grid_res, threshold)
}

/// A named scalar with its per-item breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub breakdown: Vec<f64>,
    pub extra: BTreeMap<String, f64>,
    pub provenance: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(metric: &str, value: f64) -> Self {
        MetricReport {
            metric: metric.to_string(),
            value,
            breakdown: Vec::new(),
            extra: BTreeMap::new(),
            provenance: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.provenance.insert(key.to_string(), value.to_string());
        self
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut lines = vec![format!("metric={}", self.metric), format!("value={}", self.value)];
        lines.extend(self.breakdown.iter().enumerate().map(|(i, v)| format!("item.{i}={v}")));
        lines.extend(self.extra.iter().map(|(k, v)| format!("{k}={v}")));
        lines.extend(self.provenance.iter().map(|(k, v)| format!("config.{k}={v}")));
        lines.join("\n") + "\n"
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<stem>.txt` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.to_text()).map_err(io_err(&txt))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()).map_err(io_err(&json))
    }
}

/// Generated views with depth rendered from a fixed extracted mesh.
pub struct GeneratorViews<'a, T: Real> {
    pub g: &'a Generator<T>,
    pub codes: &'a CodeBundle<T>,
    pub mesh: &'a Mesh,
    pub camera: &'a CameraConfig,
}

impl<T: Real> ViewSource for GeneratorViews<'_, T> {
    fn view(&self, pose: &CameraPose) -> Result<View> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rays = ray_grid(pose, self.camera, false, &mut rng);
        let image = self.g.render(self.codes, &rays)?;
        let res = image.shape()[1];
        let depth = render_mesh_depth(self.mesh, pose, self.camera.fov, res, self.camera.near, self.camera.far);
        Ok(View::new(&image, depth, *pose))
    }
}

/// Reprojection error of generated views at the evaluation poses.
pub fn generator_reprojection<T: Real>(
    g: &Generator<T>,
    codes: &CodeBundle<T>,
    camera: &CameraConfig,
    grid_res: usize,
    threshold: f64,
) -> Result<MetricReport> {
    let frozen = g.freeze(codes)?;
    let mesh = extract_mesh(g, &frozen, grid_res, threshold)?;
    if mesh.is_empty() {
        return Err(VganError::Metric(format!("no surface at density {threshold}")));
    }
    let poses = reprojection_poses(5, 0.3);
    let views = render_views(
        &GeneratorViews {
            g,
            codes,
            mesh: &mesh,
            camera,
        },
        &poses,
    )?;
    Ok(reprojection_report(&reprojection_error(&views, camera.fov)?)
        .with("grid_res", grid_res)
        .with("threshold", threshold)
        .with("fov", camera.fov))
}

pub fn reprojection_report(r: &Reprojection) -> MetricReport {
    let mut rep = MetricReport::new("reprojection_error", r.intensity);
    rep.breakdown = r.pairs.iter().map(|p| p.intensity).collect();
    rep.extra.insert("coordinate_error".into(), r.coordinate);
    rep.provenance.insert("headline".into(), "intensity".into());
    rep
}

/// One line per sample: `id yaw_deg pitch_deg`. Blank lines and `#`
/// comments are skipped.
pub fn parse_pose_file(text: &str) -> Result<Vec<(String, f64, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || VganError::Data(format!("pose line {}: expected `id yaw_deg pitch_deg`", i + 1));
        if f.len() != 3 {
            return Err(bad());
        }
        let yaw = f[1].parse().map_err(|_| bad())?;
        let pitch = f[2].parse().map_err(|_| bad())?;
        out.push((f[0].to_string(), yaw, pitch));
    }
    Ok(out)
}

pub fn format_pose_file(poses: &[(String, f64, f64)]) -> String {
    poses.iter().map(|(id, y, p)| format!("{id} {y} {p}\n")).collect()
}

/// Mean over samples of `|Δyaw| + |Δpitch|` in degrees; samples are
/// matched by id.
pub fn pose_error(given: &[(String, f64, f64)], predicted: &[(String, f64, f64)]) -> Result<MetricReport> {
    if given.len() != predicted.len() || given.is_empty() {
        return Err(VganError::Metric(format!("{} given poses but {} predictions", given.len(), predicted.len())));
    }
    let lookup: BTreeMap<&str, (f64, f64)> = predicted.iter().map(|(id, y, p)| (id.as_str(), (*y, *p))).collect();
    let mut per = Vec::with_capacity(given.len());
    for (id, y, p) in given {
        let (py, pp) = lookup
            .get(id.as_str())
            .ok_or_else(|| VganError::Metric(format!("no prediction for sample {id}")))?;
        per.push((y - py).abs() + (p - pp).abs());
    }
    let mut rep = MetricReport::new("pose_error_deg", per.iter().sum::<f64>() / per.len() as f64);
    rep.breakdown = per;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poses(v: &[(f64, f64)]) -> Vec<(String, f64, f64)> {
        v.iter().enumerate().map(|(i, &(y, p))| (i.to_string(), y, p)).collect()
    }

    #[test]
    fn pose_error_examples() {
        let g = poses(&[(10.0, 5.0), (-3.0, 0.0)]);
        assert_eq!(pose_error(&g, &g).unwrap().value, 0.0);
        let one = pose_error(&poses(&[(0.0, 0.0)]), &poses(&[(0.0, 2.0)])).unwrap();
        assert!((one.value - 2.0).abs() < 1e-12);
        let p = poses(&[(11.0, 5.0), (-3.0, 3.0)]);
        let r = pose_error(&g, &p).unwrap();
        assert!((r.breakdown.iter().sum::<f64>() / 2.0 - r.value).abs() < 1e-12);
        assert!(pose_error(&g, &p[..1]).is_err());
    }

    #[test]
    fn pose_file_round_trip() {
        let p = poses(&[(1.5, -2.25), (0.0, 30.0)]);
        assert_eq!(parse_pose_file(&format_pose_file(&p)).unwrap(), p);
        assert!(parse_pose_file("a 1").is_err());
    }

    #[test]
    fn report_text() {
        let mut r = MetricReport::new("x", 1.5).with("seed", 3);
        r.breakdown = vec![1.0, 2.0];
        let t = r.to_text();
        assert!(t.contains("metric=x\nvalue=1.5\nitem.0=1\nitem.1=2\n"));
        assert!(t.contains("config.seed=3"));
        assert!(r.to_json().contains("\"value\": 1.5"));
    }
}
