use std::fmt::Write as _;
use std::path::Path;

use diffcore::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::{generate_rays, sample_pose, CameraConfig, CameraPose, Vec3};
use crate::error::{io_err, Result, VganError};
use crate::evalkit::{Mesh, View, ViewSource};
use crate::renderer::DepthMap;

use super::image_io::{read_image, write_image};

/// Primitives must fit inside `[−EXTENT, EXTENT]³`.
pub const EXTENT: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Cuboid { center: Vec3, half: Vec3 },
}

impl Shape {
    pub fn center(&self) -> Vec3 {
        match *self {
            Shape::Sphere { center, .. } | Shape::Cuboid { center, .. } => center,
        }
    }

    /// Nearest hit distance and outward normal.
    fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let b = oc.dot(d);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                (t > 0.0).then(|| (t, (o + d * t - center) / radius))
            }
            Shape::Cuboid { center, half } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = 0;
                for a in 0..3 {
                    let inv = 1.0 / d[a];
                    let lo = (center[a] - half[a] - o[a]) * inv;
                    let hi = (center[a] + half[a] - o[a]) * inv;
                    let (lo, hi) = if lo < hi { (lo, hi) } else { (hi, lo) };
                    if lo > t0 {
                        t0 = lo;
                        axis = a;
                    }
                    t1 = t1.min(hi);
                }
                if t0 > t1 || t0 <= 0.0 {
                    return None;
                }
                let mut n = Vec3::zeros();
                n[axis] = -d[axis].signum();
                Some((t0, n))
            }
        }
    }

    fn mesh(&self) -> Mesh {
        match *self {
            Shape::Sphere { center, radius } => Mesh::uv_sphere(center, radius, 64, 128),
            Shape::Cuboid { center, half } => Mesh::cuboid(center, half),
        }
    }

    fn fits(&self) -> bool {
        match *self {
            Shape::Sphere { center, radius } => center.iter().all(|c| c.abs() + radius <= EXTENT + 1e-12),
            Shape::Cuboid { center, half } => (0..3).all(|a| center[a].abs() + half[a] <= EXTENT + 1e-12),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Object {
    pub shape: Shape,
    /// Albedo in [0, 1].
    pub color: [f64; 3],
}

/// Lambertian objects under one directional light.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<Object>,
    pub light: Vec3,
    pub ambient: f64,
    /// Background value in [0, 1].
    pub background: f64,
}

impl Scene {
    pub fn hit(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3, usize)> {
        let mut best: Option<(f64, Vec3, usize)> = None;
        for (i, obj) in self.objects.iter().enumerate() {
            if let Some((t, n)) = obj.shape.intersect(o, d) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, n, i));
                }
            }
        }
        best
    }

    fn shade(&self, o: &Vec3, d: &Vec3) -> [f64; 3] {
        match self.hit(o, d) {
            None => [self.background; 3],
            Some((_, n, i)) => {
                let lambert = n.dot(&self.light.normalize()).max(0.0);
                let k = self.ambient + (1.0 - self.ambient) * lambert;
                self.objects[i].color.map(|c| c * k)
            }
        }
    }

    /// `[3, res, res]` image in [−1, 1].
    pub fn render<T: Real>(&self, pose: &CameraPose, fov: f64, res: usize) -> Tensor<T> {
        let dirs = generate_rays(pose, fov, res, res);
        let o = pose.position();
        let px: Vec<[f64; 3]> = dirs.par_iter().map(|d| self.shade(&o, d)).collect();
        let n = res * res;
        Tensor::from_fn(&[3, res, res], |i| T::lit(2.0 * px[i % n][i / n] - 1.0))
    }

    /// Exact per-pixel ray distance.
    pub fn depth(&self, pose: &CameraPose, fov: f64, res: usize) -> DepthMap {
        let o = pose.position();
        let depth = generate_rays(pose, fov, res, res)
            .iter()
            .map(|d| self.hit(&o, d).map(|h| h.0))
            .collect();
        DepthMap { h: res, w: res, depth }
    }

    /// Triangulated surface; boxes are exact, spheres finely tessellated.
    pub fn mesh(&self) -> Mesh {
        let mut m = Mesh::default();
        for o in &self.objects {
            m.append(&o.shape.mesh());
        }
        m
    }
}

/// Renders a scene with depth taken from a mesh or from the analytic
/// surfaces.
pub struct SceneViews<'a> {
    pub scene: &'a Scene,
    pub mesh: Option<&'a Mesh>,
    pub fov: f64,
    pub res: usize,
}

impl ViewSource for SceneViews<'_> {
    fn view(&self, pose: &CameraPose) -> Result<View> {
        let image: Tensor<f64> = self.scene.render(pose, self.fov, self.res);
        let depth = match self.mesh {
            Some(m) => crate::evalkit::render_mesh_depth(m, pose, self.fov, self.res, 0.0, f64::INFINITY),
            None => self.scene.depth(pose, self.fov, self.res),
        };
        Ok(View::new(&image, depth, *pose))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneConfig {
    pub count: usize,
    pub resolution: usize,
    pub camera: CameraConfig,
    pub spheres: bool,
    pub boxes: bool,
    pub max_objects: usize,
    /// Sphere radius / box half-extent range.
    pub size_range: [f64; 2],
    /// Objects are centered within this distance of the origin per axis.
    pub spread: f64,
    pub color_range: [f64; 2],
    pub light: [f64; 3],
    pub ambient: f64,
    pub background: f64,
    pub seed: u64,
}

impl SyntheticSceneConfig {
    /// Small objects near the origin seen by `camera`.
    pub fn desk(count: usize, resolution: usize, camera: CameraConfig, seed: u64) -> Self {
        SyntheticSceneConfig {
            count,
            resolution,
            camera,
            spheres: true,
            boxes: true,
            max_objects: 2,
            size_range: [0.08, 0.18],
            spread: 0.08,
            color_range: [0.25, 1.0],
            light: [0.4, 0.8, 0.6],
            ambient: 0.25,
            background: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VganError::Config(m));
        if self.count == 0 || self.resolution == 0 || self.max_objects == 0 {
            return bad("synthetic count, resolution and max_objects must be positive".into());
        }
        if !self.spheres && !self.boxes {
            return bad("enable at least one primitive kind".into());
        }
        let [lo, hi] = self.size_range;
        if !(lo > 0.0 && lo <= hi && self.spread >= 0.0 && self.spread + hi <= EXTENT) {
            return bad(format!("primitives must fit in [-{EXTENT}, {EXTENT}]³"));
        }
        let [c0, c1] = self.color_range;
        if !(0.0..=1.0).contains(&c0) || !(0.0..=1.0).contains(&c1) || c0 > c1 {
            return bad("color range must lie in [0, 1]".into());
        }
        self.camera.validate()
    }

    fn sample_scene<R: Rng>(&self, rng: &mut R) -> Scene {
        let n = rng.random_range(1..=self.max_objects);
        let objects = (0..n)
            .map(|_| {
                let center = Vec3::new(
                    rng.random_range(-self.spread..=self.spread),
                    rng.random_range(-self.spread..=self.spread),
                    rng.random_range(-self.spread..=self.spread),
                );
                let sphere = match (self.spheres, self.boxes) {
                    (true, true) => rng.random_bool(0.5),
                    (s, _) => s,
                };
                let mut size = || rng.random_range(self.size_range[0]..=self.size_range[1]);
                let shape = if sphere {
                    Shape::Sphere { center, radius: size() }
                } else {
                    Shape::Cuboid {
                        center,
                        half: Vec3::new(size(), size(), size()),
                    }
                };
                let color = [0; 3].map(|_| rng.random_range(self.color_range[0]..=self.color_range[1]));
                Object { shape, color }
            })
            .collect();
        Scene {
            objects,
            light: Vec3::from(self.light),
            ambient: self.ambient,
            background: self.background,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticRecord<T> {
    pub image: Tensor<T>,
    pub pose: CameraPose,
    pub scene: Scene,
}

/// Random scenes rendered from poses drawn from the camera prior.
pub fn generate_synthetic<T: Real>(cfg: &SyntheticSceneConfig) -> Result<Vec<SyntheticRecord<T>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draws: Vec<(Scene, CameraPose)> = (0..cfg.count)
        .map(|_| {
            let scene = cfg.sample_scene(&mut rng);
            (scene, sample_pose(&cfg.camera, &mut rng))
        })
        .collect();
    debug_assert!(draws.iter().all(|(s, _)| s.objects.iter().all(|o| o.shape.fits())));
    Ok(draws
        .into_iter()
        .map(|(scene, pose)| SyntheticRecord {
            image: scene.render(&pose, cfg.camera.fov, cfg.resolution),
            pose,
            scene,
        })
        .collect())
}

fn scene_lines(id: usize, s: &Scene, out: &mut String) {
    for o in &s.objects {
        let [r, g, b] = o.color;
        let _ = match o.shape {
            Shape::Sphere { center: c, radius } => writeln!(out, "{id} sphere {} {} {} {radius} {radius} {radius} {r} {g} {b}", c.x, c.y, c.z),
            Shape::Cuboid { center: c, half: h } => writeln!(out, "{id} box {} {} {} {} {} {} {r} {g} {b}", c.x, c.y, c.z, h.x, h.y, h.z),
        };
    }
}

/// Writes `<id>.ppm` images, `poses.txt` (`id yaw pitch radius`, radians)
/// and `scene.txt` (`id kind cx cy cz sx sy sz r g b`, one line per object).
pub fn save_synthetic<T: Real>(dir: &Path, records: &[SyntheticRecord<T>]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut poses = String::new();
    let mut scenes = String::new();
    if let Some(r) = records.first() {
        let l = r.scene.light;
        let _ = writeln!(scenes, "# light {} {} {} ambient {} background {}", l.x, l.y, l.z, r.scene.ambient, r.scene.background);
    }
    for (i, r) in records.iter().enumerate() {
        write_image(&dir.join(format!("{i:06}.ppm")), &r.image)?;
        let _ = writeln!(poses, "{i} {} {} {}", r.pose.yaw(), r.pose.pitch(), r.pose.radius);
        scene_lines(i, &r.scene, &mut scenes);
    }
    let p = dir.join("poses.txt");
    std::fs::write(&p, poses).map_err(io_err(&p))?;
    let p = dir.join("scene.txt");
    std::fs::write(&p, scenes).map_err(io_err(&p))
}

fn parse_floats(fields: &[&str], line: usize, file: &str) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| f.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| VganError::Data(format!("{file} line {line}: {e}")))
}

/// Reads a directory written by [`save_synthetic`].
pub fn load_synthetic<T: Real>(dir: &Path) -> Result<Vec<SyntheticRecord<T>>> {
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(io_err(&p))
    };
    let poses_txt = read("poses.txt")?;
    let scene_txt = read("scene.txt")?;
    let mut light = Vec3::new(0.4, 0.8, 0.6);
    let (mut ambient, mut background) = (0.25, 0.0);
    let mut objects: Vec<Vec<Object>> = Vec::new();
    for (ln, line) in scene_txt.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.first() == Some(&"#") {
            if f.len() == 9 && f[1] == "light" {
                let v = parse_floats(&[f[2], f[3], f[4], f[6], f[8]], ln + 1, "scene.txt")?;
                light = Vec3::new(v[0], v[1], v[2]);
                ambient = v[3];
                background = v[4];
            }
            continue;
        }
        if f.is_empty() {
            continue;
        }
        if f.len() != 11 {
            return Err(VganError::Data(format!("scene.txt line {}: expected 11 fields", ln + 1)));
        }
        let id: usize = f[0].parse().map_err(|_| VganError::Data(format!("scene.txt line {}: bad id", ln + 1)))?;
        let v = parse_floats(&f[2..], ln + 1, "scene.txt")?;
        let center = Vec3::new(v[0], v[1], v[2]);
        let shape = match f[1] {
            "sphere" => Shape::Sphere { center, radius: v[3] },
            "box" => Shape::Cuboid {
                center,
                half: Vec3::new(v[3], v[4], v[5]),
            },
            k => return Err(VganError::Data(format!("scene.txt line {}: unknown kind {k}", ln + 1))),
        };
        if objects.len() <= id {
            objects.resize(id + 1, Vec::new());
        }
        objects[id].push(Object {
            shape,
            color: [v[6], v[7], v[8]],
        });
    }
    let mut out = Vec::new();
    for (ln, line) in poses_txt.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(VganError::Data(format!("poses.txt line {}: expected `id yaw pitch radius`", ln + 1)));
        }
        let id: usize = f[0].parse().map_err(|_| VganError::Data(format!("poses.txt line {}: bad id", ln + 1)))?;
        let v = parse_floats(&f[1..], ln + 1, "poses.txt")?;
        let mut pose = CameraPose::from_yaw_pitch(v[0], v[1]);
        pose.radius = v[2];
        out.push(SyntheticRecord {
            image: read_image(&dir.join(format!("{id:06}.ppm")))?,
            pose,
            scene: Scene {
                objects: objects.get(id).cloned().unwrap_or_default(),
                light,
                ambient,
                background,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::SampleDist;

    fn camera() -> CameraConfig {
        CameraConfig {
            fov: 30.0,
            near: 0.5,
            far: 1.5,
            n_steps: 12,
            range_h: [1.2, 1.9],
            range_v: [1.3, 1.8],
            sample_dist: SampleDist::Uniform,
            ray_res: 16,
        }
    }

    #[test]
    fn centered_sphere_silhouette() {
        let r = 0.2;
        let scene = Scene {
            objects: vec![Object {
                shape: Shape::Sphere { center: Vec3::zeros(), radius: r },
                color: [1.0; 3],
            }],
            light: Vec3::new(0.0, 0.0, 1.0),
            ambient: 1.0,
            background: 0.0,
        };
        let res = 64;
        let img: Tensor<f64> = scene.render(&CameraPose::from_yaw_pitch(0.0, 0.0), 30.0, res);
        // radius in pixels along the middle row
        let row = res / 2;
        let fg = (0..res).filter(|&c| img.data()[row * res + c] > 0.0).count() as f64;
        let f_px = res as f64 / 2.0 / (15f64.to_radians().tan());
        // the silhouette of a sphere at distance 1 subtends asin(r)
        let expect = 2.0 * f_px * (r / (1.0 - r * r).sqrt());
        assert!((fg - expect).abs() <= 2.0, "{fg} vs {expect}");
        // and projects to r·f/depth within a pixel of the rim
        assert!((fg / 2.0 - r * f_px / 1.0).abs() <= 1.5);
    }

    #[test]
    fn count_and_seeds() {
        let cfg = SyntheticSceneConfig::desk(5, 16, camera(), 1);
        let a = generate_synthetic::<f32>(&cfg).unwrap();
        assert_eq!(a.len(), 5);
        let b = generate_synthetic::<f32>(&SyntheticSceneConfig { seed: 2, ..cfg.clone() }).unwrap();
        assert_ne!(a[0].scene, b[0].scene);
        assert_ne!(a[0].pose, b[0].pose);
        for r in &a {
            assert!(r.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(r.scene.objects.iter().all(|o| o.shape.fits()));
        }
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = generate_synthetic::<f32>(&SyntheticSceneConfig::desk(3, 16, camera(), 4)).unwrap();
        save_synthetic(dir.path(), &recs).unwrap();
        let back = load_synthetic::<f32>(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.scene, b.scene);
            assert!((a.pose.theta_h - b.pose.theta_h).abs() < 1e-12);
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                assert!((x - y).abs() <= 0.5 / 127.5 + 1e-6);
            }
        }
    }

    #[test]
    fn box_normals_face_camera() {
        let s = Shape::Cuboid {
            center: Vec3::zeros(),
            half: Vec3::new(0.1, 0.1, 0.1),
        };
        let (t, n) = s.intersect(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert!((t - 0.9).abs() < 1e-12 && n == Vec3::z());
    }
}
