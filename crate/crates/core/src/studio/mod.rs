//! Run configuration, latent-code swapping, descriptor PCA maps and the
//! command implementations behind the `vgan` binary.

mod config;

use std::path::{Path, PathBuf};

use diffcore::{Real, Tensor};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{
    eval_expr, Angle, CameraSection, DatasetSection, DiscriminatorSection, GeneratorSection, OutputSection, RunConfig, SourceKind,
    TrainSection, PRESETS,
};

use crate::adversary::LossReport;
use crate::camera::{ray_grid, CameraConfig, CameraPose, RayGrid};
use crate::dataio::{area_resize, image_grid, open_dataset, write_image, BatchStream};
use crate::error::{invalid, io_err, Result, VganError};
use crate::evalkit::{
    extract_mesh, format_pose_file, frechet_distance, generator_reprojection, parse_pose_file, pose_error, FeatureExtractor,
    MetricReport, Mesh, PooledProjection,
};
use crate::generator::{CodeBundle, Generator};
use crate::nnlayers::LatentCode;
use crate::trainer::{fingerprint, load_checkpoint, load_generator, RunSummary, Trainer};

/// Depth-sampled rays without jitter, so that renders are repeatable.
pub fn fixed_rays(pose: &CameraPose, camera: &CameraConfig) -> RayGrid {
    ray_grid(pose, camera, false, &mut ChaCha8Rng::seed_from_u64(0))
}

/// Latent codes drawn from `seed`, one bundle per index.
pub fn sample_codes<T: Real>(dim: usize, n: usize, seed: u64) -> Vec<CodeBundle<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| CodeBundle::sample(dim, &mut rng)).collect()
}

/// Row i takes the structural code of `structural[i]`; column j takes the
/// field and renderer codes of `textural[j]`. Returns the row-major cells.
pub fn style_mix_cells<T: Real>(
    g: &Generator<T>,
    structural: &[LatentCode<T>],
    textural: &[(LatentCode<T>, LatentCode<T>)],
    pose: &CameraPose,
    camera: &CameraConfig,
) -> Result<Vec<Tensor<T>>> {
    if structural.is_empty() || textural.is_empty() {
        return invalid("style mixing needs at least one row and one column");
    }
    let rays = fixed_rays(pose, camera);
    let bundles: Vec<CodeBundle<T>> = structural
        .iter()
        .flat_map(|s| {
            textural.iter().map(move |(f, r)| CodeBundle {
                z_structural: s.clone(),
                z_field: f.clone(),
                z_renderer: r.clone(),
            })
        })
        .collect();
    bundles.par_iter().map(|b| g.render(b, &rays)).collect()
}

/// The mixing grid as one composite image.
pub fn style_mix<T: Real>(
    g: &Generator<T>,
    structural: &[LatentCode<T>],
    textural: &[(LatentCode<T>, LatentCode<T>)],
    pose: &CameraPose,
    camera: &CameraConfig,
) -> Result<Tensor<T>> {
    image_grid(&style_mix_cells(g, structural, textural, pose, camera)?, textural.len())
}

/// Top-3 principal axes of a row set.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca3 {
    pub mean: Vec<f64>,
    /// Unit component vectors by decreasing variance; all-zero when the
    /// input has fewer than three dimensions.
    pub components: [Vec<f64>; 3],
    pub variances: [f64; 3],
    /// Per-row coordinates along the components.
    pub projected: Vec<[f64; 3]>,
}

impl Pca3 {
    /// Row `i` mapped back from its three coordinates.
    pub fn reconstruct(&self, i: usize) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &a) in self.components.iter().zip(&self.projected[i]) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += a * v;
            }
        }
        out
    }
}

/// Mean-centered covariance eigendecomposition keeping three components.
pub fn pca3(rows: &[Vec<f64>]) -> Result<Pca3> {
    let d = rows.first().map_or(0, Vec::len);
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return invalid("PCA needs non-empty rows of equal length");
    }
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components: [Vec<f64>; 3] = Default::default();
    let mut variances = [0.0; 3];
    for k in 0..3 {
        components[k] = match order.get(k) {
            Some(&c) => {
                variances[k] = eig.eigenvalues[c].max(0.0);
                eig.eigenvectors.column(c).iter().copied().collect()
            }
            None => vec![0.0; d],
        };
    }
    let projected = (0..n)
        .map(|i| {
            let mut p = [0.0; 3];
            for (k, c) in components.iter().enumerate() {
                p[k] = (0..d).map(|j| x[(i, j)] * c[j]).sum();
            }
            p
        })
        .collect();
    Ok(Pca3 {
        mean,
        components,
        variances,
        projected,
    })
}

/// Descriptor PCA map: channels hold values in [0, 255].
#[derive(Debug, Clone)]
pub struct PcaMap {
    pub pca: Pca3,
    pub channels: Tensor<f64>,
}

impl PcaMap {
    /// The map as an image in [−1, 1] for [`write_image`].
    pub fn to_image(&self) -> Tensor<f64> {
        self.channels.map(|v| v / 127.5 - 1.0)
    }
}

/// Coordinate descriptors accumulated along each ray with the rendering
/// weights, reduced to three principal components and min-max scaled per
/// channel.
pub fn descriptor_pca<T: Real>(g: &Generator<T>, codes: &CodeBundle<T>, pose: &CameraPose, camera: &CameraConfig) -> Result<PcaMap> {
    let rays = fixed_rays(pose, camera);
    let trace = g.trace(codes, &rays)?;
    let c = trace.descriptors.shape()[1];
    let desc = trace.descriptors.to_f64_vec();
    let n = rays.n_steps;
    let rows: Vec<Vec<f64>> = trace
        .weights
        .iter()
        .enumerate()
        .map(|(r, w)| {
            let mut acc = vec![0.0; c];
            for (k, wk) in w.weights.iter().enumerate() {
                let v = &desc[(r * n + k) * c..(r * n + k + 1) * c];
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += wk * x;
                }
            }
            acc
        })
        .collect();
    let pca = pca3(&rows)?;
    let (h, w) = (rays.h, rays.w);
    let mut channels = Tensor::zeros(&[3, h, w]);
    let data = channels.data_mut();
    for k in 0..3 {
        let (lo, hi) = pca
            .projected
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[k]), hi.max(p[k])));
        if hi - lo > 1e-12 * (1.0 + hi.abs().max(lo.abs())) {
            for (p, proj) in pca.projected.iter().enumerate() {
                data[k * h * w + p] = 255.0 * (proj[k] - lo) / (hi - lo);
            }
        }
    }
    Ok(PcaMap { pca, channels })
}

/// A generator restored from a checkpoint written under `cfg`.
pub fn open_generator<T: Real>(cfg: &RunConfig, checkpoint: &Path) -> Result<Generator<T>> {
    let camera = cfg.camera_config()?;
    let (g_arch, d_arch, train) = (cfg.generator_arch(), cfg.disc_arch(), cfg.train_config());
    let hash = fingerprint(&g_arch, &d_arch, &camera, &train);
    let state = load_checkpoint::<T>(checkpoint, Some(hash))?;
    let mut g = Generator::new(g_arch, &mut ChaCha8Rng::seed_from_u64(0))?;
    load_generator(&mut g, &state)?;
    Ok(g)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Trains under `cfg`, writing checkpoints, sample grids, `config.toml`
/// and `losses.csv` to `out`. `resume` continues from a checkpoint.
pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>, max_steps: Option<u64>) -> Result<RunSummary> {
    ensure_dir(out)?;
    cfg.save(&out.join("config.toml"))?;
    let data = open_dataset::<f32>(&cfg.dataset_spec()?)?;
    log::info!("dataset: {} images at {}²", data.len(), data.resolution);
    let mut trainer = Trainer::<f32>::new(cfg.generator_arch(), cfg.disc_arch(), cfg.camera_config()?, cfg.train_config())?;
    let mut stream = BatchStream::new(data.len(), cfg.train.batch, cfg.dataset.shuffle_seed)?;
    if let Some(path) = resume {
        let state = load_checkpoint(path, Some(trainer.config_hash))?;
        let (epoch, pos) = trainer.restore(&state)?;
        stream.seek(epoch, pos)?;
        log::info!("resumed at step {} ({} images)", trainer.step, trainer.images_seen);
    }
    let opts = crate::trainer::ScheduleOptions {
        out_dir: Some(out.to_path_buf()),
        max_steps,
        ..cfg.schedule_options()
    };
    let mut log_rows = String::from("step,images,res,g_loss,d_loss_real,d_loss_fake,r1,d_accuracy\n");
    let summary = trainer.run_schedule(&data, &mut stream, &opts, |t, r: &LossReport| {
        let (res, _, _) = t.phase();
        log_rows.push_str(&format!(
            "{},{},{res},{},{},{},{},{}\n",
            t.step, t.images_seen, r.g_loss, r.d_loss_real, r.d_loss_fake, r.r1_penalty, r.d_accuracy
        ));
        if t.step % 50 == 0 {
            log::info!(
                "step {} ({}k images, {res}²): g {:.4} d {:.4} r1 {:.4} acc {:.2}",
                t.step,
                t.images_seen / 1000,
                r.g_loss,
                r.d_loss(),
                r.r1_penalty,
                r.d_accuracy
            );
        }
        Ok(())
    })?;
    let path = out.join("losses.csv");
    std::fs::write(&path, log_rows).map_err(io_err(&path))?;
    Ok(summary)
}

/// `n` poses across the middle 80% of the configured yaw range at zero
/// pitch offset.
pub fn orbit_poses(camera: &CameraConfig, n: usize) -> Vec<CameraPose> {
    let [h0, h1] = camera.range_h;
    let mid_v = 0.5 * (camera.range_v[0] + camera.range_v[1]);
    (0..n)
        .map(|i| {
            let t = if n == 1 { 0.5 } else { 0.1 + 0.8 * i as f64 / (n - 1) as f64 };
            CameraPose::new(h0 + (h1 - h0) * t, mid_v)
        })
        .collect()
}

/// Poses from a file of `id yaw_deg pitch_deg` lines.
pub fn read_pose_list(path: &Path) -> Result<Vec<CameraPose>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(parse_pose_file(&text)?
        .into_iter()
        .map(|(_, y, p)| CameraPose::from_yaw_pitch(y.to_radians(), p.to_radians()))
        .collect())
}

/// One image per pose, `view_{index:03}.png`, all from the code of `seed`.
pub fn cmd_render(cfg: &RunConfig, checkpoint: &Path, seed: u64, poses: &[CameraPose], out: &Path) -> Result<Vec<PathBuf>> {
    let g = open_generator::<f32>(cfg, checkpoint)?;
    let camera = cfg.camera_config()?;
    let codes = &sample_codes::<f32>(g.arch().latent_dim, 1, seed)[0];
    ensure_dir(out)?;
    let images: Vec<Tensor<f32>> = poses
        .par_iter()
        .map(|p| g.render(codes, &fixed_rays(p, &camera)))
        .collect::<Result<_>>()?;
    let mut paths = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let path = out.join(format!("view_{i:03}.png"));
        write_image(&path, img)?;
        paths.push(path);
    }
    let listing: Vec<(String, f64, f64)> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("{i:03}"), p.yaw().to_degrees(), p.pitch().to_degrees()))
        .collect();
    let path = out.join("poses.txt");
    std::fs::write(&path, format_pose_file(&listing)).map_err(io_err(&path))?;
    Ok(paths)
}

/// Writes `mesh_{seed}.obj`; an empty surface is written with a warning.
pub fn cmd_mesh(cfg: &RunConfig, checkpoint: &Path, seed: u64, grid_res: usize, threshold: f64, out: &Path) -> Result<(PathBuf, Mesh)> {
    let g = open_generator::<f32>(cfg, checkpoint)?;
    let codes = &sample_codes::<f32>(g.arch().latent_dim, 1, seed)[0];
    let mesh = extract_mesh(&g, &g.freeze(codes)?, grid_res, threshold)?;
    if mesh.is_empty() {
        log::warn!("no density above {threshold} on the {grid_res}³ grid; writing an empty mesh");
    }
    let path = out.join(format!("mesh_{seed}.obj"));
    mesh.write_obj(&path)?;
    Ok((path, mesh))
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricKind {
    Reprojection { grid_res: usize, threshold: f64 },
    Frechet { samples: usize },
    /// Compares two pose files of `id yaw_deg pitch_deg` lines.
    Pose { given: PathBuf, predicted: PathBuf },
}

impl MetricKind {
    pub fn stem(&self) -> &'static str {
        match self {
            MetricKind::Reprojection { .. } => "reprojection",
            MetricKind::Frechet { .. } => "frechet",
            MetricKind::Pose { .. } => "pose",
        }
    }
}

/// Generated images at the training resolution for codes drawn from
/// `seed` and poses from the camera prior.
pub fn generate_samples<T: Real>(g: &Generator<T>, camera: &CameraConfig, n: usize, seed: u64) -> Result<Vec<Tensor<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<(CodeBundle<T>, RayGrid)> = (0..n)
        .map(|_| {
            let codes = CodeBundle::sample(g.arch().latent_dim, &mut rng);
            let pose = crate::camera::sample_pose(camera, &mut rng);
            (codes, ray_grid(&pose, camera, false, &mut rng))
        })
        .collect();
    jobs.par_iter().map(|(c, r)| g.render(c, r)).collect()
}

/// Computes one metric and writes `{stem}.txt` and `{stem}.json` to `out`.
pub fn cmd_metrics(cfg: &RunConfig, checkpoint: Option<&Path>, which: &MetricKind, seed: u64, out: &Path) -> Result<MetricReport> {
    let need_g = || checkpoint.ok_or_else(|| VganError::Config("this metric needs --checkpoint".into()));
    let camera = cfg.camera_config()?;
    let report = match which {
        MetricKind::Reprojection { grid_res, threshold } => {
            let g = open_generator::<f32>(cfg, need_g()?)?;
            let codes = &sample_codes::<f32>(g.arch().latent_dim, 1, seed)[0];
            generator_reprojection(&g, codes, &camera, *grid_res, *threshold)?
        }
        MetricKind::Frechet { samples } => {
            let g = open_generator::<f32>(cfg, need_g()?)?;
            let fakes = generate_samples(&g, &camera, *samples, seed)?;
            let data = open_dataset::<f32>(&cfg.dataset_spec()?)?;
            let res = fakes[0].shape()[1];
            let reals: Vec<Tensor<f32>> = data.images.iter().take(*samples).map(|i| area_resize(i, res, res)).collect();
            let fx = PooledProjection::default();
            let fd = frechet_distance(&fx.extract(&reals)?, &fx.extract(&fakes)?)?;
            MetricReport::new("frechet_distance", fd)
                .with("extractor", "pooled_projection")
                .with("samples", samples)
        }
        MetricKind::Pose { given, predicted } => {
            let read = |p: &Path| std::fs::read_to_string(p).map_err(io_err(p)).and_then(|t| parse_pose_file(&t));
            pose_error(&read(given)?, &read(predicted)?)?
        }
    };
    let report = report.with("config", &cfg.name).with("seed", seed);
    report.write(out, which.stem())?;
    Ok(report)
}

/// `rows × cols` mixing grid written to `mix.png`; structural codes come
/// from `seed`, textural codes from `seed + 1`.
pub fn cmd_mix(cfg: &RunConfig, checkpoint: &Path, seed: u64, rows: usize, cols: usize, pose: &CameraPose, out: &Path) -> Result<PathBuf> {
    let g = open_generator::<f32>(cfg, checkpoint)?;
    let dim = g.arch().latent_dim;
    let structural: Vec<LatentCode<f32>> = sample_codes(dim, rows, seed).into_iter().map(|c| c.z_structural).collect();
    let textural: Vec<_> = sample_codes(dim, cols, seed.wrapping_add(1))
        .into_iter()
        .map(|c: CodeBundle<f32>| (c.z_field, c.z_renderer))
        .collect();
    let grid = style_mix(&g, &structural, &textural, pose, &cfg.camera_config()?)?;
    let path = out.join("mix.png");
    write_image(&path, &grid)?;
    Ok(path)
}

/// Descriptor PCA map written to `pca_{seed}.png` next to the plain render
/// `render_{seed}.png`.
pub fn cmd_pcaviz(cfg: &RunConfig, checkpoint: &Path, seed: u64, pose: &CameraPose, out: &Path) -> Result<PathBuf> {
    let g = open_generator::<f32>(cfg, checkpoint)?;
    let camera = cfg.camera_config()?;
    let codes = &sample_codes::<f32>(g.arch().latent_dim, 1, seed)[0];
    let map = descriptor_pca(&g, codes, pose, &camera)?;
    let path = out.join(format!("pca_{seed}.png"));
    write_image(&path, &map.to_image())?;
    write_image(&out.join(format!("render_{seed}.png")), &g.render(codes, &fixed_rays(pose, &camera))?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn pca_recovers_planar_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis: Vec<Vec<f64>> = (0..3).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let a: [f64; 3] = [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)];
                (0..6).map(|j| 0.3 + (0..3).map(|k| a[k] * basis[k][j]).sum::<f64>()).collect()
            })
            .collect();
        let p = pca3(&rows).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let back = p.reconstruct(i);
            assert!(r.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-6));
        }
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = p.components[a].iter().zip(&p.components[b]).map(|(x, y)| x * y).sum();
                assert!((dot - f64::from(u8::from(a == b))).abs() < 1e-8);
            }
        }
        assert!(p.variances[0] >= p.variances[1] && p.variances[1] >= p.variances[2]);
    }

    #[test]
    fn pca_pads_low_dimensional_input() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0 - i as f64]).collect();
        let p = pca3(&rows).unwrap();
        assert_eq!(p.components[2], vec![0.0, 0.0]);
        assert!(p.projected.iter().all(|x| x[2] == 0.0));
    }

    #[test]
    fn orbit_poses_stay_in_range() {
        let cfg = RunConfig::preset("desk").unwrap().camera_config().unwrap();
        let poses = orbit_poses(&cfg, 5);
        assert_eq!(poses.len(), 5);
        for p in &poses {
            assert!(p.theta_h > cfg.range_h[0] && p.theta_h < cfg.range_h[1]);
        }
        assert!(poses.windows(2).all(|w| w[1].theta_h > w[0].theta_h));
    }
}
