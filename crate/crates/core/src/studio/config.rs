use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::DiscArch;
use crate::camera::{CameraConfig, SampleDist};
use crate::dataio::{Crop, DatasetSpec, Source, SyntheticSceneConfig};
use crate::error::{io_err, Result, VganError};
use crate::field::FieldArch;
use crate::generator::GeneratorArch;
use crate::renderer::RendererArch;
use crate::structural::VolumeArch;
use crate::trainer::{ScheduleOptions, Stage, TrainConfig};

/// A number or an arithmetic expression over `pi`, e.g. `"pi/2 - 0.3"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Angle {
    Value(f64),
    Expr(String),
}

impl Angle {
    pub fn eval(&self) -> Result<f64> {
        match self {
            Angle::Value(v) => Ok(*v),
            Angle::Expr(s) => eval_expr(s),
        }
    }
}

impl From<f64> for Angle {
    fn from(v: f64) -> Self {
        Angle::Value(v)
    }
}

impl From<&str> for Angle {
    fn from(s: &str) -> Self {
        Angle::Expr(s.to_string())
    }
}

/// Evaluates `+ - * /`, parentheses, unary minus, decimal literals and `pi`.
pub fn eval_expr(src: &str) -> Result<f64> {
    struct P<'a> {
        s: &'a [u8],
        i: usize,
    }
    impl P<'_> {
        fn ws(&mut self) {
            while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
                self.i += 1;
            }
        }
        fn peek(&mut self) -> Option<u8> {
            self.ws();
            self.s.get(self.i).copied()
        }
        fn expr(&mut self) -> Option<f64> {
            let mut v = self.term()?;
            while let Some(op @ (b'+' | b'-')) = self.peek() {
                self.i += 1;
                let r = self.term()?;
                v = if op == b'+' { v + r } else { v - r };
            }
            Some(v)
        }
        fn term(&mut self) -> Option<f64> {
            let mut v = self.unary()?;
            while let Some(op @ (b'*' | b'/')) = self.peek() {
                self.i += 1;
                let r = self.unary()?;
                v = if op == b'*' { v * r } else { v / r };
            }
            Some(v)
        }
        fn unary(&mut self) -> Option<f64> {
            match self.peek()? {
                b'-' => {
                    self.i += 1;
                    Some(-self.unary()?)
                }
                b'+' => {
                    self.i += 1;
                    self.unary()
                }
                b'(' => {
                    self.i += 1;
                    let v = self.expr()?;
                    (self.peek()? == b')').then(|| {
                        self.i += 1;
                        v
                    })
                }
                c if c.is_ascii_alphabetic() => {
                    let start = self.i;
                    while self.i < self.s.len() && self.s[self.i].is_ascii_alphanumeric() {
                        self.i += 1;
                    }
                    (std::str::from_utf8(&self.s[start..self.i]).ok()? == "pi").then_some(PI)
                }
                _ => {
                    let start = self.i;
                    while self.i < self.s.len() && (self.s[self.i].is_ascii_digit() || matches!(self.s[self.i], b'.' | b'e' | b'E'))
                    {
                        // exponent sign
                        if matches!(self.s[self.i], b'e' | b'E') && matches!(self.s.get(self.i + 1), Some(b'-' | b'+')) {
                            self.i += 1;
                        }
                        self.i += 1;
                    }
                    std::str::from_utf8(&self.s[start..self.i]).ok()?.parse().ok()
                }
            }
        }
    }
    let mut p = P { s: src.as_bytes(), i: 0 };
    match p.expr() {
        Some(v) if p.peek().is_none() && v.is_finite() => Ok(v),
        _ => Err(VganError::Config(format!("cannot evaluate angle expression `{src}`"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Synthetic,
    Folder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub resolution: usize,
    #[serde(default = "yes")]
    pub center_crop: bool,
    /// Number of synthetic scenes.
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub shuffle_seed: u64,
}

fn yes() -> bool {
    true
}

fn default_count() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub fov: f64,
    pub range_depth: [f64; 2],
    pub steps: usize,
    pub range_h: [Angle; 2],
    pub range_v: [Angle; 2],
    pub sample_dist: SampleDist,
    pub ray_res: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub latent_dim: usize,
    pub mapping_width: usize,
    pub mapping_depth: usize,
    pub template_channels: usize,
    pub template_res: usize,
    pub volume_channels: Vec<usize>,
    pub field_hidden: usize,
    pub field_layers: usize,
    pub feature_dim: usize,
    pub renderer_channels: usize,
    pub max_res: usize,
    pub rgb_kernel: usize,
    pub demod: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorSection {
    pub base_channels: usize,
    pub max_channels: usize,
    pub min_res: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch: usize,
    pub g_lr: f64,
    pub d_lr: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub eps: f64,
    pub lambda: f64,
    pub fade_fraction: f64,
    /// `[resolution, kimg]` per stage.
    pub schedule: Vec<(usize, f64)>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub checkpoint_every: u64,
    pub sample_every: u64,
}

/// Everything a run needs, one section per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub dataset: DatasetSection,
    pub camera: CameraSection,
    pub generator: GeneratorSection,
    pub discriminator: DiscriminatorSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

pub const PRESETS: [&str; 7] = ["celeba", "cat", "carla", "ffhq", "compcars", "bedroom", "desk"];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| VganError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text).map_err(|e| VganError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| VganError::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, self.to_toml()?).map_err(io_err(path))
    }

    pub fn validate(&self) -> Result<()> {
        self.camera_config()?.validate()?;
        self.generator_arch().validate()?;
        self.disc_arch().validate()?;
        self.train_config().validate()?;
        let d = &self.dataset;
        if d.source == SourceKind::Folder && d.path.is_none() {
            return Err(VganError::Config("folder datasets need `path`".into()));
        }
        if !d.resolution.is_power_of_two() {
            return Err(VganError::Config(format!("dataset resolution {} is not a power of two", d.resolution)));
        }
        // TOML integers are signed 64-bit
        for (key, v) in [("train.seed", self.train.seed), ("dataset.shuffle_seed", d.shuffle_seed)] {
            if v > i64::MAX as u64 {
                return Err(VganError::Config(format!("{key} = {v} does not fit a TOML integer")));
            }
        }
        Ok(())
    }

    pub fn camera_config(&self) -> Result<CameraConfig> {
        let c = &self.camera;
        Ok(CameraConfig {
            fov: c.fov,
            near: c.range_depth[0],
            far: c.range_depth[1],
            n_steps: c.steps,
            range_h: [c.range_h[0].eval()?, c.range_h[1].eval()?],
            range_v: [c.range_v[0].eval()?, c.range_v[1].eval()?],
            sample_dist: c.sample_dist,
            ray_res: c.ray_res,
        })
    }

    pub fn generator_arch(&self) -> GeneratorArch {
        let g = &self.generator;
        let volume = VolumeArch {
            template_channels: g.template_channels,
            template_res: g.template_res,
            stage_channels: g.volume_channels.clone(),
        };
        GeneratorArch {
            latent_dim: g.latent_dim,
            mapping_width: g.mapping_width,
            mapping_depth: g.mapping_depth,
            field: FieldArch {
                descriptor_dim: volume.out_channels(),
                hidden: g.field_hidden,
                layers: g.field_layers,
                feature_dim: g.feature_dim,
            },
            volume,
            renderer: RendererArch {
                in_channels: g.feature_dim,
                channels: g.renderer_channels,
                ray_res: self.camera.ray_res,
                max_res: g.max_res,
                rgb_kernel: g.rgb_kernel,
                demod: g.demod,
            },
        }
    }

    pub fn disc_arch(&self) -> DiscArch {
        DiscArch {
            max_res: self.generator.max_res,
            base_channels: self.discriminator.base_channels,
            max_channels: self.discriminator.max_channels,
            min_res: self.discriminator.min_res,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch: t.batch,
            g_lr: t.g_lr,
            d_lr: t.d_lr,
            beta0: t.beta0,
            beta1: t.beta1,
            eps: t.eps,
            lambda: t.lambda,
            schedule: t.schedule.iter().map(|&(res, kimg)| Stage { res, kimg }).collect(),
            fade_fraction: t.fade_fraction,
            seed: t.seed,
        }
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let d = &self.dataset;
        let source = match d.source {
            SourceKind::Folder => Source::Folder(d.path.clone().ok_or_else(|| VganError::Config("folder datasets need `path`".into()))?),
            SourceKind::Synthetic => Source::Synthetic(Box::new(SyntheticSceneConfig::desk(
                d.count,
                d.resolution,
                self.camera_config()?,
                d.shuffle_seed,
            ))),
        };
        Ok(DatasetSpec {
            source,
            resolution: d.resolution,
            crop: if d.center_crop { Crop::Center } else { Crop::None },
            shuffle_seed: d.shuffle_seed,
        })
    }

    pub fn schedule_options(&self) -> ScheduleOptions {
        ScheduleOptions {
            out_dir: Some(self.output.dir.clone()),
            checkpoint_every: self.output.checkpoint_every,
            sample_every: self.output.sample_every,
            ..Default::default()
        }
    }

    /// One of [`PRESETS`].
    pub fn preset(name: &str) -> Result<Self> {
        let row = |fov: f64, depth: [f64; 2], steps: usize, h: [&str; 2], v: [&str; 2], dist: SampleDist, lambda: f64, res: usize| {
            full_scale(name, fov, depth, steps, [h[0].into(), h[1].into()], [v[0].into(), v[1].into()], dist, lambda, res)
        };
        use SampleDist::{Gaussian, Uniform};
        let cfg = match name {
            "celeba" => row(12.0, [0.88, 1.12], 12, ["pi/2 - 0.3", "pi/2 + 0.3"], ["pi/2 - 0.15", "pi/2 + 0.15"], Gaussian, 0.2, 128),
            "cat" => row(12.0, [0.8, 1.2], 12, ["pi/2 - 0.5", "pi/2 + 0.5"], ["pi/2 - 0.4", "pi/2 + 0.4"], Gaussian, 0.2, 128),
            "carla" => row(30.0, [0.7, 1.3], 36, ["0", "2*pi"], ["pi/2 - pi/8", "pi/2 + pi/8"], Uniform, 1.0, 128),
            "ffhq" => row(12.0, [0.8, 1.2], 14, ["pi/2 - 0.4", "pi/2 + 0.4"], ["pi/2 - 0.2", "pi/2 + 0.2"], Gaussian, 1.0, 256),
            "compcars" => row(20.0, [0.8, 1.2], 30, ["0", "2*pi"], ["pi/2 - pi/8", "pi/2 + pi/8"], Uniform, 1.0, 256),
            "bedroom" => row(26.0, [0.7, 1.3], 40, ["pi/2 - pi/8", "pi/2 + pi/8"], ["pi/2 - pi/10", "pi/2 + pi/10"], Uniform, 1.0, 256),
            "desk" => desk(),
            _ => return Err(VganError::Config(format!("unknown preset `{name}`; choose one of {PRESETS:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[allow(clippy::too_many_arguments)]
fn full_scale(
    name: &str,
    fov: f64,
    depth: [f64; 2],
    steps: usize,
    range_h: [Angle; 2],
    range_v: [Angle; 2],
    sample_dist: SampleDist,
    lambda: f64,
    max_res: usize,
) -> RunConfig {
    // progressive stages from 64² up to the final resolution, 25M images total
    let mut schedule = Vec::new();
    let mut r = 64;
    while r <= max_res {
        schedule.push(r);
        r *= 2;
    }
    let per = 25_000.0 / schedule.len() as f64;
    RunConfig {
        name: name.to_string(),
        dataset: DatasetSection {
            source: SourceKind::Folder,
            path: Some(PathBuf::from(format!("data/{name}"))),
            resolution: max_res,
            center_crop: true,
            count: default_count(),
            shuffle_seed: 0,
        },
        camera: CameraSection {
            fov,
            range_depth: depth,
            steps,
            range_h,
            range_v,
            sample_dist,
            ray_res: 64,
        },
        generator: GeneratorSection {
            latent_dim: 256,
            mapping_width: 256,
            mapping_depth: 3,
            template_channels: 256,
            template_res: 4,
            volume_channels: vec![128, 64, 32],
            field_hidden: 256,
            field_layers: 8,
            feature_dim: 256,
            renderer_channels: 256,
            max_res,
            rgb_kernel: 3,
            demod: true,
        },
        discriminator: DiscriminatorSection {
            base_channels: 64,
            max_channels: 512,
            min_res: 4,
        },
        train: TrainSection {
            batch: 64,
            g_lr: 2.5e-4,
            d_lr: 2.5e-4,
            beta0: 0.0,
            beta1: 0.999,
            eps: 1e-8,
            lambda,
            fade_fraction: 0.2,
            schedule: schedule.into_iter().map(|r| (r, per)).collect(),
            seed: 0,
        },
        output: OutputSection {
            dir: PathBuf::from(format!("runs/{name}")),
            checkpoint_every: 1000,
            sample_every: 1000,
        },
    }
}

/// CPU-sized run on the synthetic primitives: 32² images from 16² rays.
fn desk() -> RunConfig {
    RunConfig {
        name: "desk".into(),
        dataset: DatasetSection {
            source: SourceKind::Synthetic,
            path: None,
            resolution: 32,
            center_crop: true,
            count: 2000,
            shuffle_seed: 0,
        },
        camera: CameraSection {
            fov: 36.0,
            range_depth: [0.5, 1.5],
            steps: 12,
            range_h: ["pi/2 - 0.5".into(), "pi/2 + 0.5".into()],
            range_v: ["pi/2 - 0.3".into(), "pi/2 + 0.3".into()],
            sample_dist: SampleDist::Uniform,
            ray_res: 16,
        },
        generator: GeneratorSection {
            latent_dim: 64,
            mapping_width: 64,
            mapping_depth: 3,
            template_channels: 32,
            template_res: 4,
            volume_channels: vec![16, 8],
            field_hidden: 32,
            field_layers: 4,
            feature_dim: 32,
            renderer_channels: 32,
            max_res: 32,
            rgb_kernel: 3,
            demod: true,
        },
        discriminator: DiscriminatorSection {
            base_channels: 8,
            max_channels: 128,
            min_res: 4,
        },
        train: TrainSection {
            batch: 16,
            g_lr: 2.5e-4,
            d_lr: 2.5e-4,
            beta0: 0.0,
            beta1: 0.999,
            eps: 1e-8,
            lambda: 1.0,
            fade_fraction: 0.2,
            schedule: vec![(32, 48.0)],
            seed: 0,
        },
        output: OutputSection {
            dir: PathBuf::from("runs/desk"),
            checkpoint_every: 500,
            sample_every: 500,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expressions() {
        assert!((eval_expr("pi/2 - 0.3").unwrap() - (PI / 2.0 - 0.3)).abs() < 1e-15);
        assert!((eval_expr("2*pi").unwrap() - 2.0 * PI).abs() < 1e-15);
        assert!((eval_expr("-(1 + 2) * 3").unwrap() + 9.0).abs() < 1e-15);
        assert_eq!(eval_expr("1e-3").unwrap(), 1e-3);
        assert!(eval_expr("tau").is_err());
        assert!(eval_expr("1 +").is_err());
    }

    #[test]
    fn presets_round_trip() {
        for p in PRESETS {
            let cfg = RunConfig::preset(p).unwrap();
            let back = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg, "{p}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = RunConfig::preset("desk").unwrap().to_toml().unwrap();
        text = text.replace("[camera]\n", "[camera]\nfocal = 3\n");
        assert!(matches!(RunConfig::parse(&text), Err(VganError::Config(_))));
    }

    #[test]
    fn table_values() {
        let carla = RunConfig::preset("carla").unwrap().camera_config().unwrap();
        assert_eq!(carla.range_h, [0.0, 2.0 * PI]);
        assert_eq!(carla.sample_dist, SampleDist::Uniform);
        let celeba = RunConfig::preset("celeba").unwrap();
        assert_eq!(celeba.train.lambda, 0.2);
        let c = celeba.camera_config().unwrap();
        assert!((c.range_h[1] - c.range_h[0] - 0.6).abs() < 1e-12);
        assert_eq!((c.near, c.far, c.n_steps, c.fov), (0.88, 1.12, 12, 12.0));
    }
}
