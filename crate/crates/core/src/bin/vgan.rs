use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vgan::camera::CameraPose;
use vgan::evalkit::DEFAULT_THRESHOLD;
use vgan::studio::{self, MetricKind, RunConfig};
use vgan::{Result, VganError};

/// Train and inspect 3D-aware image generators.
#[derive(Parser)]
#[command(name = "vgan", version)]
struct Cli {
    /// Config file, or a preset name (celeba, cat, carla, ffhq, compcars, bedroom, desk).
    #[arg(long, global = true, default_value = "desk")]
    config: String,
    /// Checkpoint to load.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Latent seed; for `train` it replaces the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's output dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Single worker thread, for bit-reproducible runs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run the training schedule.
    Train {
        /// Stop after this many steps.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Resume from --checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Render one code from several poses.
    Render {
        /// File of `id yaw_deg pitch_deg` lines.
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Orbit views across the yaw range when no pose file is given.
        #[arg(long, default_value_t = 5)]
        views: usize,
    },
    /// Extract the density isosurface as OBJ.
    Mesh {
        #[arg(long, default_value_t = 128)]
        res: usize,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Compute a metric report.
    Metrics(MetricArgs),
    /// Latent-code swapping grid.
    Mix {
        #[arg(long, default_value_t = 3)]
        rows: usize,
        #[arg(long, default_value_t = 3)]
        cols: usize,
        #[command(flatten)]
        view: ViewArgs,
    },
    /// PCA map of accumulated coordinate descriptors.
    Pcaviz {
        #[command(flatten)]
        view: ViewArgs,
    },
}

#[derive(Args)]
struct ViewArgs {
    /// Yaw in degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    yaw: f64,
    /// Pitch in degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pitch: f64,
}

impl ViewArgs {
    fn pose(&self) -> CameraPose {
        CameraPose::from_yaw_pitch(self.yaw.to_radians(), self.pitch.to_radians())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Reprojection,
    Frechet,
    Pose,
}

#[derive(Args)]
struct MetricArgs {
    which: Which,
    #[arg(long, default_value_t = 64)]
    grid_res: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Images per side for the Fréchet distance.
    #[arg(long, default_value_t = 128)]
    samples: usize,
    /// Reference pose file for `pose`.
    #[arg(long)]
    given: Option<PathBuf>,
    /// Predicted pose file for `pose`.
    #[arg(long)]
    predicted: Option<PathBuf>,
}

fn load_config(spec: &str) -> Result<RunConfig> {
    let path = Path::new(spec);
    if path.exists() {
        RunConfig::load(path)
    } else if studio::PRESETS.contains(&spec) {
        RunConfig::preset(spec)
    } else {
        Err(VganError::Config(format!("`{spec}` is neither a config file nor a preset")))
    }
}

fn init_threads(deterministic: bool) -> Result<()> {
    let cap = std::env::var("VGAN_THREADS").ok().map(|v| {
        v.parse::<usize>()
            .map_err(|_| VganError::Config(format!("VGAN_THREADS=`{v}` is not a thread count")))
    });
    let threads = match (deterministic, cap) {
        (true, _) => 1,
        (false, Some(n)) => n?,
        (false, None) => return Ok(()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| VganError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.deterministic)?;
    let mut cfg = load_config(&cli.config)?;
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let seed = cli.seed.unwrap_or(0);
    let checkpoint = || {
        cli.checkpoint
            .as_deref()
            .ok_or_else(|| VganError::Config("this command needs --checkpoint".into()))
    };
    match &cli.verb {
        Verb::Train { max_steps, resume } => {
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
                cfg.validate()?;
            }
            cfg.output.dir = out.clone();
            let resume = if *resume { Some(checkpoint()?) } else { None };
            let s = studio::cmd_train(&cfg, &out, resume, *max_steps)?;
            println!("trained {} steps, {} images seen; outputs in {}", s.steps, s.images_seen, out.display());
        }
        Verb::Render { poses, views } => {
            let poses = match poses {
                Some(p) => studio::read_pose_list(p)?,
                None => studio::orbit_poses(&cfg.camera_config()?, *views),
            };
            for p in studio::cmd_render(&cfg, checkpoint()?, seed, &poses, &out)? {
                println!("{}", p.display());
            }
        }
        Verb::Mesh { res, threshold } => {
            let (path, mesh) = studio::cmd_mesh(&cfg, checkpoint()?, seed, *res, *threshold, &out)?;
            println!("{}: {} vertices, {} triangles", path.display(), mesh.vertices.len(), mesh.triangles.len());
        }
        Verb::Metrics(m) => {
            let kind = match m.which {
                Which::Reprojection => MetricKind::Reprojection {
                    grid_res: m.grid_res,
                    threshold: m.threshold,
                },
                Which::Frechet => MetricKind::Frechet { samples: m.samples },
                Which::Pose => MetricKind::Pose {
                    given: m.given.clone().ok_or_else(|| VganError::Config("pose error needs --given".into()))?,
                    predicted: m
                        .predicted
                        .clone()
                        .ok_or_else(|| VganError::Config("pose error needs --predicted".into()))?,
                },
            };
            let report = studio::cmd_metrics(&cfg, cli.checkpoint.as_deref(), &kind, seed, &out)?;
            print!("{}", report.to_text());
        }
        Verb::Mix { rows, cols, view } => {
            let path = studio::cmd_mix(&cfg, checkpoint()?, seed, *rows, *cols, &view.pose(), &out)?;
            println!("{}", path.display());
        }
        Verb::Pcaviz { view } => {
            let path = studio::cmd_pcaviz(&cfg, checkpoint()?, seed, &view.pose(), &out)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
