//! A short training run on the procedural primitives dataset.
//!
//!     cargo run --release --example train_synthetic -- [steps] [out_dir]
//!
//! Writes sample grids and checkpoints to the output directory. The full
//! desk schedule is 3000 steps.

use std::path::PathBuf;

use vgan::dataio::{open_dataset, BatchStream};
use vgan::studio::RunConfig;
use vgan::trainer::{ScheduleOptions, Trainer};

fn main() -> vgan::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(100);
    let out = PathBuf::from(args.get(1).map_or("out/train_synthetic", String::as_str));

    let mut cfg = RunConfig::preset("desk")?;
    cfg.dataset.count = 500;
    let data = open_dataset::<f32>(&cfg.dataset_spec()?)?;
    let mut trainer = Trainer::<f32>::new(cfg.generator_arch(), cfg.disc_arch(), cfg.camera_config()?, cfg.train_config())?;
    let mut stream = BatchStream::new(data.len(), cfg.train.batch, cfg.dataset.shuffle_seed)?;
    let opts = ScheduleOptions {
        out_dir: Some(out.clone()),
        checkpoint_every: 50,
        sample_every: 50,
        max_steps: Some(steps),
        ..Default::default()
    };
    let summary = trainer.run_schedule(&data, &mut stream, &opts, |t, r| {
        if t.step % 10 == 0 {
            println!(
                "step {:>4}  g {:.3}  d {:.3}  r1 {:.4}  D acc {:.2}",
                t.step,
                r.g_loss,
                r.d_loss(),
                r.r1_penalty,
                r.d_accuracy
            );
        }
        Ok(())
    })?;
    cfg.save(&out.join("config.toml"))?;
    println!("{} steps, {} images; checkpoints: {:?}", summary.steps, summary.images_seen, summary.checkpoints);
    Ok(())
}
