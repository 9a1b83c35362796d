//! Renders one latent code from an orbit of poses.
//!
//!     cargo run --example render_views -- [checkpoint.vgan] [out_dir]
//!
//! Without a checkpoint the desk-preset generator is used at random init.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgan::dataio::{image_grid, write_image};
use vgan::generator::Generator;
use vgan::studio::{fixed_rays, open_generator, orbit_poses, sample_codes, RunConfig};

fn main() -> vgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = RunConfig::preset("desk")?;
    let camera = cfg.camera_config()?;
    let g: Generator<f32> = match args.first() {
        Some(ckpt) => open_generator(&cfg, ckpt.as_ref())?,
        None => Generator::new(cfg.generator_arch(), &mut ChaCha8Rng::seed_from_u64(0))?,
    };
    let out = PathBuf::from(args.get(1).map_or("out/render_views", String::as_str));
    let codes = &sample_codes(g.arch().latent_dim, 1, 42)[0];

    let poses = orbit_poses(&camera, 8);
    let mut frames = Vec::new();
    for (i, pose) in poses.iter().enumerate() {
        let img = g.render(codes, &fixed_rays(pose, &camera))?;
        println!("view {i}: yaw {:+.3} rad, pitch {:+.3} rad", pose.yaw(), pose.pitch());
        frames.push(img);
    }
    write_image(&out.join("orbit.png"), &image_grid(&frames, frames.len())?)?;
    println!("wrote {}", out.join("orbit.png").display());
    Ok(())
}
