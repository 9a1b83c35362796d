//! Swaps structural and textural codes: rows keep a shape code, columns
//! keep appearance codes.
//!
//!     cargo run --example style_mix -- [checkpoint.vgan] [out_dir]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgan::camera::CameraPose;
use vgan::dataio::write_image;
use vgan::generator::{CodeBundle, Generator};
use vgan::studio::{fixed_rays, open_generator, sample_codes, style_mix, RunConfig};

fn main() -> vgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = RunConfig::preset("desk")?;
    let camera = cfg.camera_config()?;
    let g: Generator<f32> = match args.first() {
        Some(ckpt) => open_generator(&cfg, ckpt.as_ref())?,
        None => Generator::new(cfg.generator_arch(), &mut ChaCha8Rng::seed_from_u64(0))?,
    };
    let out = PathBuf::from(args.get(1).map_or("out/style_mix", String::as_str));
    let dim = g.arch().latent_dim;
    let shapes: Vec<_> = sample_codes::<f32>(dim, 3, 10).into_iter().map(|c| c.z_structural).collect();
    let looks: Vec<_> = sample_codes::<f32>(dim, 4, 20).into_iter().map(|c| (c.z_field, c.z_renderer)).collect();
    let pose = CameraPose::from_yaw_pitch(0.2, 0.0);
    let grid = style_mix(&g, &shapes, &looks, &pose, &camera)?;
    write_image(&out.join("mix.png"), &grid)?;

    // swapping only the renderer code never touches the geometry
    let a = CodeBundle {
        z_structural: shapes[0].clone(),
        z_field: looks[0].0.clone(),
        z_renderer: looks[0].1.clone(),
    };
    let b = CodeBundle {
        z_renderer: looks[1].1.clone(),
        ..a.clone()
    };
    let rays = fixed_rays(&pose, &camera);
    let (ta, tb) = (g.trace(&a, &rays)?, g.trace(&b, &rays)?);
    println!("renderer-only swap: same densities {}, same feature map {}", ta.sigma == tb.sigma, ta.feature_map == tb.feature_map);
    println!("wrote {}", out.join("mix.png").display());
    Ok(())
}
