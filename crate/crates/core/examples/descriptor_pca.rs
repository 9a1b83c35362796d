//! Projects ray-accumulated volume descriptors onto their top three
//! principal components and writes them as an RGB map.
//!
//!     cargo run --example descriptor_pca -- [checkpoint.vgan] [out_dir]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgan::camera::CameraPose;
use vgan::dataio::write_image;
use vgan::generator::Generator;
use vgan::studio::{descriptor_pca, open_generator, sample_codes, RunConfig};

fn main() -> vgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = RunConfig::preset("desk")?;
    let camera = cfg.camera_config()?;
    let g: Generator<f32> = match args.first() {
        Some(ckpt) => open_generator(&cfg, ckpt.as_ref())?,
        None => Generator::new(cfg.generator_arch(), &mut ChaCha8Rng::seed_from_u64(0))?,
    };
    let out = PathBuf::from(args.get(1).map_or("out/descriptor_pca", String::as_str));
    let codes = &sample_codes(g.arch().latent_dim, 1, 5)[0];
    for (i, yaw) in [-0.3, 0.0, 0.3].into_iter().enumerate() {
        let map = descriptor_pca(&g, codes, &CameraPose::from_yaw_pitch(yaw, 0.0), &camera)?;
        let v = map.pca.variances;
        println!("yaw {yaw:+.1}: component variances {:.3e} {:.3e} {:.3e}", v[0], v[1], v[2]);
        write_image(&out.join(format!("pca_{i}.png")), &map.to_image())?;
    }
    Ok(())
}
