//! Generates the procedural primitives dataset and writes it to disk.
//!
//!     cargo run --example synthetic_dataset -- [count] [out_dir]

use std::path::PathBuf;

use vgan::dataio::{generate_synthetic, image_grid, load_synthetic, save_synthetic, write_image, SyntheticSceneConfig};
use vgan::studio::RunConfig;

fn main() -> vgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let count = args.first().and_then(|s| s.parse().ok()).unwrap_or(64);
    let out = PathBuf::from(args.get(1).map_or("out/synthetic", String::as_str));
    let camera = RunConfig::preset("desk")?.camera_config()?;
    let cfg = SyntheticSceneConfig::desk(count, 64, camera, 7);
    let records = generate_synthetic::<f32>(&cfg)?;
    save_synthetic(&out, &records)?;
    let back = load_synthetic::<f32>(&out)?;
    println!("{} records written and reloaded from {}", back.len(), out.display());
    let first: Vec<_> = records.iter().take(16).map(|r| r.image.clone()).collect();
    write_image(&out.join("preview.png"), &image_grid(&first, 8)?)?;
    for r in records.iter().take(4) {
        println!(
            "yaw {:+.3} pitch {:+.3}: {} objects",
            r.pose.yaw(),
            r.pose.pitch(),
            r.scene.objects.len()
        );
    }
    Ok(())
}
