//! Prints every bundled preset as a config file and checks that it parses
//! back unchanged.
//!
//!     cargo run --example config_presets [-- name]

use vgan::studio::{RunConfig, PRESETS};

fn main() -> vgan::Result<()> {
    let only = std::env::args().nth(1);
    for name in PRESETS {
        if only.as_deref().is_some_and(|o| o != name) {
            continue;
        }
        let cfg = RunConfig::preset(name)?;
        let text = cfg.to_toml()?;
        assert_eq!(RunConfig::parse(&text)?, cfg);
        let cam = cfg.camera_config()?;
        println!(
            "# {name}: fov {} depth [{}, {}] {} steps, yaw [{:.3}, {:.3}] pitch [{:.3}, {:.3}], final {}²",
            cam.fov, cam.near, cam.far, cam.n_steps, cam.range_h[0], cam.range_h[1], cam.range_v[0], cam.range_v[1], cfg.generator.max_res
        );
        if only.is_some() {
            println!("{text}");
        }
    }
    Ok(())
}
