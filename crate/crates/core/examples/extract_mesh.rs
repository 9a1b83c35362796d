//! Marching cubes, first on an analytic density and then on a generator.
//!
//!     cargo run --example extract_mesh -- [checkpoint.vgan] [out_dir]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgan::evalkit::{extract_mesh, lattice_points, marching_cubes, DEFAULT_THRESHOLD};
use vgan::generator::Generator;
use vgan::studio::{open_generator, sample_codes, RunConfig};

fn main() -> vgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.get(1).map_or("out/extract_mesh", String::as_str));

    // a torus-like density: high near a ring of radius 0.5 in the xz plane
    let res = 64;
    let density: Vec<f64> = lattice_points(res)
        .iter()
        .map(|p| {
            let ring = ((p.x * p.x + p.z * p.z).sqrt() - 0.5).hypot(p.y);
            30.0 * (0.2 - ring) + DEFAULT_THRESHOLD
        })
        .collect();
    let torus = marching_cubes(&density, res, DEFAULT_THRESHOLD)?;
    println!("torus: {} vertices, {} triangles, volume {:.4}", torus.vertices.len(), torus.triangles.len(), torus.signed_volume());
    torus.write_obj(&out.join("torus.obj"))?;

    let cfg = RunConfig::preset("desk")?;
    let g: Generator<f32> = match args.first() {
        Some(ckpt) => open_generator(&cfg, ckpt.as_ref())?,
        None => Generator::new(cfg.generator_arch(), &mut ChaCha8Rng::seed_from_u64(0))?,
    };
    let codes = &sample_codes(g.arch().latent_dim, 1, 3)[0];
    let mesh = extract_mesh(&g, &g.freeze(codes)?, 64, DEFAULT_THRESHOLD)?;
    if mesh.is_empty() {
        println!("generator: no density above {DEFAULT_THRESHOLD} (expected for an untrained model)");
    } else {
        println!("generator: {} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
    }
    mesh.write_obj(&out.join("generator.obj"))?;
    Ok(())
}
