//! Fréchet distance between feature sets: synthetic renders against
//! themselves, against a shifted copy, and against generator samples.
//!
//!     cargo run --example frechet

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgan::dataio::{generate_synthetic, SyntheticSceneConfig};
use vgan::evalkit::{frechet_distance, FeatureExtractor, PooledProjection};
use vgan::generator::Generator;
use vgan::studio::{generate_samples, RunConfig};

fn main() -> vgan::Result<()> {
    let cfg = RunConfig::preset("desk")?;
    let camera = cfg.camera_config()?;
    let fx = PooledProjection::default();
    let take = |seed| -> vgan::Result<Vec<_>> {
        let sc = SyntheticSceneConfig::desk(128, 32, camera.clone(), seed);
        Ok(generate_synthetic::<f32>(&sc)?.into_iter().map(|r| r.image).collect())
    };
    let (a, b) = (take(1)?, take(2)?);
    let fa = fx.extract(&a)?;
    println!("same set:           {:.6}", frechet_distance(&fa, &fa)?);
    println!("two synthetic sets: {:.6}", frechet_distance(&fa, &fx.extract(&b)?)?);
    let brighter: Vec<_> = a.iter().map(|i| i.map(|v| (v + 0.2).min(1.0))).collect();
    println!("brightened copy:    {:.6}", frechet_distance(&fa, &fx.extract(&brighter)?)?);
    let g = Generator::<f32>::new(cfg.generator_arch(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let fakes = generate_samples(&g, &camera, 128, 9)?;
    println!("untrained G:        {:.6}", frechet_distance(&fa, &fx.extract(&fakes)?)?);
    Ok(())
}
