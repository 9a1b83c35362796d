//! A 3D-aware GAN engine: latent codes drive a structural feature volume, a
//! FiLM-conditioned sine feature field is volume-rendered into a 2D feature
//! map, and a stack of modulated 1×1 convolutions turns that map into an
//! image. Includes adversarial training, geometry extraction and
//! cross-view consistency metrics.

pub mod adversary;
pub mod camera;
pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod field;
pub mod generator;
pub mod nnlayers;
pub mod renderer;
pub mod studio;
pub mod structural;
pub mod trainer;

pub use diffcore;
pub use error::{Result, VganError};
