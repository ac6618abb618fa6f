//! Autodiff engine, sketch-embedding network, VAE baseline and training.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod train;
pub mod vae;

pub use model::{LatentCode, ModelConfig, SketchModel};
pub use params::ParamStore;
pub use tape::{Gradients, Tape, Tensor, Var};
