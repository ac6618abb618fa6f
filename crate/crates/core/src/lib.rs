//! Learning image embeddings by imitating stroke drawings.
//!
//! The crate covers the whole pipeline: stroke-5 sketch data and dataset
//! ingestion, a differentiable stroke rasterizer, a mixture-density stroke
//! decoder trained end to end with a small reverse-mode autodiff engine,
//! and evaluation harnesses (few-shot classification, latent-factor
//! readouts, latent arithmetic and generation recognizability).

pub mod error;
pub mod fewshot;
pub mod gradcheck;
pub mod image;
pub mod ingest;
pub mod mdn;
pub mod net;
pub mod probes;
pub mod raster;
pub mod rng;
pub mod stroke;

pub use error::{Error, Result};
pub use image::PixelImage;
pub use stroke::{PenState, Sketch, Stroke5};
