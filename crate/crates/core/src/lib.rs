//! Pixel-discretization defenses for image classifiers.
//!
//! The crate builds codebooks from pixel histograms, applies the resulting
//! discretization to images, measures how fragmented an ℓ∞ ball becomes under
//! it, and certifies robustness of `F(T(x))` for a pluggable classifier `F`.

pub mod certify;
pub mod classifier;
pub mod codebook;
pub mod discretize;
pub mod error;
pub mod hardness;
pub mod ideal_model;
pub mod ingest;
pub mod pixel;

pub use error::{Error, Result};
pub use pixel::{distance, nearest_code, Codebook, CodebookSource, DistanceMetric, Image, LabeledDataset, Pixel};
