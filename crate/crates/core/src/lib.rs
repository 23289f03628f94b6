//! Manifold-attack regularization for geometry-preserving embeddings.
//!
//! The library trains small differentiable models `g : R^n -> R^d` under
//! geometric-structure-preservation losses (MDS, Laplacian eigenmaps, LLE,
//! contrastive, SNE) while adversarially optimizing *virtual points*: convex
//! combinations of anchor samples whose barycentric coordinates are ascended
//! on the embedding loss under a simplex constraint. The same attack
//! machinery drives adversarial Mix-up for supervised training, evaluated
//! against FGSM perturbations.
//!
//! Crate layout mirrors the pipeline: [`simplex`] holds the projection
//! machinery, [`losses`] the embedding objectives, [`anchors`] virtual-point
//! construction, [`attack`] the alternating ascent/descent training loop,
//! [`mixup`] the supervised variant, and [`experiment`] the config-driven
//! runner behind the CLI.

pub mod anchors;
pub mod attack;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod matrix;
pub mod mixup;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod simplex;

pub use error::{Error, Result};
pub use matrix::Matrix;

use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Seeds the crate RNG.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}
