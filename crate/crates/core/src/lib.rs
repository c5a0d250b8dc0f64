//! Training-dynamics laboratory for cyclic, structured task sequences.
//!
//! The crate is layered bottom-up:
//!
//! - [`numcore`]: dense f64 tensors, a reverse-mode tape, finite-difference
//!   gradient checks, cosine similarity and snapshot PCA.
//! - [`models`]: a from-scratch decoder-only causal transformer.
//! - [`toymodel`]: the linear projection / best-response toy model.
//! - [`trainer`]: corpora, cyclic schedules, optimizers, evaluation grids and
//!   checkpoint stores.
//! - [`analytics`]: recovery scores, aligned curves, pairwise recovery and the
//!   gradient / weight / activation similarity reports.

pub mod analytics;
pub mod error;
pub mod models;
pub mod numcore;
pub mod toymodel;
pub mod trainer;

pub use error::{Error, Result};

/// Deterministic generator used for every seeded draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
