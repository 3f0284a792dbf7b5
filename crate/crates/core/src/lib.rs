//! Compact context-free phrase embeddings.
//!
//! The crate covers the full pipeline: phrase corpora with a 95-way phrase
//! type taxonomy ([`corpus`]), positive-pair augmentation ([`augment`]), a
//! hashed token encoder plus a character n-gram encoder ([`encoder`]), the
//! contrastive and type-classification objectives ([`objective`]),
//! hard-negative mining ([`mining`]), the training loop with weight
//! averaging ([`trainer`]), and a five-task evaluation harness
//! ([`evalharness`]). The `pearlkit` binary wraps these as subcommands
//! ([`cli`]); runnable walkthroughs live under `examples/`.

pub mod augment;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalharness;
pub mod gradcheck;
pub mod mining;
pub mod numkernel;
pub mod objective;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
