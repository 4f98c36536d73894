//! Learning-to-rank toolkit for e-commerce search.
//!
//! The crate covers the whole offline loop: a catalogue and clickstream data
//! model with a synthetic generator ([`corpus`]), click and session embeddings
//! ([`embed`]), broad/narrow query segmentation ([`segment`]), feature and
//! target construction ([`featurize`]), retrieval baselines and learned rankers
//! ([`rank`]), NDCG evaluation ([`eval`]) and the staged experiment driver
//! ([`pipeline`]).

pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod nn;
pub mod pipeline;
pub mod rank;
pub mod segment;
pub mod util;

pub use error::{Error, Result};
