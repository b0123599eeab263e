//! Deep metric learning building blocks: training objectives, tuple miners,
//! batch samplers, retrieval metrics and embedding-space diagnostics.

pub mod autodiff;
pub mod batching;
pub mod cli;
pub mod dump;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod mining;
pub mod objectives;
pub mod rng;
pub mod spectral;
pub mod toytrain;

pub use embedding::{EmbeddingMatrix, LabelVector};
pub use error::{Error, Result};
