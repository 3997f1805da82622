//! KeyNMF: topic modelling by non-negative factorization of an
//! embedding-derived document × keyword matrix, with a time-sliced variant,
//! novelty/transience/resonance signals and topic-quality metrics.

pub mod corpus;
pub mod dynamic;
pub mod embed;
pub mod error;
pub mod infodyn;
pub mod keywords;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod nmf;
pub mod pipeline;

pub use error::{Error, Result};
