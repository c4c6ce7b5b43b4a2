//! Inference-time activation steering for decoder-only language models.
//!
//! The crate extracts per-item steering vectors from contrast pairs,
//! calibrates their strength against a validation target, and applies them
//! while scoring relevance judgements and questionnaire items by constrained
//! next-token decoding. Everything runs on a small deterministic toy decoder,
//! or on a remote model spoken to over a line-delimited JSON protocol.

pub mod contrast;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod retrieval;
pub mod steering;
pub mod tasks;
pub mod vocab;

pub use error::{Error, ErrorKind, Result};
