//! Multimodal learned sparse retrieval.
//!
//! Text queries and image (or captioned image) documents are encoded into
//! sparse bags of vocabulary terms by MLP or MLM projection heads, trained
//! contrastively with in-batch negatives, served from an inverted index and
//! scored with TREC-style metrics. Dense inputs come from pluggable
//! embedding providers rather than an in-process transformer.

pub mod cli;
pub mod diagnostics;
pub mod embedding;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod index;
pub mod ingest;
pub mod sparse;
pub mod synthetic;
pub mod training;
pub mod vocab;

pub use embedding::{DenseEmbedding, EmbeddingProvider};
pub use encoders::{EncoderConfig, Fusion, ModelParams, Variant};
pub use error::{Error, Result};
pub use index::{brute_force_search, InvertedIndex, RankedList};
pub use sparse::{dot, SparseVector};
pub use vocab::{tokenize, TokenSequence, Vocabulary};
