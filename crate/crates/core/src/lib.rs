//! Program-level binary similarity from function embeddings.
//!
//! A binary's functions, each carrying a precomputed embedding plus its
//! lines of pseudocode and string-literal count, are condensed into two
//! fixed-length program embeddings:
//!
//! - a structural bit-vector ([`stru`]): functions are classified to the
//!   centroids of a spherical k-means codebook ([`kmeans`]) and the label
//!   set is folded by signed feature hashing; compared under Jaccard.
//! - a semantic vector ([`sem`]): the significance-weighted mean of the
//!   normalized function embeddings; compared under cosine.
//!
//! [`index`] runs exact top-k clone search over either kind, [`eval`]
//! scores retrieval and function matching, and [`cliploss`] holds the
//! contrastive objective used to train function embeddings.

pub mod cliploss;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod index;
pub mod kmeans;
mod linalg;
pub mod sem;
pub mod stru;
pub mod synth;

pub use corpus::{Corpus, FunctionRecord, ProgramRecord, SemanticEmbedding, StructuralEmbedding};
pub use error::{Error, Result};
pub use index::{Embedding, EmbeddingKind, Repository, SearchResult};
pub use kmeans::{CentroidModel, LabelAssignment};
pub use sem::{WeightConfig, WeightMode};
pub use stru::FeatureHasher;
