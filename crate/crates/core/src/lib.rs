//! Text-based quantitative image embeddings.
//!
//! Images and vocabulary terms are compared in a shared embedding space;
//! every image is then re-expressed as a softmax-weighted sum of the
//! keywords that rank highest across the whole corpus. The crate also
//! carries the evaluation machinery used on those embeddings: Lloyd's
//! K-Means with K-Means++ seeding, silhouette scores, cluster reports, and
//! a small batch-normalized MLP trained with Adam.
//!
//! The numeric core is generic over [`Scalar`] (`f32` and `f64`). Storage
//! uses the caller's scalar type while reductions accumulate in `f64`.

pub mod classifier;
pub mod clustering;
mod error;
pub mod io;
pub mod retrieval;
mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod woi;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{cosine_similarity, l2_normalize, softmax, EmbeddingMatrix, SimilarityMatrix};

/// Embedding matrix with the default 32-bit storage.
pub type Embeddings = EmbeddingMatrix<f32>;
/// Embedding matrix with 64-bit storage, used by oracles and gradient checks.
pub type Embeddings64 = EmbeddingMatrix<f64>;
/// Similarity scores between 32-bit embeddings.
pub type Similarities = SimilarityMatrix<f32>;
/// Text-based embedding set with 32-bit storage.
pub type TextEmbeddings = retrieval::TextEmbeddingSet<f32>;
/// Default-precision classifier.
pub type Mlp = classifier::MlpModel<f32>;
