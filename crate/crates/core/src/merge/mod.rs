//! Topic embeddings, k-means over features and prevalence-weighted merging.

mod embeddings;
mod kmeans;
mod topics;

pub use embeddings::WordEmbeddingTable;
pub use kmeans::{kmeans, kmeans_with, KMeansConfig, KMeansResult};
pub use topics::{
    merge_topics, remerge, top_p_truncate, topic_embedding, Remerger, Topic, TopicModel, DEFAULT_TOP_P,
};

#[derive(Debug, thiserror::Error)]
pub enum MergeError {
    #[error("feature {feature}: no word in the truncated support has an embedding")]
    EmptySupport { feature: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("malformed embedding table line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MergeError>;
