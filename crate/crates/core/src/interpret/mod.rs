//! Word-emission learning: each SAE feature becomes a distribution over the vocabulary.

mod corpus;
mod emissions;
mod format;

pub use corpus::{BowCorpus, BowDocument, P0_PSEUDO_COUNT};
pub use emissions::{
    doc_likelihood, learn_emissions, learn_emissions_traced, loss_and_logit_gradient, top_words, EmissionMatrix,
    InterpretConfig, LearnTrace,
};
pub use format::{
    emission_summary_json, load_emissions, read_emissions, save_emissions, write_emissions, EMISSION_MAGIC,
};

#[derive(Debug, thiserror::Error)]
pub enum InterpretError {
    #[error("E_VOCAB_RANGE: document {doc:?} has word id {word_id} >= vocabulary size {vocab_size}")]
    VocabRange { doc: String, word_id: u32, vocab_size: usize },
    #[error("E_ALIGN: {docs} documents but {rows} activation rows")]
    Misaligned { docs: usize, rows: usize },
    #[error("word {0} occurs in no document")]
    UnseenWord(u32),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("E_BAD_MAGIC: {0}")]
    BadMagic(String),
    #[error("malformed emission file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, InterpretError>;
