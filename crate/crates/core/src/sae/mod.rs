//! Sparse autoencoders with ReLU+L1, TopK and BatchTopK activations.

mod activations;
mod checkpoint;
mod model;
mod train;

pub use activations::Activations;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use model::{r_squared_of, Activation, SaeModel};
pub use train::{smoothed, train, train_stream, ActivationKind, Gradients, TrainConfig, TrainOutcome, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum SaeError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("non-finite loss {loss} at step {step} (recent losses {recent_losses:?})")]
    NonFiniteLoss { step: u64, loss: f64, recent_losses: Vec<f64> },
    #[error("E_BAD_MAGIC: {0}")]
    BadMagic(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SaeError>;
