//! Sparse autoencoders as topic models.
//!
//! The crate is organised along the modelling pipeline:
//!
//! * [`ctm`]: the continuous topic model, its MAP objectives and simulation checks.
//! * [`sae`]: sparse autoencoders (ReLU+L1, TopK, BatchTopK) and their training loop.
//! * [`interpret`]: word-emission learning that turns SAE features into word distributions.
//! * [`merge`]: topic embeddings, k-means and prior-weighted merging of features into topics.
//! * [`eval`]: word mover distance diversity and judge-based coherence metrics.
//! * [`io`], [`stats`], [`pipeline`]: file formats, dataset composition statistics and the
//!   staged end-to-end runner.

pub mod ctm;
pub mod eval;
pub mod interpret;
pub mod io;
pub mod merge;
pub mod optim;
pub mod pipeline;
pub mod sae;
pub mod special;
pub mod stats;
pub mod synthetic;
