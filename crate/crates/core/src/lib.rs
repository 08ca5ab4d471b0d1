//! Generation of nonverbal robot behaviors from two-person interaction data.
//!
//! A user's upper-body pose stream is encoded by an LSTM into a latent code;
//! an LSTM decoder seeded with the robot's current pose rolls out the next
//! robot joint angles; an LSTM discriminator scores rolled-out futures during
//! adversarial training.

pub mod autodiff;
pub mod config;
pub mod dataio;
pub mod eval;
pub mod model;
pub mod par;
pub mod skeleton;
pub mod train;

pub use autodiff::{AutodiffError, Tensor};
pub use dataio::DataError;
pub use model::{ModelConfig, ModelParams, Variant};
pub use skeleton::SkeletonError;
pub use train::TrainConfig;

/// Crate-wide error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] autodiff::CheckpointError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
