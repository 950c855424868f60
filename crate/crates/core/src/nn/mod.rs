//! From-scratch convolutional classifier with an auxiliary depth branch.

pub mod checkpoint;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{huber, masked_huber_loss, total_loss, AuxReduction, LossConfig};
pub use network::{ConvBlock, Example, ForwardOutput, Network, NetworkConfig, NUM_CLASSES};
pub use optim::{sgd_momentum_step, Sgd};
pub use tensor::Tensor;
pub use train::{evaluate, train, EpochMetrics, Evaluation, LabeledSequence, TrainConfig};

#[derive(thiserror::Error, Debug)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("huber threshold must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("depth target has no valid pixel")]
    EmptyMask,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}
