//! Byte-level encoder-decoder transformer: tokenizer, network, loss,
//! optimizer, training loop and checkpoints.

use std::io;
use std::path::PathBuf;

pub mod checkpoint;
pub mod config;
pub(crate) mod linalg;
pub mod loss;
pub mod optim;
pub mod tokenizer;
pub mod train;
pub mod transformer;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, TrainConfig, TransformerConfig};
pub use tokenizer::ByteTokenizer;
pub use train::{train, Example, LogEntry, TrainOutcome};
pub use transformer::{Logits, Transformer};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: u64, last_good: Box<Checkpoint> },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
}
