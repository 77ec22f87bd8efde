//! LSTM, GRU and CNN-LSTM severity classifiers: construction, training,
//! evaluation and the versioned model file.

mod arch;
mod metrics;
mod model;
mod train;

pub use arch::{ArchSpec, Family, N_CLASSES};
pub use metrics::{evaluate, ClassificationMetrics};
pub use model::{ClassifierModel, Provenance, TapeModel};
pub use train::{loss_and_accuracy, train, EpochRecord, TrainConfig, TrainingHistory};

pub(crate) use model::label_of;
