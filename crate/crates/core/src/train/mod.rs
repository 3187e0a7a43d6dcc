//! End-to-end training at desk scale: classifier head, gradients through
//! the whole enhancement stage, optimizer and a synthetic dataset.

pub mod checkpoint;
pub mod classifier;
pub mod model;
pub mod optim;
pub mod synthetic;
pub mod trainer;

pub use classifier::ToyClassifier;
pub use model::{batch_objective, bce_with_logit, BatchOutcome, FafeModel, SampleTape};
pub use optim::{cosine_lr, Adam, AdamConfig};
pub use synthetic::{make_synthetic, split_pairs, SyntheticConfig, SyntheticSample};
pub use trainer::{evaluate, train, train_epoch, EpochRecord, Example, History, TrainConfig, TrainState};
