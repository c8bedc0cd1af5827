//! Partial-label, multi-label sequence classification.
//!
//! A bidirectional LSTM encodes a sequence of embedding vectors; a per-class
//! attention head pools per-timestep sigmoid predictions into clip-level
//! probabilities. Training uses a focal loss that ignores unknown labels,
//! mix-up and concatenation augmentation, and Adam. Gradients are computed
//! by hand (BPTT) and can be checked against central finite differences.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the experiment
//! runner and the command line live in the `plab` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod augment;
pub mod dataio;
mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use augment::{AugmentConfig, TrainItem};
pub use dataio::{Batch, Dataset, Example, FeatureSequence, Label, LabelVector, Split};
pub use error::{Error, Result};
pub use loss::{LossConfig, TargetMask};
pub use metrics::{ConfusionCounts, MetricsReport};
pub use model::{Dims, ModelConfig, ModelParams, Predictions};
pub use optim::{AdamConfig, AdamState};
pub use trainer::{TrainConfig, TrainHistory};
