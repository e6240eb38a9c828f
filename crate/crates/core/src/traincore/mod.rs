//! Desk-scale training: objective, optimizers, LoRA, fused SGD, RTN
//! quantization and the dry-run loop. Everything runs in f64.

mod model;
mod optim;
mod quant;
mod train;

use thiserror::Error;

pub use model::{
    cross_entropy, grad_slices, lomo_sgd_run, lora_forward, lora_merge, sgd_reference, Batch, Dense,
    GradTracker, LayerGrad, LoraPair, SgdRun, ToyModel, TrackedGrad, Trainable,
};
pub use optim::{lion_step, AdamState, LionState, Optimizer};
pub use quant::{dequantize, quantize_rtn, QuantBits, QuantizedTensor, DEFAULT_GROUP};
pub use train::{encode_text, quantize_base, train_toy, CharVocab, TrainOptions, TrainOutcome, TrainSummary};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset has no usable records")]
    EmptyDataset,
    #[error("config is not valid: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Telemetry(#[from] crate::telemetry::TelemetryError),
}
