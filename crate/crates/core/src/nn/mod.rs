//! Compact depthwise-separable CNN with hand-written gradients.
//!
//! Layers work on flat NCHW buffers generic over [`Real`]. Training runs in `f32`,
//! gradient checks in `f64`.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod mixup;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CheckpointManifest, Preprocessing};
pub use gradcheck::{grad_check, GradCheckReport};
pub use mixup::{mixup, sample_beta};
pub use model::{
    backward, forward, predict_score, predict_scores, softmax, softmax_cross_entropy, Architecture, Mode, ModelParams,
    GENUINE_CLASS,
};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::{Real, Tensor};
pub use train::{accuracy, dataset_scores, train, train_model, Dataset, Example, History, Precision, TrainConfig, TrainOutcome};
