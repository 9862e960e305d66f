//! SFTD training: matched reconstruction, the two-branch objective,
//! optimization, early stopping and checkpoints.

mod checkpoint;
mod hungarian;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta, CHECKPOINT_FORMAT,
};
pub use hungarian::hungarian_assignment;
pub use loss::{
    evaluate_reconstruction, match_slots, reconstruction_loss, sftd_total_loss, Choices,
    FrozenChoices, LossTerms, LossWeights, SftdForward,
};
pub use optim::{clip_global_norm, cosine_lr, AdamW};
pub use trainer::{
    descriptor_sets, standardized_descriptors, token_statistics, train, EpochRecord, LogRecord,
    TrainConfig, TrainOutcome,
};
