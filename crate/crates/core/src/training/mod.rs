//! Objective, masking schedule, optimiser and training loop.

pub mod config;
pub mod gradcheck;
pub mod losses;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use config::{TrainConfig, ABLATIONS};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport};
pub use losses::{compute_losses, info_nce, label_smoothed_ce, mse, LossBreakdown, SimilarityGate};
pub use optim::{AdamW, OptimizerConfig};
pub use schedule::{combined_label, sample_mask, sample_mask_at, ContextMaskSchedule, MaskSpec};
pub use trainer::{
    batch_gradients, batch_objective, sample_video, target_labels, LogRecord, TrainOutcome, Trainer, VideoSample, FINAL_CHECKPOINT,
    LOG_FILE,
};
