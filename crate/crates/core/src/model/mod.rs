//! Network definition, layers and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod vgcm;

pub use config::ModelConfig;
pub use layers::Ctx;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, OptimizerState};
pub use vgcm::{mask_event, EncodedEvent, RelationLogit, VideoPass, Vgcm};
