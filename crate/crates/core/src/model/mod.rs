//! Network assembly: two attention heads feeding two towers, the fused
//! output head, the auxiliary branch and their losses.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{AuxBranch, ModelConfig, Variant};
pub use forward::{
    backward_and_accumulate, bce_loss, build_forward, delta_forward, gradients, objective, predict, total_loss,
    ForwardNodes, ForwardOutput, LossTerms, Mode, StepLoss,
};
pub use params::{Dense, ModelParams, ParamGrads};
