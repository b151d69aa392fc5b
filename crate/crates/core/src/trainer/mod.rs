//! Training loop, bottleneck schedule and optimizer.

mod curriculum;
mod fit;
mod optimizer;

pub use curriculum::{default_step_size, CurriculumAction, CurriculumState, LossReference};
pub use fit::{
    attention_mass, evaluate, fit, BestModel, BottleneckSchedule, EpochRecord, FitOutcome, TrainHistory, Trainer,
    TrainerConfig,
};
pub use optimizer::OptimizerState;
