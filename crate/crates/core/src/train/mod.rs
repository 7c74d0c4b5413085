//! Adam, the milestone schedule, the training loop, cross-validation,
//! checkpoints and metric reports.

mod checkpoint;
mod config;
mod cv;
mod fit;
mod optim;
mod report;

pub use checkpoint::{Checkpoint, Section, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use cv::{cross_validate, CvOutcome, FoldOutcome};
pub use fit::{evaluate, fit, train_step, Control, EpochRecord, FitOutcome, TrainState, THRESHOLD};
pub use optim::{adam_step, OptimState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use report::{CvReport, EvalReport, FoldRow};
