//! Continual training protocol: per-step SGD, step-boundary bookkeeping,
//! pseudo-labelling and evaluation.

mod config;
mod continual;
mod eval;
mod labels;
mod optimizer;
mod step;
mod tracker;

pub use config::{Ablation, BackgroundPolicy, Toggles, TrainConfig};
pub use continual::{final_report, model_from_checkpoint, run_continual, ContinualOutcome, RunControl, TrainerState};
pub use eval::{evaluate, Evaluation};
pub use labels::{build_effective_labels, EffectiveLabels, LabelPolicy};
pub use optimizer::Sgd;
pub use step::{run_step, EpochTrace, IterationLog, StepOutcome};
pub use tracker::AccessTracker;
