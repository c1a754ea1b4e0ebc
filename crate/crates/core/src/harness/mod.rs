//! Training loop, evaluation protocols, configuration, and metric export.

mod config;
mod eval;
pub mod metrics;
mod train;

pub use config::{DataConfig, InitConfig, TrainConfig, Variant};
pub use eval::{
    ablate, critic_swap, evaluate_refinement, fresh_attempt_baseline, run_and_score, AblationRow,
    RefinementCurve, SwapOutcome,
};
pub use train::{batch_terms, init_params, train, train_with, StepMetrics, TrainOutcome, Trainer};
