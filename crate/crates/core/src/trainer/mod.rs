//! Stage and regime training, checkpoints and training logs.

pub mod checkpoint;
pub mod data;
pub mod plan;
pub mod regime;
pub mod stage;

pub use checkpoint::{load_checkpoint, read_header, save_checkpoint, Checkpoint, Header, Provenance, RngState};
pub use data::{Dataset, Sample};
pub use plan::{
    audio_groups, default_plans, plan_for, plans_with, text_groups, AspectTarget, Regime, RegimeKind, Schedule,
    StageInit, StagePlan,
};
pub use regime::{bootstrap, bootstrap_plan, run_regime, stage_init, write_log, RegimeOutcome, StageReport};
pub use stage::{
    example_gradients, prediction_set, save_stage, score_samples, train_stage, LogRow, Scored, StageData, StageOptions,
    StageOutcome,
};
