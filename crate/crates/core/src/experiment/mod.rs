//! Experiment configuration, evaluation, grading and ablation grids.

pub mod ablate;
pub mod config;
pub mod eval;
pub mod run;

pub use ablate::{AblationReport, CellRun, GridCell, Stat, Verdict, NEAR_CHANCE_MACRO, SFMT_PCC_TOLERANCE};
pub use config::{desk_bootstrap, desk_schedule, ExperimentConfig, ReportFormat};
pub use eval::{
    checkpoint_dir, evaluate, grade, in_sample_warning, load_aspect_model, AspectModel, GradeResult, AGGREGATED_H,
};
pub use run::{base_model, build_vocabulary, model_config, open_corpus, train_regime};
