use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::model::{GraderModel, ModalityMode};
use crate::scalar::Scalar;
use crate::tensor::ParamGroup;
use crate::trainer::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Provenance, RngState};
use crate::trainer::data::Dataset;
use crate::trainer::plan::{AspectTarget, Regime, Schedule, StageInit, StagePlan};
use crate::trainer::stage::{save_stage, train_stage, LogRow, StageData, StageOptions};

pub const LOG_FILE: &str = "log.jsonl";
pub const FINAL_DIR: &str = "final";

/// Summary of one executed stage.
#[derive(Clone, Debug)]
pub struct StageReport {
    pub name: String,
    pub modality: ModalityMode,
    pub steps: usize,
    pub initial_hash: String,
    pub final_hash: String,
    pub updated: BTreeSet<String>,
    pub step_losses: Vec<f64>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RegimeOutcome<T: Scalar> {
    pub regime: Regime,
    pub model: GraderModel<T>,
    /// Final model of every stage, in order.
    pub stage_models: Vec<GraderModel<T>>,
    pub stages: Vec<StageReport>,
    pub log: Vec<LogRow>,
    pub final_checkpoint: Option<PathBuf>,
}

/// The model a stage starts from.
pub fn stage_init<T: Scalar>(
    plan: &StagePlan,
    base: &GraderModel<T>,
    previous: Option<&GraderModel<T>>,
) -> Result<GraderModel<T>> {
    match &plan.init {
        StageInit::Fresh => Ok(base.clone()),
        StageInit::Previous => previous.cloned().ok_or_else(|| {
            Error::Config(format!(
                "stage '{}' continues from a previous stage but is first",
                plan.name
            ))
        }),
        StageInit::Checkpoint(path) => Ok(load_checkpoint::<T>(path, Some(&base.config))?.model),
    }
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Runs the stages of `regime` in order, starting from `base`. With an
/// output directory, every stage writes a checkpoint under its own name,
/// the last stage's model is also written to `final/`, and the per-epoch log
/// goes to `log.jsonl`.
pub fn run_regime<T: Scalar>(
    regime: &Regime,
    base: &GraderModel<T>,
    data: &Dataset,
    out_dir: Option<&Path>,
) -> Result<RegimeOutcome<T>> {
    regime.validate()?;
    let stage_data = StageData {
        train: data.split(Split::Train),
        valid: data.split(Split::Valid),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut stage_models: Vec<GraderModel<T>> = Vec::new();
    let mut stages = Vec::new();
    let mut log = Vec::new();
    for plan in &regime.stages {
        let model = stage_init(plan, base, stage_models.last())?;
        let opts = StageOptions {
            out_dir: out_dir.map(Path::to_path_buf),
            ..StageOptions::new(regime.kind.as_str(), AspectTarget::One(regime.aspect))
        };
        let outcome = train_stage(plan, model, &stage_data, &opts)?;
        let checkpoint = match out_dir {
            Some(dir) => {
                let p = dir.join(&plan.name);
                save_stage(&outcome, plan, &opts, &p)?;
                Some(p)
            }
            None => None,
        };
        log.extend(outcome.log.iter().cloned());
        stages.push(StageReport {
            name: plan.name.clone(),
            modality: plan.modality,
            steps: outcome.steps(),
            initial_hash: outcome.initial_hash.clone(),
            final_hash: outcome.final_hash.clone(),
            updated: outcome.updated.clone(),
            step_losses: outcome.step_losses.clone(),
            checkpoint,
        });
        stage_models.push(outcome.model);
    }
    let model = stage_models.last().cloned().expect("validated regimes have stages");
    let final_checkpoint = match out_dir {
        Some(dir) => {
            let last = regime.stages.last().expect("validated regimes have stages");
            let p = dir.join(FINAL_DIR);
            let ckpt = Checkpoint {
                model: model.clone(),
                optimizer: None,
                provenance: Provenance {
                    regime: regime.kind.as_str().to_string(),
                    stage: last.name.clone(),
                    aspect: regime.aspect.code().to_string(),
                    modality: regime.kind.eval_modality().to_string(),
                    epoch: last.epochs,
                },
                rng: RngState {
                    seed: last.seed,
                    epoch: last.epochs,
                },
            };
            save_checkpoint(&ckpt, &p)?;
            write_log(&dir.join(LOG_FILE), &log)?;
            Some(p)
        }
        None => None,
    };
    Ok(RegimeOutcome {
        regime: regime.clone(),
        model,
        stage_models,
        stages,
        log,
        final_checkpoint,
    })
}

/// Warm-up stage standing in for a pretrained base: every group except the
/// adapters trains on all four aspects in multimodal mode.
pub fn bootstrap_plan(schedule: &Schedule, seed: u64) -> StagePlan {
    StagePlan {
        name: "bootstrap".into(),
        modality: ModalityMode::Multimodal,
        trainable: ParamGroup::ALL
            .into_iter()
            .filter(|g| *g != ParamGroup::AudioLora)
            .collect(),
        epochs: schedule.epochs,
        lr: schedule.lr,
        batch_size: schedule.batch_size,
        grad_accum: schedule.grad_accum,
        warmup_frac: schedule.warmup_frac,
        final_lr_frac: schedule.final_lr_frac,
        seed,
        init: StageInit::Fresh,
    }
}

/// Trains `model` with `plan` on the train split over all aspects and
/// returns it with every group frozen.
pub fn bootstrap<T: Scalar>(
    plan: &StagePlan,
    model: GraderModel<T>,
    data: &Dataset,
) -> Result<(GraderModel<T>, Vec<LogRow>)> {
    let stage_data = StageData {
        train: data.split(Split::Train),
        valid: data.split(Split::Valid),
    };
    let opts = StageOptions::new("bootstrap", AspectTarget::All);
    let outcome = train_stage(plan, model, &stage_data, &opts)?;
    let mut model = outcome.model;
    model.params.set_trainable_groups(&BTreeSet::new());
    Ok((model, outcome.log))
}
