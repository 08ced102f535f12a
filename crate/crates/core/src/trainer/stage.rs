use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::level::{Aspect, CefrLevel, NUM_LEVELS};
use crate::corpus::synth::substream;
use crate::error::{Error, Result};
use crate::metrics::{macro_accuracy, Prediction, PredictionSet};
use crate::model::{assemble_sequence, constrained_decode, GraderModel, ModalityMode, LABEL_BASE};
use crate::scalar::Scalar;
use crate::tensor::{AdamW, AdamWConfig, Gradients, Graph, ParamGroup};
use crate::trainer::checkpoint::{save_checkpoint, Checkpoint, Provenance, RngState};
use crate::trainer::data::Sample;
use crate::trainer::plan::{AspectTarget, StagePlan};

/// One JSONL training-log row, written at the end of every epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub stage: String,
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub valid_macro_acc: Option<f64>,
}

/// Train and validation views for one stage.
#[derive(Clone, Debug)]
pub struct StageData<'a> {
    pub train: Vec<&'a Sample>,
    pub valid: Vec<&'a Sample>,
}

#[derive(Clone, Debug)]
pub struct StageOptions {
    pub regime: String,
    pub target: AspectTarget,
    /// Where a last-good checkpoint is written if training diverges.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub validate: bool,
}

impl StageOptions {
    pub fn new(regime: impl Into<String>, target: AspectTarget) -> Self {
        StageOptions {
            regime: regime.into(),
            target,
            out_dir: None,
            max_steps: None,
            validate: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StageOutcome<T: Scalar> {
    pub model: GraderModel<T>,
    pub optimizer: AdamW<T>,
    pub log: Vec<LogRow>,
    /// Mean batch loss of every optimizer step, before its update.
    pub step_losses: Vec<f64>,
    pub epochs_run: usize,
    pub initial_hash: String,
    pub final_hash: String,
    /// Names of parameters that received a gradient at any step.
    pub updated: BTreeSet<String>,
}

impl<T: Scalar> StageOutcome<T> {
    pub fn steps(&self) -> usize {
        self.step_losses.len()
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.log.last().map(|r| r.train_loss)
    }
}

/// Forward pass, loss and gradients for one (sample, aspect) pair.
pub fn example_gradients<T: Scalar>(
    model: &GraderModel<T>,
    sample: &Sample,
    aspect: Aspect,
    mode: ModalityMode,
) -> Result<(f64, Gradients<T>)> {
    let layout = assemble_sequence(
        &model.config,
        &model.vocab,
        aspect,
        mode,
        Some(sample.features.frames()),
        Some(&sample.transcript),
    )?;
    let mut g = Graph::new(&model.params);
    let logits = model.forward(&mut g, &layout, Some(&sample.features))?;
    let loss = model.label_loss(&mut g, logits, sample.labels.get(aspect))?;
    let value = g.value(loss).item().to_f64_lossy();
    let grads = g.backward(loss)?;
    Ok((value, grads))
}

/// Prediction and label cross-entropy of one scored sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub id: String,
    pub predicted: CefrLevel,
    pub gold: CefrLevel,
    pub loss: f64,
}

/// Scores `samples` for `aspect` under `mode`, in input order.
pub fn score_samples<T: Scalar>(
    model: &GraderModel<T>,
    samples: &[&Sample],
    aspect: Aspect,
    mode: ModalityMode,
) -> Result<Vec<Scored>> {
    samples
        .par_iter()
        .map(|s| {
            let layout = assemble_sequence(
                &model.config,
                &model.vocab,
                aspect,
                mode,
                Some(s.features.frames()),
                Some(&s.transcript),
            )?;
            let logits = model.logits(&layout, Some(&s.features))?;
            let gold = s.labels.get(aspect);
            let label: Vec<f64> = logits[LABEL_BASE..LABEL_BASE + NUM_LEVELS]
                .iter()
                .map(|v| v.to_f64_lossy())
                .collect();
            let max = label.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + label.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            Ok(Scored {
                id: s.id.clone(),
                predicted: constrained_decode(&logits),
                gold,
                loss: lse - label[gold.index()],
            })
        })
        .collect()
}

pub fn prediction_set(aspect: Aspect, scored: &[Scored]) -> Result<PredictionSet> {
    PredictionSet::new(
        aspect,
        scored
            .iter()
            .map(|s| Prediction {
                id: s.id.clone(),
                predicted: s.predicted,
                gold: s.gold,
            })
            .collect(),
    )
}

/// Mean loss over all pairs and mean per-aspect macro accuracy.
fn validation<T: Scalar>(
    model: &GraderModel<T>,
    valid: &[&Sample],
    aspects: &[Aspect],
    mode: ModalityMode,
) -> Result<(f64, f64)> {
    let (mut loss, mut count, mut macro_sum) = (0.0, 0usize, 0.0);
    for &aspect in aspects {
        let scored = score_samples(model, valid, aspect, mode)?;
        loss += scored.iter().map(|s| s.loss).sum::<f64>();
        count += scored.len();
        macro_sum += macro_accuracy(&prediction_set(aspect, &scored)?)?;
    }
    Ok((loss / count as f64, macro_sum / aspects.len() as f64))
}

fn diverged<T: Scalar>(
    plan: &StagePlan,
    opts: &StageOptions,
    last_good: &GraderModel<T>,
    epoch: usize,
    step: usize,
) -> Error {
    let mut path = None;
    if let Some(dir) = &opts.out_dir {
        let p = dir.join(format!("{}-last-good", plan.name));
        let ckpt = Checkpoint {
            model: last_good.clone(),
            optimizer: None,
            provenance: Provenance {
                regime: opts.regime.clone(),
                stage: plan.name.clone(),
                aspect: aspect_label(opts.target),
                modality: plan.modality.to_string(),
                epoch,
            },
            rng: RngState { seed: plan.seed, epoch },
        };
        if save_checkpoint(&ckpt, &p).is_ok() {
            path = Some(p);
        }
    }
    Error::Diverged {
        stage: plan.name.clone(),
        epoch,
        step,
        last_good: path,
    }
}

pub(crate) fn aspect_label(target: AspectTarget) -> String {
    match target {
        AspectTarget::One(a) => a.code().to_string(),
        AspectTarget::All => "all".to_string(),
    }
}

/// Trains `model` according to `plan`. Only parameters in the plan's
/// trainable groups change; the per-epoch example order derives from the
/// plan seed, the stage name and the epoch index.
pub fn train_stage<T: Scalar>(
    plan: &StagePlan,
    mut model: GraderModel<T>,
    data: &StageData<'_>,
    opts: &StageOptions,
) -> Result<StageOutcome<T>> {
    plan.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty(format!(
            "stage '{}' has no training utterances",
            plan.name
        )));
    }
    if model.lora_merged() && plan.trainable.contains(&ParamGroup::AudioLora) {
        return Err(Error::Config(format!(
            "stage '{}' trains audio_lora but the model's adapters are merged",
            plan.name
        )));
    }
    let mode = plan.modality;
    let aspects = opts.target.aspects();
    model.params.set_trainable_groups(&plan.trainable);
    model.params.clear_grads();

    let examples: Vec<(usize, Aspect)> = (0..data.train.len())
        .flat_map(|i| aspects.iter().map(move |&a| (i, a)))
        .collect();
    let per_step = plan.batch_size * plan.grad_accum;
    let steps_per_epoch = examples.len().div_ceil(per_step);
    let planned = plan.epochs * steps_per_epoch;
    let total = opts.max_steps.map_or(planned, |m| m.min(planned));
    let schedule = plan.schedule();
    let mut optimizer = AdamW::new(AdamWConfig {
        lr: plan.lr,
        ..AdamWConfig::default()
    });

    let initial_hash = model.params.content_hash();
    let mut last_good = model.clone();
    let mut log = Vec::new();
    let mut step_losses = Vec::new();
    let mut updated = BTreeSet::new();
    let mut epochs_run = 0;

    'epochs: for epoch in 0..plan.epochs {
        if step_losses.len() >= total {
            break;
        }
        let mut order = examples.clone();
        order.shuffle(&mut substream(plan.seed, &format!("{}/{epoch}", plan.name), "shuffle"));
        let (mut epoch_loss, mut epoch_count) = (0.0, 0usize);

        for batch in order.chunks(per_step) {
            let step = step_losses.len();
            if step >= total {
                break;
            }
            let scale = T::of(1.0 / batch.len() as f64);
            let mut batch_loss = 0.0;
            for micro in batch.chunks(plan.batch_size) {
                let results: Vec<Result<(f64, Gradients<T>)>> = micro
                    .par_iter()
                    .map(|&(i, a)| example_gradients(&model, data.train[i], a, mode))
                    .collect();
                for r in results {
                    let (loss, grads) = match r {
                        Ok(v) => v,
                        Err(Error::NonFinite { .. }) => {
                            return Err(diverged(plan, opts, &last_good, epoch, step));
                        }
                        Err(e) => return Err(e),
                    };
                    if !loss.is_finite() {
                        return Err(diverged(plan, opts, &last_good, epoch, step));
                    }
                    for (id, _) in grads.iter() {
                        updated.insert(model.params.get(id).name.clone());
                    }
                    batch_loss += loss;
                    model.params.accumulate_grads(&grads, scale);
                }
            }
            optimizer.step(&mut model.params, schedule.lr_at(step, total))?;
            step_losses.push(batch_loss / batch.len() as f64);
            epoch_loss += batch_loss;
            epoch_count += batch.len();
        }
        if model.params.iter().any(|(_, p)| !p.tensor.is_finite()) {
            return Err(diverged(plan, opts, &last_good, epoch, step_losses.len()));
        }
        epochs_run = epoch + 1;
        let (valid_loss, valid_macro_acc) = if opts.validate && !data.valid.is_empty() {
            let (l, m) = validation(&model, &data.valid, &aspects, mode)?;
            (Some(l), Some(m))
        } else {
            (None, None)
        };
        log.push(LogRow {
            stage: plan.name.clone(),
            epoch,
            step: step_losses.len(),
            train_loss: epoch_loss / epoch_count.max(1) as f64,
            valid_loss,
            valid_macro_acc,
        });
        last_good = model.clone();
        if step_losses.len() >= total {
            break 'epochs;
        }
    }

    let final_hash = model.params.content_hash();
    Ok(StageOutcome {
        model,
        optimizer,
        log,
        step_losses,
        epochs_run,
        initial_hash,
        final_hash,
        updated,
    })
}

/// Writes the stage result as a checkpoint directory.
pub fn save_stage<T: Scalar>(
    outcome: &StageOutcome<T>,
    plan: &StagePlan,
    opts: &StageOptions,
    dir: &Path,
) -> Result<()> {
    let ckpt = Checkpoint {
        model: outcome.model.clone(),
        optimizer: Some(outcome.optimizer.clone()),
        provenance: Provenance {
            regime: opts.regime.clone(),
            stage: plan.name.clone(),
            aspect: aspect_label(opts.target),
            modality: plan.modality.to_string(),
            epoch: outcome.epochs_run,
        },
        rng: RngState {
            seed: plan.seed,
            epoch: outcome.epochs_run,
        },
    };
    save_checkpoint(&ckpt, dir)
}
