use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::level::Aspect;
use crate::error::{Error, Result};
use crate::model::ModalityMode;
use crate::tensor::ParamGroup;

/// Optimizer schedule shared by the stages of a regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    /// Fraction of a stage's steps spent in linear warmup.
    pub warmup_frac: f64,
    /// Learning rate at the last step as a fraction of `lr`.
    pub final_lr_frac: f64,
}

impl Schedule {
    /// lr 4e-5, 3 epochs, effective batch 32.
    pub fn reference() -> Self {
        Schedule {
            epochs: 3,
            lr: 4e-5,
            batch_size: 8,
            grad_accum: 4,
            warmup_frac: 0.1,
            final_lr_frac: 0.0,
        }
    }

    /// Learning rate for 0-based `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let total = total.max(1) as f64;
        let s = step as f64;
        let warm = (self.warmup_frac * total).ceil();
        if s < warm {
            return self.lr * (s + 1.0) / warm;
        }
        let span = (total - warm).max(1.0);
        let progress = ((s - warm) / span).min(1.0);
        self.lr * (1.0 - (1.0 - self.final_lr_frac) * progress)
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::reference()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageInit {
    /// Start from whatever model is handed to the stage.
    Fresh,
    /// Continue from the previous stage of the same regime.
    Previous,
    Checkpoint(PathBuf),
}

/// Which aspect's labels a stage trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AspectTarget {
    One(Aspect),
    /// Every utterance once per aspect.
    All,
}

impl AspectTarget {
    pub fn aspects(self) -> Vec<Aspect> {
        match self {
            AspectTarget::One(a) => vec![a],
            AspectTarget::All => Aspect::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub name: String,
    pub modality: ModalityMode,
    pub trainable: BTreeSet<ParamGroup>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub warmup_frac: f64,
    pub final_lr_frac: f64,
    pub seed: u64,
    pub init: StageInit,
}

impl StagePlan {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            grad_accum: self.grad_accum,
            warmup_frac: self.warmup_frac,
            final_lr_frac: self.final_lr_frac,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("stage '{}': {m}", self.name)));
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return fail("batch size and accumulation steps must be at least 1");
        }
        if self.trainable.is_empty() {
            return fail("no trainable parameter groups");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("learning rate must be positive");
        }
        if self.modality == ModalityMode::AudioOnly && !self.trainable.iter().any(|g| g.is_audio()) {
            return fail("an audio-only stage must train part of the audio pathway");
        }
        if self.modality == ModalityMode::TextOnly
            && !self
                .trainable
                .iter()
                .any(|g| matches!(g, ParamGroup::TextEmbed | ParamGroup::Backbone | ParamGroup::LabelHead))
        {
            return fail("a text-only stage must train part of the text pathway");
        }
        if self.modality == ModalityMode::TextOnly && self.trainable.iter().any(|g| g.is_audio()) {
            return fail("a text-only stage never reaches the audio pathway");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Joint,
    TextOnly,
    AudioOnly,
    Sfmt,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 4] = [
        RegimeKind::Joint,
        RegimeKind::TextOnly,
        RegimeKind::AudioOnly,
        RegimeKind::Sfmt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeKind::Joint => "joint",
            RegimeKind::TextOnly => "text_only",
            RegimeKind::AudioOnly => "audio_only",
            RegimeKind::Sfmt => "sfmt",
        }
    }

    /// Modality used when evaluating the regime's final model.
    pub fn eval_modality(self) -> ModalityMode {
        match self {
            RegimeKind::Joint | RegimeKind::Sfmt => ModalityMode::Multimodal,
            RegimeKind::TextOnly => ModalityMode::TextOnly,
            RegimeKind::AudioOnly => ModalityMode::AudioOnly,
        }
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegimeKind::ALL
            .into_iter()
            .find(|r| r.as_str() == s || (s == "multimodal" && *r == RegimeKind::Joint))
            .ok_or_else(|| Error::Config(format!("unknown regime '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub kind: RegimeKind,
    pub aspect: Aspect,
    pub stages: Vec<StagePlan>,
}

impl Regime {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config(format!("regime {} has no stages", self.kind)));
        }
        let expected = if self.kind == RegimeKind::Sfmt { 2 } else { 1 };
        if self.stages.len() != expected {
            return Err(Error::Config(format!(
                "regime {} needs {expected} stage(s), has {}",
                self.kind,
                self.stages.len()
            )));
        }
        if self.kind == RegimeKind::Sfmt
            && (self.stages[0].modality != ModalityMode::AudioOnly
                || self.stages[1].modality != ModalityMode::Multimodal
                || self.stages[1].init != StageInit::Previous)
        {
            return Err(Error::Config(
                "sfmt must be an audio-only stage followed by a multimodal stage continuing from it".into(),
            ));
        }
        self.stages.iter().try_for_each(StagePlan::validate)
    }
}

/// Groups updated by audio-pathway stages.
pub fn audio_groups(strict_lora_only: bool) -> BTreeSet<ParamGroup> {
    if strict_lora_only {
        [ParamGroup::AudioLora].into()
    } else {
        [ParamGroup::AudioLora, ParamGroup::AudioProjector, ParamGroup::LabelHead].into()
    }
}

pub fn text_groups() -> BTreeSet<ParamGroup> {
    [ParamGroup::TextEmbed, ParamGroup::LabelHead].into()
}

/// The four comparison regimes for `aspect` under `schedule`. The two-stage
/// regime splits the epoch budget evenly, the first stage taking any odd epoch.
pub fn plans_with(aspect: Aspect, schedule: &Schedule, seed: u64, strict_lora_only: bool) -> Vec<Regime> {
    let stage = |name: &str, modality, trainable: BTreeSet<ParamGroup>, epochs: usize, init| StagePlan {
        name: name.to_string(),
        modality,
        trainable,
        epochs: epochs.max(1),
        lr: schedule.lr,
        batch_size: schedule.batch_size,
        grad_accum: schedule.grad_accum,
        warmup_frac: schedule.warmup_frac,
        final_lr_frac: schedule.final_lr_frac,
        seed,
        init,
    };
    let audio = audio_groups(strict_lora_only);
    let first = schedule.epochs.div_ceil(2);
    let second = schedule.epochs - first;
    vec![
        Regime {
            kind: RegimeKind::Joint,
            aspect,
            stages: vec![stage(
                "joint",
                ModalityMode::Multimodal,
                audio.clone(),
                schedule.epochs,
                StageInit::Fresh,
            )],
        },
        Regime {
            kind: RegimeKind::TextOnly,
            aspect,
            stages: vec![stage(
                "text_only",
                ModalityMode::TextOnly,
                text_groups(),
                schedule.epochs,
                StageInit::Fresh,
            )],
        },
        Regime {
            kind: RegimeKind::AudioOnly,
            aspect,
            stages: vec![stage(
                "audio_only",
                ModalityMode::AudioOnly,
                audio.clone(),
                schedule.epochs,
                StageInit::Fresh,
            )],
        },
        Regime {
            kind: RegimeKind::Sfmt,
            aspect,
            stages: vec![
                stage(
                    "stage1",
                    ModalityMode::AudioOnly,
                    audio.clone(),
                    first,
                    StageInit::Fresh,
                ),
                stage("stage2", ModalityMode::Multimodal, audio, second, StageInit::Previous),
            ],
        },
    ]
}

/// Reference-schedule regimes for `aspect`.
pub fn default_plans(aspect: Aspect) -> Vec<Regime> {
    plans_with(aspect, &Schedule::reference(), 0, false)
}

/// Regime of `kind` from [`plans_with`].
pub fn plan_for(kind: RegimeKind, aspect: Aspect, schedule: &Schedule, seed: u64, strict_lora_only: bool) -> Regime {
    plans_with(aspect, schedule, seed, strict_lora_only)
        .into_iter()
        .find(|r| r.kind == kind)
        .expect("every kind is planned")
}
