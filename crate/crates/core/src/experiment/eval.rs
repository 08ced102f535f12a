use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::audio::FeatureMatrix;
use crate::corpus::{holistic_aggregate, Aspect, CefrLevel, Split};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_holistic, EvaluationReport, MetricsReport, ReportEntry};
use crate::model::{assemble_sequence, GraderModel, ModalityMode};
use crate::trainer::{load_checkpoint, prediction_set, read_header, score_samples, Dataset};

/// Report key of the holistic level aggregated from C/D/L predictions.
pub const AGGREGATED_H: &str = "H_agg";

/// A trained single-aspect model and the modality it is evaluated in.
#[derive(Clone, Debug)]
pub struct AspectModel {
    pub aspect: Aspect,
    pub modality: ModalityMode,
    pub regime: String,
    pub model: GraderModel<f32>,
    pub source: Option<PathBuf>,
}

/// Resolves a checkpoint argument: either a checkpoint directory or a run
/// directory holding `final/`.
pub fn checkpoint_dir(path: &Path) -> PathBuf {
    let fin = path.join(crate::trainer::regime::FINAL_DIR);
    if fin.join(crate::trainer::checkpoint::HEADER_FILE).exists() {
        fin
    } else {
        path.to_path_buf()
    }
}

pub fn load_aspect_model(path: &Path) -> Result<AspectModel> {
    let dir = checkpoint_dir(path);
    let header = read_header(&dir)?;
    let aspect: Aspect = header.provenance.aspect.parse()?;
    let modality: ModalityMode = header.provenance.modality.parse()?;
    let ckpt = load_checkpoint::<f32>(&dir, Some(&header.config))?;
    Ok(AspectModel {
        aspect,
        modality,
        regime: header.provenance.regime,
        model: ckpt.model,
        source: Some(dir),
    })
}

/// Warning printed when a model is scored on the data it was trained on.
pub fn in_sample_warning(split: Split) -> Option<String> {
    (split == Split::Train).then(|| format!("warning: evaluating on the '{split}' split is in-sample"))
}

/// Scores every model on `split`. Entries follow C, D, L, H order; when C, D
/// and L models are all present an aggregated holistic entry is appended.
pub fn evaluate(models: &[AspectModel], data: &Dataset, split: Split) -> Result<EvaluationReport> {
    if models.is_empty() {
        return Err(Error::Empty("no models to evaluate".into()));
    }
    let samples = data.split(split);
    if samples.is_empty() {
        return Err(Error::Empty(format!("split '{split}' has no utterances")));
    }
    let mut by_aspect: BTreeMap<Aspect, &AspectModel> = BTreeMap::new();
    for m in models {
        if by_aspect.insert(m.aspect, m).is_some() {
            return Err(Error::Config(format!(
                "two models given for aspect {}",
                m.aspect.code()
            )));
        }
    }
    let modalities: BTreeSet<&str> = by_aspect.values().map(|m| m.modality.as_str()).collect();

    let mut entries = Vec::new();
    let mut sets = BTreeMap::new();
    for (&aspect, m) in &by_aspect {
        let scored = score_samples(&m.model, &samples, aspect, m.modality)?;
        let set = prediction_set(aspect, &scored)?;
        entries.push(ReportEntry {
            key: aspect.code().to_string(),
            metrics: MetricsReport::compute(&set)?,
        });
        sets.insert(aspect, set);
    }
    if let (Some(c), Some(d), Some(l)) = (
        sets.get(&Aspect::Content),
        sets.get(&Aspect::Delivery),
        sets.get(&Aspect::LanguageUse),
    ) {
        let gold: BTreeMap<String, CefrLevel> = samples.iter().map(|s| (s.id.clone(), s.labels.holistic)).collect();
        entries.push(ReportEntry {
            key: AGGREGATED_H.into(),
            metrics: MetricsReport::compute(&aggregate_holistic(c, d, l, &gold)?)?,
        });
    }
    Ok(EvaluationReport {
        split: split.to_string(),
        modality: modalities.into_iter().collect::<Vec<_>>().join("+"),
        entries,
    })
}

/// Levels assigned to one response.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GradeResult {
    pub modality: ModalityMode,
    pub scores: BTreeMap<String, CefrLevel>,
    pub aggregated_holistic: Option<CefrLevel>,
}

/// Grades one response with every supplied model. Without a transcript the
/// models run audio-only with the null text placeholder.
pub fn grade(models: &[AspectModel], features: &FeatureMatrix, transcript: Option<&[String]>) -> Result<GradeResult> {
    if models.is_empty() {
        return Err(Error::Empty("no models to grade with".into()));
    }
    let modality = if transcript.is_some() {
        ModalityMode::Multimodal
    } else {
        ModalityMode::AudioOnly
    };
    let mut scores = BTreeMap::new();
    let mut levels = BTreeMap::new();
    for m in models {
        let layout = assemble_sequence(
            &m.model.config,
            &m.model.vocab,
            m.aspect,
            modality,
            Some(features.frames()),
            transcript,
        )?;
        let level = m.model.predict(&layout, Some(features))?;
        scores.insert(m.aspect.code().to_string(), level);
        levels.insert(m.aspect, level);
    }
    let aggregated_holistic = match (
        levels.get(&Aspect::Content),
        levels.get(&Aspect::Delivery),
        levels.get(&Aspect::LanguageUse),
    ) {
        (Some(&c), Some(&d), Some(&l)) => Some(holistic_aggregate(c, d, l)),
        _ => None,
    };
    Ok(GradeResult {
        modality,
        scores,
        aggregated_holistic,
    })
}
