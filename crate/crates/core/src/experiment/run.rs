use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{corpus_hash, Aspect, Corpus, Split};
use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::model::{GraderModel, ModelConfig, Vocabulary};
use crate::trainer::{
    bootstrap, bootstrap_plan, load_checkpoint, plan_for, run_regime, save_checkpoint, Checkpoint, Dataset, Provenance,
    RegimeKind, RegimeOutcome, RngState, Schedule,
};

/// Training vocabulary: every ASR token of the train split. Tokens first
/// seen in other splits map to `<UNK>`.
pub fn build_vocabulary(data: &Dataset) -> Vocabulary {
    let words: BTreeSet<&str> = data
        .split(Split::Train)
        .iter()
        .flat_map(|s| s.transcript.iter().map(String::as_str))
        .collect();
    Vocabulary::build(words)
}

pub fn model_config(cfg: &ExperimentConfig, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    }
}

/// Loads the corpus under the configured output directory.
pub fn open_corpus(cfg: &ExperimentConfig) -> Result<(Dataset, String)> {
    let manifest = cfg.manifest_path();
    if !manifest.exists() {
        return Err(Error::Config(format!(
            "no corpus at {}; run gen-corpus first",
            manifest.display()
        )));
    }
    let corpus = Corpus::load(&manifest)?;
    Ok((Dataset::from_corpus(&corpus)?, corpus_hash(&manifest)?))
}

/// What a cached bootstrap model was trained from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BootstrapKey {
    corpus_hash: String,
    config_hash: String,
    schedule: Schedule,
    seed: u64,
}

const BOOTSTRAP_KEY: &str = "bootstrap.json";

/// Frozen base model shared by every regime. With a cache directory, a
/// base trained from the same corpus, config and schedule is reused.
pub fn base_model(
    cfg: &ExperimentConfig,
    data: &Dataset,
    corpus_hash: &str,
    cache: Option<&Path>,
) -> Result<GraderModel<f32>> {
    let vocab = build_vocabulary(data);
    let mc = model_config(cfg, &vocab);
    let key = BootstrapKey {
        corpus_hash: corpus_hash.to_string(),
        config_hash: mc.hash(),
        schedule: cfg.bootstrap.clone(),
        seed: cfg.bootstrap_seed,
    };
    let key_json = serde_json::to_string_pretty(&key)? + "\n";
    if let Some(dir) = cache {
        let key_path = dir.join(BOOTSTRAP_KEY);
        if fs::read_to_string(&key_path).ok().as_deref() == Some(key_json.as_str()) {
            let mut model = load_checkpoint::<f32>(dir, Some(&mc))?.model;
            model.params.set_trainable_groups(&BTreeSet::new());
            return Ok(model);
        }
    }
    let model = GraderModel::new(mc, vocab, cfg.bootstrap_seed)?;
    let plan = bootstrap_plan(&cfg.bootstrap, cfg.bootstrap_seed);
    let (model, _) = bootstrap(&plan, model, data)?;
    if let Some(dir) = cache {
        let ckpt = Checkpoint {
            model: model.clone(),
            optimizer: None,
            provenance: Provenance {
                regime: "bootstrap".into(),
                stage: plan.name.clone(),
                aspect: "all".into(),
                modality: plan.modality.to_string(),
                epoch: plan.epochs,
            },
            rng: RngState {
                seed: plan.seed,
                epoch: plan.epochs,
            },
        };
        save_checkpoint(&ckpt, dir)?;
        let key_path = dir.join(BOOTSTRAP_KEY);
        fs::write(&key_path, key_json).map_err(|e| Error::io(&key_path, e))?;
    }
    Ok(model)
}

/// Trains one regime for one aspect from the shared base.
pub fn train_regime(
    cfg: &ExperimentConfig,
    kind: RegimeKind,
    aspect: Aspect,
    seed: u64,
    base: &GraderModel<f32>,
    data: &Dataset,
    out_dir: Option<&Path>,
) -> Result<RegimeOutcome<f32>> {
    let regime = plan_for(kind, aspect, &cfg.schedule, seed, cfg.strict_lora_only);
    run_regime(&regime, base, data, out_dir)
}
