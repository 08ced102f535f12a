use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::synth::MANIFEST_FILE;
use crate::corpus::{Aspect, CorpusSpec, Split};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::{RegimeKind, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Text,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Text => "txt",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "text" | "txt" => Ok(ReportFormat::Text),
            _ => Err(Error::Config(format!("unknown report format '{s}'"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

/// Everything one experiment needs, serialized as a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    /// `vocab_size` is filled in from the corpus vocabulary at run time.
    pub model: ModelConfig,
    pub bootstrap: Schedule,
    pub bootstrap_seed: u64,
    pub schedule: Schedule,
    pub strict_lora_only: bool,
    pub regimes: Vec<RegimeKind>,
    pub aspects: Vec<Aspect>,
    pub seeds: Vec<u64>,
    pub eval_split: Split,
    pub out_dir: PathBuf,
    pub formats: Vec<ReportFormat>,
}

/// Schedule sized for a few thousand synthetic utterances on one CPU core.
pub fn desk_schedule() -> Schedule {
    Schedule {
        epochs: 4,
        lr: 2e-3,
        ..Schedule::reference()
    }
}

/// Warm-up of the shared base model; the desk schedule run twice as long.
pub fn desk_bootstrap() -> Schedule {
    Schedule {
        epochs: 8,
        ..desk_schedule()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusSpec::default(),
            model: ModelConfig::default(),
            bootstrap: desk_bootstrap(),
            bootstrap_seed: 0,
            schedule: desk_schedule(),
            strict_lora_only: false,
            regimes: RegimeKind::ALL.to_vec(),
            aspects: Aspect::ALL.to_vec(),
            seeds: vec![0],
            eval_split: Split::Test,
            out_dir: PathBuf::from("runs"),
            formats: vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Text],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.aspects.is_empty() {
            return Err(Error::Config("aspect list is empty".into()));
        }
        if self.regimes.is_empty() {
            return Err(Error::Config("regime list is empty".into()));
        }
        if self.formats.is_empty() {
            return Err(Error::Config("no report format selected".into()));
        }
        self.corpus.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.out_dir.join("corpus")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.corpus_dir().join(MANIFEST_FILE)
    }

    pub fn bootstrap_dir(&self) -> PathBuf {
        self.out_dir.join("bootstrap")
    }

    /// `out/<regime>/<aspect code>`, with a per-seed level when the
    /// experiment has more than one seed.
    pub fn run_dir(&self, regime: RegimeKind, aspect: Aspect, seed: u64) -> PathBuf {
        let base = if self.seeds.len() > 1 {
            self.out_dir.join(format!("seed-{seed}"))
        } else {
            self.out_dir.clone()
        };
        base.join(regime.as_str()).join(aspect.code().to_string())
    }
}
