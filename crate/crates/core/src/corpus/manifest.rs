use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{load_features, FeatureMatrix};
use crate::corpus::asr::word_error_rate;
use crate::corpus::level::{majority_vote, Aspect, AspectLabels};
use crate::corpus::spec::Split;
use crate::error::{Error, Result};

/// Generation-time latent proficiency factors, kept for bookkeeping checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub delta_c: f64,
    pub delta_d: f64,
    pub delta_l: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub task_id: String,
    pub speaker_id: String,
    pub features_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav_path: Option<String>,
    pub transcript_ref: Vec<String>,
    pub transcript_asr: Vec<String>,
    pub measured_wer: f64,
    pub labels: AspectLabels,
    pub raters: [AspectLabels; 3],
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Latent>,
}

impl Utterance {
    pub fn check(&self) -> Result<()> {
        for aspect in Aspect::ALL {
            let [a, b, c] = self.raters.map(|r| r.get(aspect));
            if self.labels.get(aspect) != majority_vote(a, b, c) {
                return Err(Error::Config(format!(
                    "{}: {} label is not the majority vote of its raters",
                    self.id,
                    aspect.name()
                )));
            }
        }
        if !self.transcript_ref.is_empty() {
            let wer = word_error_rate(&self.transcript_ref, &self.transcript_asr);
            if (wer - self.measured_wer).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "{}: stored WER {} disagrees with recomputed {}",
                    self.id, self.measured_wer, wer
                )));
            }
        }
        Ok(())
    }
}

pub fn write_manifest(path: impl AsRef<Path>, utterances: &[Utterance]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_manifest(utterances)?).map_err(|e| Error::io(path, e))
}

pub fn encode_manifest(utterances: &[Utterance]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for u in utterances {
        serde_json::to_writer(&mut out, u)?;
        out.write_all(b"\n").expect("writing to a Vec cannot fail");
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    /// Loads and validates a manifest. Fails on duplicate ids or broken invariants.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let utterances = read_manifest(manifest)?;
        let mut seen = BTreeSet::new();
        for u in &utterances {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Config(format!("duplicate utterance id '{}'", u.id)));
            }
            u.check()?;
        }
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Corpus { root, utterances })
    }

    pub fn split(&self, split: Split) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.split == split).collect()
    }

    pub fn features(&self, u: &Utterance) -> Result<FeatureMatrix> {
        load_features(self.root.join(&u.features_path))
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// Every token appearing in any transcript, sorted.
    pub fn token_set(&self) -> BTreeSet<String> {
        self.utterances
            .iter()
            .flat_map(|u| u.transcript_ref.iter().chain(&u.transcript_asr))
            .cloned()
            .collect()
    }
}
