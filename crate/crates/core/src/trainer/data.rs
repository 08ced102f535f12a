use std::collections::BTreeMap;
use std::sync::Arc;

use crate::audio::FeatureMatrix;
use crate::corpus::{AspectLabels, Corpus, Generated, Split, Utterance};
use crate::error::{Error, Result};

/// One utterance as seen by the trainer: features, ASR transcript, labels.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub task_id: String,
    pub speaker_id: String,
    pub split: Split,
    pub features: Arc<FeatureMatrix>,
    pub transcript: Vec<String>,
    pub labels: AspectLabels,
}

impl Sample {
    pub fn new(u: &Utterance, features: FeatureMatrix) -> Self {
        Sample {
            id: u.id.clone(),
            task_id: u.task_id.clone(),
            speaker_id: u.speaker_id.clone(),
            split: u.split,
            features: Arc::new(features),
            transcript: u.transcript_asr.clone(),
            labels: u.labels,
        }
    }
}

/// In-memory corpus with features loaded, kept in manifest order.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if let Some(j) = seen.insert(s.id.as_str(), i) {
                return Err(Error::Config(format!("duplicate sample id '{}' at {j} and {i}", s.id)));
            }
        }
        Ok(Dataset { samples })
    }

    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        let samples = corpus
            .utterances
            .iter()
            .map(|u| Ok(Sample::new(u, corpus.features(u)?)))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples)
    }

    pub fn from_generated(generated: &[Generated]) -> Result<Self> {
        Dataset::new(
            generated
                .iter()
                .map(|g| Sample::new(&g.utterance, g.features.clone()))
                .collect(),
        )
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Copy holding only the first `n` samples of `split`.
    pub fn take(&self, split: Split, n: usize) -> Dataset {
        Dataset {
            samples: self.split(split).into_iter().take(n).cloned().collect(),
        }
    }
}
