use serde::{Deserialize, Serialize};

use crate::corpus::asr::EditMix;
use crate::corpus::level::NUM_LEVELS;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
    Unseen,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Valid, Split::Test, Split::Unseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
            Split::Unseen => "unseen",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split '{s}'")))
    }
}

/// Utterance counts per level (Pre-A … B2) for each split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: [usize; NUM_LEVELS],
    pub valid: [usize; NUM_LEVELS],
    pub test: [usize; NUM_LEVELS],
    pub unseen: [usize; NUM_LEVELS],
}

impl SplitCounts {
    /// Level distribution of the reference benchmark subset (tasks A01/A02).
    pub fn reference() -> Self {
        SplitCounts {
            train: [34, 61, 76, 156, 150, 169, 79, 65],
            valid: [8, 16, 19, 38, 39, 43, 23, 12],
            test: [11, 20, 23, 49, 50, 48, 32, 15],
            unseen: [9, 7, 12, 19, 12, 26, 23, 15],
        }
    }

    pub fn get(&self, split: Split) -> &[usize; NUM_LEVELS] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
            Split::Unseen => &self.unseen,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut [usize; NUM_LEVELS] {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
            Split::Unseen => &mut self.unseen,
        }
    }

    pub fn total(&self) -> usize {
        Split::ALL.iter().map(|&s| self.get(s).iter().sum::<usize>()).sum()
    }

    /// Rescales every cell proportionally so the grand total is exactly
    /// `total`, distributing rounding remainders largest-first.
    pub fn scaled_to(&self, total: usize) -> Self {
        let current = self.total();
        let mut out = self.clone();
        if current == 0 {
            return out;
        }
        let factor = total as f64 / current as f64;
        let mut remainders = Vec::new();
        let mut assigned = 0;
        for (si, split) in Split::ALL.into_iter().enumerate() {
            for lvl in 0..NUM_LEVELS {
                let exact = self.get(split)[lvl] as f64 * factor;
                let floor = exact.floor() as usize;
                out.get_mut(split)[lvl] = floor;
                assigned += floor;
                remainders.push((exact - floor as f64, si, lvl));
            }
        }
        remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
        for &(_, si, lvl) in remainders.iter().take(total - assigned) {
            out.get_mut(Split::ALL[si])[lvl] += 1;
        }
        out
    }
}

/// Parameters of the synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub seed: u64,
    pub counts: SplitCounts,
    pub main_task: String,
    pub unseen_task: String,
    /// Per-rater probability of a one-bin disagreement.
    pub rater_noise: f64,
    pub target_wer: f64,
    pub edit_mix: EditMix,
    pub utterances_per_speaker: usize,
    /// Inclusive range of (function, content) token pairs per response.
    pub min_pairs: usize,
    pub max_pairs: usize,
    /// Standard deviation (log units) of per-cell jitter on the acoustic noise floor.
    pub acoustic_jitter: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 7,
            counts: SplitCounts::reference(),
            main_task: "A01".into(),
            unseen_task: "A02".into(),
            rater_noise: 0.15,
            target_wer: 0.1475,
            edit_mix: EditMix::default(),
            utterances_per_speaker: 5,
            min_pairs: 8,
            max_pairs: 12,
            acoustic_jitter: 0.3,
        }
    }
}

impl CorpusSpec {
    /// Default spec rescaled to `total` utterances.
    pub fn with_total(total: usize, seed: u64) -> Self {
        let base = CorpusSpec::default();
        CorpusSpec {
            seed,
            counts: base.counts.scaled_to(total),
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.total() == 0 {
            return Err(Error::Empty("corpus spec has zero utterances".into()));
        }
        if !(0.0..=0.5).contains(&self.target_wer) {
            return Err(Error::Config(format!(
                "target WER {} outside [0, 0.5]",
                self.target_wer
            )));
        }
        if self.rater_noise.is_nan() || self.rater_noise < 0.0 {
            return Err(Error::Config("rater noise must be non-negative".into()));
        }
        if self.acoustic_jitter < 0.0 || !self.acoustic_jitter.is_finite() {
            return Err(Error::Config("acoustic jitter must be finite and non-negative".into()));
        }
        if self.min_pairs == 0 || self.min_pairs > self.max_pairs {
            return Err(Error::Config(format!(
                "token pair range {}..={} is empty",
                self.min_pairs, self.max_pairs
            )));
        }
        if self.max_pairs > 48 {
            return Err(Error::Config("at most 48 token pairs (96 tokens) per response".into()));
        }
        Ok(())
    }
}
