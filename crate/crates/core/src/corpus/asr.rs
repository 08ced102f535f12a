//! Simulated recognition errors at a target word error rate.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative frequencies of substitutions, insertions and deletions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditMix {
    pub substitution: f64,
    pub insertion: f64,
    pub deletion: f64,
}

impl Default for EditMix {
    fn default() -> Self {
        EditMix {
            substitution: 0.70,
            insertion: 0.15,
            deletion: 0.15,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Edit {
    Substitute,
    Insert,
    Delete,
}

impl EditMix {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Edit {
        let total = self.substitution + self.insertion + self.deletion;
        let u = rng.gen::<f64>() * total;
        if u < self.substitution {
            Edit::Substitute
        } else if u < self.substitution + self.insertion {
            Edit::Insert
        } else {
            Edit::Delete
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corrupted {
    pub tokens: Vec<String>,
    pub measured_wer: f64,
}

/// Token-level Levenshtein distance.
pub fn levenshtein<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r.as_ref() != h.as_ref());
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

pub fn word_error_rate<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> f64 {
    levenshtein(reference, hypothesis) as f64 / reference.len() as f64
}

/// Inputs at least this long are refined until the measured rate is close to target.
const REFINE_MIN_TOKENS: usize = 1_000;
const REFINE_TOLERANCE: f64 = 0.005;

/// Applies random edits drawn from `mix` at distinct positions of `tokens`,
/// `round(target_wer × N)` of them in expectation, and reports the exact
/// Levenshtein-based WER of the result. Replacement tokens come from `vocab`.
pub fn corrupt_transcript(
    tokens: &[String],
    target_wer: f64,
    vocab: &[String],
    mix: EditMix,
    rng: &mut impl Rng,
) -> Result<Corrupted> {
    if tokens.is_empty() {
        return Err(Error::Empty("cannot corrupt an empty transcript".into()));
    }
    if !(0.0..=0.5).contains(&target_wer) {
        return Err(Error::Config(format!("target WER {target_wer} outside [0, 0.5]")));
    }
    if vocab.len() < 2 {
        return Err(Error::Config("replacement vocabulary needs at least two tokens".into()));
    }
    let n = tokens.len();
    let exact = target_wer * n as f64;
    let mut edits = exact.floor() as usize;
    if rng.gen::<f64>() < exact - exact.floor() {
        edits += 1;
    }

    let mut touched = BTreeSet::new();
    let mut plan: Vec<(usize, Edit, String)> = Vec::new();
    let add_edits = |count: usize,
                     touched: &mut BTreeSet<usize>,
                     plan: &mut Vec<(usize, Edit, String)>,
                     rng: &mut dyn rand::RngCore| {
        let free: Vec<usize> = (0..n).filter(|i| !touched.contains(i)).collect();
        let count = count.min(free.len());
        for k in sample(rng, free.len(), count) {
            let pos = free[k];
            touched.insert(pos);
            let edit = mix.draw(rng);
            let token = loop {
                let t = &vocab[rng.gen_range(0..vocab.len())];
                if edit != Edit::Substitute || t != &tokens[pos] {
                    break t.clone();
                }
            };
            plan.push((pos, edit, token));
        }
    };
    add_edits(edits, &mut touched, &mut plan, rng);

    loop {
        let out = apply(tokens, &plan);
        let measured = word_error_rate(tokens, &out);
        let shortfall = target_wer - measured;
        if n < REFINE_MIN_TOKENS || shortfall <= REFINE_TOLERANCE || touched.len() == n {
            return Ok(Corrupted {
                tokens: out,
                measured_wer: measured,
            });
        }
        let extra = (shortfall * n as f64).round().max(1.0) as usize;
        add_edits(extra, &mut touched, &mut plan, rng);
    }
}

fn apply(tokens: &[String], plan: &[(usize, Edit, String)]) -> Vec<String> {
    let mut by_pos: Vec<Option<(Edit, &str)>> = vec![None; tokens.len()];
    for (pos, edit, tok) in plan {
        by_pos[*pos] = Some((*edit, tok.as_str()));
    }
    let mut out = Vec::with_capacity(tokens.len() + plan.len());
    for (tok, edit) in tokens.iter().zip(by_pos) {
        match edit {
            None => out.push(tok.clone()),
            Some((Edit::Substitute, r)) => out.push(r.to_string()),
            Some((Edit::Insert, r)) => {
                out.push(r.to_string());
                out.push(tok.clone());
            }
            Some((Edit::Delete, _)) => {}
        }
    }
    out
}
