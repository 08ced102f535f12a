use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::level::{Aspect, CefrLevel, NUM_LEVELS};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const NULLTEXT: usize = 2;
pub const SCORE: usize = 3;
/// First of four instruction tokens, in C, D, L, H order.
pub const ASSESS_BASE: usize = 4;
/// First of eight contiguous label tokens, Pre-A … B2.
pub const LABEL_BASE: usize = 8;
pub const UNK: usize = LABEL_BASE + NUM_LEVELS;
pub const RESERVED: usize = UNK + 1;

fn reserved_tokens() -> Vec<String> {
    let mut v: Vec<String> = ["<PAD>", "<BOS>", "<NULLTEXT>", "<SCORE>"].map(String::from).to_vec();
    v.extend(Aspect::ALL.iter().map(|a| format!("<ASSESS_{}>", a.code())));
    v.extend((0..NUM_LEVELS).map(|i| format!("<LV_{i}>")));
    v.push("<UNK>".into());
    v
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `words` in sorted order.
    pub fn build<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let reserved = reserved_tokens();
        let extra: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !reserved.contains(w))
            .collect();
        let tokens: Vec<String> = reserved.into_iter().chain(extra).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Id of `word`, or the unknown-token id.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, words: &[String]) -> Vec<usize> {
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn instruction(aspect: Aspect) -> usize {
        ASSESS_BASE + Aspect::ALL.iter().position(|&a| a == aspect).unwrap()
    }

    pub fn label_token(level: CefrLevel) -> usize {
        LABEL_BASE + level.index()
    }

    pub fn label_ids() -> std::ops::Range<usize> {
        LABEL_BASE..LABEL_BASE + NUM_LEVELS
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        let reserved = reserved_tokens();
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved[..] {
            return Err(Error::Config(
                "vocabulary does not start with the reserved tokens".into(),
            ));
        }
        let index: BTreeMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::Config("vocabulary contains duplicate tokens".into()));
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::build(["zeta", "alpha", "<BOS>"]);
        assert_eq!(v.token(BOS), Some("<BOS>"));
        assert_eq!(v.token(NULLTEXT), Some("<NULLTEXT>"));
        assert_eq!(v.token(Vocabulary::instruction(Aspect::Delivery)), Some("<ASSESS_D>"));
        assert_eq!(v.token(Vocabulary::label_token(CefrLevel::B2)), Some("<LV_7>"));
        assert_eq!(v.id("alpha"), RESERVED);
        assert_eq!(v.id("zeta"), RESERVED + 1);
        assert_eq!(v.id("missing"), UNK);
        assert_eq!(v.len(), RESERVED + 2);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
    }
}
