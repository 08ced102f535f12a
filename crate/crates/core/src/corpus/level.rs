use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eight-level CEFR-aligned proficiency scale, ordered low to high.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CefrLevel {
    #[serde(rename = "Pre-A")]
    PreA,
    A1,
    #[serde(rename = "A1+")]
    A1Plus,
    A2,
    #[serde(rename = "A2+")]
    A2Plus,
    B1,
    #[serde(rename = "B1+")]
    B1Plus,
    B2,
}

pub const NUM_LEVELS: usize = 8;

/// Spacing of the numeric embedding between neighboring levels.
pub const LEVEL_STEP: f64 = 0.5;

impl CefrLevel {
    pub const ALL: [CefrLevel; NUM_LEVELS] = [
        CefrLevel::PreA,
        CefrLevel::A1,
        CefrLevel::A1Plus,
        CefrLevel::A2,
        CefrLevel::A2Plus,
        CefrLevel::B1,
        CefrLevel::B1Plus,
        CefrLevel::B2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<CefrLevel> {
        Self::ALL.get(i).copied()
    }

    /// Index clamped into the scale.
    pub fn clamped(i: isize) -> CefrLevel {
        Self::ALL[i.clamp(0, NUM_LEVELS as isize - 1) as usize]
    }

    /// Numeric embedding: `0.5 × index` (Pre-A → 0.0 … B2 → 3.5).
    pub fn value(self) -> f64 {
        LEVEL_STEP * self.index() as f64
    }

    pub fn label(self) -> &'static str {
        match self {
            CefrLevel::PreA => "Pre-A",
            CefrLevel::A1 => "A1",
            CefrLevel::A1Plus => "A1+",
            CefrLevel::A2 => "A2",
            CefrLevel::A2Plus => "A2+",
            CefrLevel::B1 => "B1",
            CefrLevel::B1Plus => "B1+",
            CefrLevel::B2 => "B2",
        }
    }

    /// Bin of a latent factor in `[0, 1]`: `floor(δ × 8)` clamped to the scale.
    pub fn from_latent(delta: f64) -> CefrLevel {
        CefrLevel::clamped((delta * NUM_LEVELS as f64).floor() as isize)
    }
}

impl fmt::Display for CefrLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CefrLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CefrLevel::ALL
            .into_iter()
            .find(|l| l.label() == s || (s == "Pre-A1" && *l == CefrLevel::PreA))
            .ok_or_else(|| Error::Config(format!("unknown CEFR level '{s}'")))
    }
}

/// Scored dimension of a response.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Content,
    Delivery,
    LanguageUse,
    Holistic,
}

impl Aspect {
    pub const ALL: [Aspect; 4] = [Aspect::Content, Aspect::Delivery, Aspect::LanguageUse, Aspect::Holistic];

    pub fn code(self) -> char {
        match self {
            Aspect::Content => 'C',
            Aspect::Delivery => 'D',
            Aspect::LanguageUse => 'L',
            Aspect::Holistic => 'H',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Aspect::Content => "Content",
            Aspect::Delivery => "Delivery",
            Aspect::LanguageUse => "Language Use",
            Aspect::Holistic => "Holistic",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Aspect::Content => "content",
            Aspect::Delivery => "delivery",
            Aspect::LanguageUse => "language_use",
            Aspect::Holistic => "holistic",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for Aspect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c" | "content" => Ok(Aspect::Content),
            "d" | "delivery" => Ok(Aspect::Delivery),
            "l" | "language_use" | "language-use" => Ok(Aspect::LanguageUse),
            "h" | "holistic" => Ok(Aspect::Holistic),
            _ => Err(Error::Config(format!("unknown aspect '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AspectLabels {
    pub content: CefrLevel,
    pub delivery: CefrLevel,
    pub language_use: CefrLevel,
    pub holistic: CefrLevel,
}

impl AspectLabels {
    pub fn get(&self, aspect: Aspect) -> CefrLevel {
        match aspect {
            Aspect::Content => self.content,
            Aspect::Delivery => self.delivery,
            Aspect::LanguageUse => self.language_use,
            Aspect::Holistic => self.holistic,
        }
    }

    pub fn set(&mut self, aspect: Aspect, level: CefrLevel) {
        match aspect {
            Aspect::Content => self.content = level,
            Aspect::Delivery => self.delivery = level,
            Aspect::LanguageUse => self.language_use = level,
            Aspect::Holistic => self.holistic = level,
        }
    }

    /// Labels with holistic derived from the three aspects.
    pub fn from_aspects(content: CefrLevel, delivery: CefrLevel, language_use: CefrLevel) -> Self {
        AspectLabels {
            content,
            delivery,
            language_use,
            holistic: holistic_aggregate(content, delivery, language_use),
        }
    }
}

/// Modal level of three opinions; when all three differ, the median by scale order.
pub fn majority_vote(r1: CefrLevel, r2: CefrLevel, r3: CefrLevel) -> CefrLevel {
    if r1 == r2 || r1 == r3 {
        r1
    } else if r2 == r3 {
        r2
    } else {
        let mut v = [r1, r2, r3];
        v.sort();
        v[1]
    }
}

/// Level nearest to the mean numeric embedding of the three aspects; exact
/// midpoints round up.
pub fn holistic_aggregate(c: CefrLevel, d: CefrLevel, l: CefrLevel) -> CefrLevel {
    let s = c.index() + d.index() + l.index();
    // round(s / 3) with halves rounded up, in integer arithmetic
    CefrLevel::clamped(((2 * s + 3) / 6) as isize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use CefrLevel::*;

    #[test]
    fn embedding_is_uniform() {
        let values: Vec<f64> = CefrLevel::ALL.iter().map(|l| l.value()).collect();
        assert_eq!(values, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5]);
        for l in CefrLevel::ALL {
            assert_eq!(CefrLevel::from_index(l.index()), Some(l));
            assert_eq!(l.label().parse::<CefrLevel>().unwrap(), l);
        }
    }

    #[test]
    fn majority_examples() {
        assert_eq!(majority_vote(A2, A2, B1), A2);
        assert_eq!(majority_vote(A1, A2, B1), A2);
        assert_eq!(majority_vote(B1, B1, B1), B1);
        assert_eq!(majority_vote(B2, PreA, A1Plus), A1Plus);
    }

    #[test]
    fn holistic_examples() {
        assert_eq!(holistic_aggregate(B1, B1, B1), B1);
        assert_eq!(holistic_aggregate(A2, A2Plus, B1), A2Plus);
        assert_eq!(holistic_aggregate(A1, A1Plus, A2), A1Plus);
        // mean indices 5/3 and 7/3 both round to A1+
        assert_eq!(holistic_aggregate(A1, A1, A2), A1Plus);
        assert_eq!(holistic_aggregate(A1, A2, A2), A1Plus);
        assert_eq!(holistic_aggregate(PreA, PreA, A1), PreA);
    }

    #[test]
    fn latent_bins() {
        assert_eq!(CefrLevel::from_latent(1.0), B2);
        assert_eq!(CefrLevel::from_latent(0.0), PreA);
        assert_eq!(CefrLevel::from_latent(0.125), A1);
        assert_eq!(CefrLevel::from_latent(0.1249), PreA);
    }

    #[test]
    fn serde_uses_scale_labels() {
        assert_eq!(serde_json::to_string(&A1Plus).unwrap(), "\"A1+\"");
        assert_eq!(serde_json::from_str::<CefrLevel>("\"Pre-A\"").unwrap(), PreA);
    }
}
