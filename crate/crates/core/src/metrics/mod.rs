//! Ordinal scoring metrics over CEFR predictions.

mod report;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::level::{holistic_aggregate, Aspect, CefrLevel, NUM_LEVELS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use report::{EvaluationReport, ReportEntry};

/// Tolerance added to distance thresholds so that exact 0.5 steps compare as inside.
pub const DISTANCE_EPS: f64 = 1e-12;

pub type Confusion = [[usize; NUM_LEVELS]; NUM_LEVELS];

fn check_lengths(op: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Length(format!("{op}: {a} predictions vs {b} gold values")));
    }
    Ok(())
}

/// Sample Pearson correlation. Undefined (an error) when either vector is constant.
pub fn pcc<T: Scalar>(pred: &[T], gold: &[T]) -> Result<T> {
    check_lengths("pcc", pred.len(), gold.len())?;
    if pred.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 pairs, got {}",
            pred.len()
        )));
    }
    let n = T::from_usize(pred.len()).unwrap();
    let mp = pred.iter().copied().sum::<T>() / n;
    let mg = gold.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&p, &g) in pred.iter().zip(gold) {
        let (dp, dg) = (p - mp, g - mg);
        sxy += dp * dg;
        sxx += dp * dp;
        syy += dg * dg;
    }
    if sxx == T::zero() || syy == T::zero() {
        let which = if sxx == T::zero() { "prediction" } else { "gold" };
        return Err(Error::UndefinedCorrelation(format!("{which} vector is constant")));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

pub fn rmse<T: Scalar>(pred: &[T], gold: &[T]) -> Result<T> {
    check_lengths("rmse", pred.len(), gold.len())?;
    if pred.is_empty() {
        return Err(Error::Empty("rmse of zero pairs".into()));
    }
    let n = T::from_usize(pred.len()).unwrap();
    let sq: T = pred.iter().zip(gold).map(|(&p, &g)| (p - g) * (p - g)).sum();
    Ok((sq / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub predicted: CefrLevel,
    pub gold: CefrLevel,
}

/// Predictions for one aspect over a set of utterances with unique ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub aspect: Aspect,
    pairs: Vec<Prediction>,
}

impl PredictionSet {
    pub fn new(aspect: Aspect, pairs: Vec<Prediction>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &pairs {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::Config(format!("duplicate prediction id '{}'", p.id)));
            }
        }
        Ok(PredictionSet { aspect, pairs })
    }

    /// Builds a set from parallel level slices, with ids `0..n`.
    pub fn from_levels(aspect: Aspect, predicted: &[CefrLevel], gold: &[CefrLevel]) -> Result<Self> {
        check_lengths("prediction set", predicted.len(), gold.len())?;
        let pairs = predicted
            .iter()
            .zip(gold)
            .enumerate()
            .map(|(i, (&p, &g))| Prediction {
                id: i.to_string(),
                predicted: p,
                gold: g,
            })
            .collect();
        PredictionSet::new(aspect, pairs)
    }

    pub fn pairs(&self) -> &[Prediction] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn predicted_values<T: Scalar>(&self) -> Vec<T> {
        self.pairs.iter().map(|p| T::of(p.predicted.value())).collect()
    }

    pub fn gold_values<T: Scalar>(&self) -> Vec<T> {
        self.pairs.iter().map(|p| T::of(p.gold.value())).collect()
    }

    fn fraction(&self, hit: impl Fn(&Prediction) -> bool) -> Result<f64> {
        if self.pairs.is_empty() {
            return Err(Error::Empty(format!("no {} predictions", self.aspect.name())));
        }
        Ok(self.pairs.iter().filter(|p| hit(p)).count() as f64 / self.pairs.len() as f64)
    }
}

pub fn abs_accuracy(preds: &PredictionSet) -> Result<f64> {
    preds.fraction(|p| p.predicted == p.gold)
}

/// Fraction whose numeric distance is at most `delta`.
pub fn acc_within(preds: &PredictionSet, delta: f64) -> Result<f64> {
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::Config(format!("delta must be non-negative, got {delta}")));
    }
    preds.fraction(|p| (p.predicted.value() - p.gold.value()).abs() <= delta + DISTANCE_EPS)
}

/// Same or neighbouring level.
pub fn adj_accuracy(preds: &PredictionSet) -> Result<f64> {
    acc_within(preds, 0.5)
}

/// Unweighted mean of per-gold-level recall over levels present in gold.
pub fn macro_accuracy(preds: &PredictionSet) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty(format!("no {} predictions", preds.aspect.name())));
    }
    let cm = confusion_matrix(preds);
    let recalls: Vec<f64> = cm
        .iter()
        .enumerate()
        .filter_map(|(g, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[g] as f64 / total as f64)
        })
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Rows are gold levels, columns predicted levels.
pub fn confusion_matrix(preds: &PredictionSet) -> Confusion {
    let mut cm = [[0; NUM_LEVELS]; NUM_LEVELS];
    for p in &preds.pairs {
        cm[p.gold.index()][p.predicted.index()] += 1;
    }
    cm
}

/// Holistic predictions aggregated from per-aspect C/D/L predictions, scored
/// against the holistic gold labels in `gold`. Only ids present in all three
/// sets and in `gold` are kept, in `content` order.
pub fn aggregate_holistic(
    content: &PredictionSet,
    delivery: &PredictionSet,
    language_use: &PredictionSet,
    gold: &BTreeMap<String, CefrLevel>,
) -> Result<PredictionSet> {
    let index = |s: &PredictionSet| -> BTreeMap<String, CefrLevel> {
        s.pairs.iter().map(|p| (p.id.clone(), p.predicted)).collect()
    };
    let (d, l) = (index(delivery), index(language_use));
    let pairs = content
        .pairs
        .iter()
        .filter_map(|p| {
            let (dv, lv, g) = (d.get(&p.id)?, l.get(&p.id)?, gold.get(&p.id)?);
            Some(Prediction {
                id: p.id.clone(),
                predicted: holistic_aggregate(p.predicted, *dv, *lv),
                gold: *g,
            })
        })
        .collect();
    PredictionSet::new(Aspect::Holistic, pairs)
}

/// Every metric for one prediction set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aspect: Aspect,
    pub n: usize,
    /// `None` when the correlation is undefined (a constant vector).
    pub pcc: Option<f64>,
    pub rmse: f64,
    pub abs_acc: f64,
    pub adj_acc: f64,
    pub macro_acc: f64,
    pub acc_within_0_5: f64,
    pub acc_within_1_0: f64,
    pub confusion: Confusion,
}

impl MetricsReport {
    pub fn compute(preds: &PredictionSet) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::Empty(format!("no {} predictions", preds.aspect.name())));
        }
        let (p, g) = (preds.predicted_values::<f64>(), preds.gold_values::<f64>());
        let pcc = match pcc(&p, &g) {
            Ok(r) => Some(r),
            Err(Error::UndefinedCorrelation(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            aspect: preds.aspect,
            n: preds.len(),
            pcc,
            rmse: rmse(&p, &g)?,
            abs_acc: abs_accuracy(preds)?,
            adj_acc: adj_accuracy(preds)?,
            macro_acc: macro_accuracy(preds)?,
            acc_within_0_5: acc_within(preds, 0.5)?,
            acc_within_1_0: acc_within(preds, 1.0)?,
            confusion: confusion_matrix(preds),
        })
    }

    /// Exact and adjacent accuracy recomputed from the confusion matrix alone.
    pub fn accuracies_from_confusion(&self) -> (f64, f64) {
        let n: usize = self.confusion.iter().flatten().sum();
        let mut exact = 0;
        let mut adjacent = 0;
        for (g, row) in self.confusion.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                if g == p {
                    exact += c;
                }
                if g.abs_diff(p) <= 1 {
                    adjacent += c;
                }
            }
        }
        (exact as f64 / n as f64, adjacent as f64 / n as f64)
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("gold\\pred");
        for l in CefrLevel::ALL {
            s.push(',');
            s.push_str(l.label());
        }
        s.push('\n');
        for (g, row) in self.confusion.iter().enumerate() {
            s.push_str(CefrLevel::ALL[g].label());
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}
