use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Aspect, NUM_LEVELS};
use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::trainer::RegimeKind;

/// Allowed shortfall of the two-stage regime's delivery PCC against joint training.
pub const SFMT_PCC_TOLERANCE: f64 = 0.02;
/// Text-only delivery macro accuracy at or below this counts as near chance.
pub const NEAR_CHANCE_MACRO: f64 = 0.25;

/// Outcome of one (regime, aspect, seed) run.
#[derive(Clone, Debug)]
pub struct CellRun {
    pub regime: RegimeKind,
    pub aspect: Aspect,
    pub seed: u64,
    pub result: std::result::Result<MetricsReport, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub spread: f64,
    pub values: Vec<f64>,
}

impl Stat {
    pub fn of(values: Vec<f64>) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let spread = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, spread, values })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub regime: RegimeKind,
    pub aspect: Aspect,
    pub seeds: Vec<u64>,
    /// Over the seeds whose correlation is defined.
    pub pcc: Option<Stat>,
    pub pcc_undefined: usize,
    pub macro_acc: Option<Stat>,
    pub failures: Vec<String>,
}

/// Modality-separation checks over the delivery column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub chance_macro: f64,
    pub text_only_delivery_macro: Option<f64>,
    pub text_only_near_chance: Option<bool>,
    pub sfmt_delivery_pcc: Option<f64>,
    pub joint_delivery_pcc: Option<f64>,
    /// Mean SFMT PCC ≥ mean joint PCC − tolerance.
    pub sfmt_within_tolerance: Option<bool>,
    pub sfmt_exceeds_joint: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub split: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<GridCell>,
    pub verdict: Verdict,
}

fn cell_mean(cells: &[GridCell], regime: RegimeKind, f: impl Fn(&GridCell) -> Option<&Stat>) -> Option<f64> {
    cells
        .iter()
        .find(|c| c.regime == regime && c.aspect == Aspect::Delivery)
        .and_then(f)
        .map(|s| s.mean)
}

impl AblationReport {
    /// Aggregates runs into regime × aspect cells, in regime then aspect order.
    pub fn from_runs(split: &str, runs: &[CellRun]) -> Self {
        let mut grouped: BTreeMap<(RegimeKind, Aspect), Vec<&CellRun>> = BTreeMap::new();
        for r in runs {
            grouped.entry((r.regime, r.aspect)).or_default().push(r);
        }
        let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let cells: Vec<GridCell> = grouped
            .into_iter()
            .map(|((regime, aspect), rs)| {
                let ok: Vec<&MetricsReport> = rs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
                GridCell {
                    regime,
                    aspect,
                    seeds: rs.iter().map(|r| r.seed).collect(),
                    pcc: Stat::of(ok.iter().filter_map(|m| m.pcc).collect()),
                    pcc_undefined: ok.iter().filter(|m| m.pcc.is_none()).count(),
                    macro_acc: Stat::of(ok.iter().map(|m| m.macro_acc).collect()),
                    failures: rs
                        .iter()
                        .filter_map(|r| r.result.as_ref().err().map(|e| format!("seed {}: {e}", r.seed)))
                        .collect(),
                }
            })
            .collect();

        let chance = 1.0 / NUM_LEVELS as f64;
        let text_macro = cell_mean(&cells, RegimeKind::TextOnly, |c| c.macro_acc.as_ref());
        let sfmt = cell_mean(&cells, RegimeKind::Sfmt, |c| c.pcc.as_ref());
        let joint = cell_mean(&cells, RegimeKind::Joint, |c| c.pcc.as_ref());
        let both = sfmt.zip(joint);
        let verdict = Verdict {
            chance_macro: chance,
            text_only_delivery_macro: text_macro,
            text_only_near_chance: text_macro.map(|m| m <= NEAR_CHANCE_MACRO),
            sfmt_delivery_pcc: sfmt,
            joint_delivery_pcc: joint,
            sfmt_within_tolerance: both.map(|(s, j)| s >= j - SFMT_PCC_TOLERANCE),
            sfmt_exceeds_joint: both.map(|(s, j)| s > j),
        };
        AblationReport {
            split: split.to_string(),
            seeds,
            cells,
            verdict,
        }
    }

    pub fn cell(&self, regime: RegimeKind, aspect: Aspect) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.regime == regime && c.aspect == aspect)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("regime,aspect,metric,n,mean,spread\n");
        for c in &self.cells {
            for (name, stat) in [("pcc", &c.pcc), ("macro_acc", &c.macro_acc)] {
                let (n, mean, spread) = match stat {
                    Some(st) => (st.values.len(), format!("{:?}", st.mean), format!("{:?}", st.spread)),
                    None => (0, String::new(), String::new()),
                };
                let _ = writeln!(s, "{},{},{name},{n},{mean},{spread}", c.regime, c.aspect.code());
            }
        }
        s
    }

    /// Regime rows × aspect blocks of PCC and Macro Acc (mean ± spread),
    /// followed by the verdict lines.
    pub fn to_text(&self) -> String {
        let fmt = |s: &Option<Stat>| {
            s.as_ref()
                .map_or_else(|| "n/a".to_string(), |s| format!("{:.3}±{:.3}", s.mean, s.spread))
        };
        let mut aspects: Vec<Aspect> = self.cells.iter().map(|c| c.aspect).collect();
        aspects.sort();
        aspects.dedup();
        let mut regimes: Vec<RegimeKind> = self.cells.iter().map(|c| c.regime).collect();
        regimes.sort();
        regimes.dedup();

        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut s = format!("split: {}   seeds: {}\n", self.split, seeds.join(","));
        let _ = write!(s, "{:<12}", "regime");
        for a in &aspects {
            let _ = write!(s, "| {:^27} ", a.code());
        }
        let _ = write!(s, "|\n{:<12}", "");
        for _ in &aspects {
            let _ = write!(s, "| {:>13} {:>13} ", "PCC", "Macro Acc");
        }
        s.push_str("|\n");
        for r in &regimes {
            let _ = write!(s, "{:<12}", r.as_str());
            for a in &aspects {
                match self.cell(*r, *a) {
                    Some(c) => {
                        let _ = write!(s, "| {:>13} {:>13} ", fmt(&c.pcc), fmt(&c.macro_acc));
                    }
                    None => {
                        let _ = write!(s, "| {:>13} {:>13} ", "-", "-");
                    }
                }
            }
            s.push_str("|\n");
        }
        for c in &self.cells {
            for f in &c.failures {
                let _ = writeln!(s, "FAILED {} {}: {f}", c.regime, c.aspect.code());
            }
        }
        let v = &self.verdict;
        let yn = |b: Option<bool>| b.map_or("n/a", |b| if b { "yes" } else { "no" });
        let num = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let _ = writeln!(
            s,
            "\ntext-only delivery macro {} (chance {:.3}); near chance: {}",
            num(v.text_only_delivery_macro),
            v.chance_macro,
            yn(v.text_only_near_chance)
        );
        let _ = writeln!(
            s,
            "delivery PCC sfmt {} vs joint {}; within {SFMT_PCC_TOLERANCE}: {}; sfmt exceeds joint: {}",
            num(v.sfmt_delivery_pcc),
            num(v.joint_delivery_pcc),
            yn(v.sfmt_within_tolerance),
            yn(v.sfmt_exceeds_joint)
        );
        s
    }
}
