use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::MetricsReport;

/// One column block of a report: a trained aspect model, or the holistic
/// level aggregated from the C/D/L predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub key: String,
    pub metrics: MetricsReport,
}

/// Metrics for every evaluated aspect on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub split: String,
    pub modality: String,
    pub entries: Vec<ReportEntry>,
}

const CSV_METRICS: [&str; 8] = [
    "n",
    "pcc",
    "rmse",
    "abs_acc",
    "adj_acc",
    "macro_acc",
    "acc_within_0_5",
    "acc_within_1_0",
];

fn metric_value(m: &MetricsReport, name: &str) -> Option<f64> {
    match name {
        "n" => Some(m.n as f64),
        "pcc" => m.pcc,
        "rmse" => Some(m.rmse),
        "abs_acc" => Some(m.abs_acc),
        "adj_acc" => Some(m.adj_acc),
        "macro_acc" => Some(m.macro_acc),
        "acc_within_0_5" => Some(m.acc_within_0_5),
        "acc_within_1_0" => Some(m.acc_within_1_0),
        _ => None,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

impl EvaluationReport {
    pub fn get(&self, key: &str) -> Option<&MetricsReport> {
        self.entries.iter().find(|e| e.key == key).map(|e| &e.metrics)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per aspect × metric. Undefined values are left empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,modality,aspect,metric,value\n");
        for e in &self.entries {
            for name in CSV_METRICS {
                let v = metric_value(&e.metrics, name)
                    .map(|v| format!("{v:?}"))
                    .unwrap_or_default();
                let _ = writeln!(s, "{},{},{},{name},{v}", self.split, self.modality, e.key);
            }
        }
        s
    }

    /// Side-by-side aspect blocks with PCC / ABS / ADJ sub-columns, followed
    /// by the secondary metrics per aspect.
    pub fn to_text(&self) -> String {
        let mut s = format!("split: {}   modality: {}\n", self.split, self.modality);
        let mut head = String::new();
        let mut sub = String::new();
        let mut row = String::new();
        for e in &self.entries {
            let _ = write!(head, "| {:^26} ", e.key);
            let _ = write!(sub, "| {:>8}{:>9}{:>9} ", "PCC", "ABS", "ADJ");
            let m = &e.metrics;
            let _ = write!(row, "| {:>8}{:>9.4}{:>9.4} ", cell(m.pcc), m.abs_acc, m.adj_acc);
        }
        let _ = writeln!(s, "{head}|\n{sub}|\n{row}|");
        let _ = writeln!(
            s,
            "\n{:<8}{:>7}{:>10}{:>10}{:>10}{:>10}",
            "aspect", "n", "Macro", "RMSE", "Acc±0.5", "Acc±1.0"
        );
        for e in &self.entries {
            let m = &e.metrics;
            let _ = writeln!(
                s,
                "{:<8}{:>7}{:>10.4}{:>10.4}{:>10.4}{:>10.4}",
                e.key, m.n, m.macro_acc, m.rmse, m.acc_within_0_5, m.acc_within_1_0
            );
        }
        s
    }
}
