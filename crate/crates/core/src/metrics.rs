//! Classification metrics over recency-rank classes.
//!
//! Classes are candidate indices (index `i` is recency rank `i + 1`), since
//! candidate sets differ from sample to sample. Precision, recall or F1 of
//! a class with a zero denominator count as 0.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::speaker::CandidateDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    MacroF1,
    WeightedF1,
    MicroF1,
    #[serde(rename = "acc")]
    Accuracy,
    Mrr,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::MacroF1,
        Metric::WeightedF1,
        Metric::MicroF1,
        Metric::Accuracy,
        Metric::Mrr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::MacroF1 => "macro-f1",
            Metric::WeightedF1 => "weighted-f1",
            Metric::MicroF1 => "micro-f1",
            Metric::Accuracy => "acc",
            Metric::Mrr => "mrr",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown metric `{s}` (expected macro-f1|weighted-f1|micro-f1|acc|mrr)"))
    }
}

/// One scored sample. `probs` is absent for baselines that only emit a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub gold: usize,
    pub predicted: usize,
    pub probs: Option<CandidateDistribution>,
}

impl Prediction {
    pub fn from_distribution(gold: usize, probs: CandidateDistribution) -> Self {
        Prediction {
            gold,
            predicted: probs.predict(),
            probs: Some(probs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    /// Candidate index; recency rank is `class + 1`.
    pub class: usize,
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
    /// `None` when some prediction carries no probability ranking.
    pub mrr: Option<f64>,
    pub per_class: Vec<ClassScore>,
    pub samples: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn evaluate(predictions: &[Prediction]) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::contract("cannot evaluate zero predictions"));
    }
    // class -> (support, predicted, tp)
    let mut counts: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for p in predictions {
        counts.entry(p.gold).or_default().0 += 1;
        let e = counts.entry(p.predicted).or_default();
        e.1 += 1;
        if p.gold == p.predicted {
            e.2 += 1;
        }
    }
    let per_class: Vec<ClassScore> = counts
        .iter()
        .map(|(&class, &(support, predicted, tp))| {
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassScore {
                class,
                support,
                predicted,
                true_positives: tp,
                precision,
                recall,
                f1: f1(precision, recall),
            }
        })
        .collect();
    let n = predictions.len();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    let weighted_f1 = per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / n as f64;
    let tp: usize = per_class.iter().map(|c| c.true_positives).sum();
    let pred_total: usize = per_class.iter().map(|c| c.predicted).sum();
    let gold_total: usize = per_class.iter().map(|c| c.support).sum();
    let micro_f1 = f1(ratio(tp, pred_total), ratio(tp, gold_total));
    let accuracy = ratio(tp, n);
    let mrr = predictions
        .iter()
        .map(|p| {
            let probs = p.probs.as_ref()?;
            (p.gold < probs.k()).then(|| 1.0 / probs.rank_of(p.gold) as f64)
        })
        .sum::<Option<f64>>()
        .map(|total| total / n as f64);
    Ok(MetricsReport {
        macro_f1,
        weighted_f1,
        micro_f1,
        accuracy,
        mrr,
        per_class,
        samples: n,
    })
}

impl MetricsReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::MacroF1 => Some(self.macro_f1),
            Metric::WeightedF1 => Some(self.weighted_f1),
            Metric::MicroF1 => Some(self.micro_f1),
            Metric::Accuracy => Some(self.accuracy),
            Metric::Mrr => self.mrr,
        }
    }

    /// `key=value` lines, one metric per line.
    pub fn to_records(&self, tag: &str) -> String {
        let mut out = String::new();
        for m in Metric::ALL {
            let v = self.get(m).map_or("NA".to_string(), |v| v.to_string());
            out.push_str(&format!("model={tag} metric={m} value={v}\n"));
        }
        out.push_str(&format!("model={tag} metric=samples value={}\n", self.samples));
        out
    }

    pub fn per_class_table(&self) -> String {
        let mut out = format!("{:>6} {:>8} {:>9} {:>9} {:>9} {:>9}\n", "rank", "support", "predicted", "precision", "recall", "f1");
        for c in &self.per_class {
            out.push_str(&format!(
                "{:>6} {:>8} {:>9} {:>9.4} {:>9.4} {:>9.4}\n",
                c.class + 1,
                c.support,
                c.predicted,
                c.precision,
                c.recall,
                c.f1
            ));
        }
        out
    }
}

/// Rows of `(model name, report)` as a percentage table with columns
/// Macro F1 | Weighted F1 | Micro F1 | Acc. | MRR.
pub fn performance_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$} | {:>8} | {:>11} | {:>8} | {:>6} | {:>6}\n",
        "Model", "Macro F1", "Weighted F1", "Micro F1", "Acc.", "MRR"
    );
    out.push_str(&format!("{}\n", "-".repeat(width + 55)));
    for (name, r) in rows {
        let mrr = r.mrr.map_or("N/A".to_string(), |v| format!("{:.2}", 100.0 * v));
        out.push_str(&format!(
            "{:<width$} | {:>8.2} | {:>11.2} | {:>8.2} | {:>6.2} | {:>6}\n",
            name,
            100.0 * r.macro_f1,
            100.0 * r.weighted_f1,
            100.0 * r.micro_f1,
            100.0 * r.accuracy,
            mrr
        ));
    }
    out
}
