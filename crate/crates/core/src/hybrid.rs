//! Combining temporal and content predictions,
//! `p_hybrid = (1 - g) * p_temporal + g * p_content`, with `g` validated
//! on a grid, learned as one global scalar, or computed per sample from the
//! spread of the content distribution.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, std_pop, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Metric, MetricsReport, Prediction};
use crate::speaker::CandidateDistribution;

/// Floor applied to `p_hybrid[gold]` before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Grid spacing for validating `g`.
pub const GRID_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct GateValue(f64);

impl GateValue {
    pub fn new(g: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::contract(format!("gate value {g} outside [0, 1]")));
        }
        Ok(GateValue(g))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Scale `w` and offset `b` of the self-adaptive gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub w: f64,
    pub b: f64,
}

impl Default for GateParams {
    /// Puts typical spreads of a 5-way distribution in the sigmoid's
    /// sensitive region.
    fn default() -> Self {
        GateParams { w: 5.0, b: -1.0 }
    }
}

pub fn interpolate(
    p_temporal: &CandidateDistribution,
    p_content: &CandidateDistribution,
    g: GateValue,
) -> Result<CandidateDistribution> {
    if p_temporal.k() != p_content.k() {
        return Err(Error::contract(format!(
            "cannot interpolate distributions over {} and {} candidates",
            p_temporal.k(),
            p_content.k()
        )));
    }
    let g = g.get();
    let mixed = p_temporal
        .probs()
        .iter()
        .zip(p_content.probs())
        .map(|(&t, &c)| (1.0 - g) * t + g * c)
        .collect();
    // a convex combination of two distributions is one; only rounding can move the sum
    CandidateDistribution::with_tolerance(mixed, 1e-6)
}

/// `g = sigmoid(w * std(p_content) + b)`, population standard deviation.
pub fn self_adaptive_gate(p_content: &CandidateDistribution, params: &GateParams) -> GateValue {
    GateValue(sigmoid(params.w * std_pop(p_content.probs()) + params.b))
}

/// Tape version of [`interpolate`] with a `[1]`-shaped gate node.
pub fn interpolate_on_tape<T: Real>(tape: &mut Tape<T>, p_temporal: Var, p_content: Var, g: Var) -> Result<Var> {
    if tape.shape(p_temporal) != tape.shape(p_content) {
        return Err(Error::contract("interpolated distributions differ in length"));
    }
    let keep = tape.one_minus(g)?;
    let a = tape.mul_scalar(p_temporal, keep)?;
    let b = tape.mul_scalar(p_content, g)?;
    tape.add(a, b)
}

/// Tape version of [`self_adaptive_gate`]; `w` and `b` are `[1]` nodes.
pub fn adaptive_gate_on_tape<T: Real>(tape: &mut Tape<T>, p_content: Var, w: Var, b: Var) -> Result<Var> {
    let spread = tape.std_pop(p_content)?;
    let scaled = tape.mul(w, spread)?;
    let pre = tape.add(scaled, b)?;
    tape.sigmoid(pre)
}

/// `-log max(p[gold], PROB_FLOOR)` as a `[1]` node.
pub fn nll_on_tape<T: Real>(tape: &mut Tape<T>, probs: Var, gold: usize) -> Result<Var> {
    let p = tape.select(probs, gold)?;
    let floored = tape.clamp_min(p, T::lit(PROB_FLOOR))?;
    let log = tape.log(floored)?;
    tape.neg(log)
}

/// `0, 0.05, ..., 1`.
pub fn default_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Validates a user-supplied grid: non-empty, inside `[0, 1]`.
pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::contract("empty g grid"));
    }
    if let Some(g) = grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::contract(format!("g grid value {g} outside [0, 1]")));
    }
    Ok(())
}

/// Temporal and content predictions for one validation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedPrediction {
    pub gold: usize,
    pub temporal: CandidateDistribution,
    pub content: CandidateDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub g: f64,
    pub report: MetricsReport,
    /// Mean `log max(p_hybrid[gold], PROB_FLOOR)`.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSweep {
    pub rows: Vec<SweepRow>,
    pub best: BTreeMap<Metric, f64>,
}

impl GateSweep {
    pub fn best_g(&self, metric: Metric) -> Option<f64> {
        self.best.get(&metric).copied()
    }

    pub fn row(&self, g: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| (r.g - g).abs() < 1e-12)
    }
}

impl fmt::Display for GateSweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>5} {:>9} {:>12} {:>9} {:>9} {:>9}", "g", "macro_f1", "weighted_f1", "micro_f1", "accuracy", "mrr")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>5.2} {:>9.4} {:>12.4} {:>9.4} {:>9.4} {:>9.4}",
                r.g,
                r.report.macro_f1,
                r.report.weighted_f1,
                r.report.micro_f1,
                r.report.accuracy,
                r.report.mrr.unwrap_or(f64::NAN)
            )?;
        }
        for (m, g) in &self.best {
            writeln!(f, "# best g for {m}: {g:.2}")?;
        }
        Ok(())
    }
}

/// Evaluates every `g` in `grid` and picks the best one per metric.
///
/// Ties on a metric are broken by the higher validation log-likelihood of
/// the gold candidate, then by the smaller `g`. With two uninformative
/// predictors every row ties and `g = 0` is chosen.
pub fn sweep_gate(pairs: &[PairedPrediction], grid: &[f64]) -> Result<GateSweep> {
    if pairs.is_empty() {
        return Err(Error::contract("gate validation needs a non-empty validation set"));
    }
    check_grid(grid)?;
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut rows = Vec::with_capacity(grid.len());
    for &g in &grid {
        let gate = GateValue::new(g)?;
        let mut preds = Vec::with_capacity(pairs.len());
        let mut ll = 0.0;
        for p in pairs {
            let mixed = interpolate(&p.temporal, &p.content, gate)?;
            ll += mixed.probs()[p.gold].max(PROB_FLOOR).ln();
            preds.push(Prediction::from_distribution(p.gold, mixed));
        }
        rows.push(SweepRow {
            g,
            report: evaluate(&preds)?,
            log_likelihood: ll / pairs.len() as f64,
        });
    }
    let mut best = BTreeMap::new();
    for metric in Metric::ALL {
        let mut winner: Option<&SweepRow> = None;
        for row in &rows {
            let v = row.report.get(metric).expect("sweep rows carry probabilities");
            winner = match winner {
                None => Some(row),
                Some(w) => {
                    let wv = w.report.get(metric).expect("sweep rows carry probabilities");
                    if v > wv || (v == wv && row.log_likelihood > w.log_likelihood) {
                        Some(row)
                    } else {
                        Some(w)
                    }
                }
            };
        }
        best.insert(metric, winner.expect("non-empty grid").g);
    }
    Ok(GateSweep { rows, best })
}
