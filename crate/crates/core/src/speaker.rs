//! Speaker vectors and softmax scoring over a variable-size candidate set.
//!
//! The "weights" of the softmax are the candidates' own vectors, so the same
//! parameters score any number of candidates.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, ParamId, Real, Tape, Var};
use crate::encoder::{Forward, HierEncoder};
use crate::error::{Error, Result};

/// Probabilities over one sample's candidates, in candidate (rank) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateDistribution(Vec<f64>);

impl CandidateDistribution {
    /// Tolerance on the total mass for 64-bit inputs.
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(probs, Self::SUM_TOLERANCE)
    }

    pub fn with_tolerance(probs: Vec<f64>, tol: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::contract("distribution over zero candidates"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::contract(format!("probabilities outside [0, 1]: {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::contract(format!("probabilities sum to {total}")));
        }
        Ok(CandidateDistribution(probs))
    }

    /// From tape values of any precision; 32-bit sums get a looser check.
    pub fn from_real<T: Real>(values: &[T]) -> Result<Self> {
        let tol = match T::DTYPE {
            crate::autodiff::Dtype::F64 => Self::SUM_TOLERANCE,
            crate::autodiff::Dtype::F32 => 1e-5,
        };
        Self::with_tolerance(values.iter().map(|v| v.as_f64()).collect(), tol)
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::contract("distribution over zero candidates"));
        }
        Ok(CandidateDistribution(vec![1.0 / k as f64; k]))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    /// Highest-probability candidate; exact ties go to the lower rank.
    pub fn predict(&self) -> usize {
        predict(self)
    }

    /// 1-based rank of candidate `index` under descending probability, with
    /// the same tie-break as [`predict`].
    pub fn rank_of(&self, index: usize) -> usize {
        let p = self.0[index];
        let above = self
            .0
            .iter()
            .enumerate()
            .filter(|&(j, &q)| q > p || (q == p && j < index))
            .count();
        above + 1
    }
}

pub fn predict(dist: &CandidateDistribution) -> usize {
    let mut best = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > dist.probs()[best] {
            best = i;
        }
    }
    best
}

/// `p_i = exp(s_i . u) / sum_j exp(s_j . u)` on the tape.
pub fn score_candidates<T: Real>(tape: &mut Tape<T>, u: Var, speakers: &[Var]) -> Result<Var> {
    let logits = candidate_logits(tape, u, speakers)?;
    tape.softmax(logits)
}

/// Dot products `s_i . u` as a `[k]` node.
pub fn candidate_logits<T: Real>(tape: &mut Tape<T>, u: Var, speakers: &[Var]) -> Result<Var> {
    if speakers.is_empty() {
        return Err(Error::contract("no candidates to score"));
    }
    let d = tape.shape(u).to_vec();
    for &s in speakers {
        if tape.shape(s) != d.as_slice() {
            return Err(Error::contract(format!(
                "speaker vector shape {:?} does not match block vector {d:?}",
                tape.shape(s)
            )));
        }
    }
    let stacked = tape.stack(speakers)?;
    tape.matmul(stacked, u)
}

/// Plain-value version of [`score_candidates`].
pub fn score_values(u: &[f64], speakers: &[Vec<f64>]) -> Result<CandidateDistribution> {
    if speakers.is_empty() {
        return Err(Error::contract("no candidates to score"));
    }
    if speakers.iter().any(|s| s.len() != u.len()) {
        return Err(Error::contract("speaker vector dimension does not match block vector"));
    }
    let logits: Vec<f64> = speakers
        .iter()
        .map(|s| s.iter().zip(u).map(|(a, b)| a * b).sum())
        .collect();
    CandidateDistribution::new(softmax(&logits))
}

/// Content speaker vector: the speaker-side encoder over the candidate's
/// history, oldest utterance first.
pub fn content_speaker_vector<T: Real>(
    f: &mut Forward<'_, T>,
    encoder: &HierEncoder,
    history: &[Vec<usize>],
) -> Result<Var> {
    encoder.encode_block(f, history)
}

/// Row `rank - 1` of the `[k_max, d]` recency embedding table.
pub fn temporal_speaker_vector<T: Real>(f: &mut Forward<'_, T>, table: ParamId, rank: usize) -> Result<Var> {
    let k_max = f.store.get(table).shape()[0];
    if rank == 0 || rank > k_max {
        return Err(Error::contract(format!("recency rank {rank} outside [1, {k_max}]")));
    }
    f.tape.lookup(f.store, table, rank - 1)
}
