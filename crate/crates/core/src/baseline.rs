//! Label-only baselines. None of them ranks candidates, so their MRR is
//! reported as not applicable.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::Prediction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Random,
    Majority,
    /// Each guess drawn from the training partition's gold-rank frequencies.
    /// An interpretation: the name has no published definition.
    HybridGuess,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Random, BaselineKind::Majority, BaselineKind::HybridGuess];

    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Random => "Random guess",
            BaselineKind::Majority => "Majority guess",
            BaselineKind::HybridGuess => "Hybrid random/majority guess",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Random => "random",
            BaselineKind::Majority => "majority",
            BaselineKind::HybridGuess => "hybrid-guess",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "random" => Ok(BaselineKind::Random),
            "majority" => Ok(BaselineKind::Majority),
            "hybrid-guess" => Ok(BaselineKind::HybridGuess),
            _ => Err(format!("unknown baseline `{s}`")),
        }
    }
}

/// `(k, gold)` per sample; all a baseline needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Labeled {
    pub k: usize,
    pub gold: usize,
}

/// Gold-index counts of the training partition.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPrior {
    counts: Vec<usize>,
}

impl LabelPrior {
    pub fn fit(train: &[Labeled]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::contract("baselines need a non-empty training partition"));
        }
        let width = train.iter().map(|s| s.gold + 1).max().unwrap_or(1);
        let mut counts = vec![0; width];
        for s in train {
            counts[s.gold] += 1;
        }
        Ok(LabelPrior { counts })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Most frequent gold index; ties go to the lower index.
    pub fn majority(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }

    /// Draws an index below `k` from the prior restricted to `0..k`; uniform
    /// when the prior has no mass there.
    pub fn sample<R: Rng>(&self, k: usize, rng: &mut R) -> usize {
        let weights: Vec<usize> = (0..k).map(|i| self.counts.get(i).copied().unwrap_or(0)).collect();
        match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(rng),
            Err(_) => rng.gen_range(0..k),
        }
    }
}

pub fn baseline_predictions(kind: BaselineKind, train: &[Labeled], eval: &[Labeled], seed: u64) -> Result<Vec<Prediction>> {
    let prior = LabelPrior::fit(train)?;
    let majority = prior.majority();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eval.iter()
        .map(|s| {
            if s.k == 0 || s.gold >= s.k {
                return Err(Error::contract(format!("gold {} outside {} candidates", s.gold, s.k)));
            }
            let predicted = match kind {
                BaselineKind::Random => rng.gen_range(0..s.k),
                BaselineKind::Majority if majority < s.k => majority,
                BaselineKind::Majority => 0,
                BaselineKind::HybridGuess => prior.sample(s.k, &mut rng),
            };
            Ok(Prediction {
                gold: s.gold,
                predicted,
                probs: None,
            })
        })
        .collect()
}
