use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::contract(format!("split ratios must be positive, got {r:?}")));
        }
        let total: f64 = r.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("split ratios sum to {total}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partitions {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Partitions {
    pub fn episodes(samples: &[Sample]) -> BTreeSet<&str> {
        samples.iter().map(|s| s.episode_id.as_str()).collect()
    }

    /// True when no episode contributes to two partitions.
    pub fn is_episode_disjoint(&self) -> bool {
        let (a, b, c) = (
            Self::episodes(&self.train),
            Self::episodes(&self.val),
            Self::episodes(&self.test),
        );
        a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c)
    }
}

fn episode_key(seed: u64, episode_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(episode_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Episode counts per partition: largest-remainder rounding, then at least
/// one episode each.
fn allocate(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        while counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).expect("three partitions");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

/// Assigns whole episodes to train/val/test. Episodes are ordered by a
/// seeded hash of their id, so the result does not depend on input order.
pub fn split_by_episode(samples: Vec<Sample>, ratios: SplitRatios, seed: u64) -> Result<Partitions> {
    ratios.validate()?;
    let mut by_episode: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        by_episode.entry(s.episode_id.clone()).or_default().push(s);
    }
    let n = by_episode.len();
    if n < 3 {
        return Err(Error::contract(format!("{n} episodes cannot fill 3 partitions")));
    }
    let mut keyed: Vec<(u64, String)> = by_episode.keys().map(|e| (episode_key(seed, e), e.clone())).collect();
    keyed.sort();
    let counts = allocate(n, [ratios.train, ratios.val, ratios.test]);
    let mut out = Partitions::default();
    for (i, (_, episode)) in keyed.into_iter().enumerate() {
        let samples = by_episode.remove(&episode).expect("episode present");
        let dst = if i < counts[0] {
            &mut out.train
        } else if i < counts[0] + counts[1] {
            &mut out.val
        } else {
            &mut out.test
        };
        dst.extend(samples);
    }
    debug_assert!(out.is_episode_disjoint());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(ep: &str) -> Sample {
        Sample {
            episode_id: ep.into(),
            current: vec![vec!["x".into()]],
            candidates: Vec::new(),
            gold: 0,
            source: None,
        }
    }

    fn corpus(episodes: usize) -> Vec<Sample> {
        (0..episodes)
            .flat_map(|e| (0..3).map(move |_| sample(&format!("ep{e}"))))
            .collect()
    }

    #[test]
    fn ten_episodes_disjoint_cover() {
        let p = split_by_episode(corpus(10), SplitRatios::default(), 7).unwrap();
        assert!(p.is_episode_disjoint());
        let eps = |s: &[Sample]| Partitions::episodes(s).len();
        assert_eq!((eps(&p.train), eps(&p.val), eps(&p.test)), (8, 1, 1));
        assert_eq!(p.train.len() + p.val.len() + p.test.len(), 30);
    }

    #[test]
    fn deterministic_and_order_independent() {
        let a = split_by_episode(corpus(25), SplitRatios::default(), 3).unwrap();
        let b = split_by_episode(corpus(25), SplitRatios::default(), 3).unwrap();
        assert_eq!(a, b);
        let mut rev = corpus(25);
        rev.reverse();
        let c = split_by_episode(rev, SplitRatios::default(), 3).unwrap();
        assert_eq!(Partitions::episodes(&a.test), Partitions::episodes(&c.test));
    }

    #[test]
    fn seed_changes_assignment() {
        let a = split_by_episode(corpus(40), SplitRatios::default(), 1).unwrap();
        let b = split_by_episode(corpus(40), SplitRatios::default(), 2).unwrap();
        assert_ne!(Partitions::episodes(&a.test), Partitions::episodes(&b.test));
    }

    #[test]
    fn too_few_episodes() {
        assert!(split_by_episode(corpus(2), SplitRatios::default(), 0).is_err());
        let p = split_by_episode(corpus(3), SplitRatios::default(), 0).unwrap();
        assert!(!p.val.is_empty() && !p.test.is_empty() && !p.train.is_empty());
    }

    #[test]
    fn bad_ratios() {
        let r = SplitRatios { train: 0.5, val: 0.5, test: 0.5 };
        assert!(split_by_episode(corpus(10), r, 0).is_err());
        let r = SplitRatios { train: 1.0, val: 0.0, test: 0.0 };
        assert!(split_by_episode(corpus(10), r, 0).is_err());
    }
}
