//! Transcript parsing, sample construction, splits, vocabulary and
//! synthetic planted-signal corpora.

mod io;
mod samples;
mod split;
mod synth;
mod transcript;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    read_samples_jsonl, write_samples_jsonl, CorpusStats, PartitionCounts, SAMPLES_FORMAT,
    FORMAT_VERSION,
};
pub use samples::{block_spans, build_samples, BuildCounters, SampleRules};
pub use split::{split_by_episode, Partitions, SplitRatios};
pub use synth::{gen_synthetic, SynthConfig, SynthKind};
pub use transcript::{normalize_speaker, parse_transcript, strip_stage_directions, tokenize, ParsedTranscript};
pub use vocab::{EncodedCandidate, EncodedSample, Vocabulary, PAD_ID, UNK_ID};

/// One speaker-attributed line group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub tokens: Vec<String>,
    pub episode_id: String,
    pub seq_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    /// 1 = most recently active speaker before the block.
    pub rank: usize,
    /// Oldest first.
    pub history: Vec<Vec<String>>,
}

/// Where a sample's utterances came from in the episode, for leakage checks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleSource {
    pub current: Vec<usize>,
    pub histories: Vec<Vec<usize>>,
}

/// One classification instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub episode_id: String,
    pub current: Vec<Vec<String>>,
    pub candidates: Vec<Candidate>,
    pub gold: usize,
    #[serde(skip)]
    pub source: Option<SampleSource>,
}

impl Sample {
    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    pub fn block_len(&self) -> usize {
        self.current.len()
    }

    pub fn gold_rank(&self) -> usize {
        self.candidates[self.gold].rank
    }

    pub fn speaker(&self) -> &str {
        &self.candidates[self.gold].name
    }

    /// Checks every structural invariant of a sample under `rules`.
    pub fn validate(&self, rules: &SampleRules) -> Result<()> {
        let fail = |m: String| Err(Error::contract(format!("sample in `{}`: {m}", self.episode_id)));
        let k = self.k();
        if k == 0 || k > rules.k_max {
            return fail(format!("k = {k} outside [1, {}]", rules.k_max));
        }
        if self.gold >= k {
            return fail(format!("gold {} out of range for k = {k}", self.gold));
        }
        if self.current.is_empty() || self.current.len() > rules.max_block {
            return fail(format!("block length {} outside [1, {}]", self.current.len(), rules.max_block));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if c.rank != i + 1 {
                return fail(format!("candidate {i} has rank {}", c.rank));
            }
            if c.history.len() < rules.min_hist || c.history.len() > rules.max_hist {
                return fail(format!("candidate `{}` has {} history utterances", c.name, c.history.len()));
            }
        }
        let all = self.current.iter().chain(self.candidates.iter().flat_map(|c| c.history.iter()));
        for sentence in all {
            if sentence.is_empty() || sentence.len() > rules.max_tokens {
                return fail(format!("sentence of {} tokens", sentence.len()));
            }
        }
        for i in 0..k {
            for j in i + 1..k {
                if self.candidates[i].name == self.candidates[j].name {
                    return fail(format!("speaker `{}` listed twice", self.candidates[i].name));
                }
            }
        }
        if let Some(src) = &self.source {
            let leaked = src
                .histories
                .iter()
                .flatten()
                .any(|h| src.current.contains(h));
            if leaked {
                return fail("current block utterance reused in a history".into());
            }
            if src.histories.iter().flatten().any(|&h| src.current.iter().any(|&c| h >= c)) {
                return fail("history utterance not strictly before the block".into());
            }
        }
        Ok(())
    }
}
