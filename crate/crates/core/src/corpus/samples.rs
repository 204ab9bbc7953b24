use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Candidate, Sample, SampleSource, Utterance};

/// Sample-construction limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRules {
    /// Maximum number of candidate speakers.
    pub k_max: usize,
    /// Every candidate needs at least this many earlier utterances.
    pub min_hist: usize,
    /// Histories keep at most this many (the most recent).
    pub max_hist: usize,
    /// Sentences per current block.
    pub max_block: usize,
    /// Tokens per sentence.
    pub max_tokens: usize,
}

impl Default for SampleRules {
    fn default() -> Self {
        SampleRules {
            k_max: 5,
            min_hist: 3,
            max_hist: 5,
            max_block: 5,
            max_tokens: 50,
        }
    }
}

impl SampleRules {
    pub fn validate(&self) -> crate::Result<()> {
        if self.k_max == 0 || self.max_block == 0 || self.max_tokens == 0 {
            return Err(crate::Error::Contract("k_max, max_block and max_tokens must be positive".into()));
        }
        if self.min_hist == 0 || self.min_hist > self.max_hist {
            return Err(crate::Error::Contract(format!(
                "need 1 <= min_hist ({}) <= max_hist ({})",
                self.min_hist, self.max_hist
            )));
        }
        Ok(())
    }
}

/// Why blocks were or were not turned into samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildCounters {
    pub blocks: usize,
    pub emitted: usize,
    /// Block speaker was not among the candidates.
    pub speaker_not_candidate: usize,
    /// Some candidate had fewer than `min_hist` utterances.
    pub short_history: usize,
}

impl BuildCounters {
    pub fn merge(&mut self, other: &BuildCounters) {
        self.blocks += other.blocks;
        self.emitted += other.emitted;
        self.speaker_not_candidate += other.speaker_not_candidate;
        self.short_history += other.short_history;
    }
}

/// `[start, end)` ranges of maximal same-speaker runs.
pub fn block_spans(utterances: &[Utterance]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for i in 1..=utterances.len() {
        let boundary = i == utterances.len()
            || utterances[i].speaker != utterances[start].speaker
            || utterances[i].episode_id != utterances[start].episode_id;
        if boundary && start < utterances.len() {
            spans.push((start, i));
            start = i;
        }
    }
    spans
}

fn truncate(tokens: &[String], max: usize) -> Vec<String> {
    tokens[..tokens.len().min(max)].to_vec()
}

/// Turns an episode's utterances into classification samples.
///
/// Each maximal same-speaker block becomes a candidate sample whose
/// candidates are the `k_max` most recently active distinct speakers before
/// the block (rank 1 = most recent). The sample is kept only when the block's
/// speaker is among them and every candidate has `min_hist` earlier
/// utterances. Input spanning several episodes is handled episode by episode.
pub fn build_samples(utterances: &[Utterance], rules: &SampleRules) -> (Vec<Sample>, BuildCounters) {
    let mut samples = Vec::new();
    let mut counters = BuildCounters::default();
    // speaker -> indices of their utterances so far (current episode)
    let mut spoken: HashMap<&str, Vec<usize>> = HashMap::new();
    // distinct speakers ordered by last activity, most recent last
    let mut recency: Vec<&str> = Vec::new();
    let mut episode: Option<&str> = None;

    for (start, end) in block_spans(utterances) {
        let first = &utterances[start];
        if episode != Some(first.episode_id.as_str()) {
            spoken.clear();
            recency.clear();
            episode = Some(&first.episode_id);
        }
        counters.blocks += 1;

        let candidates: Vec<&str> = recency.iter().rev().take(rules.k_max).copied().collect();
        match candidates.iter().position(|&s| s == first.speaker) {
            None => counters.speaker_not_candidate += 1,
            Some(gold) => {
                let short = candidates.iter().any(|s| spoken[s].len() < rules.min_hist);
                if short {
                    counters.short_history += 1;
                } else {
                    let block: Vec<usize> = (start..end).take(rules.max_block).collect();
                    let mut histories = Vec::with_capacity(candidates.len());
                    let cands = candidates
                        .iter()
                        .enumerate()
                        .map(|(i, &name)| {
                            let said = &spoken[name];
                            let hist: Vec<usize> = said[said.len().saturating_sub(rules.max_hist)..].to_vec();
                            let history = hist
                                .iter()
                                .map(|&h| truncate(&utterances[h].tokens, rules.max_tokens))
                                .collect();
                            histories.push(hist);
                            Candidate {
                                name: name.to_string(),
                                rank: i + 1,
                                history,
                            }
                        })
                        .collect();
                    samples.push(Sample {
                        episode_id: first.episode_id.clone(),
                        current: block
                            .iter()
                            .map(|&i| truncate(&utterances[i].tokens, rules.max_tokens))
                            .collect(),
                        candidates: cands,
                        gold,
                        source: Some(SampleSource {
                            current: block,
                            histories,
                        }),
                    });
                    counters.emitted += 1;
                }
            }
        }

        let speaker = first.speaker.as_str();
        spoken.entry(speaker).or_default().extend(start..end);
        recency.retain(|&s| s != speaker);
        recency.push(speaker);
    }
    (samples, counters)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(speakers: &[&str]) -> Vec<Utterance> {
        speakers
            .iter()
            .enumerate()
            .map(|(i, s)| Utterance {
                speaker: s.to_string(),
                tokens: vec![format!("w{i}")],
                episode_id: "ep".into(),
                seq_index: i,
            })
            .collect()
    }

    #[test]
    fn alternating_dialog_waits_for_three_utterances() {
        let utts = episode(&["A", "B", "A", "B", "A", "B", "A", "B"]);
        let (samples, counters) = build_samples(&utts, &SampleRules::default());
        assert_eq!(counters.blocks, 8);
        // index 6 is the first block where A and B both have 3 prior utterances
        assert_eq!(samples[0].source.as_ref().unwrap().current, vec![6]);
        assert_eq!(samples.len(), 2);
        assert_eq!(counters.speaker_not_candidate, 2);
        assert_eq!(counters.short_history, 4);
        for s in &samples {
            s.validate(&SampleRules::default()).unwrap();
            // the other speaker spoke last, so the gold speaker is rank 2
            assert_eq!(s.gold_rank(), 2);
        }
    }

    #[test]
    fn round_robin_ranks() {
        let seq: Vec<&str> = ["A", "B", "C"].iter().copied().cycle().take(12).collect();
        let (samples, _) = build_samples(&episode(&seq), &SampleRules::default());
        let last = samples.last().unwrap();
        assert_eq!(last.source.as_ref().unwrap().current, vec![11]);
        let names: Vec<&str> = last.candidates.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["B", "A", "C"]);
        assert_eq!(last.speaker(), "C");
        assert_eq!(last.gold, 2);
    }

    #[test]
    fn blocks_truncated_and_histories_capped() {
        let mut seq = Vec::new();
        for _ in 0..6 {
            seq.push("A");
            seq.push("B");
        }
        seq.extend(["A"; 7]);
        let rules = SampleRules::default();
        let (samples, _) = build_samples(&episode(&seq), &rules);
        let last = samples.last().unwrap();
        assert_eq!(last.block_len(), 5);
        assert!(last.candidates.iter().all(|c| c.history.len() == 5));
        // B's history is its five most recent utterances, oldest first
        let b = last.candidates.iter().find(|c| c.name == "B").unwrap();
        assert_eq!(b.history.first().unwrap(), &vec!["w3".to_string()]);
        assert_eq!(b.history.last().unwrap(), &vec!["w11".to_string()]);
    }

    #[test]
    fn long_sentences_truncated() {
        let mut utts = episode(&["A", "B", "A", "B", "A", "B", "A"]);
        utts[6].tokens = (0..80).map(|i| i.to_string()).collect();
        let (samples, _) = build_samples(&utts, &SampleRules::default());
        assert_eq!(samples.last().unwrap().current[0].len(), 50);
    }

    #[test]
    fn episodes_do_not_share_history() {
        let mut utts = episode(&["A", "B", "A", "B", "A", "B"]);
        let mut second = episode(&["A", "B"]);
        for u in &mut second {
            u.episode_id = "ep2".into();
        }
        utts.extend(second);
        let (samples, _) = build_samples(&utts, &SampleRules::default());
        assert!(samples.iter().all(|s| s.episode_id == "ep"));
    }
}
