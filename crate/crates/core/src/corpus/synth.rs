//! Synthetic corpora with a planted speaker signal.
//!
//! * `Temporal`: tokens carry no speaker information. After each block the
//!   next speaker is, with probability `p_repeat`, the speaker who was
//!   active most recently among those allowed to speak (everyone except the
//!   speaker who just finished), and otherwise uniform over the rest. In
//!   built samples that speaker is the rank-2 candidate, because rank 1 is
//!   always the speaker of the preceding block.
//! * `Content`: each speaker owns a topic with a private keyword list and at
//!   least `keyword_fraction` of every utterance comes from it; the next
//!   speaker is uniform over everyone but the previous speaker.
//! * `Mixed`: content-style vocabularies with temporal-style turn taking.
//!   A fraction `generic_prob` of utterances use only shared words, so the
//!   content signal is informative but not decisive.
//!
//! Every episode opens with each speaker saying `warmup` lines in turn, so
//! all candidates already have full histories when the law-governed turns
//! start. The opening blocks never become samples (their speakers have not
//! spoken before).

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Utterance;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Temporal,
    Content,
    Mixed,
}

impl std::str::FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "temporal" => Ok(SynthKind::Temporal),
            "content" => Ok(SynthKind::Content),
            "mixed" => Ok(SynthKind::Mixed),
            _ => Err(format!("unknown synthetic corpus kind `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub n_episodes: usize,
    pub seed: u64,
    pub speakers: usize,
    /// Law-governed blocks per episode, after the opening round.
    pub turns: usize,
    pub warmup: usize,
    pub p_repeat: f64,
    pub max_block_len: usize,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
    pub shared_vocab: usize,
    pub topics: usize,
    pub keywords_per_topic: usize,
    pub keyword_fraction: f64,
    pub generic_prob: f64,
}

impl SynthConfig {
    pub fn new(kind: SynthKind, n_episodes: usize, seed: u64) -> Self {
        SynthConfig {
            kind,
            n_episodes,
            seed,
            speakers: 5,
            turns: 30,
            warmup: 5,
            p_repeat: 0.75,
            max_block_len: 3,
            min_sentence_len: 4,
            max_sentence_len: 8,
            shared_vocab: 60,
            topics: 10,
            keywords_per_topic: 8,
            keyword_fraction: 0.6,
            generic_prob: if kind == SynthKind::Mixed { 0.5 } else { 0.0 },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_episodes == 0 {
            return Err(Error::contract("synthetic corpus needs at least one episode"));
        }
        if self.speakers < 2 {
            return Err(Error::contract("synthetic episodes need at least two speakers"));
        }
        if self.kind != SynthKind::Temporal && self.topics < self.speakers {
            return Err(Error::contract(format!(
                "{} topics cannot give {} speakers disjoint keywords",
                self.topics, self.speakers
            )));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.p_repeat) || !unit(self.keyword_fraction) || !unit(self.generic_prob) {
            return Err(Error::contract("probabilities must lie in [0, 1]"));
        }
        if self.min_sentence_len == 0
            || self.min_sentence_len > self.max_sentence_len
            || self.max_block_len == 0
            || self.shared_vocab == 0
            || self.keywords_per_topic == 0
        {
            return Err(Error::contract("invalid synthetic sentence or vocabulary sizes"));
        }
        Ok(())
    }

    pub fn keyword(topic: usize, j: usize) -> String {
        format!("t{topic}k{j}")
    }

    pub fn generic(j: usize) -> String {
        format!("w{j}")
    }

    /// Keyword list owned by `topic`.
    pub fn topic_keywords(&self, topic: usize) -> Vec<String> {
        (0..self.keywords_per_topic).map(|j| Self::keyword(topic, j)).collect()
    }
}

struct Episode<'a> {
    cfg: &'a SynthConfig,
    id: String,
    topics: Vec<usize>,
    last_spoke: Vec<Option<usize>>,
    out: Vec<Utterance>,
    block: usize,
}

impl Episode<'_> {
    fn sentence(&self, speaker: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        let cfg = self.cfg;
        let len = rng.gen_range(cfg.min_sentence_len..=cfg.max_sentence_len);
        let use_keywords = match cfg.kind {
            SynthKind::Temporal => false,
            SynthKind::Content => true,
            SynthKind::Mixed => rng.gen::<f64>() >= cfg.generic_prob,
        };
        let n_kw = if use_keywords {
            (cfg.keyword_fraction * len as f64).ceil() as usize
        } else {
            0
        };
        let mut tokens: Vec<String> = (0..len)
            .map(|i| {
                if i < n_kw {
                    SynthConfig::keyword(self.topics[speaker], rng.gen_range(0..cfg.keywords_per_topic))
                } else {
                    SynthConfig::generic(rng.gen_range(0..cfg.shared_vocab))
                }
            })
            .collect();
        tokens.shuffle(rng);
        tokens
    }

    fn speak(&mut self, speaker: usize, lines: usize, rng: &mut ChaCha8Rng) {
        for _ in 0..lines {
            let tokens = self.sentence(speaker, rng);
            let seq_index = self.out.len();
            self.out.push(Utterance {
                speaker: format!("SPEAKER {speaker}"),
                tokens,
                episode_id: self.id.clone(),
                seq_index,
            });
        }
        self.last_spoke[speaker] = Some(self.block);
        self.block += 1;
    }

    fn next_speaker(&self, previous: usize, rng: &mut ChaCha8Rng) -> usize {
        let mut eligible: Vec<usize> = (0..self.cfg.speakers).filter(|&s| s != previous).collect();
        if self.cfg.kind == SynthKind::Content {
            return *eligible.choose(rng).expect("at least one other speaker");
        }
        // most recent first
        eligible.sort_by_key(|&s| std::cmp::Reverse(self.last_spoke[s]));
        if eligible.len() == 1 || rng.gen::<f64>() < self.cfg.p_repeat {
            eligible[0]
        } else {
            eligible[rng.gen_range(1..eligible.len())]
        }
    }
}

/// Generates `cfg.n_episodes` episodes of utterances, deterministic in `cfg.seed`.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Vec<Utterance>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kind = match cfg.kind {
        SynthKind::Temporal => "temporal",
        SynthKind::Content => "content",
        SynthKind::Mixed => "mixed",
    };
    let mut all = Vec::new();
    for e in 0..cfg.n_episodes {
        let mut topic_pool: Vec<usize> = (0..cfg.topics.max(cfg.speakers)).collect();
        topic_pool.shuffle(&mut rng);
        let mut ep = Episode {
            cfg,
            id: format!("synth-{kind}-{}-{e:04}", cfg.seed),
            topics: topic_pool[..cfg.speakers].to_vec(),
            last_spoke: vec![None; cfg.speakers],
            out: Vec::new(),
            block: 0,
        };
        for s in 0..cfg.speakers {
            ep.speak(s, cfg.warmup, &mut rng);
        }
        let mut previous = cfg.speakers - 1;
        for _ in 0..cfg.turns {
            let next = ep.next_speaker(previous, &mut rng);
            let lines = rng.gen_range(1..=cfg.max_block_len);
            ep.speak(next, lines, &mut rng);
            previous = next;
        }
        all.extend(ep.out);
    }
    Ok(all)
}
