//! Utterances to encoded train/validation/test partitions in one call.

use crate::corpus::{
    build_samples, gen_synthetic, split_by_episode, BuildCounters, EncodedSample, Partitions, SampleRules, SplitRatios,
    SynthConfig, Utterance, Vocabulary,
};
use crate::baseline::Labeled;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub partitions: Partitions,
    pub counters: BuildCounters,
    pub vocab: Vocabulary,
    pub train: Vec<EncodedSample>,
    pub val: Vec<EncodedSample>,
    pub test: Vec<EncodedSample>,
}

/// The vocabulary is built from the training partition only.
pub fn prepare(
    utterances: &[Utterance],
    rules: &SampleRules,
    ratios: SplitRatios,
    seed: u64,
    min_count: usize,
) -> Result<PreparedCorpus> {
    let (samples, counters) = build_samples(utterances, rules);
    if samples.is_empty() {
        return Err(Error::contract(format!("no samples emitted ({counters:?})")));
    }
    let partitions = split_by_episode(samples, ratios, seed)?;
    from_partitions(partitions, counters, min_count)
}

pub fn from_partitions(partitions: Partitions, counters: BuildCounters, min_count: usize) -> Result<PreparedCorpus> {
    let vocab = Vocabulary::build(&partitions.train, min_count)?;
    let enc = |s: &[crate::corpus::Sample]| s.iter().map(|x| vocab.encode(x)).collect::<Vec<_>>();
    Ok(PreparedCorpus {
        train: enc(&partitions.train),
        val: enc(&partitions.val),
        test: enc(&partitions.test),
        partitions,
        counters,
        vocab,
    })
}

pub fn prepare_synthetic(cfg: &SynthConfig, ratios: SplitRatios) -> Result<PreparedCorpus> {
    prepare(&gen_synthetic(cfg)?, &SampleRules::default(), ratios, cfg.seed, 1)
}

pub fn labels(samples: &[EncodedSample]) -> Vec<Labeled> {
    samples.iter().map(|s| Labeled { k: s.k(), gold: s.gold }).collect()
}
