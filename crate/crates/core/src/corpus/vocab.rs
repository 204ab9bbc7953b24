use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::FORMAT_VERSION;
use super::Sample;
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    format_version: u32,
    min_count: usize,
    tokens: Vec<String>,
}

/// A sample with tokens replaced by vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSample {
    pub episode_id: String,
    pub current: Vec<Vec<usize>>,
    pub candidates: Vec<EncodedCandidate>,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedCandidate {
    pub rank: usize,
    pub history: Vec<Vec<usize>>,
}

impl EncodedSample {
    pub fn k(&self) -> usize {
        self.candidates.len()
    }
}

impl Vocabulary {
    /// Builds ids from training samples; tokens seen fewer than `min_count`
    /// times map to the unknown id. Ids are ordered by descending count,
    /// then lexicographically.
    pub fn build(samples: &[Sample], min_count: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("vocabulary needs a non-empty training set"));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in samples {
            let sentences = s.current.iter().chain(s.candidates.iter().flat_map(|c| c.history.iter()));
            for tok in sentences.flatten() {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count.max(1) && t != PAD && t != UNK)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = [PAD, UNK]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t))
            .map(str::to_string)
            .collect();
        Ok(Self::from_tokens(tokens, min_count))
    }

    fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode_sentence(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Never fails: unseen tokens become the unknown id.
    pub fn encode(&self, sample: &Sample) -> EncodedSample {
        EncodedSample {
            episode_id: sample.episode_id.clone(),
            current: sample.current.iter().map(|s| self.encode_sentence(s)).collect(),
            candidates: sample
                .candidates
                .iter()
                .map(|c| EncodedCandidate {
                    rank: c.rank,
                    history: c.history.iter().map(|s| self.encode_sentence(s)).collect(),
                })
                .collect(),
            gold: sample.gold,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&VocabFile {
            format_version: FORMAT_VERSION,
            min_count: self.min_count,
            tokens: self.tokens.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::contract(format!(
                "vocabulary format version {} unsupported",
                file.format_version
            )));
        }
        if file.tokens.get(PAD_ID).map(String::as_str) != Some(PAD)
            || file.tokens.get(UNK_ID).map(String::as_str) != Some(UNK)
        {
            return Err(Error::contract("vocabulary is missing reserved ids"));
        }
        Ok(Self::from_tokens(file.tokens, file.min_count))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}
