//! Processed-corpus files.
//!
//! A sample file is JSON Lines. The first line is a header object
//! `{"format": "speaker-samples", "format_version": 1}`; every following line
//! is one sample with exactly the fields
//! `{episode_id, current, candidates: [{name, rank, history}], gold}`.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BuildCounters, Sample};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const SAMPLES_FORMAT: &str = "speaker-samples";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    format_version: u32,
}

pub fn write_samples_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        format: SAMPLES_FORMAT.into(),
        format_version: FORMAT_VERSION,
    };
    let mut write_line = |value: String| -> Result<()> {
        w.write_all(value.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    write_line(serde_json::to_string(&header)?)?;
    for s in samples {
        write_line(serde_json::to_string(s)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty sample file"))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.format != SAMPLES_FORMAT || header.format_version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format {} v{}", header.format, header.format_version),
        ));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 2)))?;
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub samples: usize,
    pub episodes: usize,
}

/// Per-partition sample counts plus the filtering counters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub format_version: u32,
    pub train: PartitionCounts,
    pub val: PartitionCounts,
    pub test: PartitionCounts,
    pub counters: BuildCounters,
    pub vocabulary_size: usize,
    pub skipped_lines: usize,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16}{:>14}", "Data partition", "# of samples")?;
        writeln!(f, "{}", "-".repeat(30))?;
        writeln!(f, "{:<16}{:>14}", "Train", self.train.samples)?;
        writeln!(f, "{:<16}{:>14}", "Validation", self.val.samples)?;
        writeln!(f, "{:<16}{:>14}", "Test", self.test.samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Candidate;

    #[test]
    fn sample_lines_have_exact_fields() {
        let s = Sample {
            episode_id: "ep1".into(),
            current: vec![vec!["hi".into()]],
            candidates: vec![Candidate {
                name: "A".into(),
                rank: 1,
                history: vec![vec!["x".into()]; 3],
            }],
            gold: 0,
            source: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        write_samples_jsonl(&path, std::slice::from_ref(&s)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        keys.sort();
        assert_eq!(keys, ["candidates", "current", "episode_id", "gold"]);
        let cand: Vec<&String> = v["candidates"][0].as_object().unwrap().keys().collect();
        assert_eq!(cand.len(), 3);
        assert_eq!(read_samples_jsonl(&path).unwrap(), vec![s]);
    }

    #[test]
    fn missing_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        std::fs::write(&path, "{\"episode_id\":\"e\"}\n").unwrap();
        assert!(read_samples_jsonl(&path).is_err());
    }

    #[test]
    fn stats_table_layout() {
        let stats = CorpusStats {
            format_version: FORMAT_VERSION,
            train: PartitionCounts { samples: 174_487, episodes: 0 },
            val: PartitionCounts { samples: 21_071, episodes: 0 },
            test: PartitionCounts { samples: 20_501, episodes: 0 },
            ..Default::default()
        };
        let table = stats.to_string();
        assert!(table.contains("Train"));
        assert!(table.lines().nth(2).unwrap().ends_with("174487"));
        assert!(table.lines().nth(4).unwrap().ends_with("20501"));
    }
}
