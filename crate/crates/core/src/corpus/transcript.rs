//! `NAME: text` transcript parsing and tokenization.

use super::Utterance;

/// Result of parsing one episode transcript.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedTranscript {
    pub utterances: Vec<Utterance>,
    /// Non-blank lines seen before the first speaker tag.
    pub skipped_lines: usize,
}

/// Lowercases and splits on whitespace and punctuation; each punctuation
/// character is kept as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Removes balanced parenthesized segments such as `(LAUGHTER)`.
pub fn strip_stage_directions(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut depth = 0usize;
    for ch in line.chars() {
        match ch {
            '(' => depth += 1,
            ')' if depth > 0 => depth -= 1,
            _ if depth == 0 => out.push(ch),
            _ => {}
        }
    }
    if depth > 0 {
        // unbalanced: keep the line as written
        return line.to_string();
    }
    out
}

/// Uppercases and collapses internal whitespace.
pub fn normalize_speaker(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_uppercase()
}

/// Splits `NAME: text` into its parts when the prefix looks like a speaker tag
/// (no lowercase letters, at least one letter, short).
fn split_speaker_tag(line: &str) -> Option<(&str, &str)> {
    let colon = line.find(':')?;
    let (name, rest) = (line[..colon].trim(), &line[colon + 1..]);
    if name.is_empty() || name.chars().count() > 60 {
        return None;
    }
    let allowed = |c: char| {
        (c.is_alphabetic() && !c.is_lowercase())
            || c.is_ascii_digit()
            || c.is_whitespace()
            || ".,'-&/".contains(c)
    };
    if name.chars().all(allowed) && name.chars().any(char::is_alphabetic) {
        Some((name, rest))
    } else {
        None
    }
}

pub fn parse_transcript(raw: &str, episode_id: &str) -> ParsedTranscript {
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    let mut skipped = 0;
    for raw_line in raw.lines() {
        let line = strip_stage_directions(raw_line);
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match split_speaker_tag(line) {
            Some((name, text)) => groups.push((normalize_speaker(name), tokenize(text))),
            None => match groups.last_mut() {
                Some((_, tokens)) => tokens.extend(tokenize(line)),
                None => skipped += 1,
            },
        }
    }
    let utterances = groups
        .into_iter()
        .filter(|(_, tokens)| !tokens.is_empty())
        .enumerate()
        .map(|(seq_index, (speaker, tokens))| Utterance {
            speaker,
            tokens,
            episode_id: episode_id.to_string(),
            seq_index,
        })
        .collect();
    ParsedTranscript {
        utterances,
        skipped_lines: skipped,
    }
}
