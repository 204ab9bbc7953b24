//! Parse a transcript, cut it into classification samples and print them.
//!
//! cargo run --example parse_transcript -- [path/to/episode.txt]

use neural_speaker::corpus::{build_samples, parse_transcript, SampleRules};

const DEMO: &str = "\
[A kitchen. Morning.]
ALICE: Good morning everyone.
BOB: Morning. Did you see the report?
ALICE: Not yet.
CAROL: It is long (sighs) and full of numbers.
BOB: The numbers look fine to me.
ALICE: I will read it tonight.
  After dinner, probably.
CAROL: Section two is where the trouble starts.
BOB: That is a rounding issue.
ALICE: Then we should ask the author.
CAROL: Agreed.
BOB: I will write to them.
ALICE: Thanks Bob.
";

fn main() -> neural_speaker::Result<()> {
    let raw = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(&path).map_err(|e| neural_speaker::Error::io(&path, e))?,
        None => DEMO.to_string(),
    };
    let parsed = parse_transcript(&raw, "demo");
    println!("{} utterances, {} skipped lines", parsed.utterances.len(), parsed.skipped_lines);
    for u in &parsed.utterances {
        println!("  {:>2} {:<6} {}", u.seq_index, u.speaker, u.tokens.join(" "));
    }

    // the demo is short, so relax the history requirement
    let rules = SampleRules {
        min_hist: 2,
        max_hist: 3,
        ..SampleRules::default()
    };
    let (samples, counters) = build_samples(&parsed.utterances, &rules);
    println!("\n{counters:?}");
    for s in &samples {
        println!("\nblock by {} (gold index {}, rank {}):", s.speaker(), s.gold, s.gold_rank());
        for sentence in &s.current {
            println!("  > {}", sentence.join(" "));
        }
        for c in &s.candidates {
            let last = c.history.last().map(|h| h.join(" ")).unwrap_or_default();
            println!("  rank {} {:<6} {} lines, last: {last}", c.rank, c.name, c.history.len());
        }
    }
    Ok(())
}
