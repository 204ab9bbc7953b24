//! Planted-signal separation: each single model should find the signal
//! planted in its own corpus and sit at chance on the other.
//!
//! cargo run --release --example temporal_vs_content -- [episodes] [seed]

use neural_speaker::autodiff::AdamConfig;
use neural_speaker::baseline::{baseline_predictions, BaselineKind};
use neural_speaker::corpus::{SplitRatios, SynthConfig, SynthKind};
use neural_speaker::metrics::{evaluate, performance_table, Metric};
use neural_speaker::model::{ModelConfig, ModelKind, SpeakerModel};
use neural_speaker::pipeline::{labels, prepare_synthetic};
use neural_speaker::train::{evaluate_model, train, TrainConfig};

fn main() -> neural_speaker::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().map_or(150, |a| a.parse().expect("episodes"));
    let seed = args.next().map_or(6, |a| a.parse().expect("seed"));
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: 0.003,
            ..AdamConfig::default()
        },
        seed,
        metric: Metric::MacroF1,
        ..TrainConfig::default()
    };

    for corpus_kind in [SynthKind::Temporal, SynthKind::Content] {
        let corpus = prepare_synthetic(&SynthConfig::new(corpus_kind, episodes, seed), SplitRatios::default())?;
        let mut rows = Vec::new();
        for kind in BaselineKind::ALL {
            let preds = baseline_predictions(kind, &labels(&corpus.train), &labels(&corpus.test), seed)?;
            rows.push((kind.label().to_string(), evaluate(&preds)?));
        }
        for kind in [ModelKind::Temporal, ModelKind::Content] {
            let mut mc = ModelConfig::new(kind, 32, corpus.vocab.len());
            mc.tie_encoders = true;
            let started = std::time::Instant::now();
            let out = train(SpeakerModel::<f64>::init(mc, seed)?, &corpus.train, &corpus.val, &cfg)?;
            eprintln!("{corpus_kind:?}/{kind}: {} epochs in {:.0?}", out.log.len(), started.elapsed());
            rows.push((kind.to_string(), evaluate_model(&out.model, &corpus.test)?));
        }
        println!("\n{corpus_kind:?} corpus ({} test samples)", corpus.test.len());
        print!("{}", performance_table(&rows));
    }
    Ok(())
}
