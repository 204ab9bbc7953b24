//! Train temporal and content models on the mixed synthetic corpus, sweep
//! the interpolation gate on validation, and score the mix on test.
//!
//! cargo run --release --example hybrid_interpolation -- [episodes] [seed]

use neural_speaker::autodiff::AdamConfig;
use neural_speaker::corpus::{SplitRatios, SynthConfig, SynthKind};
use neural_speaker::hybrid::{default_grid, sweep_gate, GateValue, PairedPrediction};
use neural_speaker::metrics::{evaluate, performance_table, Metric};
use neural_speaker::model::{InterpolatedModel, ModelConfig, ModelKind, SpeakerModel};
use neural_speaker::pipeline::prepare_synthetic;
use neural_speaker::train::{evaluate_model, predict_all, train, TrainConfig};

fn main() -> neural_speaker::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().map_or(100, |a| a.parse().expect("episodes"));
    let seed = args.next().map_or(1, |a| a.parse().expect("seed"));

    let corpus = prepare_synthetic(&SynthConfig::new(SynthKind::Mixed, episodes, seed), SplitRatios::default())?;
    println!("train {} / val {} / test {}", corpus.train.len(), corpus.val.len(), corpus.test.len());

    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        },
        max_epochs: 12,
        seed,
        metric: Metric::MacroF1,
        ..TrainConfig::default()
    };
    let fit = |kind| -> neural_speaker::Result<SpeakerModel<f64>> {
        let mut mc = ModelConfig::new(kind, 16, corpus.vocab.len());
        mc.tie_encoders = true;
        let out = train(SpeakerModel::init(mc, seed)?, &corpus.train, &corpus.val, &cfg)?;
        for line in &out.log {
            println!("{kind} {line}");
        }
        Ok(out.model)
    };
    let temporal = fit(ModelKind::Temporal)?;
    let content = fit(ModelKind::Content)?;

    let pairs = corpus
        .val
        .iter()
        .map(|s| {
            Ok(PairedPrediction {
                gold: s.gold,
                temporal: temporal.predict_sample(s)?.probs,
                content: content.predict_sample(s)?.probs,
            })
        })
        .collect::<neural_speaker::Result<Vec<_>>>()?;
    let sweep = sweep_gate(&pairs, &default_grid())?;
    print!("{sweep}");

    let g = GateValue::new(sweep.best_g(Metric::MacroF1).expect("macro-f1 row"))?;
    let rows = vec![
        ("Temporal".to_string(), evaluate_model(&temporal, &corpus.test)?),
        ("Content".to_string(), evaluate_model(&content, &corpus.test)?),
    ];
    let mixed = InterpolatedModel::new(temporal, content, g)?;
    let (preds, _) = predict_all(|s| mixed.predict_sample(s), &corpus.test)?;
    let mut rows = rows;
    rows.push((format!("Interpolated (g = {:.2})", g.get()), evaluate(&preds)?));
    print!("{}", performance_table(&rows));
    Ok(())
}
