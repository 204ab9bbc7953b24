//! Train the jointly learned hybrids on the mixed corpus: one with a single
//! global gate, one whose gate follows the spread of the content
//! distribution. Prints the learned gates and how the adaptive gate moves
//! with content confidence.
//!
//! cargo run --release --example self_adaptive_gate -- [episodes] [seed]

use neural_speaker::autodiff::AdamConfig;
use neural_speaker::corpus::{SplitRatios, SynthConfig, SynthKind};
use neural_speaker::hybrid::self_adaptive_gate;
use neural_speaker::metrics::{performance_table, Metric};
use neural_speaker::model::{ModelConfig, ModelKind, SpeakerModel};
use neural_speaker::pipeline::prepare_synthetic;
use neural_speaker::speaker::CandidateDistribution;
use neural_speaker::train::{evaluate_model, train, TrainConfig};

fn main() -> neural_speaker::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes = args.next().map_or(100, |a| a.parse().expect("episodes"));
    let seed = args.next().map_or(1, |a| a.parse().expect("seed"));
    let corpus = prepare_synthetic(&SynthConfig::new(SynthKind::Mixed, episodes, seed), SplitRatios::default())?;
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        },
        max_epochs: 15,
        seed,
        metric: Metric::MacroF1,
        ..TrainConfig::default()
    };

    let mut rows = Vec::new();
    for kind in [ModelKind::HybridWhile, ModelKind::HybridAdaptive] {
        let mut mc = ModelConfig::new(kind, 16, corpus.vocab.len());
        mc.tie_encoders = true;
        let model = train(SpeakerModel::<f64>::init(mc, seed)?, &corpus.train, &corpus.val, &cfg)?.model;
        if let Some(g) = model.global_gate() {
            println!("{kind}: learned g = {g:.3}");
        }
        if let Some(params) = model.gate_params() {
            println!("{kind}: learned w = {:.3}, b = {:.3}", params.w, params.b);
            for probs in [vec![0.2; 5], vec![0.4, 0.3, 0.1, 0.1, 0.1], vec![0.9, 0.025, 0.025, 0.025, 0.025]] {
                let g = self_adaptive_gate(&CandidateDistribution::new(probs.clone())?, &params);
                println!("  content {probs:?} -> g = {:.3}", g.get());
            }
            let gates: Vec<f64> = corpus.test.iter().filter_map(|s| model.predict_sample(s).ok()?.gate).collect();
            let mean = gates.iter().sum::<f64>() / gates.len() as f64;
            let spread = gates.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gates.len() as f64;
            println!("  test gates: mean {mean:.3}, std {:.3}", spread.sqrt());
        }
        rows.push((kind.to_string(), evaluate_model(&model, &corpus.test)?));
    }
    print!("{}", performance_table(&rows));
    Ok(())
}
