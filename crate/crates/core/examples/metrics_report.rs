//! Metric suite on hand-made predictions: per-class scores, the summary
//! table, key=value records and the three baselines.
//!
//! cargo run --example metrics_report

use neural_speaker::baseline::{baseline_predictions, BaselineKind, Labeled};
use neural_speaker::metrics::{evaluate, performance_table, Prediction};
use neural_speaker::speaker::CandidateDistribution;

fn main() -> neural_speaker::Result<()> {
    let raw: [(usize, &[f64]); 6] = [
        (0, &[0.7, 0.2, 0.1]),
        (1, &[0.5, 0.4, 0.1]),
        (1, &[0.1, 0.8, 0.1]),
        (2, &[0.3, 0.3, 0.4]),
        (2, &[0.6, 0.1, 0.2, 0.1]),
        (3, &[0.1, 0.1, 0.1, 0.7]),
    ];
    let preds = raw
        .iter()
        .map(|(gold, p)| Ok(Prediction::from_distribution(*gold, CandidateDistribution::new(p.to_vec())?)))
        .collect::<neural_speaker::Result<Vec<_>>>()?;
    let report = evaluate(&preds)?;
    print!("{}", report.per_class_table());
    println!();

    let train: Vec<Labeled> = (0..200).map(|i| Labeled { k: 4, gold: [1, 1, 1, 2, 3][i % 5] }).collect();
    let eval: Vec<Labeled> = raw.iter().map(|(gold, p)| Labeled { k: p.len(), gold: *gold }).collect();
    let mut rows = vec![("hand-made".to_string(), report.clone())];
    for kind in BaselineKind::ALL {
        rows.push((kind.label().to_string(), evaluate(&baseline_predictions(kind, &train, &eval, 0)?)?));
    }
    print!("{}", performance_table(&rows));
    println!();
    print!("{}", report.to_records("hand-made"));
    Ok(())
}
