//! Mini-batch training with per-epoch validation, per-metric best
//! snapshots and early stopping.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, ParamStore, Real};
use crate::corpus::EncodedSample;
use crate::encoder::Forward;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Metric, MetricsReport, Prediction};
use crate::model::{ModelOutput, SpeakerModel};

/// Dropout rates tried when the rate is chosen on validation.
pub const DROPOUT_GRID: [f64; 3] = [0.0, 0.2, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub dropout: f64,
    /// Epochs without improvement of `metric` before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Selects the returned snapshot and drives early stopping.
    pub metric: Metric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            adam: AdamConfig::default(),
            dropout: 0.0,
            patience: 3,
            max_epochs: 30,
            seed: 0,
            metric: Metric::MacroF1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::contract("max_epochs and patience must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricsReport,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} train_loss={:.6}", self.epoch, self.train_loss)?;
        for m in Metric::ALL {
            match self.val.get(m) {
                Some(v) => write!(f, " {m}={v:.6}")?,
                None => write!(f, " {m}=NA")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestEpoch {
    pub epoch: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the best epoch under the selection metric.
    pub model: SpeakerModel<T>,
    pub best: BTreeMap<Metric, BestEpoch>,
    pub snapshots: BTreeMap<Metric, ParamStore<T>>,
    pub log: Vec<EpochLog>,
    /// Mean training loss before the first update.
    pub initial_loss: f64,
    pub dropout: f64,
}

impl<T: Real> TrainOutcome<T> {
    /// The model at the best epoch for `metric`.
    pub fn model_for(&self, metric: Metric) -> Result<SpeakerModel<T>> {
        let params = self
            .snapshots
            .get(&metric)
            .ok_or_else(|| Error::contract(format!("no snapshot kept for {metric}")))?;
        SpeakerModel::from_params(self.model.config().clone(), params.clone())
    }

    pub fn best_value(&self) -> f64 {
        self.best.values().next().map_or(f64::NEG_INFINITY, |b| b.value)
    }
}

/// Index batches: samples grouped by candidate count, chunked, and the
/// chunks shuffled.
pub fn batches<R: rand::Rng>(samples: &[EncodedSample], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut by_k: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_k.entry(s.k()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (_, mut idx) in by_k {
        idx.shuffle(rng);
        out.extend(idx.chunks(batch_size).map(<[usize]>::to_vec));
    }
    out.shuffle(rng);
    out
}

pub fn predict_all<F>(predict: F, samples: &[EncodedSample]) -> Result<(Vec<Prediction>, Vec<ModelOutput>)>
where
    F: Fn(&EncodedSample) -> Result<ModelOutput>,
{
    let mut preds = Vec::with_capacity(samples.len());
    let mut outputs = Vec::with_capacity(samples.len());
    for s in samples {
        let out = predict(s)?;
        preds.push(Prediction::from_distribution(s.gold, out.probs.clone()));
        outputs.push(out);
    }
    Ok((preds, outputs))
}

pub fn evaluate_model<T: Real>(model: &SpeakerModel<T>, samples: &[EncodedSample]) -> Result<MetricsReport> {
    evaluate(&predict_all(|s| model.predict_sample(s), samples)?.0)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numeric { op } => Error::Diverged {
            epoch,
            detail: format!("non-finite value in `{op}`"),
        },
        other => other,
    }
}

pub fn train<T: Real>(
    mut model: SpeakerModel<T>,
    train: &[EncodedSample],
    val: &[EncodedSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::contract("training needs non-empty train and validation partitions"));
    }
    let initial_loss = model.mean_loss(train).map_err(|e| diverged(0, e))?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    drop_rng.set_stream(1);
    let mut adam = Adam::new(cfg.adam);

    let mut log = Vec::new();
    let mut best: BTreeMap<Metric, BestEpoch> = BTreeMap::new();
    let mut snapshots: BTreeMap<Metric, ParamStore<T>> = BTreeMap::new();
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in batches(train, cfg.batch_size, &mut order_rng) {
            let refs: Vec<&EncodedSample> = batch.iter().map(|&i| &train[i]).collect();
            let mut f = Forward::train(&model.params, cfg.dropout, &mut drop_rng);
            let loss = model.batch_loss(&mut f, &refs).map_err(|e| diverged(epoch, e))?;
            let tape = f.into_tape();
            let value = tape.scalar(loss).as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch loss {value}"),
                });
            }
            total += value * refs.len() as f64;
            count += refs.len();
            model.params.zero_grad();
            tape.backward(loss, &mut model.params).map_err(|e| diverged(epoch, e))?;
            adam.step(&mut model.params)?;
        }
        if model.params.iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite parameter after update".into(),
            });
        }
        let report = evaluate_model(&model, val)?;
        let mut improved = false;
        for m in Metric::ALL {
            let Some(v) = report.get(m) else { continue };
            if best.get(&m).is_none_or(|b| v > b.value) {
                best.insert(m, BestEpoch { epoch, value: v });
                snapshots.insert(m, model.params.snapshot());
                improved |= m == cfg.metric;
            }
        }
        log.push(EpochLog {
            epoch,
            train_loss: total / count as f64,
            val: report,
        });
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let params = snapshots
        .get(&cfg.metric)
        .cloned()
        .ok_or_else(|| Error::contract(format!("selection metric {} never observed", cfg.metric)))?;
    let model = SpeakerModel::from_params(model.config().clone(), params)?;
    Ok(TrainOutcome {
        model,
        best,
        snapshots,
        log,
        initial_loss,
        dropout: cfg.dropout,
    })
}

/// Trains once per dropout rate and keeps the run with the best
/// validation value of `cfg.metric`; ties go to the earlier rate.
pub fn train_dropout_grid<T: Real, F>(
    init: F,
    train_set: &[EncodedSample],
    val: &[EncodedSample],
    cfg: &TrainConfig,
    grid: &[f64],
) -> Result<TrainOutcome<T>>
where
    F: Fn() -> Result<SpeakerModel<T>>,
{
    if grid.is_empty() {
        return Err(Error::contract("empty dropout grid"));
    }
    let mut winner: Option<TrainOutcome<T>> = None;
    for &rate in grid {
        let run_cfg = TrainConfig {
            dropout: rate,
            ..cfg.clone()
        };
        let outcome = train(init()?, train_set, val, &run_cfg)?;
        let value = outcome.best[&cfg.metric].value;
        if winner.as_ref().is_none_or(|w| value > w.best[&cfg.metric].value) {
            winner = Some(outcome);
        }
    }
    Ok(winner.expect("non-empty grid"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EncodedCandidate;
    use crate::model::{ModelConfig, ModelKind};

    /// Gold is always rank 2 and rank 2's history repeats the current block.
    fn toy(n: usize) -> Vec<EncodedSample> {
        (0..n)
            .map(|i| {
                let k = 2 + i % 3;
                let tok = 2 + i % 4;
                EncodedSample {
                    episode_id: format!("e{}", i % 5),
                    current: vec![vec![tok, tok + 1]],
                    candidates: (0..k)
                        .map(|c| EncodedCandidate {
                            rank: c + 1,
                            history: vec![vec![if c == 1 { tok } else { 7 }, 8]],
                        })
                        .collect(),
                    gold: 1,
                }
            })
            .collect()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: 0.02,
                ..AdamConfig::default()
            },
            max_epochs: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batches_cover_every_sample_once_and_share_k() {
        let data = toy(37);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = batches(&data, 4, &mut rng);
        let mut seen: Vec<usize> = b.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..37).collect::<Vec<_>>());
        for batch in &b {
            assert!(batch.len() <= 4);
            assert!(batch.iter().all(|&i| data[i].k() == data[batch[0]].k()));
        }
    }

    #[test]
    fn temporal_learns_fixed_rank() {
        let data = toy(60);
        let model = SpeakerModel::<f64>::init(ModelConfig::new(ModelKind::Temporal, 6, 10), 0).unwrap();
        let out = train(model, &data, &data, &quick_cfg()).unwrap();
        assert!(out.log.last().unwrap().train_loss < out.initial_loss);
        assert_eq!(out.best[&Metric::Accuracy].value, 1.0);
    }

    #[test]
    fn initial_loss_is_near_mean_log_k() {
        let data = toy(30);
        let model = SpeakerModel::<f64>::init(ModelConfig::new(ModelKind::Content, 6, 10), 0).unwrap();
        let expected = data.iter().map(|s| (s.k() as f64).ln()).sum::<f64>() / data.len() as f64;
        assert!((model.mean_loss(&data).unwrap() - expected).abs() < 1e-2);
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let data = toy(30);
        let cfg = TrainConfig {
            dropout: 0.2,
            ..quick_cfg()
        };
        let run = || {
            let m = SpeakerModel::<f64>::init(ModelConfig::new(ModelKind::HybridAdaptive, 4, 10), 5).unwrap();
            train(m, &data, &data, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn kept_snapshots_never_regress() {
        let data = toy(40);
        let model = SpeakerModel::<f64>::init(ModelConfig::new(ModelKind::Content, 4, 10), 1).unwrap();
        let out = train(model, &data, &data, &quick_cfg()).unwrap();
        for m in Metric::ALL {
            let best = out.best[&m];
            let max = out.log.iter().filter_map(|l| l.val.get(m)).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(best.value, max);
            assert_eq!(out.log[best.epoch - 1].val.get(m), Some(best.value));
        }
    }

    #[test]
    fn divergence_is_reported() {
        let data = toy(10);
        let model = SpeakerModel::<f64>::init(ModelConfig::new(ModelKind::Temporal, 4, 10), 1).unwrap();
        let cfg = TrainConfig {
            adam: AdamConfig {
                lr: f64::NAN,
                ..AdamConfig::default()
            },
            ..quick_cfg()
        };
        assert!(matches!(train(model, &data, &data, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            dropout: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
