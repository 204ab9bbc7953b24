//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use neural_speaker::corpus::{Candidate, EncodedCandidate, EncodedSample, Sample, SampleRules, Utterance};
use neural_speaker::encoder::Forward;
use neural_speaker::metrics::Prediction;
use neural_speaker::model::SpeakerModel;
use rand::Rng;

/// Sample rules applied by direct rescanning of the prefix before every
/// block; no incremental state.
pub fn brute_force_samples(utterances: &[Utterance], rules: &SampleRules) -> Vec<Sample> {
    let mut out = Vec::new();
    let n = utterances.len();
    let mut i = 0;
    while i < n {
        let ep = &utterances[i].episode_id;
        let who = &utterances[i].speaker;
        let mut j = i;
        while j < n && &utterances[j].episode_id == ep && &utterances[j].speaker == who {
            j += 1;
        }
        let ep_start = (0..=i).rev().take_while(|&p| &utterances[p].episode_id == ep).last().unwrap_or(i);
        let prior = &utterances[ep_start..i];

        let mut last_seen: Vec<(usize, &str)> = Vec::new();
        for name in prior.iter().map(|u| u.speaker.as_str()) {
            if !last_seen.iter().any(|(_, s)| *s == name) {
                let last = prior.iter().rposition(|u| u.speaker == name).unwrap();
                last_seen.push((last, name));
            }
        }
        last_seen.sort_by(|a, b| b.0.cmp(&a.0));
        let cands: Vec<&str> = last_seen.iter().take(rules.k_max).map(|(_, s)| *s).collect();

        if let Some(gold) = cands.iter().position(|s| s == who) {
            let said = |name: &str| prior.iter().filter(|u| u.speaker == name).collect::<Vec<_>>();
            if cands.iter().all(|c| said(c).len() >= rules.min_hist) {
                let cut = |t: &Vec<String>| t.iter().take(rules.max_tokens).cloned().collect::<Vec<_>>();
                let candidates = cands
                    .iter()
                    .enumerate()
                    .map(|(r, name)| {
                        let all = said(name);
                        let keep = all.len().min(rules.max_hist);
                        Candidate {
                            name: name.to_string(),
                            rank: r + 1,
                            history: all[all.len() - keep..].iter().map(|u| cut(&u.tokens)).collect(),
                        }
                    })
                    .collect();
                out.push(Sample {
                    episode_id: ep.clone(),
                    current: utterances[i..j].iter().take(rules.max_block).map(|u| cut(&u.tokens)).collect(),
                    candidates,
                    gold,
                    source: None,
                });
            }
        }
        i = j;
    }
    out
}

pub fn strip_source(mut s: Vec<Sample>) -> Vec<Sample> {
    s.iter_mut().for_each(|x| x.source = None);
    s
}

/// A random episode: up to `speakers` names, runs of repeated speakers,
/// sentences of 1..=max_len tokens.
pub fn random_episode<R: Rng>(rng: &mut R, id: &str, len: usize, speakers: usize, max_len: usize) -> Vec<Utterance> {
    let mut out: Vec<Utterance> = Vec::with_capacity(len);
    for seq_index in 0..len {
        let speaker = match out.last() {
            Some(prev) if rng.gen_bool(0.3) => prev.speaker.clone(),
            _ => format!("S{}", rng.gen_range(0..speakers)),
        };
        let n = rng.gen_range(1..=max_len);
        out.push(Utterance {
            speaker,
            tokens: (0..n).map(|_| format!("w{}", rng.gen_range(0..30))).collect(),
            episode_id: id.to_string(),
            seq_index,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteMetrics {
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
    pub mrr: Option<f64>,
}

/// Confusion-matrix counting over the classes in gold and predicted labels.
pub fn brute_force_metrics(preds: &[Prediction]) -> BruteMetrics {
    let n = preds.len() as f64;
    let mut classes: Vec<usize> = preds.iter().flat_map(|p| [p.gold, p.predicted]).collect();
    classes.sort_unstable();
    classes.dedup();
    let safe = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let f1 = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let mut f1s = Vec::new();
    let mut weighted = 0.0;
    let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
    for &c in &classes {
        let tp = preds.iter().filter(|p| p.gold == c && p.predicted == c).count() as f64;
        let fp = preds.iter().filter(|p| p.gold != c && p.predicted == c).count() as f64;
        let fneg = preds.iter().filter(|p| p.gold == c && p.predicted != c).count() as f64;
        let score = f1(safe(tp, tp + fp), safe(tp, tp + fneg));
        f1s.push(score);
        weighted += score * (tp + fneg);
        tp_all += tp;
        fp_all += fp;
        fn_all += fneg;
    }
    let correct = preds.iter().filter(|p| p.gold == p.predicted).count() as f64;
    let mrr = preds
        .iter()
        .map(|p| {
            let probs = p.probs.as_ref()?.probs();
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
            let pos = order.iter().position(|&i| i == p.gold)?;
            Some(1.0 / (pos + 1) as f64)
        })
        .sum::<Option<f64>>()
        .map(|s| s / n);
    BruteMetrics {
        macro_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
        weighted_f1: weighted / n,
        micro_f1: f1(safe(tp_all, tp_all + fp_all), safe(tp_all, tp_all + fn_all)),
        accuracy: correct / n,
        mrr,
    }
}

/// Random encoded sample with `k` candidates over a vocabulary of `vocab`.
pub fn random_encoded<R: Rng>(rng: &mut R, k: usize, vocab: usize) -> EncodedSample {
    let sentence = |rng: &mut R| (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(0..vocab)).collect::<Vec<_>>();
    let current = (0..rng.gen_range(1..=3)).map(|_| sentence(rng)).collect();
    let candidates = (0..k)
        .map(|i| EncodedCandidate {
            rank: i + 1,
            history: (0..rng.gen_range(3..=5)).map(|_| sentence(rng)).collect(),
        })
        .collect();
    EncodedSample {
        episode_id: "rand".into(),
        current,
        candidates,
        gold: rng.gen_range(0..k),
    }
}

fn batch_loss(model: &SpeakerModel<f64>, batch: &[EncodedSample]) -> f64 {
    let refs: Vec<&EncodedSample> = batch.iter().collect();
    let mut f = Forward::eval(&model.params);
    let loss = model.batch_loss(&mut f, &refs).unwrap();
    f.tape.scalar(loss)
}

/// Max relative error between backward and central-difference gradients
/// per parameter group. Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_errors(model: &mut SpeakerModel<f64>, batch: &[EncodedSample], h: f64, floor: f64) -> BTreeMap<String, f64> {
    let refs: Vec<&EncodedSample> = batch.iter().collect();
    model.params.zero_grad();
    let mut f = Forward::eval(&model.params);
    let loss = model.batch_loss(&mut f, &refs).unwrap();
    let tape = f.into_tape();
    tape.backward(loss, &mut model.params).unwrap();

    let ids: Vec<_> = model.params.ids().collect();
    let mut out = BTreeMap::new();
    for id in ids {
        let name = model.params.name(id).to_string();
        let analytic: Vec<f64> = match model.params.get(id).grad() {
            Some(g) => g.to_vec(),
            None => vec![0.0; model.params.get(id).numel()],
        };
        let mut worst: f64 = 0.0;
        for (i, &a) in analytic.iter().enumerate() {
            let orig = model.params.get(id).values()[i];
            model.params.get_mut(id).values_mut()[i] = orig + h;
            let up = batch_loss(model, batch);
            model.params.get_mut(id).values_mut()[i] = orig - h;
            let down = batch_loss(model, batch);
            model.params.get_mut(id).values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
        out.insert(name, worst);
    }
    out
}
