mod common;

use common::{gradient_errors, random_encoded};
use neural_speaker::model::{Attention, ModelConfig, ModelKind, SpeakerModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check(config: ModelConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let batch: Vec<_> = (0..2).map(|_| random_encoded(&mut rng, 3, config.vocab_size)).collect();
    let mut model = SpeakerModel::<f64>::init(config.clone(), 9).unwrap();
    let errors = gradient_errors(&mut model, &batch, 1e-5, 1e-6);
    assert!(!errors.is_empty());
    for (name, err) in &errors {
        assert!(*err < 1e-4, "{:?}: {name} relative error {err:e}", config.kind);
    }
}

fn tiny(kind: ModelKind) -> ModelConfig {
    let mut c = ModelConfig::new(kind, 8, 20);
    c.k_max = 3;
    c
}

#[test]
fn temporal_gradients() {
    check(tiny(ModelKind::Temporal));
}

#[test]
fn temporal_bias_only_gradients() {
    let mut c = tiny(ModelKind::Temporal);
    c.temporal_bias_only = true;
    check(c);
}

#[test]
fn content_gradients() {
    check(tiny(ModelKind::Content));
}

#[test]
fn tied_content_gradients() {
    let mut c = tiny(ModelKind::Content);
    c.tie_encoders = true;
    check(c);
}

#[test]
fn attention_gradients() {
    let mut c = tiny(ModelKind::Content);
    c.attention = Attention::Static;
    check(c);
}

#[test]
fn hybrid_while_gradients() {
    check(tiny(ModelKind::HybridWhile));
}

#[test]
fn hybrid_adaptive_gradients() {
    check(tiny(ModelKind::HybridAdaptive));
}
