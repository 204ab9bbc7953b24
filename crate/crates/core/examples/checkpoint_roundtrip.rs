//! Train a small content model, write it as a checkpoint, read it back and
//! confirm the predictions are bit-for-bit the same. Also shows a 32-bit
//! model widening to 64 bits on load.
//!
//! cargo run --release --example checkpoint_roundtrip

use neural_speaker::autodiff::{checkpoint, AdamConfig};
use neural_speaker::corpus::{SplitRatios, SynthConfig, SynthKind};
use neural_speaker::model::{LoadedModel, ModelConfig, ModelKind, SpeakerModel};
use neural_speaker::pipeline::prepare_synthetic;
use neural_speaker::train::{train, TrainConfig};

fn main() -> neural_speaker::Result<()> {
    let corpus = prepare_synthetic(&SynthConfig::new(SynthKind::Content, 20, 3), SplitRatios::default())?;
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        },
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let mut mc = ModelConfig::new(ModelKind::Content, 8, corpus.vocab.len());
    mc.tie_encoders = true;
    let model = train(SpeakerModel::<f64>::init(mc.clone(), 0)?, &corpus.train, &corpus.val, &cfg)?.model;

    let dir = std::env::temp_dir().join(format!("speaker-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| neural_speaker::Error::io(&dir, e))?;
    let path = dir.join("content.ckpt");
    let original = LoadedModel::Single(model);
    let (store, meta) = original.to_checkpoint()?;
    checkpoint::save(&path, &store, &meta)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("wrote {} ({bytes} bytes, {} values)", path.display(), store.num_values());
    println!("meta: {meta}");

    let ck = checkpoint::load::<f64>(&path)?;
    let restored = LoadedModel::from_checkpoint(ck.params, &ck.meta)?;
    let mut same = 0;
    for s in &corpus.test {
        let (a, b) = (original.predict_sample(s)?.probs, restored.predict_sample(s)?.probs);
        same += usize::from(a.probs() == b.probs());
    }
    println!("identical distributions on {same}/{} test samples", corpus.test.len());

    let small = train(SpeakerModel::<f32>::init(mc, 0)?, &corpus.train, &corpus.val, &cfg)?.model;
    let (store32, meta32) = LoadedModel::Single(small).to_checkpoint()?;
    let path32 = dir.join("content-f32.ckpt");
    checkpoint::save(&path32, &store32, &meta32)?;
    let widened = LoadedModel::from_checkpoint(checkpoint::load::<f64>(&path32)?.params, &meta32)?;
    println!("32-bit checkpoint loaded as {}", widened.tag());
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
