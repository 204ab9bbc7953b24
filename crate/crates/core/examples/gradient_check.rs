//! Compare backward gradients with central finite differences for every
//! parameter group of every trainable model kind.
//!
//! cargo run --release --example gradient_check

use neural_speaker::corpus::{EncodedCandidate, EncodedSample};
use neural_speaker::encoder::Forward;
use neural_speaker::model::{ModelConfig, ModelKind, SpeakerModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn sample(rng: &mut ChaCha8Rng, k: usize, vocab: usize) -> EncodedSample {
    let mut sentences = |n: usize| -> Vec<Vec<usize>> {
        (0..n).map(|_| (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(0..vocab)).collect()).collect()
    };
    let current = sentences(2);
    let candidates = (0..k).map(|i| EncodedCandidate { rank: i + 1, history: sentences(3) }).collect();
    EncodedSample {
        episode_id: "grad".into(),
        current,
        candidates,
        gold: 1,
    }
}

fn loss(model: &SpeakerModel<f64>, batch: &[&EncodedSample]) -> neural_speaker::Result<f64> {
    let mut f = Forward::eval(&model.params);
    let l = model.batch_loss(&mut f, batch)?;
    Ok(f.tape.scalar(l))
}

fn main() -> neural_speaker::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples: Vec<_> = (0..2).map(|_| sample(&mut rng, 3, 20)).collect();
    let batch: Vec<&EncodedSample> = samples.iter().collect();

    for kind in [ModelKind::Temporal, ModelKind::Content, ModelKind::HybridWhile, ModelKind::HybridAdaptive] {
        let mut config = ModelConfig::new(kind, 8, 20);
        config.k_max = 3;
        let mut model = SpeakerModel::<f64>::init(config, 1)?;

        model.params.zero_grad();
        let mut f = Forward::eval(&model.params);
        let l = model.batch_loss(&mut f, &batch)?;
        f.into_tape().backward(l, &mut model.params)?;

        println!("{kind}");
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let analytic = model.params.get(id).grad().map(<[f64]>::to_vec).unwrap_or_default();
            let mut worst: f64 = 0.0;
            for (i, a) in analytic.iter().enumerate() {
                let orig = model.params.get(id).values()[i];
                model.params.get_mut(id).values_mut()[i] = orig + H;
                let up = loss(&model, &batch)?;
                model.params.get_mut(id).values_mut()[i] = orig - H;
                let down = loss(&model, &batch)?;
                model.params.get_mut(id).values_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * H);
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            }
            println!("  {:<22} {:>5} values  max rel err {worst:.2e}", model.params.name(id), analytic.len());
        }
    }
    Ok(())
}
