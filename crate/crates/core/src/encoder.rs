//! Hierarchical recurrent encoder: a word-level LSTM turns each sentence
//! into a vector, a sentence-level LSTM reads those vectors in order, and
//! its last hidden state is the block vector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Uniform init range for recurrent weights and embeddings.
pub const INIT_SCALE: f64 = 0.08;

/// Tape plus the read-only parameters and dropout state of one forward pass.
pub struct Forward<'s, T> {
    pub tape: Tape<T>,
    pub store: &'s ParamStore<T>,
    dropout: f64,
    rng: Option<&'s mut ChaCha8Rng>,
}

impl<'s, T: Real> Forward<'s, T> {
    /// Inference: no dropout.
    pub fn eval(store: &'s ParamStore<T>) -> Self {
        Forward {
            tape: Tape::new(),
            store,
            dropout: 0.0,
            rng: None,
        }
    }

    pub fn train(store: &'s ParamStore<T>, dropout: f64, rng: &'s mut ChaCha8Rng) -> Self {
        Forward {
            tape: Tape::new(),
            store,
            dropout,
            rng: Some(rng),
        }
    }

    /// Inverted dropout; identity at inference or rate 0.
    pub fn dropout(&mut self, v: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(v);
        };
        if self.dropout <= 0.0 {
            return Ok(v);
        }
        let keep = 1.0 - self.dropout;
        let scale = T::lit(1.0 / keep);
        let n = self.tape.value(v).len();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
            .collect();
        self.tape.mul_const(v, mask)
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        self.tape.param(self.store, id)
    }

    /// Releases the parameter borrow so the tape can run backward.
    pub fn into_tape(self) -> Tape<T> {
        self.tape
    }
}

/// One LSTM layer: gates = W [x; h] + b, split as (input, forget, output, candidate).
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl Lstm {
    /// Registers `{prefix}.w` (`[4d, 2d]`, uniform) and `{prefix}.b` (`[4d]`,
    /// zeros with forget-gate bias 1).
    pub fn init<T: Real>(store: &mut ParamStore<T>, prefix: &str, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let weight = store.insert(
            format!("{prefix}.w"),
            Tensor::uniform(vec![4 * dim, 2 * dim], INIT_SCALE, rng),
        )?;
        let mut b = vec![T::zero(); 4 * dim];
        b[dim..2 * dim].iter_mut().for_each(|x| *x = T::one());
        let bias = store.insert(format!("{prefix}.b"), Tensor::vector(b))?;
        Ok(Lstm { weight, bias, dim })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, prefix: &str, dim: usize) -> Result<Self> {
        let lstm = Lstm {
            weight: store.expect_id(&format!("{prefix}.w"))?,
            bias: store.expect_id(&format!("{prefix}.b"))?,
            dim,
        };
        if store.get(lstm.weight).shape() != [4 * dim, 2 * dim] || store.get(lstm.bias).shape() != [4 * dim] {
            return Err(Error::contract(format!("`{prefix}` does not match dimension {dim}")));
        }
        Ok(lstm)
    }

    /// One step from `(h, c)`; `None` is the zero state.
    pub fn step<T: Real>(&self, f: &mut Forward<'_, T>, x: Var, state: Option<(Var, Var)>) -> Result<(Var, Var)> {
        let d = self.dim;
        let w = f.param(self.weight)?;
        let b = f.param(self.bias)?;
        let t = &mut f.tape;
        let hc = t.lstm_cell(w, b, x, state)?;
        Ok((t.slice(hc, 0, d)?, t.slice(hc, d, d)?))
    }

    /// Runs over `inputs` from the zero state; returns the last state.
    pub fn run<T: Real>(&self, f: &mut Forward<'_, T>, inputs: &[Var]) -> Result<(Var, Var)> {
        let mut state = None;
        for &x in inputs {
            state = Some(self.step(f, x, state)?);
        }
        state.ok_or_else(|| Error::contract("recurrence over an empty sequence"))
    }
}

/// Parameters of one hierarchical encoder. The embedding table may be
/// shared with other encoders.
#[derive(Debug, Clone, Copy)]
pub struct HierEncoder {
    pub embeddings: ParamId,
    pub word: Lstm,
    pub sentence: Lstm,
    pub dim: usize,
}

impl HierEncoder {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        embeddings: ParamId,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(HierEncoder {
            embeddings,
            word: Lstm::init(store, &format!("{prefix}.word_lstm"), dim, rng)?,
            sentence: Lstm::init(store, &format!("{prefix}.sent_lstm"), dim, rng)?,
            dim,
        })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, prefix: &str, embeddings: ParamId, dim: usize) -> Result<Self> {
        Ok(HierEncoder {
            embeddings,
            word: Lstm::bind(store, &format!("{prefix}.word_lstm"), dim)?,
            sentence: Lstm::bind(store, &format!("{prefix}.sent_lstm"), dim)?,
            dim,
        })
    }

    pub fn vocab_size<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.get(self.embeddings).shape()[0]
    }

    /// Final word-level hidden state after reading `token_ids` left to right.
    pub fn encode_sentence<T: Real>(&self, f: &mut Forward<'_, T>, token_ids: &[usize]) -> Result<Var> {
        if token_ids.is_empty() {
            return Err(Error::contract("cannot encode an empty sentence"));
        }
        let vocab = self.vocab_size(f.store);
        let mut inputs = Vec::with_capacity(token_ids.len());
        for &id in token_ids {
            if id >= vocab {
                return Err(Error::contract(format!("token id {id} outside vocabulary of {vocab}")));
            }
            let e = f.tape.lookup(f.store, self.embeddings, id)?;
            inputs.push(f.dropout(e)?);
        }
        Ok(self.word.run(f, &inputs)?.0)
    }

    fn sentence_vectors<T: Real>(&self, f: &mut Forward<'_, T>, sentences: &[Vec<usize>]) -> Result<Vec<Var>> {
        if sentences.is_empty() {
            return Err(Error::contract("cannot encode an empty block"));
        }
        sentences.iter().map(|s| self.encode_sentence(f, s)).collect()
    }

    /// Block vector: last sentence-level hidden state.
    pub fn encode_block<T: Real>(&self, f: &mut Forward<'_, T>, sentences: &[Vec<usize>]) -> Result<Var> {
        let vectors = self.sentence_vectors(f, sentences)?;
        Ok(self.sentence.run(f, &vectors)?.0)
    }
}

/// Additive attention over sentence vectors with the speaker vector as the
/// query: `score_j = v . tanh(W [h_j; s])`.
#[derive(Debug, Clone, Copy)]
pub struct StaticAttention {
    pub weight: ParamId,
    pub query: ParamId,
}

pub struct Attended {
    pub vector: Var,
    pub weights: Var,
}

impl StaticAttention {
    pub fn init<T: Real>(store: &mut ParamStore<T>, prefix: &str, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(StaticAttention {
            weight: store.insert(format!("{prefix}.w"), Tensor::uniform(vec![dim, 2 * dim], INIT_SCALE, rng))?,
            query: store.insert(format!("{prefix}.v"), Tensor::uniform(vec![dim], INIT_SCALE, rng))?,
        })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        Ok(StaticAttention {
            weight: store.expect_id(&format!("{prefix}.w"))?,
            query: store.expect_id(&format!("{prefix}.v"))?,
        })
    }

    /// The sentence-level LSTM reads sentences `1..N-1` as usual; its final
    /// step reads the attention-weighted mix of all sentence vectors. A
    /// one-sentence block therefore reduces to [`HierEncoder::encode_block`].
    pub fn encode<T: Real>(
        &self,
        f: &mut Forward<'_, T>,
        encoder: &HierEncoder,
        sentences: &[Vec<usize>],
        speaker: Var,
    ) -> Result<Attended> {
        let vectors = encoder.sentence_vectors(f, sentences)?;
        let w = f.param(self.weight)?;
        let v = f.param(self.query)?;
        let mut scores = Vec::with_capacity(vectors.len());
        for &h in &vectors {
            let t = &mut f.tape;
            let hs = t.concat(&[h, speaker])?;
            let proj = t.matmul(w, hs)?;
            let act = t.tanh(proj)?;
            let prod = t.mul(v, act)?;
            scores.push(t.sum(prod)?);
        }
        let t = &mut f.tape;
        let logits = t.concat(&scores)?;
        let weights = t.softmax(logits)?;
        let mut mixed = None;
        for (j, &h) in vectors.iter().enumerate() {
            let a = t.select(weights, j)?;
            let term = t.mul_scalar(h, a)?;
            mixed = Some(match mixed {
                None => term,
                Some(acc) => t.add(acc, term)?,
            });
        }
        let mixed = mixed.expect("non-empty block");
        let n = vectors.len();
        let state = if n > 1 {
            Some(encoder.sentence.run(f, &vectors[..n - 1])?)
        } else {
            None
        };
        let (vector, _) = encoder.sentence.step(f, mixed, state)?;
        Ok(Attended { vector, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn setup(dim: usize, vocab: usize, seed: u64) -> (ParamStore<f64>, HierEncoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        // larger than the default init so outputs are far from degenerate
        let emb = store
            .insert("embed", Tensor::uniform(vec![vocab, dim], 1.0, &mut rng))
            .unwrap();
        let enc = HierEncoder::init(&mut store, "enc", emb, dim, &mut rng).unwrap();
        for id in [enc.word.weight, enc.sentence.weight] {
            let t = store.get_mut(id);
            let shape = t.shape().to_vec();
            *t = Tensor::uniform(shape, 0.5, &mut rng);
        }
        (store, enc)
    }

    /// Plain-f64 LSTM step, independent of the tape.
    fn reference_step(store: &ParamStore<f64>, lstm: &Lstm, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = lstm.dim;
        let w = store.get(lstm.weight).values();
        let b = store.get(lstm.bias).values();
        let xh: Vec<f64> = x.iter().chain(h).copied().collect();
        let gate = |r: usize| b[r] + (0..2 * d).map(|j| w[r * 2 * d + j] * xh[j]).sum::<f64>();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut h2 = vec![0.0; d];
        let mut c2 = vec![0.0; d];
        for k in 0..d {
            let (i, fg, o, g) = (sig(gate(k)), sig(gate(d + k)), sig(gate(2 * d + k)), gate(3 * d + k).tanh());
            c2[k] = fg * c[k] + i * g;
            h2[k] = o * c2[k].tanh();
        }
        (h2, c2)
    }

    fn embedding(store: &ParamStore<f64>, enc: &HierEncoder, id: usize) -> Vec<f64> {
        let d = enc.dim;
        store.get(enc.embeddings).values()[id * d..(id + 1) * d].to_vec()
    }

    #[test]
    fn single_token_is_one_step_from_zero() {
        let (store, enc) = setup(4, 6, 1);
        let mut f = Forward::eval(&store);
        let v = enc.encode_sentence(&mut f, &[3]).unwrap();
        let zero = vec![0.0; 4];
        let (h, _) = reference_step(&store, &enc.word, &embedding(&store, &enc, 3), &zero, &zero);
        for (a, b) in f.tape.value(v).iter().zip(&h) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sentence_matches_reference_recurrence() {
        let (store, enc) = setup(5, 9, 2);
        let ids = [1, 4, 4, 8, 2];
        let mut f = Forward::eval(&store);
        let v = enc.encode_sentence(&mut f, &ids).unwrap();
        let (mut h, mut c) = (vec![0.0; 5], vec![0.0; 5]);
        for &id in &ids {
            (h, c) = reference_step(&store, &enc.word, &embedding(&store, &enc, id), &h, &c);
        }
        for (a, b) in f.tape.value(v).iter().zip(&h) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn permutation_changes_output() {
        let (store, enc) = setup(6, 10, 3);
        let mut f = Forward::eval(&store);
        let a = enc.encode_sentence(&mut f, &[2, 3, 5, 7, 9]).unwrap();
        let b = enc.encode_sentence(&mut f, &[9, 7, 5, 3, 2]).unwrap();
        let diff: f64 = f.tape.value(a).iter().zip(f.tape.value(b)).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6, "diff {diff}");
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let (store, enc) = setup(4, 6, 4);
        let block = vec![vec![1, 2], vec![3, 4, 5]];
        let mut f1 = Forward::eval(&store);
        let a = enc.encode_block(&mut f1, &block).unwrap();
        let mut f2 = Forward::eval(&store);
        let b = enc.encode_block(&mut f2, &block).unwrap();
        let bits = |t: &Tape<f64>, v| t.value(v).iter().map(|x: &f64| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&f1.tape, a), bits(&f2.tape, b));
    }

    #[test]
    fn one_sentence_block_is_one_sentence_step() {
        let (store, enc) = setup(4, 6, 5);
        let mut f = Forward::eval(&store);
        let s = enc.encode_sentence(&mut f, &[1, 2, 3]).unwrap();
        let sv = f.tape.value(s).to_vec();
        let u = enc.encode_block(&mut f, &[vec![1, 2, 3]]).unwrap();
        let zero = vec![0.0; 4];
        let (h, _) = reference_step(&store, &enc.sentence, &sv, &zero, &zero);
        for (a, b) in f.tape.value(u).iter().zip(&h) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn output_dim_independent_of_block_shape() {
        let (store, enc) = setup(7, 12, 6);
        for block in [vec![vec![1]], vec![vec![1, 2, 3]; 5], vec![vec![4; 30], vec![5]]] {
            let mut f = Forward::eval(&store);
            let u = enc.encode_block(&mut f, &block).unwrap();
            assert_eq!(f.tape.shape(u), &[7]);
            assert!(f.tape.value(u).iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn contract_errors() {
        let (store, enc) = setup(4, 6, 7);
        let mut f = Forward::eval(&store);
        assert!(matches!(enc.encode_sentence(&mut f, &[]), Err(Error::Contract(_))));
        assert!(matches!(enc.encode_block(&mut f, &[]), Err(Error::Contract(_))));
        assert!(matches!(enc.encode_sentence(&mut f, &[6]), Err(Error::Contract(_))));
    }

    #[test]
    fn attention_singleton_weight_is_one() {
        let (mut store, enc) = setup(4, 6, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let attn = StaticAttention::init(&mut store, "attn", 4, &mut rng).unwrap();
        let mut f = Forward::eval(&store);
        let s = f.tape.constant_vec(vec![0.3, -0.2, 0.1, 0.5]).unwrap();
        let out = attn.encode(&mut f, &enc, &[vec![1, 2]], s).unwrap();
        assert_eq!(f.tape.value(out.weights), &[1.0]);
        let plain = enc.encode_block(&mut f, &[vec![1, 2]]).unwrap();
        assert_eq!(f.tape.value(out.vector), f.tape.value(plain));
    }

    #[test]
    fn uniform_attention_feeds_mean_into_final_step() {
        let (mut store, enc) = setup(4, 6, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let attn = StaticAttention::init(&mut store, "attn", 4, &mut rng).unwrap();
        store.get_mut(attn.query).values_mut().fill(0.0);
        let block = vec![vec![1, 2], vec![3], vec![4, 5, 1]];
        let mut f = Forward::eval(&store);
        let s = f.tape.constant_vec(vec![0.3, -0.2, 0.1, 0.5]).unwrap();
        let out = attn.encode(&mut f, &enc, &block, s).unwrap();
        for &w in f.tape.value(out.weights) {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let sents: Vec<Vec<f64>> = block
            .iter()
            .map(|b| {
                let v = enc.encode_sentence(&mut f, b).unwrap();
                f.tape.value(v).to_vec()
            })
            .collect();
        let mean: Vec<f64> = (0..4).map(|k| sents.iter().map(|s| s[k]).sum::<f64>() / 3.0).collect();
        let (mut h, mut c) = (vec![0.0; 4], vec![0.0; 4]);
        for s in &sents[..2] {
            (h, c) = reference_step(&store, &enc.sentence, s, &h, &c);
        }
        let (expected, _) = reference_step(&store, &enc.sentence, &mean, &h, &c);
        for (a, b) in f.tape.value(out.vector).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
