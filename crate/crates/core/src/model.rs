//! Trainable speaker classifiers: temporal, content, and the two hybrids
//! trained end to end, plus the interpolate-after-training pair.
//!
//! Parameter names:
//! `embed.words`, `utt.*` (block encoder), `spk.*` (history encoder, absent
//! when tied), `temporal.table` or `temporal.bias`, `gate.gamma`,
//! `gate.w`/`gate.b`, `attn.*`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Real, Tensor, Var};
use crate::corpus::EncodedSample;
use crate::encoder::{Forward, HierEncoder, StaticAttention, INIT_SCALE};
use crate::error::{Error, Result};
use crate::hybrid::{self, GateParams, GateValue};
use crate::speaker::{candidate_logits, content_speaker_vector, temporal_speaker_vector, CandidateDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Temporal,
    Content,
    HybridWhile,
    HybridAdaptive,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Temporal => "temporal",
            ModelKind::Content => "content",
            ModelKind::HybridWhile => "hybrid-while",
            ModelKind::HybridAdaptive => "hybrid-adaptive",
        }
    }

    pub fn uses_temporal(self) -> bool {
        self != ModelKind::Content
    }

    pub fn uses_content(self) -> bool {
        self != ModelKind::Temporal
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "temporal" => Ok(ModelKind::Temporal),
            "content" => Ok(ModelKind::Content),
            "hybrid-while" => Ok(ModelKind::HybridWhile),
            "hybrid-adaptive" => Ok(ModelKind::HybridAdaptive),
            _ => Err(format!("unknown model kind `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attention {
    Off,
    Static,
}

impl FromStr for Attention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "off" => Ok(Attention::Off),
            "static" => Ok(Attention::Static),
            _ => Err(format!("unknown attention mode `{s}` (expected off|static)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dim: usize,
    pub vocab_size: usize,
    pub k_max: usize,
    /// Share every encoder parameter between block and history encoding.
    pub tie_encoders: bool,
    /// Temporal logits are per-rank biases instead of `s_rank . u`.
    pub temporal_bias_only: bool,
    pub attention: Attention,
    pub gate_init: GateParams,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, dim: usize, vocab_size: usize) -> Self {
        ModelConfig {
            kind,
            dim,
            vocab_size,
            k_max: 5,
            tie_encoders: false,
            temporal_bias_only: false,
            attention: Attention::Off,
            gate_init: GateParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.vocab_size == 0 || self.k_max == 0 {
            return Err(Error::contract("dim, vocab_size and k_max must be positive"));
        }
        if self.attention == Attention::Static && self.kind != ModelKind::Content {
            return Err(Error::contract("static attention is only available for the content model"));
        }
        if !(self.gate_init.w.is_finite() && self.gate_init.b.is_finite()) {
            return Err(Error::contract("gate parameters must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum TemporalPart {
    Table(ParamId),
    Bias(ParamId),
}

#[derive(Debug, Clone, Copy)]
enum GatePart {
    None,
    Global(ParamId),
    Adaptive { w: ParamId, b: ParamId },
}

#[derive(Debug, Clone, Copy)]
struct Parts {
    utterance: HierEncoder,
    speaker: Option<HierEncoder>,
    temporal: Option<TemporalPart>,
    gate: GatePart,
    attention: Option<StaticAttention>,
}

/// Tape nodes of one sample's forward pass.
pub struct SampleForward {
    pub probs: Var,
    pub temporal: Option<Var>,
    pub content: Option<Var>,
    pub gate: Option<Var>,
    /// `-log max(p[gold], floor)`, shape `[1]`.
    pub loss: Var,
}

/// Output of a model on one sample, detached from the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub probs: CandidateDistribution,
    pub temporal: Option<CandidateDistribution>,
    pub content: Option<CandidateDistribution>,
    pub gate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SpeakerModel<T> {
    config: ModelConfig,
    pub params: ParamStore<T>,
    parts: Parts,
}

impl<T: Real> SpeakerModel<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let embed = store.insert("embed.words", Tensor::uniform(vec![config.vocab_size, d], INIT_SCALE, &mut rng))?;
        let utterance = HierEncoder::init(&mut store, "utt", embed, d, &mut rng)?;
        let speaker = match (config.kind.uses_content(), config.tie_encoders) {
            (false, _) => None,
            (true, true) => Some(utterance),
            (true, false) => Some(HierEncoder::init(&mut store, "spk", embed, d, &mut rng)?),
        };
        let temporal = if !config.kind.uses_temporal() {
            None
        } else if config.temporal_bias_only {
            Some(TemporalPart::Bias(store.insert("temporal.bias", Tensor::zeros(vec![config.k_max]))?))
        } else {
            Some(TemporalPart::Table(store.insert(
                "temporal.table",
                Tensor::uniform(vec![config.k_max, d], INIT_SCALE, &mut rng),
            )?))
        };
        let gate = match config.kind {
            ModelKind::HybridWhile => GatePart::Global(store.insert("gate.gamma", Tensor::scalar(T::zero()))?),
            ModelKind::HybridAdaptive => GatePart::Adaptive {
                w: store.insert("gate.w", Tensor::scalar(T::lit(config.gate_init.w)))?,
                b: store.insert("gate.b", Tensor::scalar(T::lit(config.gate_init.b)))?,
            },
            _ => GatePart::None,
        };
        let attention = match config.attention {
            Attention::Static => Some(StaticAttention::init(&mut store, "attn", d, &mut rng)?),
            Attention::Off => None,
        };
        Ok(SpeakerModel {
            config,
            params: store,
            parts: Parts {
                utterance,
                speaker,
                temporal,
                gate,
                attention,
            },
        })
    }

    /// Rebuilds a model around loaded parameters, checking that every
    /// parameter the config requires is present with the right shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let reference = SpeakerModel::<T>::init(config.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            let found = params
                .by_name(name)
                .ok_or_else(|| Error::contract(format!("checkpoint lacks parameter `{name}`")))?;
            if found.shape() != t.shape() {
                return Err(Error::contract(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    found.shape(),
                    t.shape()
                )));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::contract("checkpoint holds parameters the configuration does not use"));
        }
        let d = config.dim;
        let embed = params.expect_id("embed.words")?;
        let utterance = HierEncoder::bind(&params, "utt", embed, d)?;
        let speaker = match (config.kind.uses_content(), config.tie_encoders) {
            (false, _) => None,
            (true, true) => Some(utterance),
            (true, false) => Some(HierEncoder::bind(&params, "spk", embed, d)?),
        };
        let temporal = if !config.kind.uses_temporal() {
            None
        } else if config.temporal_bias_only {
            Some(TemporalPart::Bias(params.expect_id("temporal.bias")?))
        } else {
            Some(TemporalPart::Table(params.expect_id("temporal.table")?))
        };
        let gate = match config.kind {
            ModelKind::HybridWhile => GatePart::Global(params.expect_id("gate.gamma")?),
            ModelKind::HybridAdaptive => GatePart::Adaptive {
                w: params.expect_id("gate.w")?,
                b: params.expect_id("gate.b")?,
            },
            _ => GatePart::None,
        };
        let attention = match config.attention {
            Attention::Static => Some(StaticAttention::bind(&params, "attn")?),
            Attention::Off => None,
        };
        Ok(SpeakerModel {
            config,
            params,
            parts: Parts {
                utterance,
                speaker,
                temporal,
                gate,
                attention,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Copies same-named, same-shaped parameters from a trained model.
    /// Returns the names copied.
    pub fn warm_start(&mut self, from: &ParamStore<T>) -> Vec<String> {
        self.params.copy_matching(from)
    }

    pub fn check_sample(&self, s: &EncodedSample) -> Result<()> {
        let k = s.k();
        if k == 0 || k > self.config.k_max {
            return Err(Error::contract(format!("sample has {k} candidates, model supports 1..={}", self.config.k_max)));
        }
        if s.gold >= k {
            return Err(Error::contract(format!("gold index {} outside {k} candidates", s.gold)));
        }
        if s.current.is_empty() {
            return Err(Error::contract("sample has an empty current block"));
        }
        Ok(())
    }

    /// Builds one sample's forward graph on `f`.
    pub fn forward(&self, f: &mut Forward<'_, T>, s: &EncodedSample) -> Result<SampleForward> {
        self.check_sample(s)?;
        let u = self.parts.utterance.encode_block(f, &s.current)?;
        let u = f.dropout(u)?;

        let temporal_logits = match self.parts.temporal {
            None => None,
            Some(TemporalPart::Table(table)) => {
                let mut vectors = Vec::with_capacity(s.k());
                for c in &s.candidates {
                    vectors.push(temporal_speaker_vector(f, table, c.rank)?);
                }
                Some(candidate_logits(&mut f.tape, u, &vectors)?)
            }
            Some(TemporalPart::Bias(bias)) => {
                let all = f.param(bias)?;
                let mut picked = Vec::with_capacity(s.k());
                for c in &s.candidates {
                    if c.rank == 0 || c.rank > self.config.k_max {
                        return Err(Error::contract(format!("recency rank {} outside [1, {}]", c.rank, self.config.k_max)));
                    }
                    picked.push(f.tape.select(all, c.rank - 1)?);
                }
                Some(f.tape.concat(&picked)?)
            }
        };

        let content_logits = match self.parts.speaker {
            None => None,
            Some(enc) => {
                let mut vectors = Vec::with_capacity(s.k());
                for c in &s.candidates {
                    let v = content_speaker_vector(f, &enc, &c.history)?;
                    vectors.push(f.dropout(v)?);
                }
                match self.parts.attention {
                    None => Some(candidate_logits(&mut f.tape, u, &vectors)?),
                    Some(attn) => {
                        let mut logits = Vec::with_capacity(vectors.len());
                        for &sv in &vectors {
                            let attended = attn.encode(f, &self.parts.utterance, &s.current, sv)?;
                            let prod = f.tape.mul(sv, attended.vector)?;
                            logits.push(f.tape.sum(prod)?);
                        }
                        Some(f.tape.concat(&logits)?)
                    }
                }
            }
        };

        let t = &mut f.tape;
        match (temporal_logits, content_logits) {
            (Some(logits), None) | (None, Some(logits)) => {
                let logp = t.log_softmax(logits)?;
                let picked = t.select(logp, s.gold)?;
                let loss = t.neg(picked)?;
                let probs = t.softmax(logits)?;
                let (temporal, content) = if self.config.kind == ModelKind::Temporal {
                    (Some(probs), None)
                } else {
                    (None, Some(probs))
                };
                Ok(SampleForward {
                    probs,
                    temporal,
                    content,
                    gate: None,
                    loss,
                })
            }
            (Some(lt), Some(lc)) => {
                let pt = t.softmax(lt)?;
                let pc = t.softmax(lc)?;
                let g = match self.parts.gate {
                    GatePart::Global(gamma) => {
                        let gamma = f.param(gamma)?;
                        f.tape.sigmoid(gamma)?
                    }
                    GatePart::Adaptive { w, b } => {
                        let w = f.param(w)?;
                        let b = f.param(b)?;
                        hybrid::adaptive_gate_on_tape(&mut f.tape, pc, w, b)?
                    }
                    GatePart::None => return Err(Error::contract("hybrid model without a gate")),
                };
                let t = &mut f.tape;
                let probs = hybrid::interpolate_on_tape(t, pt, pc, g)?;
                let loss = hybrid::nll_on_tape(t, probs, s.gold)?;
                Ok(SampleForward {
                    probs,
                    temporal: Some(pt),
                    content: Some(pc),
                    gate: Some(g),
                    loss,
                })
            }
            (None, None) => Err(Error::contract("model has neither a temporal nor a content part")),
        }
    }

    /// Mean loss over `batch` as a `[1]` node.
    pub fn batch_loss(&self, f: &mut Forward<'_, T>, batch: &[&EncodedSample]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let mut losses = Vec::with_capacity(batch.len());
        for s in batch {
            losses.push(self.forward(f, s)?.loss);
        }
        let all = f.tape.concat(&losses)?;
        f.tape.mean(all)
    }

    /// Mean loss over `samples` without building gradients.
    pub fn mean_loss(&self, samples: &[EncodedSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::contract("no samples"));
        }
        let mut total = 0.0;
        for s in samples {
            let mut f = Forward::eval(&self.params);
            let out = self.forward(&mut f, s)?;
            total += f.tape.scalar(out.loss).as_f64();
        }
        Ok(total / samples.len() as f64)
    }

    pub fn predict_sample(&self, s: &EncodedSample) -> Result<ModelOutput> {
        let mut f = Forward::eval(&self.params);
        let out = self.forward(&mut f, s)?;
        let dist = |v: Option<Var>| -> Result<Option<CandidateDistribution>> {
            v.map(|v| CandidateDistribution::from_real(f.tape.value(v))).transpose()
        };
        Ok(ModelOutput {
            probs: CandidateDistribution::from_real(f.tape.value(out.probs))?,
            temporal: dist(out.temporal)?,
            content: dist(out.content)?,
            gate: out.gate.map(|g| f.tape.scalar(g).as_f64()),
        })
    }

    /// Current value of the strategy-2 global gate, if any.
    pub fn global_gate(&self) -> Option<f64> {
        match self.parts.gate {
            GatePart::Global(gamma) => Some(crate::autodiff::sigmoid(self.params.get(gamma).values()[0].as_f64())),
            _ => None,
        }
    }

    pub fn gate_params(&self) -> Option<GateParams> {
        match self.parts.gate {
            GatePart::Adaptive { w, b } => Some(GateParams {
                w: self.params.get(w).values()[0].as_f64(),
                b: self.params.get(b).values()[0].as_f64(),
            }),
            _ => None,
        }
    }
}

/// Two separately trained models mixed with a validated `g`.
#[derive(Debug, Clone)]
pub struct InterpolatedModel<T> {
    pub temporal: SpeakerModel<T>,
    pub content: SpeakerModel<T>,
    pub g: GateValue,
}

impl<T: Real> InterpolatedModel<T> {
    pub fn new(temporal: SpeakerModel<T>, content: SpeakerModel<T>, g: GateValue) -> Result<Self> {
        if temporal.config.kind != ModelKind::Temporal || content.config.kind != ModelKind::Content {
            return Err(Error::contract("interpolation needs a temporal and a content model"));
        }
        Ok(InterpolatedModel { temporal, content, g })
    }

    pub fn predict_sample(&self, s: &EncodedSample) -> Result<ModelOutput> {
        let pt = self.temporal.predict_sample(s)?.probs;
        let pc = self.content.predict_sample(s)?.probs;
        Ok(ModelOutput {
            probs: hybrid::interpolate(&pt, &pc, self.g)?,
            temporal: Some(pt),
            content: Some(pc),
            gate: Some(self.g.get()),
        })
    }
}

/// JSON stored in a checkpoint's meta field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMeta {
    Model(ModelConfig),
    Interpolated {
        temporal: ModelConfig,
        content: ModelConfig,
        g: f64,
    },
}

const TEMPORAL_PREFIX: &str = "temporal/";
const CONTENT_PREFIX: &str = "content/";

/// A model restored from a checkpoint.
#[derive(Debug, Clone)]
pub enum LoadedModel<T> {
    Single(SpeakerModel<T>),
    Interpolated(InterpolatedModel<T>),
}

impl<T: Real> LoadedModel<T> {
    pub fn tag(&self) -> String {
        match self {
            LoadedModel::Single(m) => m.config.kind.to_string(),
            LoadedModel::Interpolated(_) => "hybrid-after".to_string(),
        }
    }

    pub fn predict_sample(&self, s: &EncodedSample) -> Result<ModelOutput> {
        match self {
            LoadedModel::Single(m) => m.predict_sample(s),
            LoadedModel::Interpolated(m) => m.predict_sample(s),
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            LoadedModel::Single(m) => m.config.vocab_size,
            LoadedModel::Interpolated(m) => m.content.config.vocab_size,
        }
    }

    pub fn to_checkpoint(&self) -> Result<(ParamStore<T>, String)> {
        match self {
            LoadedModel::Single(m) => Ok((m.params.clone(), serde_json::to_string(&CheckpointMeta::Model(m.config.clone()))?)),
            LoadedModel::Interpolated(m) => {
                let mut store = ParamStore::new();
                for (prefix, part) in [(TEMPORAL_PREFIX, &m.temporal), (CONTENT_PREFIX, &m.content)] {
                    for (name, t) in part.params.iter() {
                        let mut t = t.clone();
                        t.zero_grad();
                        store.insert(format!("{prefix}{name}"), Tensor::new(t.shape().to_vec(), t.values().to_vec())?)?;
                    }
                }
                let meta = CheckpointMeta::Interpolated {
                    temporal: m.temporal.config.clone(),
                    content: m.content.config.clone(),
                    g: m.g.get(),
                };
                Ok((store, serde_json::to_string(&meta)?))
            }
        }
    }

    pub fn from_checkpoint(params: ParamStore<T>, meta: &str) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_str(meta)?;
        match meta {
            CheckpointMeta::Model(config) => Ok(LoadedModel::Single(SpeakerModel::from_params(config, params)?)),
            CheckpointMeta::Interpolated { temporal, content, g } => {
                let split = |prefix: &str| -> Result<ParamStore<T>> {
                    let mut out = ParamStore::new();
                    for (name, t) in params.iter() {
                        if let Some(rest) = name.strip_prefix(prefix) {
                            out.insert(rest, Tensor::new(t.shape().to_vec(), t.values().to_vec())?)?;
                        }
                    }
                    Ok(out)
                };
                Ok(LoadedModel::Interpolated(InterpolatedModel::new(
                    SpeakerModel::from_params(temporal, split(TEMPORAL_PREFIX)?)?,
                    SpeakerModel::from_params(content, split(CONTENT_PREFIX)?)?,
                    GateValue::new(g)?,
                )?))
            }
        }
    }
}
