//! The `speaker` command line: build-corpus, synth, train, eval,
//! sweep-gate and predict. Every artifact-producing command writes a
//! `manifest.json` next to its outputs.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{checkpoint, AdamConfig, ParamStore, Real};
use crate::baseline::{baseline_predictions, BaselineKind};
use crate::corpus::{
    build_samples, gen_synthetic, parse_transcript, read_samples_jsonl, split_by_episode, write_samples_jsonl,
    BuildCounters, CorpusStats, EncodedSample, PartitionCounts, Partitions, Sample, SampleRules, SplitRatios,
    SynthConfig, SynthKind, Utterance, Vocabulary, FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::hybrid::{check_grid, sweep_gate, GateValue, PairedPrediction};
use crate::metrics::{evaluate, performance_table, Metric, MetricsReport, Prediction};
use crate::model::{Attention, InterpolatedModel, LoadedModel, ModelConfig, ModelKind, SpeakerModel};
use crate::pipeline::labels;
use crate::speaker::CandidateDistribution;
use crate::train::{predict_all, train_dropout_grid, TrainConfig, TrainOutcome};

#[derive(Debug, Parser)]
#[command(name = "speaker", version, about = "Speaker classification in multi-party dialog")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a directory of transcripts into sample partitions.
    BuildCorpus(BuildCorpusArgs),
    /// Write synthetic transcripts with a planted speaker signal.
    Synth(SynthArgs),
    /// Train a model on a processed corpus.
    Train(TrainArgs),
    /// Score a checkpoint (or a predictions file) next to the baselines.
    Eval(EvalArgs),
    /// Validate the interpolation gate of a temporal/content pair.
    SweepGate(SweepArgs),
    /// Write per-sample prediction records.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    Temporal,
    Content,
    HybridAfter,
    HybridWhile,
    HybridAdaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionArg {
    Off,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionArg {
    Train,
    Val,
    Test,
}

impl PartitionArg {
    fn file(self) -> &'static str {
        match self {
            PartitionArg::Train => "train.jsonl",
            PartitionArg::Val => "val.jsonl",
            PartitionArg::Test => "test.jsonl",
        }
    }
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    s.parse()
}

fn parse_unit(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct BuildCorpusArgs {
    /// Directory of `*.txt` transcripts, one episode per file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8, value_parser = parse_unit)]
    pub train_ratio: f64,
    #[arg(long, default_value_t = 0.1, value_parser = parse_unit)]
    pub val_ratio: f64,
    #[arg(long, default_value_t = 0.1, value_parser = parse_unit)]
    pub test_ratio: f64,
    #[arg(long, default_value_t = 5)]
    pub k_max: usize,
    #[arg(long, default_value_t = 3)]
    pub min_hist: usize,
    #[arg(long, default_value_t = 5)]
    pub max_hist: usize,
    #[arg(long, default_value_t = 5)]
    pub max_block: usize,
    #[arg(long, default_value_t = 50)]
    pub max_tokens: usize,
    /// Training-partition frequency below which tokens map to `<unk>`.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_parser = ["temporal", "content", "mixed"])]
    pub kind: String,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub speakers: usize,
    #[arg(long, default_value_t = 30)]
    pub turns: usize,
    #[arg(long, default_value_t = 0.75, value_parser = parse_unit)]
    pub p_repeat: f64,
    /// Share of utterances drawn from shared words only (default depends on kind).
    #[arg(long, value_parser = parse_unit)]
    pub generic_prob: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Processed corpus directory written by build-corpus.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    /// One rate, or a comma list validated on the validation partition.
    #[arg(long, default_value = "0,0.2,0.5")]
    pub dropout: String,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 30)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "macro-f1", value_parser = parse_metric)]
    #[serde(serialize_with = "ser_display")]
    pub metric: Metric,
    /// Grid for hybrid-after, e.g. `0:1:0.05` or `0,0.5,1`.
    #[arg(long, default_value = "0:1:0.05")]
    pub g_grid: String,
    #[arg(long, value_enum, default_value_t = AttentionArg::Off)]
    pub attention: AttentionArg,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    pub precision: PrecisionArg,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Share all encoder weights between blocks and speaker histories.
    #[arg(long)]
    pub tie_encoders: bool,
    /// Temporal logits are per-rank biases, ignoring the block vector.
    #[arg(long)]
    pub temporal_bias_only: bool,
    /// Warm-start hybrid-while/adaptive from a trained temporal checkpoint.
    #[arg(long)]
    pub init_temporal: Option<PathBuf>,
    /// Warm-start hybrid-while/adaptive from a trained content checkpoint.
    #[arg(long)]
    pub init_content: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate prediction records instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    pub predictions: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PartitionArg::Test)]
    pub partition: PartitionArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub temporal: PathBuf,
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long, default_value = "0:1:0.05")]
    pub g_grid: String,
    #[arg(long, default_value = "macro-f1", value_parser = parse_metric)]
    #[serde(serialize_with = "ser_display")]
    pub metric: Metric,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = PartitionArg::Test)]
    pub partition: PartitionArg,
    /// Output JSONL file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn ser_display<S: serde::Serializer, D: std::fmt::Display>(v: &D, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Per-sample prediction record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub episode_id: String,
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub gold: usize,
    pub model: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    seed: Option<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    format_versions: serde_json::Value,
    tool_version: &'static str,
    started_unix: u64,
    finished_unix: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_manifest<C: Serialize>(
    dir: &Path,
    command: &str,
    config: &C,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&str],
    started: u64,
) -> Result<()> {
    let m = Manifest {
        command,
        config,
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        format_versions: json!({
            "samples": FORMAT_VERSION,
            "vocabulary": FORMAT_VERSION,
            "checkpoint": checkpoint::CHECKPOINT_VERSION,
        }),
        tool_version: env!("CARGO_PKG_VERSION"),
        started_unix: started,
        finished_unix: unix_now(),
    };
    write_text(&dir.join("manifest.json"), &(serde_json::to_string_pretty(&m)? + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// `a:b:step` or a comma list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::contract(format!("cannot parse grid `{spec}`"));
    let grid = if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [lo, hi, step] = parts[..] else { return Err(bad()) };
        if step <= 0.0 || hi < lo {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9).collect()
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?
    };
    check_grid(&grid)?;
    Ok(grid)
}

fn parse_dropout(spec: &str) -> Result<Vec<f64>> {
    let rates = spec
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::contract(format!("cannot parse dropout `{spec}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if rates.is_empty() || rates.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(Error::contract(format!("dropout rates must lie in [0, 1): `{spec}`")));
    }
    Ok(rates)
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildCorpus(a) => cmd_build_corpus(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::SweepGate(a) => cmd_sweep_gate(&a),
        Command::Predict(a) => cmd_predict(&a),
    }
}

/// Transcript files in `dir`, sorted by name.
fn transcript_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_build_corpus(a: &BuildCorpusArgs) -> Result<()> {
    let started = unix_now();
    let rules = SampleRules {
        k_max: a.k_max,
        min_hist: a.min_hist,
        max_hist: a.max_hist,
        max_block: a.max_block,
        max_tokens: a.max_tokens,
    };
    rules.validate()?;
    let ratios = SplitRatios {
        train: a.train_ratio,
        val: a.val_ratio,
        test: a.test_ratio,
    };
    ratios.validate()?;
    let files = transcript_files(&a.data)?;
    if files.is_empty() {
        return Err(Error::contract(format!("no *.txt transcripts in {}", a.data.display())));
    }
    let mut samples = Vec::new();
    let mut counters = BuildCounters::default();
    let mut skipped = 0;
    for path in &files {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let episode = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let parsed = parse_transcript(&raw, &episode);
        skipped += parsed.skipped_lines;
        let (s, c) = build_samples(&parsed.utterances, &rules);
        samples.extend(s);
        counters.merge(&c);
    }
    if samples.is_empty() {
        return Err(Error::contract(format!(
            "no samples emitted: {} blocks, {} speaker not among candidates, {} short history",
            counters.blocks, counters.speaker_not_candidate, counters.short_history
        )));
    }
    let partitions = split_by_episode(samples, ratios, a.seed)?;
    let vocab = Vocabulary::build(&partitions.train, a.min_count)?;
    write_corpus(&a.out, &partitions, &vocab, counters, skipped)?;
    write_manifest(
        &a.out,
        "build-corpus",
        a,
        Some(a.seed),
        &[&a.data],
        &["train.jsonl", "val.jsonl", "test.jsonl", "vocab.json", "stats.json", "stats.txt"],
        started,
    )
}

fn counts(samples: &[Sample]) -> PartitionCounts {
    PartitionCounts {
        samples: samples.len(),
        episodes: Partitions::episodes(samples).len(),
    }
}

/// Writes partitions, vocabulary and stats to `out`.
pub fn write_corpus(
    out: &Path,
    partitions: &Partitions,
    vocab: &Vocabulary,
    counters: BuildCounters,
    skipped_lines: usize,
) -> Result<CorpusStats> {
    create_dir(out)?;
    write_samples_jsonl(&out.join("train.jsonl"), &partitions.train)?;
    write_samples_jsonl(&out.join("val.jsonl"), &partitions.val)?;
    write_samples_jsonl(&out.join("test.jsonl"), &partitions.test)?;
    vocab.save(&out.join("vocab.json"))?;
    let stats = CorpusStats {
        format_version: FORMAT_VERSION,
        train: counts(&partitions.train),
        val: counts(&partitions.val),
        test: counts(&partitions.test),
        counters,
        vocabulary_size: vocab.len(),
        skipped_lines,
    };
    write_text(&out.join("stats.json"), &(serde_json::to_string_pretty(&stats)? + "\n"))?;
    write_text(&out.join("stats.txt"), &stats.to_string())?;
    print!("{stats}");
    Ok(stats)
}

/// Writes one `NAME: text` transcript per episode.
pub fn write_transcripts(out: &Path, utterances: &[Utterance]) -> Result<usize> {
    create_dir(out)?;
    let mut episodes = 0;
    let mut start = 0;
    while start < utterances.len() {
        let id = &utterances[start].episode_id;
        let end = utterances[start..]
            .iter()
            .position(|u| &u.episode_id != id)
            .map_or(utterances.len(), |p| start + p);
        let text: String = utterances[start..end]
            .iter()
            .map(|u| format!("{}: {}\n", u.speaker, u.tokens.join(" ")))
            .collect();
        write_text(&out.join(format!("{id}.txt")), &text)?;
        episodes += 1;
        start = end;
    }
    Ok(episodes)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let started = unix_now();
    let kind: SynthKind = a.kind.parse().map_err(Error::Contract)?;
    let mut cfg = SynthConfig::new(kind, a.episodes, a.seed);
    cfg.speakers = a.speakers;
    cfg.turns = a.turns;
    cfg.p_repeat = a.p_repeat;
    if let Some(g) = a.generic_prob {
        cfg.generic_prob = g;
    }
    let utterances = gen_synthetic(&cfg)?;
    let n = write_transcripts(&a.out, &utterances)?;
    println!("wrote {n} episodes, {} utterances to {}", utterances.len(), a.out.display());
    write_manifest(&a.out, "synth", &cfg, Some(a.seed), &[], &["*.txt"], started)
}

/// A processed corpus directory, encoded with its vocabulary.
pub struct CorpusDir {
    pub vocab: Vocabulary,
    pub train: Vec<EncodedSample>,
    pub val: Vec<EncodedSample>,
    pub test: Vec<EncodedSample>,
}

pub fn load_corpus_dir(dir: &Path) -> Result<CorpusDir> {
    let vocab = Vocabulary::load(&dir.join("vocab.json"))?;
    let load = |name: &str| -> Result<Vec<EncodedSample>> {
        Ok(read_samples_jsonl(&dir.join(name))?.iter().map(|s| vocab.encode(s)).collect())
    };
    Ok(CorpusDir {
        train: load("train.jsonl")?,
        val: load("val.jsonl")?,
        test: load("test.jsonl")?,
        vocab,
    })
}

impl CorpusDir {
    fn partition(&self, p: PartitionArg) -> &[EncodedSample] {
        match p {
            PartitionArg::Train => &self.train,
            PartitionArg::Val => &self.val,
            PartitionArg::Test => &self.test,
        }
    }
}

fn model_config(a: &TrainArgs, kind: ModelKind, vocab_size: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(kind, a.dim, vocab_size);
    cfg.tie_encoders = a.tie_encoders;
    cfg.temporal_bias_only = a.temporal_bias_only;
    cfg.attention = match a.attention {
        AttentionArg::Off => Attention::Off,
        AttentionArg::Static => Attention::Static,
    };
    cfg
}

fn load_store<T: Real>(path: &Path) -> Result<(ParamStore<T>, String)> {
    let ck = checkpoint::load::<T>(path)?;
    Ok((ck.params, ck.meta))
}

fn train_kind<T: Real>(a: &TrainArgs, corpus: &CorpusDir, kind: ModelKind, log: &mut String) -> Result<TrainOutcome<T>> {
    let cfg = model_config(a, kind, corpus.vocab.len());
    let mut warm: Vec<ParamStore<T>> = Vec::new();
    if matches!(kind, ModelKind::HybridWhile | ModelKind::HybridAdaptive) {
        // content last: its encoders win where both checkpoints share names
        for path in [&a.init_temporal, &a.init_content].into_iter().flatten() {
            warm.push(load_store::<T>(path)?.0);
        }
    } else if a.init_temporal.is_some() || a.init_content.is_some() {
        return Err(Error::contract("--init-temporal/--init-content apply to hybrid-while and hybrid-adaptive"));
    }
    let tcfg = TrainConfig {
        batch_size: a.batch,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        dropout: 0.0,
        patience: a.patience,
        max_epochs: a.max_epochs,
        seed: a.seed,
        metric: a.metric,
    };
    let grid = parse_dropout(&a.dropout)?;
    let outcome = train_dropout_grid(
        || {
            let mut m = SpeakerModel::<T>::init(cfg.clone(), a.seed)?;
            for w in &warm {
                m.warm_start(w);
            }
            Ok(m)
        },
        &corpus.train,
        &corpus.val,
        &tcfg,
        &grid,
    )?;
    log.push_str(&format!("# model={kind} dropout={}\n", outcome.dropout));
    for l in &outcome.log {
        log.push_str(&format!("{l}\n"));
    }
    Ok(outcome)
}

fn save_model<T: Real>(path: &Path, model: &LoadedModel<T>) -> Result<()> {
    let (store, meta) = model.to_checkpoint()?;
    checkpoint::save(path, &store, &meta)
}

fn paired_predictions<T: Real>(
    temporal: &SpeakerModel<T>,
    content: &SpeakerModel<T>,
    samples: &[EncodedSample],
) -> Result<Vec<PairedPrediction>> {
    samples
        .iter()
        .map(|s| {
            Ok(PairedPrediction {
                gold: s.gold,
                temporal: temporal.predict_sample(s)?.probs,
                content: content.predict_sample(s)?.probs,
            })
        })
        .collect()
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    match a.precision {
        PrecisionArg::F64 => train_typed::<f64>(a),
        PrecisionArg::F32 => train_typed::<f32>(a),
    }
}

fn train_typed<T: Real>(a: &TrainArgs) -> Result<()> {
    let started = unix_now();
    if a.dim == 0 {
        return Err(Error::contract("--dim must be positive"));
    }
    let corpus = load_corpus_dir(&a.data)?;
    create_dir(&a.out)?;
    let mut log = String::new();
    let mut outputs = vec!["model.ckpt", "train_log.txt", "val_report.txt"];
    let model = match a.model {
        ModelArg::HybridAfter => {
            let grid = parse_grid(&a.g_grid)?;
            let t = train_kind::<T>(a, &corpus, ModelKind::Temporal, &mut log)?;
            let c = train_kind::<T>(a, &corpus, ModelKind::Content, &mut log)?;
            let sweep = sweep_gate(&paired_predictions(&t.model, &c.model, &corpus.val)?, &grid)?;
            write_text(&a.out.join("sweep.txt"), &sweep.to_string())?;
            outputs.push("sweep.txt");
            let g = sweep.best_g(a.metric).expect("every metric has a best g");
            log.push_str(&format!("# hybrid-after g={g}\n"));
            LoadedModel::Interpolated(InterpolatedModel::new(t.model, c.model, GateValue::new(g)?)?)
        }
        other => {
            let kind = match other {
                ModelArg::Temporal => ModelKind::Temporal,
                ModelArg::Content => ModelKind::Content,
                ModelArg::HybridWhile => ModelKind::HybridWhile,
                _ => ModelKind::HybridAdaptive,
            };
            let outcome = train_kind::<T>(a, &corpus, kind, &mut log)?;
            for m in Metric::ALL {
                if let Some(params) = outcome.snapshots.get(&m) {
                    let best = SpeakerModel::from_params(outcome.model.config().clone(), params.clone())?;
                    save_model(&a.out.join(format!("best-{m}.ckpt")), &LoadedModel::Single(best))?;
                }
            }
            LoadedModel::Single(outcome.model)
        }
    };
    save_model(&a.out.join("model.ckpt"), &model)?;
    let (preds, _) = predict_all(|s| model.predict_sample(s), &corpus.val)?;
    let report = evaluate(&preds)?;
    let tag = model.tag();
    write_text(&a.out.join("train_log.txt"), &log)?;
    write_text(
        &a.out.join("val_report.txt"),
        &format!("{}{}", report.to_records(&tag), report.per_class_table()),
    )?;
    print!("{log}");
    print!("{}", report.to_records(&tag));
    write_manifest(&a.out, "train", a, Some(a.seed), &[&a.data], &outputs, started)
}

/// Loads any checkpoint as 64-bit; 32-bit values widen exactly.
pub fn load_model(path: &Path) -> Result<LoadedModel<f64>> {
    let (store, meta) = load_store::<f64>(path)?;
    LoadedModel::from_checkpoint(store, &meta)
}

fn read_prediction_records(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn record_prediction(r: &PredictionRecord) -> Result<Prediction> {
    let probs = CandidateDistribution::new(r.probs.clone())?;
    if r.gold >= probs.k() || r.predicted >= probs.k() {
        return Err(Error::contract(format!("record for {} indexes past its {} candidates", r.episode_id, probs.k())));
    }
    Ok(Prediction {
        gold: r.gold,
        predicted: r.predicted,
        probs: Some(probs),
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let started = unix_now();
    let mut rows: Vec<(String, MetricsReport)> = Vec::new();
    let mut inputs: Vec<&Path> = Vec::new();
    let corpus = match &a.data {
        Some(d) => {
            inputs.push(d);
            Some(load_corpus_dir(d)?)
        }
        None => None,
    };
    if let Some(path) = &a.predictions {
        inputs.push(path);
        let records = read_prediction_records(path)?;
        let preds = records.iter().map(record_prediction).collect::<Result<Vec<_>>>()?;
        let tag = records.first().map_or("predictions".to_string(), |r| r.model.clone());
        rows.push((tag, evaluate(&preds)?));
    }
    if let Some(c) = &corpus {
        let eval_set = c.partition(a.partition);
        if eval_set.is_empty() {
            return Err(Error::contract(format!("partition {} is empty", a.partition.file())));
        }
        let train_labels = labels(&c.train);
        let eval_labels = labels(eval_set);
        for kind in BaselineKind::ALL {
            let preds = baseline_predictions(kind, &train_labels, &eval_labels, a.seed)?;
            rows.push((kind.label().to_string(), evaluate(&preds)?));
        }
        if let Some(ck) = &a.checkpoint {
            inputs.push(ck);
            let model = load_model(ck)?;
            check_vocab(&model, &c.vocab)?;
            let (preds, _) = predict_all(|s| model.predict_sample(s), eval_set)?;
            rows.push((model.tag(), evaluate(&preds)?));
        }
    } else if a.checkpoint.is_some() {
        return Err(Error::contract("--checkpoint needs --data"));
    }
    if rows.is_empty() {
        return Err(Error::contract("nothing to evaluate: pass --data and/or --predictions"));
    }
    let table = performance_table(&rows);
    let records: String = rows
        .iter()
        .map(|(name, r)| r.to_records(&name.to_lowercase().replace([' ', '/'], "-")))
        .collect();
    print!("{table}\n{records}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_text(&out.join("report.txt"), &table)?;
        write_text(&out.join("report_records.txt"), &records)?;
        write_manifest(out, "eval", a, Some(a.seed), &inputs, &["report.txt", "report_records.txt"], started)?;
    }
    Ok(())
}

fn check_vocab(model: &LoadedModel<f64>, vocab: &Vocabulary) -> Result<()> {
    if model.vocab_size() != vocab.len() {
        return Err(Error::contract(format!(
            "checkpoint expects a vocabulary of {} tokens, corpus has {}",
            model.vocab_size(),
            vocab.len()
        )));
    }
    Ok(())
}

fn cmd_sweep_gate(a: &SweepArgs) -> Result<()> {
    let started = unix_now();
    let grid = parse_grid(&a.g_grid)?;
    let corpus = load_corpus_dir(&a.data)?;
    let single = |path: &Path, kind: ModelKind| -> Result<SpeakerModel<f64>> {
        match load_model(path)? {
            LoadedModel::Single(m) if m.config().kind == kind => Ok(m),
            _ => Err(Error::contract(format!("{} is not a {kind} checkpoint", path.display()))),
        }
    };
    let t = single(&a.temporal, ModelKind::Temporal)?;
    let c = single(&a.content, ModelKind::Content)?;
    for m in [&t, &c] {
        check_vocab(&LoadedModel::Single(m.clone()), &corpus.vocab)?;
    }
    let sweep = sweep_gate(&paired_predictions(&t, &c, &corpus.val)?, &grid)?;
    print!("{sweep}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_text(&out.join("sweep.txt"), &sweep.to_string())?;
        write_text(&out.join("sweep.json"), &(serde_json::to_string_pretty(&sweep)? + "\n"))?;
        let g = sweep.best_g(a.metric).expect("every metric has a best g");
        save_model(
            &out.join("model.ckpt"),
            &LoadedModel::Interpolated(InterpolatedModel::new(t, c, GateValue::new(g)?)?),
        )?;
        write_manifest(
            out,
            "sweep-gate",
            a,
            None,
            &[&a.data, &a.temporal, &a.content],
            &["sweep.txt", "sweep.json", "model.ckpt"],
            started,
        )?;
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let corpus = load_corpus_dir(&a.data)?;
    let model = load_model(&a.checkpoint)?;
    check_vocab(&model, &corpus.vocab)?;
    let tag = model.tag();
    let samples = corpus.partition(a.partition);
    let (_, outputs) = predict_all(|s| model.predict_sample(s), samples)?;
    let mut text = String::new();
    for (s, out) in samples.iter().zip(outputs) {
        let record = PredictionRecord {
            episode_id: s.episode_id.clone(),
            predicted: out.probs.predict(),
            probs: out.probs.probs().to_vec(),
            gold: s.gold,
            model: tag.clone(),
        };
        text.push_str(&serde_json::to_string(&record)?);
        text.push('\n');
    }
    match &a.out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
