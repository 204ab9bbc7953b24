mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::brute_force_samples;
use neural_speaker::autodiff::checkpoint;
use neural_speaker::corpus::{parse_transcript, read_samples_jsonl, SampleRules, Vocabulary};
use neural_speaker::model::{LoadedModel, ModelConfig, ModelKind, SpeakerModel};

fn speaker(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speaker")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = speaker(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Synthetic transcripts plus a processed corpus built from them.
fn corpus(root: &Path, kind: &str, episodes: usize, seed: u64) -> PathBuf {
    let raw = root.join(format!("raw-{kind}-{seed}"));
    let data = root.join(format!("data-{kind}-{seed}"));
    let (n, s) = (episodes.to_string(), seed.to_string());
    ok(&["synth", "--kind", kind, "--episodes", &n, "--seed", &s, "--out", p(&raw)]);
    ok(&["build-corpus", "--data", p(&raw), "--out", p(&data), "--seed", &s]);
    data
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn empty_data_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = speaker(&["build-corpus", "--data", p(&empty), "--out", p(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn missing_arguments_fail() {
    assert!(!speaker(&["train"]).status.success());
    assert!(!speaker(&["no-such-command"]).status.success());
}

#[test]
fn build_corpus_is_deterministic_and_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let a = corpus(dir.path(), "mixed", 3, 4);
    let b = dir.path().join("again");
    ok(&["build-corpus", "--data", p(&dir.path().join("raw-mixed-4")), "--out", p(&b), "--seed", "4"]);
    for f in ["stats.json", "train.jsonl", "val.jsonl", "test.jsonl", "vocab.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }

    let mut expected = Vec::new();
    let mut files: Vec<_> = std::fs::read_dir(dir.path().join("raw-mixed-4"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    assert_eq!(files.len(), 3);
    for f in files {
        let id = f.file_stem().unwrap().to_str().unwrap().to_string();
        let parsed = parse_transcript(&std::fs::read_to_string(&f).unwrap(), &id);
        expected.extend(brute_force_samples(&parsed.utterances, &SampleRules::default()));
    }
    let mut built = Vec::new();
    for part in ["train", "val", "test"] {
        built.extend(read_samples_jsonl(&a.join(format!("{part}.jsonl"))).unwrap());
    }
    let key = |s: &neural_speaker::corpus::Sample| serde_json::to_string(s).unwrap();
    let mut expected: Vec<String> = expected.iter().map(key).collect();
    let mut built: Vec<String> = built.iter().map(key).collect();
    expected.sort();
    built.sort();
    assert_eq!(built, expected);
}

#[test]
fn eval_of_prediction_fixture() {
    let stdout = ok(&["eval", "--predictions", p(&fixture("three_predictions.jsonl"))]);
    let macro_f1 = stdout
        .lines()
        .find(|l| l.contains("metric=macro-f1"))
        .and_then(|l| l.rsplit("value=").next())
        .unwrap()
        .trim()
        .parse::<f64>()
        .unwrap();
    assert!((macro_f1 - 2.0 / 3.0).abs() < 1e-9, "{stdout}");
}

fn uniform_checkpoint(path: &Path, kind: ModelKind, vocab: usize) {
    let mut config = ModelConfig::new(kind, 4, vocab);
    config.tie_encoders = kind == ModelKind::Content;
    let mut model = SpeakerModel::<f64>::init(config, 0).unwrap();
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        model.params.get_mut(id).values_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let (store, meta) = LoadedModel::Single(model).to_checkpoint().unwrap();
    checkpoint::save(path, &store, &meta).unwrap();
}

#[test]
fn sweep_of_uninformative_models_picks_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), "mixed", 12, 2);
    let vocab = Vocabulary::load(&data.join("vocab.json")).unwrap().len();
    let (t, c) = (dir.path().join("t.ckpt"), dir.path().join("c.ckpt"));
    uniform_checkpoint(&t, ModelKind::Temporal, vocab);
    uniform_checkpoint(&c, ModelKind::Content, vocab);
    let stdout = ok(&["sweep-gate", "--data", p(&data), "--temporal", p(&t), "--content", p(&c)]);
    let best: Vec<&str> = stdout.lines().filter(|l| l.starts_with("# best g")).collect();
    assert_eq!(best.len(), 5, "{stdout}");
    assert!(best.iter().all(|l| l.ends_with(": 0.00")), "{stdout}");
}

#[test]
fn train_is_bitwise_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), "mixed", 12, 3);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "train", "--data", p(&data), "--out", p(&out), "--model", "hybrid-adaptive", "--dim", "6",
            "--dropout", "0,0.2", "--max-epochs", "2", "--seed", "7", "--lr", "0.01",
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let mut compared = 0;
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "manifest.json" {
            continue;
        }
        assert_eq!(read(&a.join(&name)), read(&b.join(&name)), "{name:?}");
        compared += 1;
    }
    assert!(compared >= 4);
    assert!(a.join("model.ckpt").is_file());
}

#[test]
fn train_predict_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), "temporal", 12, 5);
    let out = dir.path().join("run");
    ok(&[
        "train", "--data", p(&data), "--out", p(&out), "--model", "hybrid-after", "--dim", "4", "--dropout", "0",
        "--max-epochs", "2", "--seed", "1", "--g-grid", "0,0.5,1",
    ]);
    assert!(out.join("sweep.txt").is_file());
    let ckpt = out.join("model.ckpt");
    let preds = dir.path().join("preds.jsonl");
    ok(&["predict", "--data", p(&data), "--checkpoint", p(&ckpt), "--out", p(&preds)]);
    let lines = std::fs::read_to_string(&preds).unwrap();
    assert!(lines.lines().count() > 0);
    assert!(lines.lines().all(|l| l.contains("\"model\":\"hybrid-after\"")));
    let report = ok(&["eval", "--data", p(&data), "--checkpoint", p(&ckpt)]);
    for row in ["Random", "hybrid-after"] {
        assert!(report.contains(row), "{report}");
    }
    let from_records = ok(&["eval", "--predictions", p(&preds)]);
    assert!(from_records.contains("metric=acc"));
}
