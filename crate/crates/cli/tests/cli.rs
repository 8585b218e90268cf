use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use occlukg_core::kg::KnowledgeGraph;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_occlukg"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture_kg(dir: &Path) -> PathBuf {
    let kg = dir.join("kg.tsv");
    let out = run(&["build-kg", "--corpus", s(&fixtures().join("corpus")), "--out", s(&kg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    kg
}

fn fixture_model(dir: &Path) -> PathBuf {
    let kg = fixture_kg(dir);
    let model = dir.join("model/model.bin");
    let out = run(&[
        "train", "--kg", s(&kg), "--out", s(&model), "--k", "8", "--lr", "0.02", "--batch", "200", "--epochs", "60",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    model
}

#[test]
fn gen_default_writes_reference_sized_corpus() {
    let dir = TempDir::new().unwrap();
    let out = run(&["gen", "--out", s(&dir.path().join("c")), "--seed", "2"]);
    assert_eq!(code(&out), 0);
    let xml = fs::read_dir(dir.path().join("c")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "xml")).count();
    assert_eq!(xml, 99);
    let manifest = fs::read_to_string(dir.path().join("c/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 100);
    let echo = fs::read_to_string(dir.path().join("c/effective-config.txt")).unwrap();
    assert!(echo.contains("seed = 2"), "{echo}");
}

#[test]
fn gen_usage_errors_exit_2() {
    assert_eq!(code(&run(&["gen"])), 2);
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("gen.txt");
    fs::write(&cfg, "scenes.Real = 3\nbogus = 1\n").unwrap();
    let out = run(&["gen", "--out", s(&dir.path().join("c")), "--config", s(&cfg)]);
    assert_eq!(code(&out), 2);
    fs::write(&cfg, "label_prior = [0.5, 0.5, 0.5]\n").unwrap();
    assert_eq!(code(&run(&["gen", "--out", s(&dir.path().join("c")), "--config", s(&cfg)])), 2);
}

#[test]
fn gen_config_file_is_honoured() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("gen.txt");
    fs::write(&cfg, "scenes.Real = 2\nscenes.Virtual = 1\nframes_min = 2\nframes_max = 3\n").unwrap();
    let out = run(&["gen", "--out", s(&dir.path().join("c")), "--config", s(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(dir.path().join("c/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
}

#[test]
fn build_kg_output_parses_back() {
    let dir = TempDir::new().unwrap();
    let kg_path = fixture_kg(dir.path());
    let text = fs::read_to_string(&kg_path).unwrap();
    let kg = KnowledgeGraph::from_tsv(&text).unwrap();
    assert_eq!(kg.to_tsv(), text);
    assert!(text.contains("SceneWithOccludedPed\tincludes\tVehDecelerating\n"));
    assert!(text.contains("SceneWithOccludedPed\tthereIs\tZebraCrossing\n"));
    assert!(dir.path().join("effective-config.txt").exists());
}

#[test]
fn build_kg_prints_stats() {
    let dir = TempDir::new().unwrap();
    let out = run(&["build-kg", "--corpus", s(&fixtures().join("corpus")), "--out", s(&dir.path().join("kg.tsv"))]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("relations\t13"), "{stdout}");
    assert!(stdout.contains("label\tPedestrianOccluded\t2"), "{stdout}");
}

#[test]
fn build_kg_invalid_corpus_exits_3_naming_scene() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    for f in fs::read_dir(fixtures().join("corpus")).unwrap() {
        let f = f.unwrap().path();
        fs::copy(&f, corpus.join(f.file_name().unwrap())).unwrap();
    }
    fs::copy(fixtures().join("invalid.xml"), corpus.join("invalid.xml")).unwrap();
    let out = run(&["build-kg", "--corpus", s(&corpus), "--out", s(&dir.path().join("kg.tsv"))]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken_01"));
    assert!(!dir.path().join("kg.tsv").exists());

    fs::write(corpus.join("invalid.xml"), "<roadScene id=").unwrap();
    assert_eq!(code(&run(&["build-kg", "--corpus", s(&corpus), "--out", s(&dir.path().join("kg.tsv"))])), 3);
}

#[test]
fn train_writes_checkpoint_and_history() {
    let dir = TempDir::new().unwrap();
    let model = fixture_model(dir.path());
    assert!(model.exists());
    assert!(dir.path().join("model/model.bin.vocab.tsv").exists());
    let history = fs::read_to_string(dir.path().join("model/model.bin.history.tsv")).unwrap();
    assert!(history.lines().any(|l| l.starts_with("check\t0\t")), "{history}");
    assert!(history.lines().filter(|l| l.starts_with("check")).count() >= 2);
    let echo = fs::read_to_string(dir.path().join("model/effective-config.txt")).unwrap();
    assert!(echo.contains("training.k = 8"), "{echo}");
    assert!(echo.contains("training.eta = 15"), "{echo}");
}

#[test]
fn train_flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let kg = fixture_kg(dir.path());
    let cfg = dir.path().join("train.txt");
    fs::write(&cfg, "k = 4\nmax_epochs = 3\nlearning_rate = 0.01\n").unwrap();
    let out = run(&["train", "--kg", s(&kg), "--out", s(&dir.path().join("m.bin")), "--config", s(&cfg), "--k", "6"]);
    assert_eq!(code(&out), 0);
    let echo = fs::read_to_string(dir.path().join("effective-config.txt")).unwrap();
    assert!(echo.contains("training.k = 6") && echo.contains("training.max_epochs = 3"), "{echo}");
}

#[test]
fn train_usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let kg = fixture_kg(dir.path());
    let m = dir.path().join("m.bin");
    assert_eq!(code(&run(&["train", "--kg", s(&kg), "--out", s(&m), "--k", "many"])), 2);
    assert_eq!(code(&run(&["train", "--kg", s(&kg), "--out", s(&m), "--frobnicate"])), 2);
    assert_eq!(code(&run(&["train", "--kg", s(&kg), "--out", s(&m), "--k", "0"])), 2);
    assert_eq!(code(&run(&["train", "--kg", s(&dir.path().join("missing.tsv")), "--out", s(&m)])), 2);
}

#[test]
fn train_divergence_exits_4() {
    let dir = TempDir::new().unwrap();
    let kg = fixture_kg(dir.path());
    let out = run(&[
        "train", "--kg", s(&kg), "--out", s(&dir.path().join("m.bin")), "--lr", "1e308", "--epochs", "50", "--k", "4",
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn predict_emits_three_hypotheses_and_summary() {
    let dir = TempDir::new().unwrap();
    let model = fixture_model(dir.path());
    let scene = fixtures().join("corpus/scene_07.xml");
    let out = run(&["predict", "--model", s(&model), "--scene", s(&scene), "--frame", "10"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    let hyps: Vec<&str> = lines[..3].iter().map(|v| v["hypothesis"].as_str().unwrap()).collect();
    assert_eq!(hyps, ["PedestrianOccluded", "PedestrianNotOccluded", "NonePedestrian"]);
    for r in &lines[..3] {
        assert!(!r["factors"].as_array().unwrap().is_empty());
    }
    assert_eq!(lines[3]["target_frame"], 11);
    assert_eq!(lines[3]["truncated"], true);
    assert_eq!(lines[3]["predicted"], "PedestrianOccluded");
}

#[test]
fn predict_with_no_usable_evidence_returns_prior() {
    let dir = TempDir::new().unwrap();
    let model = fixture_model(dir.path());
    let scene = fixtures().join("unseen_context.xml");
    let out = run(&["predict", "--model", s(&model), "--scene", s(&scene), "--frame", "4", "--horizon", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for r in &lines[..3] {
        assert!(r["factors"].as_array().unwrap().is_empty());
        assert_eq!(r["raw"], r["prior"]);
    }
    assert_eq!(lines[3]["skipped_evidence"].as_array().unwrap().len(), 2);
}

#[test]
fn predict_missing_frame_exits_2() {
    let dir = TempDir::new().unwrap();
    let model = fixture_model(dir.path());
    let scene = fixtures().join("corpus/scene_07.xml");
    let out = run(&["predict", "--model", s(&model), "--scene", s(&scene), "--frame", "3"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no frame 3"));
}

#[test]
fn experiment_without_test_environment_exits_2() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.txt");
    fs::write(&spec, "name = \"none\"\ntest = []\n").unwrap();
    let out = run(&["experiment", "--corpus", s(&fixtures().join("corpus")), "--spec", s(&spec), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    fs::write(&spec, "name = \"x\"\nhorizon = \"soon\"\n").unwrap();
    let out = run(&["experiment", "--corpus", s(&fixtures().join("corpus")), "--spec", s(&spec), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn experiment_writes_reports_and_echoes_horizon() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("c");
    let cfg = dir.path().join("gen.txt");
    fs::write(&cfg, "scenes.Real = 0\nscenes.Virtual = 12\nframes_min = 3\nframes_max = 5\n").unwrap();
    assert_eq!(code(&run(&["gen", "--out", s(&corpus), "--config", s(&cfg)])), 0);
    let spec = dir.path().join("spec.txt");
    fs::write(
        &spec,
        "name = \"small\"\nsplit.counts.Virtual = { train = 9, test = 3 }\ntraining.k = 8\ntraining.max_epochs = 10\ntraining.batch_size = 500\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["experiment", "--corpus", s(&corpus), "--spec", s(&spec), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("small.txt")).unwrap();
    assert!(table.starts_with("Train Data  Test Data  F1"));
    assert_eq!(fs::read_to_string(out_dir.join("small.jsonl")).unwrap().lines().count(), 1);
    let echo = fs::read_to_string(out_dir.join("effective-config.txt")).unwrap();
    assert!(echo.contains("horizon = 30"), "{echo}");

    let out = run(&["experiment", "--corpus", s(&corpus), "--spec", s(&spec), "--out", s(&out_dir), "--horizon", "2"]);
    assert_eq!(code(&out), 0);
    let echo = fs::read_to_string(out_dir.join("effective-config.txt")).unwrap();
    assert!(echo.contains("horizon = 2"), "{echo}");
    let first: Value = serde_json::from_str(fs::read_to_string(out_dir.join("small.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["spec"]["horizon"], 2);
}
