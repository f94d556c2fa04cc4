use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use comdense::checkpoint;
use comdense::eval::Evaluation;
use comdense::kg_data::Split;
use comdense::model::param_count;
use comdense::prepared::load_prepared;
use comdense::synthetic::toy_kg;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_comdense"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn comdense")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Prepared toy data plus a short-training config pointing at it.
fn setup(root: &Path, epochs: usize) -> (PathBuf, PathBuf) {
    let raw = root.join("raw");
    let prep = root.join("prep");
    toy_kg(0).write_dir(&raw).unwrap();
    let o = run(&["prepare", "--data", s(&raw), "--out", s(&prep)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let config = serde_json::json!({
        "data": prep,
        "out": root.join("run"),
        "model": {"entity_dim": 8, "relation_dim": 8, "hidden_rows": 8, "relation_out_dim": 8},
        "train": {"batch_size": 16, "epochs": epochs, "eval_every": 2, "patience": 50},
        "optimizer": {"learning_rate": 0.005},
        "seeds": [0]
    });
    let path = root.join("run.json");
    fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    (prep, path)
}

#[test]
fn prepare_reports_stats_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    toy_kg(0).write_dir(&raw).unwrap();
    let out = dir.path().join("prep");
    let o = run(&["prepare", "--data", s(&raw), "--out", s(&out)]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("30 entities, 4 relations, 108 train, 6 valid, 6 test"));
    for f in ["vocab.json", "splits.bin", "categories.json", "stats.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let ds = load_prepared(&out).unwrap();
    assert_eq!(ds.stats().train, 108);
}

#[test]
fn prepare_lists_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "prepare",
        "--data",
        s(dir.path()),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for f in ["train.txt", "valid.txt", "test.txt"] {
        assert!(err.contains(f), "{err}");
    }
}

#[test]
fn prepare_reports_malformed_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    toy_kg(0).write_dir(&raw).unwrap();
    let mut text = fs::read_to_string(raw.join("valid.txt")).unwrap();
    text.push_str("only\ttwo\n");
    fs::write(raw.join("valid.txt"), text).unwrap();
    let o = run(&[
        "prepare",
        "--data",
        s(&raw),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("valid.txt:7"), "{}", stderr(&o));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (prep, config) = setup(dir.path(), 6);
    let run_dir = dir.path().join("run");
    let o = run(&["train", "--config", s(&config), "--seeds", "0,1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "checkpoint-seed0.bin",
        "checkpoint-seed1.bin",
        "log.jsonl",
        "summary.json",
    ] {
        assert!(run_dir.join(f).is_file(), "{f} missing");
    }
    // 6 epochs, eval every 2 -> 3 records per seed
    let log = fs::read_to_string(run_dir.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["valid"]["runs"], 2);
    assert_eq!(summary["config"]["seeds"], serde_json::json!([0, 1]));

    let ck = run_dir.join("checkpoint-seed0.bin");
    let o = run(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--split",
        "test",
        "--records",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("HIT@10"));

    // the written report equals a direct library evaluation
    let report: Evaluation =
        serde_json::from_slice(&fs::read(run_dir.join("report.json")).unwrap()).unwrap();
    let ds = load_prepared(&prep).unwrap();
    let loaded = checkpoint::load(&ck).unwrap();
    let direct = comdense::eval::evaluate(&loaded.params, &ds, Split::Test).unwrap();
    assert_eq!(report.overall, direct.overall);
    assert_eq!(report.by_category, direct.by_category);
    let tsv = fs::read_to_string(run_dir.join("records.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + direct.records.len());
}

#[test]
fn eval_rejects_checkpoint_from_other_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config) = setup(dir.path(), 2);
    assert!(run(&["train", "--config", s(&config)]).status.success());

    // same relations, one extra entity
    let other = dir.path().join("other");
    let mut kg = toy_kg(0);
    kg.train.push(comdense::kg_data::RawTriple::new(
        "e00", "pairs", "newcomer",
    ));
    kg.write_dir(&other).unwrap();
    let ck = dir.path().join("run/checkpoint-seed0.bin");
    let o = run(&["eval", "--checkpoint", s(&ck), "--data", s(&other)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("shape mismatch"), "{}", stderr(&o));
}

#[test]
fn invalid_config_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config) = setup(dir.path(), 2);
    let o = run(&[
        "train",
        "--config",
        s(&config),
        "--set",
        "model.hidden_dropout=1.2",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model.hidden_dropout"));
    assert!(!dir.path().join("run").exists());

    let o = run(&["train", "--config", s(&config), "--set", "model.colour=3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn sweep_depth_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config) = setup(dir.path(), 4);
    let o = run(&[
        "sweep",
        "--config",
        s(&config),
        "--axis",
        "depth",
        "--values",
        "1,2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = fs::read_to_string(dir.path().join("run/sweep.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "depth");
    assert_eq!(rows[1][0], "1");
    assert_eq!(rows[2][0], "2");
    // the baseline row never carries a delta
    assert!(rows[1][5..].iter().all(|c| c.is_empty()));
    let deeper: u64 = rows[2][1].parse().unwrap();
    let shallow: u64 = rows[1][1].parse().unwrap();
    assert!(deeper > shallow);
}

#[test]
fn sweep_variant_and_unknown_axis() {
    let dir = tempfile::tempdir().unwrap();
    let (_, config) = setup(dir.path(), 2);
    let o = run(&[
        "sweep",
        "--config",
        s(&config),
        "--axis",
        "variant",
        "--values",
        "SharedOnly,ComDensE",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("SharedOnly") && out.contains("ComDensE"));

    let o = run(&[
        "sweep",
        "--config",
        s(&config),
        "--axis",
        "height",
        "--values",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown axis"));
}

#[test]
fn count_params_matches_library() {
    let o = run(&["count-params", "--entities", "14541", "--relations", "237"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let expected = param_count(&Default::default(), 14541, 474)
        .unwrap()
        .total();
    assert!(stdout(&o).contains(&comdense_cli::format::grouped(expected)));

    let dir = tempfile::tempdir().unwrap();
    let (_, config) = setup(dir.path(), 1);
    let o = run(&[
        "count-params",
        "--config",
        s(&config),
        "--set",
        "model.variant=SharedOnly",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o)
        .lines()
        .find(|l| l.starts_with("relation-aware"))
        .unwrap()
        .to_string();
    assert!(line.trim_end().ends_with(" 0"), "{line}");
}

#[test]
fn thread_cap_env_is_validated() {
    let o = bin()
        .args(["count-params", "--entities", "10", "--relations", "2"])
        .env("COMDENSE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin()
        .args(["count-params", "--entities", "10", "--relations", "2"])
        .env("COMDENSE_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["fb15k237.json", "wn18rr.json", "toy.json"] {
        let c = comdense_cli::config::load(&dir.join(name), &[])
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        if name == "toy.json" {
            use comdense::synthetic::{toy_hyper, toy_model_config, toy_train_settings};
            assert_eq!(c.model, toy_model_config());
            assert_eq!(c.train, toy_train_settings());
            assert_eq!(c.optimizer, toy_hyper());
        }
    }
}
