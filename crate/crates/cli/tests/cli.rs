use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn mre(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mre"))
        .args(args)
        .current_dir(dir)
        .env_remove("MRE_CONFIG_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mre(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn split_records(dir: &Path, all: &str, train: &str, test: &str, test_refs: usize) {
    let text = std::fs::read_to_string(dir.join(all)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let cut = lines.len() - 3 * test_refs;
    std::fs::write(dir.join(train), lines[..cut].join("\n") + "\n").unwrap();
    std::fs::write(dir.join(test), lines[cut..].join("\n") + "\n").unwrap();
}

/// gen, pair, train and eval in `dir`; returns the paths of the artifacts.
fn pipeline(dir: &Path, system: &str) -> Vec<PathBuf> {
    ok(dir, &["gen", "--system", system, "--refs", "40", "--seed", "3", "--out", "all.jsonl"]);
    split_records(dir, "all.jsonl", "train.jsonl", "test.jsonl", 10);
    ok(dir, &["pair", "--system", system, "--in", "train.jsonl", "--out", "pairs.jsonl"]);
    ok(dir, &["train", "--system", system, "--pairs", "pairs.jsonl", "--out", "model.bin", "--dim", "1024"]);
    ok(dir, &["eval", "--model", "model.bin", "--test", "test.jsonl", "--report", "report.csv"]);
    ["all.jsonl", "pairs.jsonl", "model.bin", "model.bin.log.jsonl", "report.csv"]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = mre(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr).to_string() + &String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn exit_codes_separate_usage_from_io() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mre(dir.path(), &["gen", "--bogus"]).status.code(), Some(1));
    assert_eq!(mre(dir.path(), &["gen", "--out", "x.jsonl", "--system", "nope"]).status.code(), Some(1));
    assert_eq!(mre(dir.path(), &["pair", "--in", "missing.jsonl", "--out", "p.jsonl"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.jsonl"), "{\"id\":\n").unwrap();
    assert_eq!(mre(dir.path(), &["pair", "--in", "bad.jsonl", "--out", "p.jsonl"]).status.code(), Some(1));
    assert_eq!(mre(dir.path(), &["gen", "--out", "no/such/dir/x.jsonl", "--refs", "2"]).status.code(), Some(2));
    assert_eq!(mre(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = pipeline(a.path(), "radcliq6");
    let fb = pipeline(b.path(), "radcliq6");
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{} differs", x.display());
    }
    let report = std::fs::read_to_string(&fa[4]).unwrap();
    assert!(report.starts_with("metric,criterion,n,kendall_tau"), "{report}");
}

#[test]
fn manifests_record_digests_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let files = pipeline(dir.path(), "radcliq6");
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("model.bin.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "train");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let model_digest = hex::encode(Sha256::digest(std::fs::read(&files[2]).unwrap()));
    assert_eq!(m["outputs"][0]["sha256"], model_digest.as_str());
    let pairs_digest = hex::encode(Sha256::digest(std::fs::read(&files[1]).unwrap()));
    assert!(m["inputs"].as_array().unwrap().iter().any(|d| d["sha256"] == pairs_digest.as_str()));
    for f in ["all.jsonl", "pairs.jsonl", "report.csv"] {
        assert!(dir.path().join(format!("{f}.manifest.json")).is_file(), "no manifest for {f}");
    }
    let gen: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("all.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(gen["seed"], 3);
    assert!(gen["command_line"].as_array().unwrap().iter().any(|a| a == "gen"));
}

#[test]
fn score_prints_each_reward_and_the_total() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "radcliq6");
    std::fs::write(dir.path().join("r.txt"), "There is a small left pleural effusion. Heart size is normal.").unwrap();
    std::fs::write(dir.path().join("c.txt"), "There is a small right pleural effusion.").unwrap();
    let table = ok(dir.path(), &["score", "--model", "model.bin", "--ref", "r.txt", "--cand", "c.txt"]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 7, "{table}");
    assert!(lines[0].starts_with("false_finding"));
    assert!(lines[6].starts_with("total"));
    let csv = ok(dir.path(), &["--format", "csv", "score", "--model", "model.bin", "--ref", "r.txt", "--cand", "c.txt"]);
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let sum: f64 = rows[..6].iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    let total: f64 = rows[6][1].parse().unwrap();
    assert!((sum - total).abs() < 1e-9 * total.abs().max(1.0));
}

#[test]
fn human_labels_replace_planted_scores() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "radcliq6");
    let test = std::fs::read_to_string(dir.path().join("test.jsonl")).unwrap();
    // labels that reverse the planted order: every error count mirrored
    let labels: String = test
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            let subs: Vec<f64> = v["subs"].as_array().unwrap().iter().map(|x| 2.0 - x.as_f64().unwrap()).collect();
            serde_json::json!({"id": v["id"], "subs": subs}).to_string() + "\n"
        })
        .collect();
    std::fs::write(dir.path().join("labels.jsonl"), labels).unwrap();
    let planted = ok(dir.path(), &["--format", "csv", "compare", "--model", "m=model.bin", "--test", "test.jsonl"]);
    let flipped =
        ok(dir.path(), &["--format", "csv", "compare", "--model", "m=model.bin", "--test", "test.jsonl", "--human", "labels.jsonl"]);
    let tau = |csv: &str, metric: &str| -> f64 {
        let row = csv.lines().find(|l| l.starts_with(&format!("{metric},"))).unwrap();
        row.split(',').nth(3).unwrap().parse().unwrap()
    };
    for metric in ["m", "bleu4", "rouge_l"] {
        assert!(tau(&planted, metric) > 0.0);
        assert!(tau(&flipped, metric) < 0.0, "{metric} did not flip");
    }
}

#[test]
fn weighted_system_eval_reports_accuracies() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "mrscore7");
    let out = ok(dir.path(), &["--format", "csv", "eval", "--model", "model.bin", "--test", "test.jsonl", "--fit", "train.jsonl"]);
    let acc_rows = out.lines().skip(1).filter(|l| !l.ends_with(',')).count();
    assert_eq!(acc_rows, 7, "{out}");
}

#[test]
fn ablate_lambda_has_six_columns() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["ablate", "--what", "lambda", "--refs", "16", "--held-out", "4", "--epochs", "1", "--dim", "256", "--out", "lambda.csv"];
    let table = ok(dir.path(), &args);
    let header = table.lines().next().unwrap();
    for l in ["0.5", "0.8", "1", "1.2", "2", "3"] {
        assert!(header.contains(&format!("lambda={l}")), "{header}");
    }
    assert_eq!(header.matches("lambda=").count(), 6);
    let csv = std::fs::read_to_string(dir.path().join("lambda.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(dir.path().join("lambda.csv.manifest.json").is_file());
    let terms = ok(dir.path(), &["ablate", "--what", "terms", "--refs", "16", "--held-out", "4", "--epochs", "1", "--dim", "256"]);
    assert!(terms.lines().next().unwrap().contains("individual_only"));
}

#[test]
fn config_dir_supplies_systems_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("conf");
    std::fs::create_dir(&conf).unwrap();
    let mrscore = mre::scoring::ScoringSystem::preset("mrscore7").unwrap().to_toml();
    std::fs::write(conf.join("mine.toml"), mrscore.replace("mrscore7", "mine")).unwrap();
    std::fs::write(conf.join("experiment.toml"), "[train]\nepochs = 2\n[features]\nvariant = \"hashed_ngrams\"\ndim = 512\nword_n = [1]\nchar_n = []\n").unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_mre"))
            .args(args)
            .current_dir(dir.path())
            .env("MRE_CONFIG_DIR", &conf)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["gen", "--system", "mine", "--refs", "6", "--out", "r.jsonl"]);
    run(&["pair", "--system", "mine", "--in", "r.jsonl", "--out", "p.jsonl"]);
    run(&["train", "--system", "mine", "--pairs", "p.jsonl", "--out", "m.bin"]);
    let log = std::fs::read_to_string(dir.path().join("m.bin.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let model = mre::model::RewardModel::<f64>::load(dir.path().join("m.bin"), Some("mine")).unwrap();
    assert_eq!(model.dim(), 512);
}
