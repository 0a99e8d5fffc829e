use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use zdgan_cli::artifacts::{self, RunManifest};
use zdgan_cli::config::ExperimentConfig;
use zdgan_cli::pipeline::{self, RunOptions, Stage};
use zdgan_cli::CliError;
use zdgan_core::data::{Class, DatasetTable, Provenance};
use zdgan_core::Tensor;

const TINY: &str = "
[experiment]
task = binary
scale = 1000
ids_seeds = 3
models = svm,dt,dnn
variants = plain,js

[data]
source = fixture
fixture_train_rows = 600
fixture_test_rows = 300

[gan]
architecture = compact
compact_width = 8
epochs = 4
batch_size = 32
latent_dim = 8

[ids]
svm_iterations = 50
dnn_epochs = 3
dnn_widths = 8
";

fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_str(TINY).unwrap()
}

fn opts(out: &Path, resume: bool) -> RunOptions {
    RunOptions { out: out.to_path_buf(), resume, until: Stage::Report }
}

fn rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
    rdr.records().map(|r| header.iter().cloned().zip(r.unwrap().iter().map(str::to_string)).collect()).collect()
}

#[test]
fn smoke_run_writes_manifest_with_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let m = pipeline::run(&tiny(), &opts(tmp.path(), false)).unwrap();
    assert_eq!(m.stages.len(), Stage::ALL.len());
    let saved = RunManifest::load(tmp.path()).unwrap().unwrap();
    assert_eq!(saved.config_hash, tiny().hash());
    for s in &saved.stages {
        assert!(!s.artifacts.is_empty(), "{} has no artifacts", s.name);
        for a in &s.artifacts {
            assert_eq!(artifacts::sha256_file(&tmp.path().join(&a.path)).unwrap(), a.sha256);
        }
    }
    saved.check_closure().unwrap();
}

#[test]
fn resume_after_deleting_ids_reruns_only_ids_and_later() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let first = pipeline::run(&cfg, &opts(tmp.path(), false)).unwrap();
    let ids_dir = &first.stage("train-ids").unwrap().dir;
    std::fs::remove_dir_all(tmp.path().join(ids_dir)).unwrap();
    let second = pipeline::run(&cfg, &opts(tmp.path(), true)).unwrap();
    let reused: BTreeMap<&str, bool> = second.stages.iter().map(|s| (s.name.as_str(), s.reused)).collect();
    for s in ["preprocess", "train-gan", "synthesize", "mix"] {
        assert!(reused[s], "{s} should be reused");
    }
    for s in ["train-ids", "evaluate", "report"] {
        assert!(!reused[s], "{s} should re-run");
    }
    assert_eq!(
        std::fs::read(tmp.path().join("report/metrics.csv")).unwrap(),
        first.stage("report").map(|r| std::fs::read(tmp.path().join(&r.artifact("metrics.csv").unwrap().path)).unwrap()).unwrap()
    );
}

#[test]
fn resume_with_changed_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    pipeline::run(&tiny(), &opts(tmp.path(), false)).unwrap();
    let mut changed = tiny();
    changed.set("gan.epochs", "5").unwrap();
    let err = pipeline::run(&changed, &opts(tmp.path(), true)).unwrap_err();
    assert!(matches!(err, CliError::Resume(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn report_tables_are_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny();
    pipeline::run(&cfg, &opts(tmp.path(), false)).unwrap();
    let report = tmp.path().join("report");

    // mean and population std recomputed from the per-seed rows
    let per_seed = rows(&report.join("metrics.csv"));
    let summary = rows(&report.join("summary.csv"));
    assert_eq!(summary.len(), 3 * 3);
    for s in &summary {
        let group: Vec<&BTreeMap<String, String>> =
            per_seed.iter().filter(|r| r["arm"] == s["arm"] && r["model"] == s["model"]).collect();
        assert_eq!(group.len(), 3);
        for m in ["accuracy", "precision", "recall", "f1", "auroc", "tpr_at_5fpr"] {
            let v: Vec<f64> = group.iter().map(|r| r[m].parse().unwrap()).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            let got_mean: f64 = s[&format!("{m}_mean")].parse().unwrap();
            let got_std: f64 = s[&format!("{m}_std")].parse().unwrap();
            assert!((got_mean - mean).abs() <= 1e-12, "{m} mean");
            assert!((got_std - std).abs() <= 1e-12, "{m} std");
        }
    }

    // E rows per (variant, class)
    let curves = rows(&report.join("loss_curves.csv"));
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in &curves {
        *counts.entry((r["variant"].clone(), r["class"].clone())).or_default() += 1;
    }
    assert_eq!(counts.len(), 2 * 5);
    assert!(counts.values().all(|&n| n == 4));

    // ROC lists run from (0,0) to (1,1)
    let roc = rows(&report.join("roc_points.csv"));
    let mut curves_by_key: BTreeMap<(String, String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &roc {
        curves_by_key
            .entry((r["arm"].clone(), r["model"].clone(), r["seed"].clone()))
            .or_default()
            .push((r["fpr"].parse().unwrap(), r["tpr"].parse().unwrap()));
    }
    assert_eq!(curves_by_key.len(), 3 * 3 * 3);
    for pts in curves_by_key.values() {
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
    }

    let dist = rows(&report.join("class_distribution.csv"));
    let synth: usize = dist
        .iter()
        .filter(|r| r["dataset"] == "mixed:plain")
        .map(|r| r["synthetic"].parse::<usize>().unwrap())
        .sum();
    assert_eq!(synth, cfg.plan().unwrap().total());
    let base: usize = dist
        .iter()
        .filter(|r| r["dataset"] == "mixed:baseline")
        .map(|r| r["synthetic"].parse::<usize>().unwrap())
        .sum();
    assert_eq!(base, 0);
}

#[test]
fn loao_arms_and_leak_stop() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.apply_overrides(&["experiment.task=loao".into(), "experiment.ids_seeds=1".into()]).unwrap();
    let m = pipeline::run(&cfg, &opts(tmp.path(), false)).unwrap();
    let metrics = rows(&tmp.path().join("report/metrics.csv"));
    assert!(metrics.iter().all(|r| r["task"] == "loao_r2l"));
    let leak = rows(&tmp.path().join("report/leak_scan.csv"));
    assert!(!leak.is_empty());
    assert!(leak.iter().all(|r| r["held_out_rows"] == "0"));

    // a mixed set carrying a held-out row stops the run
    let mix = m.stage("mix").unwrap().clone();
    let a = mix.artifact("mixed/baseline.csv").unwrap();
    let path = tmp.path().join(&a.path);
    let mut t = DatasetTable::read_csv(std::fs::File::open(&path).unwrap()).unwrap();
    let row = Tensor::new(vec![1, t.width()], vec![0.0; t.width()]).unwrap();
    let extra = DatasetTable::new(row, vec![Class::R2l], vec![Provenance::Original]).unwrap();
    t = DatasetTable::concat(&[&t, &extra]).unwrap();
    t.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let err = pipeline::leak_check(tmp.path(), &mix, Class::R2l).unwrap_err();
    assert!(matches!(err, CliError::Protocol(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn cli_reports_machine_readable_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "[experiment]\nsurprise = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_zdgan"))
        .args(["all", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("run"))
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("surprise"));
}

#[test]
fn cli_runs_single_stages_in_sequence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let run = |stage: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_zdgan"))
            .args([stage, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path().join("run"))
            .env("RUST_LOG", "off")
            .output()
            .unwrap();
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let first = run("preprocess");
    assert!(first.contains("preprocess  ran"));
    let second = run("train-gan");
    assert!(second.contains("preprocess  reused"), "{second}");
    assert!(second.contains("train-gan   ran"), "{second}");
    let last = run("report");
    assert!(last.contains("train-gan   reused"), "{last}");
    assert!(tmp.path().join("run/report/summary.md").exists());
}
