//! The staged experiment: preprocess, train-gan, synthesize, mix,
//! train-ids, evaluate, then the report.
//!
//! Stages talk to each other only through artifacts on disk, so any prefix
//! of the pipeline can be reused on `--resume`. Once a stage runs, every
//! later stage runs too.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zdgan_core::data::{
    self, build_training_set, encode, fit_schema, split_holdout_scores, Class, DatasetTable, FeatureSchema, MixPlan,
    Provenance, RawTable, Task,
};
use zdgan_core::ids::{self, IdsModel, Labeled, ModelKind};
use zdgan_core::metrics::{self, ConfusionMatrix, EpsMode};
use zdgan_core::trainer::{self, derive_seed, BundleCheckpoint, GanBundle, Trainer, Variant};

use crate::artifacts::{self, RunManifest, StageCtx, StageRecord};
use crate::config::{ExperimentConfig, Source, TaskMode};
use crate::error::{CliError, Result};
use crate::{fixtures, report};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Preprocess,
    TrainGan,
    Synthesize,
    Mix,
    TrainIds,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Preprocess,
        Stage::TrainGan,
        Stage::Synthesize,
        Stage::Mix,
        Stage::TrainIds,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::TrainGan => "train-gan",
            Stage::Synthesize => "synthesize",
            Stage::Mix => "mix",
            Stage::TrainIds => "train-ids",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub resume: bool,
    /// Last stage to run.
    pub until: Stage,
}

/// Name of a training arm: the no-GAN baseline or one variant.
pub const BASELINE: &str = "baseline";

pub fn arms(cfg: &ExperimentConfig) -> Vec<String> {
    let mut a = vec![BASELINE.to_string()];
    a.extend(cfg.experiment.variants.iter().map(|v| v.to_string()));
    a
}

fn table_bytes(t: &DatasetTable) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf)?;
    Ok(buf)
}

fn read_table(ctx: &mut StageCtx, from: &StageRecord, name: &str) -> Result<DatasetTable> {
    Ok(DatasetTable::read_csv(ctx.read(from, name)?.as_slice())?)
}

fn class_file(c: Class) -> String {
    c.as_str().to_ascii_lowercase()
}

pub fn synthetic_name(v: Variant, c: Class) -> String {
    format!("synthetic/{v}_{}.csv", class_file(c))
}

fn model_name(arm: &str, kind: ModelKind, seed: u64) -> String {
    match kind {
        // seed-independent learners are trained once per arm
        ModelKind::Svm | ModelKind::Dt => format!("models/{arm}/{kind}.json"),
        ModelKind::Dnn => format!("models/{arm}/{kind}-s{seed}.json"),
    }
}

/// Runs the pipeline up to `opts.until`, reusing finished stages when
/// resuming, and writes the manifest.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let started = Instant::now();
    let out = &opts.out;
    std::fs::create_dir_all(out)?;
    let hash = cfg.hash();
    if let Some(prev) = RunManifest::load(out)? {
        if opts.resume && prev.config_hash != hash {
            return Err(CliError::Resume(format!(
                "config hash {} differs from the run's {}",
                &hash[..12],
                &prev.config_hash[..12]
            )));
        }
    }
    artifacts::write_atomic(&out.join("config.cfg"), cfg.normalized().as_bytes())?;
    let mut manifest = RunManifest::new(hash.clone());
    let mut forced = !opts.resume;
    let mut upstream: Vec<String> = Vec::new();
    if cfg.data.source == Source::Files {
        for p in [&cfg.data.train, &cfg.data.test] {
            upstream.push(artifacts::sha256_file(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?);
        }
    }
    for stage in Stage::ALL {
        if stage > opts.until {
            break;
        }
        let name = stage.as_str();
        let key = artifacts::stage_key(name, &hash, &upstream);
        let reused = if forced { None } else { artifacts::reusable(out, name, &key) };
        let rec = match reused {
            Some(rec) => {
                info!("{name}: reusing {}", rec.dir);
                rec
            }
            None => {
                forced = true;
                info!("{name}: running");
                let mut ctx = artifacts::begin(out, name, &key)?;
                run_stage(stage, cfg, &manifest, out, &mut ctx)?;
                ctx.finish()?
            }
        };
        if cfg.experiment.task == TaskMode::Loao {
            leak_check(out, &rec, cfg.experiment.held_out)?;
        }
        upstream.push(rec.fingerprint());
        if stage == Stage::Report {
            publish_report(out, &rec)?;
        }
        manifest.stages.push(rec);
    }
    manifest.check_closure()?;
    manifest.total_seconds = started.elapsed().as_secs_f64();
    manifest.save(out)?;
    Ok(manifest)
}

/// Copies the report artifacts to `<out>/report/` for easy access.
fn publish_report(out: &Path, rec: &StageRecord) -> Result<()> {
    let dir = out.join("report");
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    for a in &rec.artifacts {
        let name = a.path.strip_prefix(&format!("{}/", rec.dir)).unwrap_or(&a.path);
        artifacts::write_atomic(&dir.join(name), &std::fs::read(out.join(&a.path))?)?;
    }
    Ok(())
}

pub fn need<'a>(m: &'a RunManifest, stage: Stage) -> Result<&'a StageRecord> {
    m.stage(stage.as_str())
        .ok_or_else(|| CliError::Artifact(format!("stage {} has not run", stage.as_str())))
}

fn run_stage(stage: Stage, cfg: &ExperimentConfig, m: &RunManifest, out: &Path, ctx: &mut StageCtx) -> Result<()> {
    match stage {
        Stage::Preprocess => preprocess(cfg, ctx),
        Stage::TrainGan => train_gan(cfg, need(m, Stage::Preprocess)?, ctx),
        Stage::Synthesize => synthesize(cfg, need(m, Stage::TrainGan)?, ctx),
        Stage::Mix => mix(cfg, need(m, Stage::Preprocess)?, need(m, Stage::Synthesize)?, ctx),
        Stage::TrainIds => train_ids(cfg, need(m, Stage::Mix)?, ctx),
        Stage::Evaluate => evaluate(cfg, m, ctx),
        Stage::Report => report::emit(cfg, m, out, ctx),
    }
}

// ---------------------------------------------------------------- stages

fn preprocess(cfg: &ExperimentConfig, ctx: &mut StageCtx) -> Result<()> {
    let (layout, mut train, test) = match cfg.data.source {
        Source::Files => {
            let layout = cfg.layout()?;
            ctx.note_external(&cfg.data.train);
            ctx.note_external(&cfg.data.test);
            let train = data::read_raw_file(&cfg.data.train, &layout)?;
            let test = data::read_raw_file(&cfg.data.test, &layout)?;
            (layout, train, test)
        }
        Source::Fixture => {
            let d = &cfg.data;
            let (train, test) = fixtures::generate(d.fixture, d.fixture_train_rows, d.fixture_test_rows, d.fixture_seed);
            (fixtures::layout(), train, test)
        }
    };
    if let Task::Loao(h) = cfg.task() {
        // the held-out class is removed before fitting, so even the scaling
        // extrema carry no information about it
        train = drop_class(&train, h);
    }
    let schema = fit_schema(&train, &layout)?;
    let tr = encode(&train, &schema)?;
    let te = encode(&test, &schema)?;
    if te.clamped > 0 || te.unseen > 0 {
        info!("test encoding: {} clamped values, {} unseen categories", te.clamped, te.unseen);
    }
    ctx.write("schema.json", serde_json::to_string_pretty(&schema)?.as_bytes())?;
    ctx.write("train.csv", &table_bytes(&tr.table)?)?;
    ctx.write("test.csv", &table_bytes(&te.table)?)?;
    let stats = serde_json::json!({
        "train_rows": tr.table.len(), "train_clamped": tr.clamped, "train_unseen": tr.unseen,
        "test_rows": te.table.len(), "test_clamped": te.clamped, "test_unseen": te.unseen,
    });
    ctx.write("encode_stats.json", serde_json::to_string_pretty(&stats)?.as_bytes())?;
    Ok(())
}

fn drop_class(raw: &RawTable, class: Class) -> RawTable {
    let mut out = RawTable::default();
    for (row, label) in raw.rows.iter().zip(&raw.labels) {
        if data::class_of_label(label) != Some(class) {
            out.rows.push(row.clone());
            out.labels.push(label.clone());
        }
    }
    out
}

/// Classes that get a generator: those the plan asks synthetic rows of.
fn gan_classes(cfg: &ExperimentConfig) -> Result<Vec<Class>> {
    Ok(cfg.plan()?.counts.keys().copied().collect())
}

fn train_gan(cfg: &ExperimentConfig, pre: &StageRecord, ctx: &mut StageCtx) -> Result<()> {
    let train = read_table(ctx, pre, "train.csv")?;
    for class in gan_classes(cfg)? {
        let slice = train.filter(|c| c == class);
        if slice.is_empty() {
            return Err(CliError::Config(format!("no training rows of class {class} to fit a generator on")));
        }
        ctx.write(&format!("slices/{}.csv", class_file(class)), &table_bytes(&slice)?)?;
        for &variant in &cfg.experiment.variants {
            let tc = cfg.train_config(variant, class);
            let mut t = Trainer::new(tc, &cfg.architecture(variant), slice.features.clone())?;
            t.run()?;
            let stem = format!("{variant}_{}", class_file(class));
            ctx.write(&format!("gan/{stem}.json"), serde_json::to_string(&t.bundle.to_checkpoint())?.as_bytes())?;
            ctx.write_with(&format!("history/{stem}.csv"), |buf| Ok(trainer::write_history_csv(buf, &t.history)?))?;
            info!("trained {variant} generator for {class} ({} rows)", slice.len());
        }
    }
    Ok(())
}

fn synthesize(cfg: &ExperimentConfig, gan: &StageRecord, ctx: &mut StageCtx) -> Result<()> {
    let plan = cfg.plan()?;
    for class in gan_classes(cfg)? {
        for &variant in &cfg.experiment.variants {
            let stem = format!("{variant}_{}", class_file(class));
            let ck: BundleCheckpoint = serde_json::from_slice(&ctx.read(gan, &format!("gan/{stem}.json"))?)?;
            let bundle = GanBundle::from_checkpoint(&ck)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.gan_seed(class), 0x5e));
            let x = trainer::synthesize(&bundle, plan.count(class), &mut rng)?;
            let table = DatasetTable::synthetic(x, class, variant)?;
            ctx.write(&synthetic_name(variant, class), &table_bytes(&table)?)?;
        }
    }
    Ok(())
}

fn split_validation(t: &DatasetTable, fraction: f64) -> (DatasetTable, Option<DatasetTable>) {
    if fraction <= 0.0 {
        return (t.clone(), None);
    }
    let mut idx: Vec<usize> = (0..t.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(0x7a1));
    let n_val = (t.len() as f64 * fraction).round() as usize;
    let (val, train) = idx.split_at(n_val);
    let (mut val, mut train) = (val.to_vec(), train.to_vec());
    val.sort_unstable();
    train.sort_unstable();
    (t.subset(&train), Some(t.subset(&val)))
}

fn mix(cfg: &ExperimentConfig, pre: &StageRecord, syn: &StageRecord, ctx: &mut StageCtx) -> Result<()> {
    let train = read_table(ctx, pre, "train.csv")?;
    let plan = cfg.plan()?;
    let task = cfg.task();
    for arm in arms(cfg) {
        let (arm_plan, synthetic) = if arm == BASELINE {
            (MixPlan::new(task, &[])?, BTreeMap::new())
        } else {
            let variant: Variant = arm.parse()?;
            let mut tables = BTreeMap::new();
            for &class in plan.counts.keys() {
                tables.insert(class, read_table(ctx, syn, &synthetic_name(variant, class))?);
            }
            (plan.clone(), tables)
        };
        let mixed = build_training_set(&train, &synthetic, &arm_plan)?;
        let (fit, val) = split_validation(&mixed, cfg.experiment.validation_fraction);
        ctx.write(&format!("mixed/{arm}.csv"), &table_bytes(&fit)?)?;
        if let Some(v) = val {
            ctx.write(&format!("mixed/{arm}.val.csv"), &table_bytes(&v)?)?;
        }
    }
    Ok(())
}

fn train_ids(cfg: &ExperimentConfig, mixed: &StageRecord, ctx: &mut StageCtx) -> Result<()> {
    let task = cfg.task();
    let classes = task.class_names();
    let mut jobs = csv::Writer::from_writer(Vec::new());
    jobs.write_record(["arm", "model", "seed", "dataset_sha256", "rows", "synthetic_rows", "ids_config"])?;
    let ids_cfg = serde_json::to_string(&cfg.ids)?;
    let ids_hash = artifacts::sha256_hex(ids_cfg.as_bytes());
    for arm in arms(cfg) {
        let name = format!("mixed/{arm}.csv");
        let table = read_table(ctx, mixed, &name)?;
        let digest = mixed.artifact(&name).map(|a| a.sha256.clone()).unwrap_or_default();
        let targets = task.targets(&table)?;
        let data = Labeled::new(&table.features, &targets, classes.len())?;
        let n_syn = table.provenance.iter().filter(|p| **p != Provenance::Original).count();
        for &kind in &cfg.experiment.models {
            let seeds = match kind {
                ModelKind::Dnn => cfg.ids_seeds(),
                _ => vec![0],
            };
            for seed in seeds {
                let model = ids::train(kind, data, &classes, &cfg.ids, seed)?;
                ctx.write(&model_name(&arm, kind, seed), serde_json::to_string(&model.to_file())?.as_bytes())?;
                jobs.write_record([
                    arm.clone(),
                    kind.to_string(),
                    seed.to_string(),
                    digest.clone(),
                    table.len().to_string(),
                    n_syn.to_string(),
                    ids_hash.clone(),
                ])?;
            }
            info!("trained {kind} on {arm}");
        }
    }
    let bytes = jobs.into_inner().map_err(|e| CliError::Artifact(e.to_string()))?;
    ctx.write("jobs.csv", &bytes)?;
    Ok(())
}

/// One evaluated (arm, model, seed).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub arm: String,
    pub model: ModelKind,
    pub task: String,
    pub seed: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    pub tpr_at_5fpr: f64,
}

pub const METRIC_HEADER: [&str; 10] =
    ["arm", "model", "task", "seed", "accuracy", "precision", "recall", "f1", "auroc", "tpr_at_5fpr"];

pub fn task_label(task: Task) -> String {
    match task {
        Task::Binary => "binary".into(),
        Task::Multi => "multi".into(),
        Task::Loao(h) => format!("loao_{}", class_file(h)),
    }
}

/// Macro precision, recall and F1 over `classes`, via one-vs-rest confusion
/// matrices.
fn macro_prf(pred: &[usize], truth: &[usize], classes: &[usize]) -> Result<(f64, f64, f64)> {
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for &c in classes {
        let m = metrics::classification_metrics(&ConfusionMatrix::one_vs_rest(pred, truth, c)?)?;
        p += m.precision;
        r += m.recall;
        f += m.f1;
    }
    let k = classes.len() as f64;
    Ok((p / k, r / k, f / k))
}

fn score_model(model: &IdsModel, test: &DatasetTable, task: Task) -> Result<(MetricRow, metrics::RocCurve)> {
    let normal = task.target(Class::Normal).expect("normal is never held out");
    let (known, roc) = match task {
        Task::Loao(h) => {
            let (seen, unseen) = split_holdout_scores(test, h)?;
            let mut scores = model.anomaly_scores(&seen.features, normal)?;
            let mut labels = vec![false; scores.len()];
            scores.extend(model.anomaly_scores(&unseen.features, normal)?);
            labels.resize(scores.len(), true);
            (seen, metrics::roc_curve(&scores, &labels)?)
        }
        _ => {
            let scores = model.anomaly_scores(&test.features, normal)?;
            let labels: Vec<bool> = test.labels.iter().map(|c| c.is_attack()).collect();
            (test.clone(), metrics::roc_curve(&scores, &labels)?)
        }
    };
    let truth = task.targets(&known)?;
    let pred = model.predict(&known.features)?;
    let accuracy = metrics::accuracy(&pred, &truth)?;
    let (precision, recall, f1) = match task {
        // the attack class is the positive class of the binary task
        Task::Binary => {
            let m = metrics::classification_metrics(&ConfusionMatrix::one_vs_rest(&pred, &truth, 1)?)?;
            (m.precision, m.recall, m.f1)
        }
        _ => macro_prf(&pred, &truth, &(0..task.class_names().len()).collect::<Vec<_>>())?,
    };
    let row = MetricRow {
        arm: String::new(),
        model: model.kind,
        task: task_label(task),
        seed: model.seed,
        accuracy,
        precision,
        recall,
        f1,
        auroc: roc.auroc(),
        tpr_at_5fpr: metrics::tpr_at_fpr(&roc, 0.05)?,
    };
    Ok((row, roc))
}

/// Real rows used as the alignment reference: at most this many, evenly
/// strided.
pub const ALIGNMENT_REAL_CAP: usize = 2000;

fn strided(t: &DatasetTable, cap: usize) -> DatasetTable {
    if t.len() <= cap {
        return t.clone();
    }
    let idx: Vec<usize> = (0..cap).map(|i| i * t.len() / cap).collect();
    t.subset(&idx)
}

fn evaluate(cfg: &ExperimentConfig, m: &RunManifest, ctx: &mut StageCtx) -> Result<()> {
    let pre = need(m, Stage::Preprocess)?;
    let syn = need(m, Stage::Synthesize)?;
    let models = need(m, Stage::TrainIds)?;
    let test = read_table(ctx, pre, "test.csv")?;
    let train = read_table(ctx, pre, "train.csv")?;
    let task = cfg.task();
    let mut rows = csv::Writer::from_writer(Vec::new());
    rows.write_record(METRIC_HEADER)?;
    let mut roc_out = csv::Writer::from_writer(Vec::new());
    roc_out.write_record(["arm", "model", "seed", "fpr", "tpr"])?;
    let truth_names: Vec<String> = test.labels.iter().map(|c| c.to_string()).collect();
    for arm in arms(cfg) {
        for &kind in &cfg.experiment.models {
            for seed in cfg.ids_seeds() {
                let name = model_name(&arm, kind, seed);
                let model = IdsModel::from_file(serde_json::from_slice(&ctx.read(models, &name)?)?)?;
                let (mut row, roc) = score_model(&model, &test, task)?;
                row.arm = arm.clone();
                row.seed = seed;
                write_metric_row(&mut rows, &row)?;
                for (f, t) in roc.points() {
                    roc_out.write_record([arm.clone(), kind.to_string(), seed.to_string(), f.to_string(), t.to_string()])?;
                }
                let pred_name = match kind {
                    ModelKind::Dnn => format!("predictions/{arm}_{kind}_s{seed}.csv"),
                    _ => format!("predictions/{arm}_{kind}.csv"),
                };
                if kind == ModelKind::Dnn || seed == cfg.ids_seeds()[0] {
                    ctx.write_with(&pred_name, |buf| Ok(model.write_predictions(buf, &test.features, &truth_names)?))?;
                }
            }
        }
    }
    let into = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| CliError::Artifact(e.to_string()));
    ctx.write("metrics.csv", &into(rows)?)?;
    ctx.write("roc_points.csv", &into(roc_out)?)?;

    let mut align = csv::Writer::from_writer(Vec::new());
    align.write_record(["variant", "class", "synthetic_rows", "real_rows", "knn_p50", "knn_p95", "mmd2", "mmd2_raw", "frac_lt_eps", "eps"])?;
    let plan = cfg.plan()?;
    for &class in plan.counts.keys() {
        let real = strided(&train.filter(|c| c == class), ALIGNMENT_REAL_CAP);
        for &variant in &cfg.experiment.variants {
            let s = read_table(ctx, syn, &synthetic_name(variant, class))?;
            if s.len() < 2 || real.len() < 2 {
                continue;
            }
            let r = metrics::alignment_report(&s.features, &real.features, EpsMode::default())?;
            align.write_record([
                variant.to_string(),
                class.to_string(),
                s.len().to_string(),
                real.len().to_string(),
                r.knn_p50.to_string(),
                r.knn_p95.to_string(),
                r.mmd2.to_string(),
                r.mmd2_raw.to_string(),
                r.frac_lt_eps.to_string(),
                r.eps.to_string(),
            ])?;
        }
    }
    ctx.write("alignment.csv", &into(align)?)?;
    Ok(())
}

pub fn write_metric_row<W: std::io::Write>(w: &mut csv::Writer<W>, r: &MetricRow) -> Result<()> {
    w.write_record([
        r.arm.clone(),
        r.model.to_string(),
        r.task.clone(),
        r.seed.to_string(),
        r.accuracy.to_string(),
        r.precision.to_string(),
        r.recall.to_string(),
        r.f1.to_string(),
        r.auroc.to_string(),
        r.tpr_at_5fpr.to_string(),
    ])?;
    Ok(())
}

// ---------------------------------------------------------------- leak scan

/// Held-out rows found per training artifact of one stage.
pub fn scan_stage(out: &Path, rec: &StageRecord, held_out: Class) -> Result<Vec<(String, usize)>> {
    let mut found = Vec::new();
    for a in &rec.artifacts {
        let name = a.path.rsplit('/').next().unwrap_or_default();
        let training = a.path.contains("/slices/")
            || a.path.contains("/synthetic/")
            || a.path.contains("/mixed/")
            || (rec.name == Stage::Preprocess.as_str() && name == "train.csv");
        if training {
            let t = DatasetTable::read_csv(std::fs::File::open(out.join(&a.path))?)?;
            found.push((a.path.clone(), t.count(held_out)));
        }
    }
    Ok(found)
}

pub fn leak_check(out: &Path, rec: &StageRecord, held_out: Class) -> Result<()> {
    for (path, n) in scan_stage(out, rec, held_out)? {
        if n > 0 {
            return Err(CliError::Protocol(format!("{n} rows of held-out class {held_out} in {path}")));
        }
    }
    Ok(())
}

/// Loads the encoded schema of a finished run.
pub fn load_schema(out: &Path, m: &RunManifest) -> Result<FeatureSchema> {
    let pre = need(m, Stage::Preprocess)?;
    let a = pre.artifact("schema.json").ok_or_else(|| CliError::Artifact("schema.json missing".into()))?;
    Ok(serde_json::from_str(&std::fs::read_to_string(out.join(&a.path))?)?)
}
