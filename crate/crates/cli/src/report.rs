//! Roll-up tables and plot data from a finished evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use std::path::Path;

use zdgan_core::data::{Class, DatasetTable, Provenance};
use zdgan_core::metrics;
use zdgan_core::trainer::HISTORY_HEADER;

use crate::artifacts::{RunManifest, StageCtx};
use crate::config::{ExperimentConfig, TaskMode};
use crate::error::{CliError, Result};
use crate::pipeline::{self, need, Stage, METRIC_HEADER};

/// Metric columns summarised as mean and std.
pub const SUMMARY_METRICS: [&str; 6] = ["accuracy", "precision", "recall", "f1", "auroc", "tpr_at_5fpr"];

/// A (arm, model, task) group of per-seed metric rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub arm: String,
    pub model: String,
    pub task: String,
    pub seeds: usize,
    /// (mean, std) per entry of [`SUMMARY_METRICS`].
    pub stats: Vec<(f64, f64)>,
}

/// Groups `metrics.csv` rows and computes mean and population std. Group
/// order follows first appearance.
pub fn summarize(metrics_csv: &[u8]) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_reader(metrics_csv);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != METRIC_HEADER {
        return Err(CliError::Artifact("unexpected metrics.csv header".into()));
    }
    let col = |name: &str| header.iter().position(|h| h == name).expect("checked header");
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String), Vec<Vec<f64>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let key = (rec[0].to_string(), rec[1].to_string(), rec[2].to_string());
        let mut vals = Vec::with_capacity(SUMMARY_METRICS.len());
        for m in SUMMARY_METRICS {
            let v: f64 = rec[col(m)].parse().map_err(|_| CliError::Artifact(format!("bad {m} value {:?}", &rec[col(m)])))?;
            vals.push(v);
        }
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(vals);
    }
    let mut out = Vec::new();
    for key in order {
        let rows = &groups[&key];
        let mut stats = Vec::new();
        for j in 0..SUMMARY_METRICS.len() {
            let column: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            stats.push(metrics::mean_std(&column)?);
        }
        out.push(SummaryRow { arm: key.0, model: key.1, task: key.2, seeds: rows.len(), stats });
    }
    Ok(out)
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["arm".to_string(), "model".into(), "task".into(), "seeds".into()];
    for m in SUMMARY_METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.arm.clone(), r.model.clone(), r.task.clone(), r.seeds.to_string()];
        for (m, s) in &r.stats {
            rec.push(m.to_string());
            rec.push(s.to_string());
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| CliError::Artifact(e.to_string()))
}

/// Markdown table with percentages, one row per (arm, model).
pub fn summary_md(rows: &[SummaryRow], task: &str) -> String {
    let mut s = format!("# Results ({task})\n\nMean ± std over seeds, in percent.\n\n| arm | model |");
    for m in SUMMARY_METRICS {
        let _ = write!(s, " {m} |");
    }
    s.push_str("\n|---|---|");
    for _ in SUMMARY_METRICS {
        s.push_str("---|");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "| {} | {} |", r.arm, r.model);
        for (m, sd) in &r.stats {
            let _ = write!(s, " {:.1} ± {:.1} |", 100.0 * m, 100.0 * sd);
        }
        s.push('\n');
    }
    s
}

fn csv_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| CliError::Artifact(e.to_string()))
}

pub fn emit(cfg: &ExperimentConfig, m: &RunManifest, out: &Path, ctx: &mut StageCtx) -> Result<()> {
    let pre = need(m, Stage::Preprocess)?;
    let gan = need(m, Stage::TrainGan)?;
    let mixed = need(m, Stage::Mix)?;
    let eval = need(m, Stage::Evaluate)?;

    let metrics_csv = ctx.read(eval, "metrics.csv")?;
    let summary = summarize(&metrics_csv)?;
    ctx.write("metrics.csv", &metrics_csv)?;
    ctx.write("summary.csv", &summary_csv(&summary)?)?;
    ctx.write("summary.md", summary_md(&summary, &pipeline::task_label(cfg.task())).as_bytes())?;
    let roc = ctx.read(eval, "roc_points.csv")?;
    ctx.write("roc_points.csv", &roc)?;
    let align = ctx.read(eval, "alignment.csv")?;
    ctx.write("alignment.csv", &align)?;

    let mut curves = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["variant", "class"];
    header.extend(HISTORY_HEADER);
    curves.write_record(&header)?;
    for name in gan.names_with_prefix("history/") {
        let stem = name.trim_start_matches("history/").trim_end_matches(".csv");
        let (variant, class) = stem.rsplit_once('_').ok_or_else(|| CliError::Artifact(format!("bad history name {name}")))?;
        let bytes = ctx.read(gan, &name)?;
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        for rec in rdr.records() {
            let rec = rec?;
            let mut row = vec![variant.to_string(), class.to_string()];
            row.extend(rec.iter().map(str::to_string));
            curves.write_record(&row)?;
        }
    }
    ctx.write("loss_curves.csv", &csv_bytes(curves)?)?;

    let mut dist = csv::Writer::from_writer(Vec::new());
    dist.write_record(["dataset", "class", "original", "synthetic"])?;
    let mut tables: Vec<(String, DatasetTable)> = Vec::new();
    for split in ["train", "test"] {
        tables.push((split.into(), DatasetTable::read_csv(ctx.read(pre, &format!("{split}.csv"))?.as_slice())?));
    }
    for arm in pipeline::arms(cfg) {
        let t = DatasetTable::read_csv(ctx.read(mixed, &format!("mixed/{arm}.csv"))?.as_slice())?;
        tables.push((format!("mixed:{arm}"), t));
    }
    for (name, t) in &tables {
        for class in Class::ALL {
            let (mut orig, mut syn) = (0usize, 0usize);
            for (c, p) in t.labels.iter().zip(&t.provenance) {
                if *c == class {
                    if *p == Provenance::Original {
                        orig += 1;
                    } else {
                        syn += 1;
                    }
                }
            }
            dist.write_record([name.clone(), class.to_string(), orig.to_string(), syn.to_string()])?;
        }
    }
    ctx.write("class_distribution.csv", &csv_bytes(dist)?)?;

    if cfg.experiment.task == TaskMode::Loao {
        let mut leak = csv::Writer::from_writer(Vec::new());
        leak.write_record(["artifact", "held_out_rows"])?;
        for rec in &m.stages {
            for (path, n) in pipeline::scan_stage(out, rec, cfg.experiment.held_out)? {
                leak.write_record([path, n.to_string()])?;
            }
        }
        ctx.write("leak_scan.csv", &csv_bytes(leak)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_uses_population_std() {
        let csv = "arm,model,task,seed,accuracy,precision,recall,f1,auroc,tpr_at_5fpr\n\
                   a,dnn,binary,1,0.5,1,1,1,1,1\n\
                   a,dnn,binary,2,0.7,1,1,1,1,1\n\
                   b,dt,binary,1,0.1,0,0,0,0,0\n";
        let rows = summarize(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].arm, "a");
        assert_eq!(rows[0].seeds, 2);
        assert!((rows[0].stats[0].0 - 0.6).abs() < 1e-15);
        assert!((rows[0].stats[0].1 - 0.1).abs() < 1e-15);
        assert_eq!(rows[1].stats[0], (0.1, 0.0));
        let md = summary_md(&rows, "binary");
        assert!(md.contains("| a | dnn | 60.0 ± 10.0 |"));
    }
}
