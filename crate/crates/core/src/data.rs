//! NSL-KDD style ingestion, `[-1, 1]` encoding and training-set assembly.
//!
//! Raw records are comma separated: the feature columns of a [`Layout`],
//! then the label, then an optional trailing column (the NSL-KDD difficulty
//! score) that is ignored. Encoding maps numerics linearly onto `[-1, 1]`
//! using train-set extrema, binaries onto `{-1, +1}` and nominals onto a
//! `+1`/`-1` one-hot block.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::Variant;

/// Version of the encoding rules; stored in every schema sidecar.
pub const ENCODING_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Class {
    Normal,
    Dos,
    Probe,
    U2r,
    R2l,
}

impl Class {
    pub const ALL: [Class; 5] = [Class::Normal, Class::Dos, Class::Probe, Class::U2r, Class::R2l];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Normal => "Normal",
            Class::Dos => "DoS",
            Class::Probe => "Probe",
            Class::U2r => "U2R",
            Class::R2l => "R2L",
        }
    }

    pub fn is_attack(self) -> bool {
        self != Class::Normal
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Class {
    type Err = Error;

    /// Accepts class names as well as the NSL-KDD attack names.
    fn from_str(s: &str) -> Result<Self> {
        class_of_label(s).ok_or_else(|| Error::config(format!("unknown class or attack label '{s}'")))
    }
}

/// Maps a raw label (a class name or an NSL-KDD attack name, any case) to
/// its class.
pub fn class_of_label(label: &str) -> Option<Class> {
    let l = label.trim().trim_end_matches('.').to_ascii_lowercase();
    let class = match l.as_str() {
        "normal" => Class::Normal,
        "dos" | "back" | "land" | "neptune" | "pod" | "smurf" | "teardrop" | "apache2"
        | "mailbomb" | "processtable" | "udpstorm" | "worm" => Class::Dos,
        "probe" | "ipsweep" | "nmap" | "portsweep" | "satan" | "mscan" | "saint" => Class::Probe,
        "u2r" | "buffer_overflow" | "loadmodule" | "perl" | "rootkit" | "ps" | "sqlattack"
        | "xterm" | "httptunnel" => Class::U2r,
        "r2l" | "ftp_write" | "guess_passwd" | "imap" | "multihop" | "phf" | "spy"
        | "warezclient" | "warezmaster" | "named" | "sendmail" | "snmpgetattack"
        | "snmpguess" | "xlock" | "xsnoop" => Class::R2l,
        _ => return None,
    };
    Some(class)
}

/// Kind of a raw input column before fitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RawKind {
    Numeric,
    Binary,
    Nominal,
}

/// Names and kinds of the feature columns of a raw file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub names: Vec<String>,
    pub kinds: Vec<RawKind>,
}

const NSL_KDD_COLUMNS: [(&str, RawKind); 41] = [
    ("duration", RawKind::Numeric),
    ("protocol_type", RawKind::Nominal),
    ("service", RawKind::Nominal),
    ("flag", RawKind::Nominal),
    ("src_bytes", RawKind::Numeric),
    ("dst_bytes", RawKind::Numeric),
    ("land", RawKind::Binary),
    ("wrong_fragment", RawKind::Numeric),
    ("urgent", RawKind::Numeric),
    ("hot", RawKind::Numeric),
    ("num_failed_logins", RawKind::Numeric),
    ("logged_in", RawKind::Binary),
    ("num_compromised", RawKind::Numeric),
    ("root_shell", RawKind::Binary),
    ("su_attempted", RawKind::Binary),
    ("num_root", RawKind::Numeric),
    ("num_file_creations", RawKind::Numeric),
    ("num_shells", RawKind::Numeric),
    ("num_access_files", RawKind::Numeric),
    ("num_outbound_cmds", RawKind::Numeric),
    ("is_host_login", RawKind::Binary),
    ("is_guest_login", RawKind::Binary),
    ("count", RawKind::Numeric),
    ("srv_count", RawKind::Numeric),
    ("serror_rate", RawKind::Numeric),
    ("srv_serror_rate", RawKind::Numeric),
    ("rerror_rate", RawKind::Numeric),
    ("srv_rerror_rate", RawKind::Numeric),
    ("same_srv_rate", RawKind::Numeric),
    ("diff_srv_rate", RawKind::Numeric),
    ("srv_diff_host_rate", RawKind::Numeric),
    ("dst_host_count", RawKind::Numeric),
    ("dst_host_srv_count", RawKind::Numeric),
    ("dst_host_same_srv_rate", RawKind::Numeric),
    ("dst_host_diff_srv_rate", RawKind::Numeric),
    ("dst_host_same_src_port_rate", RawKind::Numeric),
    ("dst_host_srv_diff_host_rate", RawKind::Numeric),
    ("dst_host_serror_rate", RawKind::Numeric),
    ("dst_host_srv_serror_rate", RawKind::Numeric),
    ("dst_host_rerror_rate", RawKind::Numeric),
    ("dst_host_srv_rerror_rate", RawKind::Numeric),
];

impl Layout {
    /// The 41-column KDDTrain+/KDDTest+ layout: 3 nominal, 6 binary and 32
    /// numeric attributes.
    pub fn nsl_kdd() -> Self {
        Layout {
            names: NSL_KDD_COLUMNS.iter().map(|(n, _)| n.to_string()).collect(),
            kinds: NSL_KDD_COLUMNS.iter().map(|(_, k)| *k).collect(),
        }
    }

    /// `k` numeric columns named `f0..f{k-1}`.
    pub fn numeric(k: usize) -> Self {
        Layout {
            names: (0..k).map(|i| format!("f{i}")).collect(),
            kinds: vec![RawKind::Numeric; k],
        }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
}

/// Raw string records with their labels, as read from a file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawTable {
    pub rows: Vec<Vec<String>>,
    pub labels: Vec<String>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Reads headerless comma-separated records laid out as `layout`, then a
/// label, then at most one ignored column.
pub fn read_raw<R: Read>(input: R, layout: &Layout) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let width = layout.len();
    let mut table = RawTable::default();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != width + 1 && rec.len() != width + 2 {
            return Err(Error::Ingestion {
                row,
                message: format!("expected {} or {} columns, found {}", width + 1, width + 2, rec.len()),
            });
        }
        table.rows.push(rec.iter().take(width).map(str::to_string).collect());
        table.labels.push(rec[width].to_string());
    }
    Ok(table)
}

pub fn read_raw_file(path: &Path, layout: &Layout) -> Result<RawTable> {
    read_raw(std::fs::File::open(path)?, layout)
}

/// Writes records in the layout [`read_raw`] expects.
pub fn write_raw<W: Write>(out: W, raw: &RawTable) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for (row, label) in raw.rows.iter().zip(&raw.labels) {
        let mut rec = row.clone();
        rec.push(label.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric { min: f64, max: f64 },
    Binary,
    Nominal { categories: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn encoded_width(&self) -> usize {
        match &self.kind {
            ColumnKind::Nominal { categories } => categories.len(),
            _ => 1,
        }
    }
}

/// Fitted encoding: train-set extrema and sorted category lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub columns: Vec<Column>,
}

fn parse_number(s: &str, row: usize, column: &str) -> Result<f64> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Ingestion {
            row,
            message: format!("non-numeric value '{s}' in column {column}"),
        }),
    }
}

/// Fits min/max and category lists on training records.
pub fn fit_schema(raw: &RawTable, layout: &Layout) -> Result<FeatureSchema> {
    if layout.names.len() != layout.kinds.len() {
        return Err(Error::config("layout names and kinds differ in length"));
    }
    if raw.is_empty() {
        return Err(Error::Ingestion { row: 0, message: "no records".into() });
    }
    let mut columns = Vec::with_capacity(layout.len());
    for (j, (name, kind)) in layout.names.iter().zip(&layout.kinds).enumerate() {
        let kind = match kind {
            RawKind::Numeric => {
                let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                for (i, row) in raw.rows.iter().enumerate() {
                    let v = parse_number(cell(row, j, i)?, i, name)?;
                    min = min.min(v);
                    max = max.max(v);
                }
                ColumnKind::Numeric { min, max }
            }
            RawKind::Binary => {
                for (i, row) in raw.rows.iter().enumerate() {
                    parse_number(cell(row, j, i)?, i, name)?;
                }
                ColumnKind::Binary
            }
            RawKind::Nominal => {
                let mut set = BTreeSet::new();
                for (i, row) in raw.rows.iter().enumerate() {
                    set.insert(cell(row, j, i)?.to_string());
                }
                ColumnKind::Nominal { categories: set.into_iter().collect() }
            }
        };
        columns.push(Column { name: name.clone(), kind });
    }
    Ok(FeatureSchema { version: ENCODING_VERSION, columns })
}

fn cell(row: &[String], j: usize, i: usize) -> Result<&str> {
    row.get(j).map(String::as_str).ok_or_else(|| Error::Ingestion {
        row: i,
        message: format!("missing column {j}"),
    })
}

impl FeatureSchema {
    pub fn encoded_width(&self) -> usize {
        self.columns.iter().map(Column::encoded_width).sum()
    }

    /// Maps one numeric value of column `j` back from `[-1, 1]`.
    pub fn decode_numeric(&self, j: usize, encoded: f64) -> Result<f64> {
        match self.columns.get(j).map(|c| &c.kind) {
            Some(ColumnKind::Numeric { min, max }) => {
                if max == min {
                    Ok(*min)
                } else {
                    Ok((encoded + 1.0) * 0.5 * (max - min) + min)
                }
            }
            _ => Err(Error::contract(format!("column {j} is not numeric"))),
        }
    }

    /// Offset of column `j`'s first slot in the encoded row.
    pub fn encoded_offset(&self, j: usize) -> usize {
        self.columns[..j].iter().map(Column::encoded_width).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: FeatureSchema = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if s.version != ENCODING_VERSION {
            return Err(Error::Format(format!(
                "schema encoding version {} (expected {ENCODING_VERSION})",
                s.version
            )));
        }
        Ok(s)
    }
}

fn encode_numeric(v: f64, min: f64, max: f64) -> (f64, bool) {
    if max == min {
        return (0.0, v != min);
    }
    let e = 2.0 * (v - min) / (max - min) - 1.0;
    if e > 1.0 {
        (1.0, true)
    } else if e < -1.0 {
        (-1.0, true)
    } else {
        (e, false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    Synthetic(Variant),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Original => f.write_str("original"),
            Provenance::Synthetic(v) => write!(f, "synthetic:{v}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("synthetic:") {
            Some(v) => Ok(Provenance::Synthetic(v.parse()?)),
            None if s == "original" => Ok(Provenance::Original),
            None => Err(Error::Format(format!("unknown provenance '{s}'"))),
        }
    }
}

/// Encoded feature matrix with a label and provenance per row.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetTable {
    pub features: Tensor,
    pub labels: Vec<Class>,
    pub provenance: Vec<Provenance>,
}

/// Output of [`encode`] with the out-of-range and unseen-category counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub table: DatasetTable,
    pub clamped: usize,
    pub unseen: usize,
}

/// Encodes raw records under a fitted schema.
pub fn encode(raw: &RawTable, schema: &FeatureSchema) -> Result<Encoded> {
    let width = schema.encoded_width();
    let mut data = Vec::with_capacity(raw.len() * width);
    let mut labels = Vec::with_capacity(raw.len());
    let (mut clamped, mut unseen) = (0, 0);
    for (i, (row, label)) in raw.rows.iter().zip(&raw.labels).enumerate() {
        labels.push(class_of_label(label).ok_or_else(|| Error::Ingestion {
            row: i,
            message: format!("unknown label '{label}'"),
        })?);
        for (j, col) in schema.columns.iter().enumerate() {
            let s = cell(row, j, i)?;
            match &col.kind {
                ColumnKind::Numeric { min, max } => {
                    let (e, c) = encode_numeric(parse_number(s, i, &col.name)?, *min, *max);
                    clamped += c as usize;
                    data.push(e);
                }
                ColumnKind::Binary => {
                    let v = parse_number(s, i, &col.name)?;
                    data.push(if v > 0.0 { 1.0 } else { -1.0 });
                }
                ColumnKind::Nominal { categories } => {
                    let hot = categories.binary_search_by(|c| c.as_str().cmp(s)).ok();
                    unseen += hot.is_none() as usize;
                    data.extend((0..categories.len()).map(|k| if Some(k) == hot { 1.0 } else { -1.0 }));
                }
            }
        }
    }
    let n = labels.len();
    let table = DatasetTable::new(Tensor::new(vec![n, width], data)?, labels, vec![Provenance::Original; n])?;
    Ok(Encoded { table, clamped, unseen })
}

impl DatasetTable {
    pub fn new(features: Tensor, labels: Vec<Class>, provenance: Vec<Provenance>) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::shape("dataset", format!("features must be 2-D, got {:?}", features.shape())));
        }
        if labels.len() != features.rows() || provenance.len() != features.rows() {
            return Err(Error::shape(
                "dataset",
                format!("{} rows, {} labels, {} provenance tags", features.rows(), labels.len(), provenance.len()),
            ));
        }
        if features.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::contract("dataset features must lie in [-1, 1]"));
        }
        Ok(DatasetTable { features, labels, provenance })
    }

    /// Rows generated for `class` by one generator variant.
    pub fn synthetic(features: Tensor, class: Class, variant: Variant) -> Result<Self> {
        let n = features.rows();
        DatasetTable::new(features, vec![class; n], vec![Provenance::Synthetic(variant); n])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> DatasetTable {
        DatasetTable {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            provenance: idx.iter().map(|&i| self.provenance[i]).collect(),
        }
    }

    pub fn filter(&self, keep: impl Fn(Class) -> bool) -> DatasetTable {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.labels[i])).collect();
        self.subset(&idx)
    }

    /// Feature rows of one class, the training slice of a per-class GAN.
    pub fn class_rows(&self, class: Class) -> Tensor {
        self.filter(|c| c == class).features
    }

    pub fn count(&self, class: Class) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }

    pub fn histogram(&self) -> BTreeMap<Class, usize> {
        let mut h = BTreeMap::new();
        for &c in &self.labels {
            *h.entry(c).or_insert(0) += 1;
        }
        h
    }

    pub fn concat(parts: &[&DatasetTable]) -> Result<DatasetTable> {
        let width = match parts.first() {
            Some(p) => p.width(),
            None => return Err(Error::contract("concat of no tables")),
        };
        let mut data = Vec::new();
        let (mut labels, mut provenance) = (Vec::new(), Vec::new());
        for p in parts {
            if p.width() != width {
                return Err(Error::shape("concat", format!("width {} vs {width}", p.width())));
            }
            data.extend_from_slice(p.features.data());
            labels.extend_from_slice(&p.labels);
            provenance.extend_from_slice(&p.provenance);
        }
        let n = labels.len();
        Ok(DatasetTable { features: Tensor::new(vec![n, width], data)?, labels, provenance })
    }

    /// Writes the encoded table: one column per feature, then label and
    /// provenance. Values are written with round-trip precision.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.width()).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        header.push("provenance".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.labels[i].to_string());
            rec.push(self.provenance[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<DatasetTable> {
        let mut rdr = csv::Reader::from_reader(input);
        let width = rdr.headers()?.len().checked_sub(2).ok_or_else(|| Error::Format("missing label columns".into()))?;
        let mut data = Vec::new();
        let (mut labels, mut provenance) = (Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for j in 0..width {
                data.push(parse_number(&rec[j], row, "feature")?);
            }
            labels.push(rec[width].parse()?);
            provenance.push(rec[width + 1].parse()?);
        }
        let n = labels.len();
        DatasetTable::new(Tensor::new(vec![n, width], data)?, labels, provenance)
    }
}

/// What the IDS is trained to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// Normal vs abnormal.
    Binary,
    /// The five classes.
    Multi,
    /// The classes other than the held-out one.
    Loao(Class),
}

impl Task {
    pub fn class_names(self) -> Vec<String> {
        match self {
            Task::Binary => vec!["normal".into(), "abnormal".into()],
            Task::Multi => Class::ALL.iter().map(|c| c.to_string()).collect(),
            Task::Loao(h) => Class::ALL.iter().filter(|&&c| c != h).map(|c| c.to_string()).collect(),
        }
    }

    /// Target index of `class`, or `None` for the held-out class.
    pub fn target(self, class: Class) -> Option<usize> {
        match self {
            Task::Binary => Some(class.is_attack() as usize),
            Task::Multi => Some(class.index()),
            Task::Loao(h) if class == h => None,
            Task::Loao(h) => Some(class.index() - (class > h) as usize),
        }
    }

    pub fn targets(self, table: &DatasetTable) -> Result<Vec<usize>> {
        table
            .labels
            .iter()
            .map(|&c| {
                self.target(c)
                    .ok_or_else(|| Error::Protocol(format!("row of held-out class {c} in a {self:?} set")))
            })
            .collect()
    }
}

/// Synthetic rows requested per class for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub counts: BTreeMap<Class, usize>,
    pub task: Task,
}

impl MixPlan {
    pub fn new(task: Task, counts: &[(Class, usize)]) -> Result<Self> {
        let plan = MixPlan { counts: counts.iter().copied().filter(|&(_, n)| n > 0).collect(), task };
        plan.check()?;
        Ok(plan)
    }

    /// The paper's counts divided by `scale` (rounded down): binary merges
    /// 50k Normal, 20k each of DoS/Probe/R2L and 10k U2R; multi adds Probe,
    /// R2L and U2R; LOAO adds 20k Probe and 10k U2R.
    pub fn paper(task: Task, scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::config("scale must be at least 1"));
        }
        let full: &[(Class, usize)] = match task {
            Task::Binary => &[
                (Class::Normal, 50_000),
                (Class::Dos, 20_000),
                (Class::Probe, 20_000),
                (Class::R2l, 20_000),
                (Class::U2r, 10_000),
            ],
            Task::Multi => &[(Class::Probe, 20_000), (Class::R2l, 20_000), (Class::U2r, 10_000)],
            Task::Loao(_) => &[(Class::Probe, 20_000), (Class::U2r, 10_000)],
        };
        let scaled: Vec<(Class, usize)> = full.iter().map(|&(c, n)| (c, n / scale)).collect();
        MixPlan::new(task, &scaled)
    }

    pub fn count(&self, class: Class) -> usize {
        self.counts.get(&class).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn check(&self) -> Result<()> {
        if let Task::Loao(h) = self.task {
            if self.count(h) > 0 {
                return Err(Error::Plan(format!("LOAO plan requests synthetic rows of held-out class {h}")));
            }
        }
        Ok(())
    }
}

/// Concatenates the originals with the planned number of synthetic rows per
/// class (the first rows of each synthetic table). In LOAO mode every
/// original row of the held-out class is dropped first.
pub fn build_training_set(
    original: &DatasetTable,
    synthetic: &BTreeMap<Class, DatasetTable>,
    plan: &MixPlan,
) -> Result<DatasetTable> {
    plan.check()?;
    let base = match plan.task {
        Task::Loao(h) => original.filter(|c| c != h),
        _ => original.clone(),
    };
    let mut parts = vec![base];
    for (&class, &n) in &plan.counts {
        let table = synthetic
            .get(&class)
            .ok_or_else(|| Error::Plan(format!("no synthetic table for {class}")))?;
        if table.len() < n {
            return Err(Error::Plan(format!("plan wants {n} synthetic {class} rows, {} available", table.len())));
        }
        if table.labels.iter().any(|&c| c != class) {
            return Err(Error::Plan(format!("synthetic table for {class} holds other labels")));
        }
        if table.width() != original.width() {
            return Err(Error::shape("build_training_set", format!("width {} vs {}", table.width(), original.width())));
        }
        parts.push(table.subset(&(0..n).collect::<Vec<_>>()));
    }
    DatasetTable::concat(&parts.iter().collect::<Vec<_>>())
}

/// Splits a test table into rows of seen classes and rows of the held-out
/// class.
pub fn split_holdout_scores(test: &DatasetTable, held_out: Class) -> Result<(DatasetTable, DatasetTable)> {
    let unseen = test.filter(|c| c == held_out);
    if unseen.is_empty() {
        return Err(Error::Protocol(format!("held-out class {held_out} has no test rows")));
    }
    Ok((test.filter(|c| c != held_out), unseen))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(rows: &[&[&str]], labels: &[&str]) -> RawTable {
        RawTable {
            rows: rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn layout(kinds: &[RawKind]) -> Layout {
        Layout { names: (0..kinds.len()).map(|i| format!("c{i}")).collect(), kinds: kinds.to_vec() }
    }

    #[test]
    fn numeric_min_max_and_midpoint() {
        let r = raw(&[&["0"], &["10"]], &["normal", "normal"]);
        let s = fit_schema(&r, &Layout::numeric(1)).unwrap();
        assert_eq!(s.columns[0].kind, ColumnKind::Numeric { min: 0.0, max: 10.0 });
        let e = encode(&raw(&[&["5"], &["20"], &["-3"]], &["normal"; 3]), &s).unwrap();
        assert_eq!(e.table.features.data(), &[0.0, 1.0, -1.0]);
        assert_eq!(e.clamped, 2);
    }

    #[test]
    fn nominal_categories_sorted_one_hot() {
        let l = layout(&[RawKind::Nominal]);
        let r = raw(&[&["tcp"], &["udp"], &["icmp"]], &["normal"; 3]);
        let s = fit_schema(&r, &l).unwrap();
        assert_eq!(
            s.columns[0].kind,
            ColumnKind::Nominal { categories: vec!["icmp".into(), "tcp".into(), "udp".into()] }
        );
        let e = encode(&raw(&[&["udp"], &["sctp"]], &["normal"; 2]), &s).unwrap();
        assert_eq!(e.table.features.row(0), &[-1.0, -1.0, 1.0]);
        assert_eq!(e.table.features.row(1), &[-1.0, -1.0, -1.0]);
        assert_eq!(e.unseen, 1);
    }

    #[test]
    fn constant_column_encodes_to_zero() {
        let r = raw(&[&["4"], &["4"]], &["normal"; 2]);
        let s = fit_schema(&r, &Layout::numeric(1)).unwrap();
        assert_eq!(encode(&r, &s).unwrap().table.features.data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_numeric_reports_row() {
        let r = raw(&[&["1"], &["x"]], &["normal"; 2]);
        match fit_schema(&r, &Layout::numeric(1)) {
            Err(Error::Ingestion { row, .. }) => assert_eq!(row, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn encoded_width_counts_one_hot_slots() {
        let l = layout(&[RawKind::Numeric, RawKind::Binary, RawKind::Nominal]);
        let r = raw(&[&["1", "0", "a"], &["2", "1", "b"]], &["normal", "smurf"]);
        let s = fit_schema(&r, &l).unwrap();
        assert_eq!(s.encoded_width(), 4);
        let e = encode(&r, &s).unwrap();
        assert_eq!(e.table.features.row(1), &[1.0, 1.0, -1.0, 1.0]);
        assert_eq!(e.table.labels, vec![Class::Normal, Class::Dos]);
    }

    #[test]
    fn nsl_kdd_layout_shape() {
        let l = Layout::nsl_kdd();
        let count = |k| l.kinds.iter().filter(|&&x| x == k).count();
        assert_eq!((count(RawKind::Nominal), count(RawKind::Binary), count(RawKind::Numeric)), (3, 6, 32));
    }

    #[test]
    fn read_raw_ignores_difficulty_column() {
        let text = "1,2,normal,20\n3,4,neptune\n";
        let r = read_raw(text.as_bytes(), &Layout::numeric(2)).unwrap();
        assert_eq!(r.labels, vec!["normal", "neptune"]);
        assert!(read_raw("1,normal\n".as_bytes(), &Layout::numeric(2)).is_err());
    }

    #[test]
    fn decode_round_trip() {
        let r = raw(&[&["-7.5"], &["1e6"]], &["normal"; 2]);
        let s = fit_schema(&r, &Layout::numeric(1)).unwrap();
        for v in [-7.5, 0.0, 3.25, 999_999.0] {
            let e = encode(&raw(&[&[&v.to_string()]], &["normal"]), &s).unwrap();
            let back = s.decode_numeric(0, e.table.features.data()[0]).unwrap();
            assert!((back - v).abs() <= (1e6 + 7.5) / 2.0 * 1e-12);
        }
    }

    fn table(labels: &[Class]) -> DatasetTable {
        let n = labels.len();
        DatasetTable::new(Tensor::zeros(&[n, 2]), labels.to_vec(), vec![Provenance::Original; n]).unwrap()
    }

    fn synth(class: Class, n: usize) -> DatasetTable {
        DatasetTable::synthetic(Tensor::zeros(&[n, 2]), class, Variant::SaJs).unwrap()
    }

    #[test]
    fn loao_removes_held_out_class() {
        let orig = table(&[Class::Normal, Class::R2l, Class::Probe, Class::R2l]);
        let syn: BTreeMap<_, _> = [(Class::Probe, synth(Class::Probe, 3)), (Class::U2r, synth(Class::U2r, 2))].into();
        let plan = MixPlan::new(Task::Loao(Class::R2l), &[(Class::Probe, 3), (Class::U2r, 1)]).unwrap();
        let out = build_training_set(&orig, &syn, &plan).unwrap();
        assert_eq!(out.count(Class::R2l), 0);
        assert_eq!(out.len(), 2 + 4);
        assert!(MixPlan::new(Task::Loao(Class::R2l), &[(Class::R2l, 1)]).is_err());
    }

    #[test]
    fn multi_plan_adds_scaled_counts() {
        let orig = table(&[Class::Normal; 10]);
        let plan = MixPlan::paper(Task::Multi, 100).unwrap();
        let syn: BTreeMap<_, _> = [Class::Probe, Class::R2l, Class::U2r].iter().map(|&c| (c, synth(c, 200))).collect();
        assert_eq!(build_training_set(&orig, &syn, &plan).unwrap().len(), 10 + 500);
    }

    #[test]
    fn binary_targets_have_two_classes() {
        let t = table(&Class::ALL);
        let targets: BTreeSet<usize> = Task::Binary.targets(&t).unwrap().into_iter().collect();
        assert_eq!(targets.len(), 2);
        assert_eq!(Task::Loao(Class::Dos).target(Class::R2l), Some(3));
        assert!(Task::Loao(Class::Dos).targets(&t).is_err());
    }

    #[test]
    fn holdout_split_partitions() {
        let mut labels = vec![Class::R2l; 10];
        labels.extend([Class::Normal; 5]);
        let (seen, unseen) = split_holdout_scores(&table(&labels), Class::R2l).unwrap();
        assert_eq!((seen.len(), unseen.len()), (5, 10));
        assert!(matches!(split_holdout_scores(&table(&labels), Class::U2r), Err(Error::Protocol(_))));
    }

    #[test]
    fn encoded_csv_round_trip() {
        let t = DatasetTable::new(
            Tensor::from_rows(&[[0.1, -1.0], [1.0 / 3.0, 0.5]]).unwrap(),
            vec![Class::U2r, Class::Normal],
            vec![Provenance::Synthetic(Variant::Js), Provenance::Original],
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(DatasetTable::read_csv(buf.as_slice()).unwrap(), t);
    }
}
