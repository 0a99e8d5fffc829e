//! Downstream intrusion detectors: a one-vs-rest linear SVM, a C4.5-style
//! decision tree and a small softmax MLP, behind one train/score interface.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::layers::{BlockOptions, Checkpoint, Mode, Network, NetworkSpec};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Svm,
    Dt,
    Dnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Svm, ModelKind::Dt, ModelKind::Dnn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Svm => "svm",
            ModelKind::Dt => "dt",
            ModelKind::Dnn => "dnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm" => Ok(ModelKind::Svm),
            "dt" => Ok(ModelKind::Dt),
            "dnn" => Ok(ModelKind::Dnn),
            _ => Err(Error::config(format!("unknown model kind '{s}' (svm|dt|dnn)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c_reg: f64,
    pub iterations: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c_reg: 1.0, iterations: 2000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: 20, min_leaf: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnnConfig {
    pub epochs: usize,
    pub widths: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for DnnConfig {
    fn default() -> Self {
        DnnConfig { epochs: 100, widths: vec![32, 16], lr: 1e-3, batch_size: 128 }
    }
}

/// Everything needed to train any of the three kinds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdsConfig {
    pub svm: SvmConfig,
    pub tree: TreeConfig,
    pub dnn: DnnConfig,
}

/// Training rows with integer targets in `0..n_classes`.
#[derive(Clone, Copy, Debug)]
pub struct Labeled<'a> {
    pub features: &'a Tensor,
    pub targets: &'a [usize],
    pub n_classes: usize,
}

impl<'a> Labeled<'a> {
    pub fn new(features: &'a Tensor, targets: &'a [usize], n_classes: usize) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != targets.len() {
            return Err(Error::shape("ids", format!("{:?} features vs {} targets", features.shape(), targets.len())));
        }
        if features.rows() == 0 {
            return Err(Error::contract("empty training set"));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n_classes) {
            return Err(Error::contract(format!("target {t} outside 0..{n_classes}")));
        }
        Ok(Labeled { features, targets, n_classes })
    }
}

// ---------------------------------------------------------------- SVM

/// One-vs-rest linear SVMs; scores are signed margins `w_k . x + b_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Full-batch Pegasos-style subgradient descent on
/// `c/2 |w|^2 + mean(max(0, 1 - y (w.x + b)))` with step `1/(c t)`. The bias
/// is not regularized. No randomness is involved.
pub fn train_svm(data: Labeled<'_>, cfg: &SvmConfig) -> Result<LinearSvm> {
    if cfg.c_reg <= 0.0 || cfg.iterations == 0 {
        return Err(Error::config("svm needs c_reg > 0 and iterations > 0"));
    }
    let mut seen = vec![false; data.n_classes];
    data.targets.iter().for_each(|&t| seen[t] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::contract("svm needs at least two classes in the training data"));
    }
    let (n, d) = (data.features.rows(), data.features.cols());
    let mut weights = Vec::with_capacity(data.n_classes);
    let mut bias = Vec::with_capacity(data.n_classes);
    for k in 0..data.n_classes {
        let y: Vec<f64> = data.targets.iter().map(|&t| if t == k { 1.0 } else { -1.0 }).collect();
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut sub = vec![0.0; d];
        for t in 1..=cfg.iterations {
            let eta = 1.0 / (cfg.c_reg * t as f64);
            sub.iter_mut().for_each(|v| *v = 0.0);
            let mut sub_b = 0.0;
            for (i, &yi) in y.iter().enumerate() {
                let x = data.features.row(i);
                let margin = yi * (dot(&w, x) + b);
                if margin < 1.0 {
                    sub.iter_mut().zip(x).for_each(|(s, &xv)| *s += yi * xv);
                    sub_b += yi;
                }
            }
            let shrink = 1.0 - eta * cfg.c_reg;
            let scale = eta / n as f64;
            w.iter_mut().zip(&sub).for_each(|(wv, &s)| *wv = shrink * *wv + scale * s);
            b += scale * sub_b;
        }
        weights.push(w);
        bias.push(b);
    }
    Ok(LinearSvm { weights, bias })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearSvm {
    fn scores(&self, x: &Tensor) -> Tensor {
        let k = self.weights.len();
        let mut out = Vec::with_capacity(x.rows() * k);
        for row in x.iter_rows() {
            out.extend(self.weights.iter().zip(&self.bias).map(|(w, b)| dot(w, row) + b));
        }
        Tensor::new(vec![x.rows(), k], out).expect("shape")
    }
}

// ---------------------------------------------------------------- tree

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Class frequencies of the training rows that reached the leaf.
    Leaf { distribution: Vec<f64> },
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes stored flat; index 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

fn entropy(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.log2()
        })
        .sum()
}

/// Gain ratio of splitting `parent` counts into `left` and the remainder.
pub fn gain_ratio(parent: &[usize], left: &[usize]) -> (f64, f64) {
    let n: usize = parent.iter().sum();
    let nl: usize = left.iter().sum();
    let right: Vec<usize> = parent.iter().zip(left).map(|(p, l)| p - l).collect();
    let nr = n - nl;
    if nl == 0 || nr == 0 {
        return (0.0, 0.0);
    }
    let (fl, fr) = (nl as f64 / n as f64, nr as f64 / n as f64);
    let gain = entropy(parent, n) - fl * entropy(left, nl) - fr * entropy(&right, nr);
    let split_info = -fl * fl.log2() - fr * fr.log2();
    (gain, gain / split_info)
}

struct Candidate {
    feature: usize,
    threshold: f64,
    ratio: f64,
}

/// C4.5-style induction over continuous features. Candidate thresholds are
/// midpoints between consecutive distinct sorted values. The best gain ratio
/// wins; ties go to the lower feature index, then the lower threshold.
/// Splits with zero gain, or leaving fewer than `min_leaf` rows on a side,
/// are never made.
pub fn train_tree(data: Labeled<'_>, cfg: &TreeConfig) -> Result<DecisionTree> {
    let mut tree = DecisionTree { nodes: Vec::new() };
    let rows: Vec<usize> = (0..data.features.rows()).collect();
    grow(&mut tree, data, cfg, rows, 0);
    Ok(tree)
}

fn grow(tree: &mut DecisionTree, data: Labeled<'_>, cfg: &TreeConfig, rows: Vec<usize>, depth: usize) -> usize {
    let id = tree.nodes.len();
    let counts = class_counts(data, &rows);
    let leaf = TreeNode::Leaf {
        distribution: counts.iter().map(|&c| c as f64 / rows.len() as f64).collect(),
    };
    tree.nodes.push(leaf);
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if pure || depth >= cfg.max_depth || rows.len() < 2 * cfg.min_leaf.max(1) {
        return id;
    }
    let found = best_split(data, cfg, &rows, &counts).or_else(|| {
        (depth + 2 <= cfg.max_depth).then(|| lookahead_split(data, cfg, &rows, &counts)).flatten()
    });
    let Some(best) = found else {
        return id;
    };
    let (left, right): (Vec<usize>, Vec<usize>) =
        rows.iter().partition(|&&i| data.features.row(i)[best.feature] <= best.threshold);
    let l = grow(tree, data, cfg, left, depth + 1);
    let r = grow(tree, data, cfg, right, depth + 1);
    tree.nodes[id] = TreeNode::Split { feature: best.feature, threshold: best.threshold, left: l, right: r };
    id
}

fn best_split(data: Labeled<'_>, cfg: &TreeConfig, rows: &[usize], counts: &[usize]) -> Option<Candidate> {
    let n = rows.len();
    let min_leaf = cfg.min_leaf.max(1);
    let mut best: Option<Candidate> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut left = vec![0usize; data.n_classes];
    for f in 0..data.features.cols() {
        order.clear();
        order.extend(rows.iter().map(|&i| (data.features.row(i)[f], data.targets[i])));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        left.iter_mut().for_each(|c| *c = 0);
        for k in 0..n - 1 {
            left[order[k].1] += 1;
            let (v, next) = (order[k].0, order[k + 1].0);
            if v == next || k + 1 < min_leaf || n - k - 1 < min_leaf {
                continue;
            }
            let (gain, ratio) = gain_ratio(counts, &left);
            if gain <= 1e-12 {
                continue;
            }
            // strict improvement keeps the earliest feature and threshold on ties
            if best.as_ref().map_or(true, |b| ratio > b.ratio) {
                best = Some(Candidate { feature: f, threshold: 0.5 * (v + next), ratio });
            }
        }
    }
    best
}

fn class_counts(data: Labeled<'_>, rows: &[usize]) -> Vec<usize> {
    let mut counts = vec![0usize; data.n_classes];
    rows.iter().for_each(|&i| counts[data.targets[i]] += 1);
    counts
}

/// Entropy left in `rows` after their best single split (or none).
fn entropy_after_best(data: Labeled<'_>, cfg: &TreeConfig, rows: &[usize]) -> f64 {
    let counts = class_counts(data, rows);
    let h = entropy(&counts, rows.len());
    if rows.len() < 2 * cfg.min_leaf.max(1) {
        return h;
    }
    match best_split(data, cfg, rows, &counts) {
        None => h,
        Some(c) => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| data.features.row(i)[c.feature] <= c.threshold);
            let n = rows.len() as f64;
            let side = |s: &[usize]| s.len() as f64 / n * entropy(&class_counts(data, s), s.len());
            side(&l) + side(&r)
        }
    }
}

/// Fallback when every single split has zero gain (XOR-like labels): picks
/// the split whose best follow-up splits reduce entropy the most. Returns
/// `None` unless that two-level gain is positive.
fn lookahead_split(data: Labeled<'_>, cfg: &TreeConfig, rows: &[usize], counts: &[usize]) -> Option<Candidate> {
    let n = rows.len();
    let min_leaf = cfg.min_leaf.max(1);
    let h = entropy(counts, n);
    let mut best: Option<(Candidate, f64)> = None;
    for f in 0..data.features.cols() {
        let mut vals: Vec<f64> = rows.iter().map(|&i| data.features.row(i)[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let threshold = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| data.features.row(i)[f] <= threshold);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let after = (l.len() as f64 * entropy_after_best(data, cfg, &l)
                + r.len() as f64 * entropy_after_best(data, cfg, &r))
                / n as f64;
            let gain = h - after;
            if gain > 1e-12 && best.as_ref().map_or(true, |(_, g)| gain > *g) {
                best = Some((Candidate { feature: f, threshold, ratio: 0.0 }, gain));
            }
        }
    }
    best.map(|(c, _)| c)
}

impl DecisionTree {
    pub fn leaf_for(&self, x: &[f64]) -> &[f64] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { distribution } => return distribution,
                TreeNode::Split { feature, threshold, left, right } => {
                    id = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, id: usize) -> usize {
            match &t.nodes[id] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }

    fn scores(&self, x: &Tensor, k: usize) -> Tensor {
        let mut out = Vec::with_capacity(x.rows() * k);
        for row in x.iter_rows() {
            out.extend_from_slice(self.leaf_for(row));
        }
        Tensor::new(vec![x.rows(), k], out).expect("shape")
    }
}

// ---------------------------------------------------------------- DNN

/// Softmax MLP trained with cross-entropy and Adam on shuffled minibatches.
pub fn train_dnn(data: Labeled<'_>, cfg: &DnnConfig, seed: u64) -> Result<Network> {
    if cfg.batch_size == 0 {
        return Err(Error::config("dnn batch_size must be positive"));
    }
    let spec = NetworkSpec::classifier(data.features.cols(), &cfg.widths, data.n_classes, &BlockOptions::default());
    let mut net = Network::build(&spec, seed)?;
    let adam_cfg = AdamConfig { lr: cfg.lr, beta1: 0.9, beta2: 0.999 };
    let mut opt = Adam::new(adam_cfg, net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.features.rows()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let x = data.features.select_rows(batch);
            let mut onehot = Tensor::zeros(&[batch.len(), data.n_classes]);
            for (r, &i) in batch.iter().enumerate() {
                onehot.data_mut()[r * data.n_classes + data.targets[i]] = 1.0;
            }
            let mut g = Graph::new();
            let bound = net.bind(&mut g, true);
            let xv = g.constant(x);
            let logits = net.forward(&mut g, &bound, xv, Mode::Train)?;
            let logp = g.log_softmax_last(logits)?;
            let y = g.constant(onehot);
            let picked = g.mul(logp, y)?;
            let total = g.sum(picked)?;
            let loss = g.scale(total, -1.0 / batch.len() as f64)?;
            let grads = g.grad_values(loss, bound.vars())?;
            opt.step(net.params_mut(), &grads)?;
        }
    }
    Ok(net)
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

// ---------------------------------------------------------------- interface

#[derive(Clone, Debug)]
pub enum Trained {
    Svm(LinearSvm),
    Dt(DecisionTree),
    Dnn(Network),
}

/// A trained detector with its class names.
#[derive(Clone, Debug)]
pub struct IdsModel {
    pub kind: ModelKind,
    pub classes: Vec<String>,
    pub seed: u64,
    pub input_dim: usize,
    pub trained: Trained,
}

pub fn train(kind: ModelKind, data: Labeled<'_>, classes: &[String], cfg: &IdsConfig, seed: u64) -> Result<IdsModel> {
    if classes.len() != data.n_classes {
        return Err(Error::contract(format!("{} class names for {} classes", classes.len(), data.n_classes)));
    }
    let trained = match kind {
        ModelKind::Svm => Trained::Svm(train_svm(data, &cfg.svm)?),
        ModelKind::Dt => Trained::Dt(train_tree(data, &cfg.tree)?),
        ModelKind::Dnn => Trained::Dnn(train_dnn(data, &cfg.dnn, seed)?),
    };
    Ok(IdsModel { kind, classes: classes.to_vec(), seed, input_dim: data.features.cols(), trained })
}

/// Index of the largest value; the first wins on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if v.partial_cmp(&row[best]) == Some(Ordering::Greater) {
            best = i;
        }
    }
    best
}

impl IdsModel {
    /// One score per class per row: SVM margins, tree leaf frequencies or
    /// softmax probabilities.
    pub fn predict_scores(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.input_dim {
            return Err(Error::contract(format!(
                "rows of width {:?} for a model expecting {}",
                x.shape().get(1),
                self.input_dim
            )));
        }
        Ok(match &self.trained {
            Trained::Svm(m) => m.scores(x),
            Trained::Dt(t) => t.scores(x, self.classes.len()),
            Trained::Dnn(n) => softmax_rows(&n.predict(x)?),
        })
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let s = self.predict_scores(x)?;
        Ok(s.iter_rows().map(argmax).collect())
    }

    /// Scalar "not normal" score per row for ranking unseen attacks: the
    /// best attack margin minus the normal margin for the SVM, one minus the
    /// normal probability otherwise.
    pub fn anomaly_scores(&self, x: &Tensor, normal: usize) -> Result<Vec<f64>> {
        let s = self.predict_scores(x)?;
        Ok(s.iter_rows()
            .map(|row| match self.kind {
                ModelKind::Svm => {
                    let attack = row
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != normal)
                        .map(|(_, &v)| v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    attack - row[normal]
                }
                _ => 1.0 - row[normal],
            })
            .collect())
    }

    pub fn to_file(&self) -> ModelFile {
        let params = match &self.trained {
            Trained::Svm(m) => SavedParams::Svm(m.clone()),
            Trained::Dt(t) => SavedParams::Dt(t.clone()),
            Trained::Dnn(n) => SavedParams::Dnn(n.to_checkpoint()),
        };
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            kind: self.kind,
            classes: self.classes.clone(),
            seed: self.seed,
            input_dim: self.input_dim,
            params,
        }
    }

    pub fn from_file(f: ModelFile) -> Result<Self> {
        if f.version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!("model format version {} (expected {MODEL_FORMAT_VERSION})", f.version)));
        }
        let trained = match f.params {
            SavedParams::Svm(m) => Trained::Svm(m),
            SavedParams::Dt(t) => Trained::Dt(t),
            SavedParams::Dnn(ck) => Trained::Dnn(Network::from_checkpoint(&ck)?),
        };
        Ok(IdsModel { kind: f.kind, classes: f.classes, seed: f.seed, input_dim: f.input_dim, trained })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        IdsModel::from_file(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Rows of `row_id, true, predicted, score_<class>...`.
    pub fn write_predictions<W: std::io::Write>(&self, out: W, x: &Tensor, truth: &[String]) -> Result<()> {
        let scores = self.predict_scores(x)?;
        if truth.len() != scores.rows() {
            return Err(Error::shape("predictions", format!("{} labels for {} rows", truth.len(), scores.rows())));
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row_id".to_string(), "true_label".into(), "predicted_label".into()];
        header.extend(self.classes.iter().map(|c| format!("score_{c}")));
        w.write_record(&header)?;
        for (i, row) in scores.iter_rows().enumerate() {
            let mut rec = vec![i.to_string(), truth[i].clone(), self.classes[argmax(row)].clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SavedParams {
    Svm(LinearSvm),
    Dt(DecisionTree),
    Dnn(Checkpoint),
}

/// Versioned on-disk form of an [`IdsModel`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub kind: ModelKind,
    pub classes: Vec<String>,
    pub seed: u64,
    pub input_dim: usize,
    pub params: SavedParams,
}
