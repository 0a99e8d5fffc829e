//! Evaluation instruments: confusion-matrix metrics, ROC/AUROC and
//! TPR at a fixed FPR, binned JS divergence, unbiased RBF MMD² and
//! nearest-neighbour alignment diagnostics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    /// Counts from binary predictions against binary truth.
    pub fn from_binary(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::contract("prediction and label counts differ"));
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => cm.tp += 1,
                (false, false) => cm.tn += 1,
                (true, false) => cm.fp += 1,
                (false, true) => cm.fn_ += 1,
            }
        }
        Ok(cm)
    }

    /// One-vs-rest counts for `class` over multi-class labels.
    pub fn one_vs_rest(predicted: &[usize], actual: &[usize], class: usize) -> Result<Self> {
        let p: Vec<bool> = predicted.iter().map(|&c| c == class).collect();
        let a: Vec<bool> = actual.iter().map(|&c| c == class).collect();
        Self::from_binary(&p, &a)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Accuracy, precision, recall and F1. A zero denominator yields 0 and sets
/// the matching flag.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
    pub f1_degenerate: bool,
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::contract("confusion matrix is empty"));
    }
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let ratio = |num: f64, den: f64| if den == 0.0 { (0.0, true) } else { (num / den, false) };
    let (precision, pd) = ratio(tp, tp + fp);
    let (recall, rd) = ratio(tp, tp + fn_);
    let (f1, fd) = ratio(2.0 * precision * recall, precision + recall);
    Ok(ClassificationMetrics {
        accuracy: (tp + tn) / total as f64,
        precision,
        recall,
        f1,
        precision_degenerate: pd,
        recall_degenerate: rd,
        f1_degenerate: fd,
    })
}

/// Fraction of exact label matches.
pub fn accuracy(predicted: &[usize], actual: &[usize]) -> Result<f64> {
    if predicted.len() != actual.len() || actual.is_empty() {
        return Err(Error::contract("accuracy needs equal, non-empty label vectors"));
    }
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(hits as f64 / actual.len() as f64)
}

/// Unweighted mean of one-vs-rest F1 over `classes`.
pub fn macro_f1(predicted: &[usize], actual: &[usize], classes: &[usize]) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::contract("macro F1 needs at least one class"));
    }
    let mut sum = 0.0;
    for &c in classes {
        sum += classification_metrics(&ConfusionMatrix::one_vs_rest(predicted, actual, c)?)?.f1;
    }
    Ok(sum / classes.len() as f64)
}

/// ROC points from a descending threshold sweep, with tied scores
/// collapsed into one step. Starts at (0, 0) and ends at (1, 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    /// Score threshold reached at each point; the first is +inf, stored as `None`.
    pub thresholds: Vec<Option<f64>>,
    positives: u64,
    negatives: u64,
    /// `sum over steps of dFP * (TP_before + TP_after)`, exact in integers.
    twice_area_counts: u128,
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::contract("score and label counts differ"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let p = labels.iter().filter(|&&l| l).count() as u64;
    let n = labels.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(Error::contract("both classes must be present"));
    }
    Ok((p, n))
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let mut thresholds = vec![None];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area = 0u128;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area += (fp - fp0) as u128 * (tp0 + tp) as u128;
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
        thresholds.push(Some(s));
    }
    Ok(RocCurve {
        fpr,
        tpr,
        thresholds,
        positives: pos,
        negatives: neg,
        twice_area_counts: area,
    })
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn auroc(&self) -> f64 {
        self.twice_area_counts as f64 / (2.0 * self.positives as f64 * self.negatives as f64)
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.fpr.iter().copied().zip(self.tpr.iter().copied())
    }
}

/// Trapezoidal AUROC over the threshold-swept ROC.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(roc_curve(scores, labels)?.auroc())
}

/// Mann-Whitney form: the fraction of positive/negative pairs where the
/// positive scores higher, ties counted one half. Computed from midranks.
pub fn auroc_rank(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives, with 1-based midranks
    let mut twice_rank_sum = 0u128;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j) as u128;
        let hits = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        twice_rank_sum += twice_mid * hits;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2.0 * p as f64 * n as f64))
}

/// TPR at `fpr_cap`: the highest TPR among points with FPR at or below the
/// cap, interpolated toward the next point when no point sits on the cap.
pub fn tpr_at_fpr(roc: &RocCurve, fpr_cap: f64) -> Result<f64> {
    if !(fpr_cap > 0.0 && fpr_cap < 1.0) {
        return Err(Error::contract("fpr_cap must lie in (0, 1)"));
    }
    let mut best = 0;
    for (k, &f) in roc.fpr.iter().enumerate() {
        if f <= fpr_cap {
            best = k;
        } else {
            break;
        }
    }
    let (f0, t0) = (roc.fpr[best], roc.tpr[best]);
    if f0 == fpr_cap || best + 1 >= roc.fpr.len() {
        return Ok(t0);
    }
    let (f1, t1) = (roc.fpr[best + 1], roc.tpr[best + 1]);
    Ok(t0 + (t1 - t0) * (fpr_cap - f0) / (f1 - f0))
}

/// Two histograms on shared bins plus their binwise mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramDist {
    pub edges: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub m: Vec<f64>,
}

impl HistogramDist {
    pub fn from_probs(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() || p.is_empty() {
            return Err(Error::contract("histograms must share a non-empty bin set"));
        }
        for h in [&p, &q] {
            if h.iter().any(|&v| v < 0.0) || (h.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::contract("histogram must be a probability vector"));
            }
        }
        let m = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let edges = (0..=p.len()).map(|i| i as f64).collect();
        Ok(HistogramDist { edges, p, q, m })
    }

    /// Bins both samples on `bins` equal-width bins over `[lo, hi]`; values
    /// outside are assigned to the edge bins.
    pub fn from_samples(x: &[f64], y: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(hi > lo) || x.is_empty() || y.is_empty() {
            return Err(Error::contract("invalid histogram request"));
        }
        let count = |s: &[f64]| {
            let mut c = vec![0u64; bins];
            for &v in s {
                let k = (((v - lo) / (hi - lo)) * bins as f64).floor();
                let k = if k.is_nan() { 0 } else { (k.max(0.0) as usize).min(bins - 1) };
                c[k] += 1;
            }
            let n = s.len() as f64;
            c.into_iter().map(|k| k as f64 / n).collect::<Vec<f64>>()
        };
        let p = count(x);
        let q = count(y);
        let m = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let edges = (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect();
        Ok(HistogramDist { edges, p, q, m })
    }
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

/// Natural-log JS divergence, clamped to `[0, ln 2]` against rounding.
pub fn js_divergence(h: &HistogramDist) -> f64 {
    let v = 0.5 * kl_to_mixture(&h.p, &h.m) + 0.5 * kl_to_mixture(&h.q, &h.m);
    v.clamp(0.0, std::f64::consts::LN_2)
}

pub const JS_BINS: usize = 64;

/// Per-feature JS divergence on 64 bins over `[-1, 1]`, averaged.
pub fn binned_js(x: &Tensor, y: &Tensor) -> Result<f64> {
    check_width(x, y)?;
    let d = x.cols();
    let mut total = 0.0;
    for j in 0..d {
        let a: Vec<f64> = x.iter_rows().map(|r| r[j]).collect();
        let b: Vec<f64> = y.iter_rows().map(|r| r[j]).collect();
        total += js_divergence(&HistogramDist::from_samples(&a, &b, JS_BINS, -1.0, 1.0)?);
    }
    Ok(total / d as f64)
}

fn check_width(x: &Tensor, y: &Tensor) -> Result<()> {
    if x.shape().len() != 2 || y.shape().len() != 2 || x.cols() != y.cols() {
        return Err(Error::contract(format!(
            "sample matrices must share a width, got {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::contract("sample matrices must be non-empty"));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sorted_rows(x: &Tensor) -> Vec<&[f64]> {
    let mut rows: Vec<&[f64]> = x.iter_rows().collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    rows
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    /// The U-statistic before clipping.
    pub raw: f64,
    /// `max(raw, 0)`.
    pub value: f64,
    pub bandwidth: f64,
}

/// Unbiased MMD² with `k(a, b) = exp(-|a - b|² / (2 h²))`.
///
/// Rows are put in a canonical order first, so the estimate does not depend
/// on the order of either sample, bit for bit.
pub fn mmd2_unbiased(x: &Tensor, y: &Tensor, bandwidth: f64) -> Result<MmdEstimate> {
    check_width(x, y)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::contract("bandwidth must be positive"));
    }
    if x.rows() < 2 || y.rows() < 2 {
        return Err(Error::contract("MMD needs at least two rows per sample"));
    }
    let xs = sorted_rows(x);
    let ys = sorted_rows(y);
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = |a: &[f64], b: &[f64]| (-gamma * sq_dist(a, b)).exp();
    let within = |s: &[&[f64]]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                acc += k(s[i], s[j]);
            }
        }
        2.0 * acc / (s.len() * (s.len() - 1)) as f64
    };
    let kxx = within(&xs);
    let kyy = within(&ys);
    let mut kxy = 0.0;
    for a in &xs {
        for b in &ys {
            kxy += k(a, b);
        }
    }
    kxy /= (xs.len() * ys.len()) as f64;
    let raw = kxx + kyy - 2.0 * kxy;
    Ok(MmdEstimate {
        raw,
        value: raw.max(0.0),
        bandwidth,
    })
}

pub const MEDIAN_HEURISTIC_CAP: usize = 2000;

/// Median pairwise Euclidean distance over the pooled sample. Pools larger
/// than 2,000 rows are thinned to evenly spaced rows of the canonical order.
pub fn median_heuristic(x: &Tensor, y: &Tensor) -> Result<f64> {
    check_width(x, y)?;
    let mut pooled = sorted_rows(x);
    pooled.extend(sorted_rows(y));
    let pooled: Vec<&[f64]> = if pooled.len() > MEDIAN_HEURISTIC_CAP {
        let n = pooled.len();
        (0..MEDIAN_HEURISTIC_CAP)
            .map(|i| pooled[i * n / MEDIAN_HEURISTIC_CAP])
            .collect()
    } else {
        pooled
    };
    let mut d = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return Err(Error::contract("median heuristic needs at least two rows"));
    }
    d.sort_by(f64::total_cmp);
    let h = percentile_sorted(&d, 0.5);
    Ok(if h > 0.0 { h } else { 1.0 })
}

/// MMD² with the median-heuristic bandwidth.
pub fn mmd2_median(x: &Tensor, y: &Tensor) -> Result<MmdEstimate> {
    let h = median_heuristic(x, y)?;
    mmd2_unbiased(x, y, h)
}

/// Percentile of sorted values by linear interpolation between closest
/// ranks (`pos = q (n - 1)`).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Distance from each row of `query` to its nearest row of `reference`,
/// optionally skipping the same index (for within-sample neighbours).
pub fn nearest_distances(query: &Tensor, reference: &Tensor, skip_self: bool) -> Result<Vec<f64>> {
    check_width(query, reference)?;
    let mut out = Vec::with_capacity(query.rows());
    for (i, q) in query.iter_rows().enumerate() {
        let mut best = f64::INFINITY;
        for (j, r) in reference.iter_rows().enumerate() {
            if skip_self && i == j {
                continue;
            }
            best = best.min(sq_dist(q, r));
        }
        out.push(best.sqrt());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpsMode {
    /// `factor` times the median real-to-real nearest-neighbour distance.
    Adaptive { factor: f64 },
    Fixed { eps: f64 },
}

impl Default for EpsMode {
    fn default() -> Self {
        EpsMode::Adaptive { factor: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub knn_p50: f64,
    pub knn_p95: f64,
    pub mmd2: f64,
    pub mmd2_raw: f64,
    pub frac_lt_eps: f64,
    pub eps: f64,
}

/// Synthetic-to-real nearest-neighbour quantiles and the fraction of
/// synthetic rows within `eps` of a real row (distance at most `eps`).
/// The MMD fields are left at 0; see [`alignment_report`].
pub fn knn_alignment(synthetic: &Tensor, real: &Tensor, eps_mode: EpsMode) -> Result<AlignmentReport> {
    let mut d = nearest_distances(synthetic, real, false)?;
    let eps = match eps_mode {
        EpsMode::Fixed { eps } => eps,
        EpsMode::Adaptive { factor } => {
            if real.rows() < 2 {
                0.0
            } else {
                let mut rr = nearest_distances(real, real, true)?;
                rr.sort_by(f64::total_cmp);
                factor * percentile_sorted(&rr, 0.5)
            }
        }
    };
    let close = d.iter().filter(|&&v| v <= eps).count();
    d.sort_by(f64::total_cmp);
    Ok(AlignmentReport {
        knn_p50: percentile_sorted(&d, 0.5),
        knn_p95: percentile_sorted(&d, 0.95),
        mmd2: 0.0,
        mmd2_raw: 0.0,
        frac_lt_eps: close as f64 / d.len() as f64,
        eps,
    })
}

/// kNN diagnostics plus median-heuristic MMD².
pub fn alignment_report(synthetic: &Tensor, real: &Tensor, eps_mode: EpsMode) -> Result<AlignmentReport> {
    let mut r = knn_alignment(synthetic, real, eps_mode)?;
    let m = mmd2_median(synthetic, real)?;
    r.mmd2 = m.value;
    r.mmd2_raw = m.raw;
    Ok(r)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::contract("mean of an empty list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}
