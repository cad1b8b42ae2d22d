//! Evaluation metrics: RMSE, ROC and precision-recall areas, Spearman rank
//! consistency and RUL-binned confusion matrices.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A score (higher means more failure-likely) with its binary label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredLabel<F> {
    pub score: F,
    pub label: bool,
}

impl<F: Scalar> ScoredLabel<F> {
    pub fn new(score: F, label: bool) -> Self {
        Self { score, label }
    }
}

/// Curve points and the area under them.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve<F> {
    /// `(fpr, tpr)` for ROC, `(recall, precision)` for PR.
    pub points: Vec<(F, F)>,
    pub area: F,
}

pub fn rmse<F: Scalar>(predictions: &[F], targets: &[F]) -> Result<F> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::domain(format!(
            "rmse needs equal nonzero lengths, got {} and {}",
            predictions.len(),
            targets.len()
        )));
    }
    let sse: F = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    Ok((sse / F::of(predictions.len() as f64)).sqrt())
}

/// Cumulative (true positive, false positive) counts after each group of
/// tied scores, sweeping the threshold from the highest score down.
fn threshold_sweep<F: Scalar>(items: &[ScoredLabel<F>]) -> Result<Vec<(usize, usize)>> {
    if let Some(bad) = items.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::domain(format!("non-finite score {}", bad.score)));
    }
    let mut sorted: Vec<_> = items.to_vec();
    sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            if sorted[i].label {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    Ok(out)
}

/// ROC curve with trapezoidal area; tied scores move the curve diagonally.
pub fn roc_auc<F: Scalar>(items: &[ScoredLabel<F>]) -> Result<Curve<F>> {
    let pos = items.iter().filter(|s| s.label).count();
    let neg = items.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::domain("roc_auc needs both classes"));
    }
    let (p, n) = (F::of(pos as f64), F::of(neg as f64));
    let mut points = vec![(F::zero(), F::zero())];
    let mut area = F::zero();
    for (tp, fp) in threshold_sweep(items)? {
        let pt = (F::of(fp as f64) / n, F::of(tp as f64) / p);
        let prev = *points.last().unwrap();
        area += (pt.0 - prev.0) * (pt.1 + prev.1) / F::of(2.0);
        points.push(pt);
    }
    Ok(Curve { points, area })
}

/// Precision-recall curve with average-precision area
/// `sum_i (R_i - R_{i-1}) P_i` over distinct thresholds.
pub fn pr_auc<F: Scalar>(items: &[ScoredLabel<F>]) -> Result<Curve<F>> {
    let pos = items.iter().filter(|s| s.label).count();
    if pos == 0 {
        return Err(Error::domain("pr_auc needs at least one positive"));
    }
    let p = F::of(pos as f64);
    let mut points = Vec::new();
    let mut area = F::zero();
    let mut prev_recall = F::zero();
    for (tp, fp) in threshold_sweep(items)? {
        let recall = F::of(tp as f64) / p;
        let precision = F::of(tp as f64) / F::of((tp + fp) as f64);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push((recall, precision));
    }
    Ok(Curve { points, area })
}

/// Ranks starting at 1, ties receiving the mean of the ranks they span.
pub fn average_ranks<F: Scalar>(x: &[F]) -> Vec<F> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![F::zero(); x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        // positions i..=j share rank mean((i+1)..=(j+1))
        let r = F::of((i + j) as f64 / 2.0 + 1.0);
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson<F: Scalar>(x: &[F], y: &[F]) -> Result<F> {
    let n = F::of(x.len() as f64);
    let mx = x.iter().copied().sum::<F>() / n;
    let my = y.iter().copied().sum::<F>() / n;
    let (mut sxy, mut sxx, mut syy) = (F::zero(), F::zero(), F::zero());
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == F::zero() || syy == F::zero() {
        return Err(Error::domain("correlation of a constant input"));
    }
    // sqrt(s * s) == s exactly, so perfectly reversed ranks give exactly -1
    Ok((sxy / (sxx * syy).sqrt()).max(-F::one()).min(F::one()))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman<F: Scalar>(x: &[F], y: &[F]) -> Result<F> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::domain(format!(
            "spearman needs equal lengths >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Counts of (true bin, predicted bin) pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub edges: Vec<f64>,
    /// `counts[true_bin][predicted_bin]`.
    pub counts: Vec<Vec<usize>>,
    /// Values that fell outside the edges and were moved to a boundary bin.
    pub clipped: usize,
}

impl ConfusionMatrix {
    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

/// `bins` equal-width bins over `[0, max_rul]`.
pub fn default_bin_edges(max_rul: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| max_rul * i as f64 / bins as f64).collect()
}

fn bin_of(edges: &[f64], v: f64, clipped: &mut usize) -> usize {
    let last = edges.len() - 2;
    if v < edges[0] {
        *clipped += 1;
        return 0;
    }
    if v > edges[last + 1] {
        *clipped += 1;
        return last;
    }
    // first edge strictly greater than v, minus one; the top edge is closed
    let i = edges.partition_point(|&e| e <= v);
    i.saturating_sub(1).min(last)
}

pub fn rul_confusion<F: Scalar>(pred: &[F], truth: &[F], edges: &[f64]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::domain(format!(
            "rul_confusion: {} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain(format!(
            "confusion edges must be strictly increasing, got {edges:?}"
        )));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![vec![0; bins]; bins];
    let mut clipped = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        let r = bin_of(edges, t.as_f64(), &mut clipped);
        let c = bin_of(edges, p.as_f64(), &mut clipped);
        counts[r][c] += 1;
    }
    if clipped > 0 {
        log::warn!("rul_confusion: {clipped} values outside [{}, {}] clipped", edges[0], edges[bins]);
    }
    Ok(ConfusionMatrix {
        edges: edges.to_vec(),
        counts,
        clipped,
    })
}

/// Metrics for one model on one split. Fields a model cannot produce are
/// left out.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_roc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_pr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spearman_consistency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}
