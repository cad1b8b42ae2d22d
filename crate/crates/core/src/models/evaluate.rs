use super::arch::ModelKind;
use super::predict::PredictionRecord;
use crate::error::{Error, Result};
use crate::metrics::{default_bin_edges, pr_auc, roc_auc, rul_confusion, rmse, spearman, Curve, EvalReport, ScoredLabel};
use crate::pipeline::Window;
use crate::scalar::Scalar;

/// A report with the curves behind its areas.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub roc: Option<Curve<f64>>,
    pub pr: Option<Curve<f64>>,
}

/// Scores `records` against `windows`. RUL values are multiplied by
/// `unit` (the window size) so RMSE and confusion bins are in raw time
/// units; `max_rul` is in raw units.
pub fn evaluate<F: Scalar>(
    kind: ModelKind,
    records: &[PredictionRecord<F>],
    windows: &[Window],
    unit: f64,
    max_rul: f64,
    bins: usize,
) -> Result<Evaluation> {
    if records.len() != windows.len() {
        return Err(Error::data(format!(
            "{} predictions for {} windows",
            records.len(),
            windows.len()
        )));
    }
    let mut report = EvalReport::default();
    let items: Vec<ScoredLabel<f64>> = records
        .iter()
        .zip(windows)
        .map(|(r, w)| ScoredLabel::new(r.fp_score.as_f64(), w.fp_label))
        .collect();
    let roc = match roc_auc(&items) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("AUC-ROC not reported: {e}");
            None
        }
    };
    let pr = match pr_auc(&items) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("AUC-PR not reported: {e}");
            None
        }
    };
    report.auc_roc = roc.as_ref().map(|c| c.area);
    report.auc_pr = pr.as_ref().map(|c| c.area);
    if kind.has_rul() {
        let (pred, truth): (Vec<f64>, Vec<f64>) = records
            .iter()
            .zip(windows)
            .filter_map(|(r, w)| Some((r.rul_hat?.as_f64() * unit, w.rul_target? * unit)))
            .unzip();
        if !pred.is_empty() {
            report.rmse = Some(rmse(&pred, &truth)?);
            report.confusion = Some(rul_confusion(&pred, &truth, &default_bin_edges(max_rul, bins))?);
        }
        let rul: Vec<f64> = records.iter().filter_map(|r| r.rul_hat.map(|v| v.as_f64())).collect();
        let fp: Vec<f64> = records
            .iter()
            .map(|r| r.fp_prob.map_or(r.fp_score, |p| p).as_f64())
            .collect();
        if rul.len() >= 2 && rul.len() == fp.len() {
            match spearman(&fp, &rul) {
                Ok(s) => report.spearman_consistency = Some(s),
                Err(e) => log::warn!("Spearman consistency not reported: {e}"),
            }
        }
    }
    Ok(Evaluation { report, roc, pr })
}
