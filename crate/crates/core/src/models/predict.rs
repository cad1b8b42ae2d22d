use serde::{Deserialize, Serialize};

use super::arch::ModelKind;
use super::network::Network;
use crate::error::{Error, Result};
use crate::pipeline::Window;
use crate::scalar::Scalar;
use crate::weibull::{expected_rul, failure_prob, transform_outputs, HeadOutputs, WeibullParams};

/// One model output per window. RUL values are in window units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord<F> {
    pub device_id: String,
    pub end_time: usize,
    /// Probability of failure within the horizon; absent for RUL-RNN.
    pub fp_prob: Option<F>,
    /// Ranking score for failure prediction (higher is more failure-likely).
    /// A strictly increasing function of `fp_prob` when that exists, and
    /// `-rul_hat` for RUL-RNN.
    pub fp_score: F,
    /// Predicted remaining life clipped to `[0, max_rul]`; absent for FP-RNN.
    pub rul_hat: Option<F>,
    pub weibull: Option<WeibullParams<F>>,
}

fn clip<F: Scalar>(v: F, max_rul: F) -> F {
    v.max(F::zero()).min(max_rul)
}

/// Predictions for `windows` at failure horizon `tau` (window units).
pub fn predict<F: Scalar>(net: &Network<F>, windows: &[Window], tau: F, max_rul: F) -> Result<Vec<PredictionRecord<F>>> {
    if !(tau > F::zero()) || !(max_rul > F::zero()) {
        return Err(Error::config("prediction horizon and max_rul must be > 0"));
    }
    let refs: Vec<&Window> = windows.iter().collect();
    let raw = net.forward(&refs)?;
    let mut out = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let mut rec = PredictionRecord {
            device_id: w.device_id.clone(),
            end_time: w.end_time,
            fp_prob: None,
            fp_score: F::zero(),
            rul_hat: None,
            weibull: None,
        };
        match net.kind {
            ModelKind::Dw => {
                let o = raw.weibull.as_ref().expect("dw head")[i];
                let p = transform_outputs(HeadOutputs { o1: o[0], o2: o[1] });
                rec.fp_prob = Some(failure_prob(&p, tau)?);
                // cumulative hazard on log scale, increasing in fp_prob
                rec.fp_score = p.k * (tau.ln() - p.lambda.ln());
                rec.rul_hat = Some(clip(expected_rul(&p), max_rul));
                rec.weibull = Some(p);
            }
            ModelKind::Mtl | ModelKind::FpRnn => {
                let z = raw.fp_logits.as_ref().expect("fp head")[i];
                rec.fp_prob = Some(super::network::fp_prob_from_logits(z));
                rec.fp_score = z[1] - z[0];
                rec.rul_hat = raw.rul.as_ref().map(|r| clip(r[i], max_rul));
            }
            ModelKind::RulRnn => {
                let r = clip(raw.rul.as_ref().expect("rul head")[i], max_rul);
                rec.rul_hat = Some(r);
                rec.fp_score = -r;
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Column order of the predictions CSV.
pub const PREDICTION_COLUMNS: [&str; 7] = ["device_id", "end_time", "fp_prob", "fp_score", "rul_hat", "lambda", "k"];

pub fn write_predictions_csv<F: Scalar>(path: &std::path::Path, records: &[PredictionRecord<F>]) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(PREDICTION_COLUMNS)?;
    let opt = |v: Option<F>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        out.write_record([
            r.device_id.clone(),
            r.end_time.to_string(),
            opt(r.fp_prob),
            r.fp_score.to_string(),
            opt(r.rul_hat),
            opt(r.weibull.map(|p| p.lambda)),
            opt(r.weibull.map(|p| p.k)),
        ])?;
    }
    out.flush()?;
    Ok(())
}
