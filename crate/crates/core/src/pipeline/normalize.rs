use serde::{Deserialize, Serialize};

use super::SensorSequence;
use crate::error::{Error, Result};

/// Per-feature z-score statistics fit on training devices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    /// Indices of the input columns that are kept.
    pub kept: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub input_dim: usize,
}

impl NormalizationStats {
    pub fn output_dim(&self) -> usize {
        self.kept.len()
    }
}

/// Fits means and population standard deviations over every observation of
/// every sequence, ignoring NaN. Columns with zero variance are dropped.
pub fn fit_normalizer(seqs: &[SensorSequence]) -> Result<NormalizationStats> {
    let d = seqs
        .iter()
        .find(|s| s.censor_time() > 0)
        .map(SensorSequence::dim)
        .ok_or_else(|| Error::data("no observations to fit normalization"))?;
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut n = vec![0usize; d];
    for s in seqs {
        if s.censor_time() > 0 && s.dim() != d {
            return Err(Error::data(format!(
                "device {} has {} features, expected {d}",
                s.device_id,
                s.dim()
            )));
        }
        for obs in &s.observations {
            for (j, &v) in obs.iter().enumerate() {
                if v.is_finite() {
                    sum[j] += v;
                    n[j] += 1;
                }
            }
        }
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| if n[j] > 0 { sum[j] / n[j] as f64 } else { 0.0 })
        .collect();
    for s in seqs {
        for obs in &s.observations {
            for (j, &v) in obs.iter().enumerate() {
                if v.is_finite() {
                    sum_sq[j] += (v - mean[j]).powi(2);
                }
            }
        }
    }
    let mut stats = NormalizationStats {
        kept: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
        input_dim: d,
    };
    for j in 0..d {
        let std = if n[j] > 0 { (sum_sq[j] / n[j] as f64).sqrt() } else { 0.0 };
        if std > 1e-12 * mean[j].abs().max(1.0) {
            stats.kept.push(j);
            stats.mean.push(mean[j]);
            stats.std.push(std);
        } else {
            log::info!("dropping constant feature column {j}");
        }
    }
    if stats.kept.is_empty() {
        return Err(Error::data("every feature column is constant"));
    }
    Ok(stats)
}

/// Z-scores the kept columns. Missing values map to 0, the training mean.
pub fn apply_normalizer(seq: &SensorSequence, stats: &NormalizationStats) -> Result<SensorSequence> {
    if seq.censor_time() > 0 && seq.dim() != stats.input_dim {
        return Err(Error::data(format!(
            "device {} has {} features, normalizer expects {}",
            seq.device_id,
            seq.dim(),
            stats.input_dim
        )));
    }
    let observations = seq
        .observations
        .iter()
        .map(|obs| {
            stats
                .kept
                .iter()
                .enumerate()
                .map(|(k, &j)| {
                    let v = obs[j];
                    if v.is_finite() {
                        (v - stats.mean[k]) / stats.std[k]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    SensorSequence::new(seq.device_id.clone(), observations, seq.failed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(rows: Vec<Vec<f64>>) -> SensorSequence {
        SensorSequence::new("a", rows, true).unwrap()
    }

    #[test]
    fn population_moments_and_constant_drop() {
        let s = seq(vec![vec![1.0, 5.0, 2.0], vec![3.0, 5.0, 4.0], vec![5.0, 5.0, 9.0]]);
        let stats = fit_normalizer(std::slice::from_ref(&s)).unwrap();
        assert_eq!(stats.kept, vec![0, 2]);
        assert_eq!(stats.mean[0], 3.0);
        assert!((stats.std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let z = apply_normalizer(&s, &stats).unwrap();
        assert_eq!(z.dim(), 2);
        assert!((z.observations[0][0] + (1.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nan_is_ignored_and_mapped_to_zero() {
        let s = seq(vec![vec![f64::NAN, 1.0], vec![2.0, 2.0], vec![4.0, 3.0]]);
        let stats = fit_normalizer(std::slice::from_ref(&s)).unwrap();
        assert_eq!(stats.mean[0], 3.0);
        assert_eq!(stats.std[0], 1.0);
        let z = apply_normalizer(&s, &stats).unwrap();
        assert_eq!(z.observations[0][0], 0.0);
        assert_eq!(z.observations[2][0], 1.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let stats = fit_normalizer(&[seq(vec![vec![1.0, 2.0], vec![2.0, 3.0]])]).unwrap();
        assert!(apply_normalizer(&seq(vec![vec![1.0]]), &stats).is_err());
        assert!(fit_normalizer(&[]).is_err());
    }

    proptest! {
        #[test]
        fn normalized_training_data_is_standard(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..60)) {
            let s = seq(rows);
            if let Ok(stats) = fit_normalizer(std::slice::from_ref(&s)) {
                let z = apply_normalizer(&s, &stats).unwrap();
                let n = z.censor_time() as f64;
                for k in 0..z.dim() {
                    let m: f64 = z.observations.iter().map(|o| o[k]).sum::<f64>() / n;
                    let v: f64 = z.observations.iter().map(|o| (o[k] - m).powi(2)).sum::<f64>() / n;
                    prop_assert!(m.abs() < 1e-9);
                    prop_assert!((v - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}
