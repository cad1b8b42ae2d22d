//! Synthetic Weibull degradation data with known ground truth.
//!
//! Each device draws a covariate `z ~ N(0, 1)`, sets `lambda = exp(a z + b)`
//! (in window units) and a shared shape `k`, and samples its failure time by
//! inverse CDF. Every observation is `z v + noise` for a loading vector `v`
//! drawn once per dataset, so the covariate is recoverable from any window.
//! Censoring times are `lambda G` with `G ~ U(0, g_max)`; `g_max` is solved
//! so that the expected censored share equals the requested fraction for
//! every covariate value.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SensorSequence;
use crate::error::{Error, Result};
use crate::weibull::{sample, WeibullParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_devices: usize,
    pub dim: usize,
    /// Observations per window; event times are scaled by this.
    pub w: usize,
    pub k: f64,
    /// Slope of `ln lambda` on the covariate.
    pub a: f64,
    /// Intercept of `ln lambda`.
    pub b: f64,
    pub noise_sd: f64,
    pub censor_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_devices: 2000,
            dim: 4,
            w: 4,
            k: 1.8,
            a: 0.5,
            b: 20f64.ln(),
            noise_sd: 0.5,
            censor_fraction: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 || self.dim == 0 || self.w == 0 {
            return Err(Error::config("n_devices, dim and w must be >= 1"));
        }
        if !(self.k > 0.0) || !self.a.is_finite() || !self.b.is_finite() || !(self.noise_sd >= 0.0) {
            return Err(Error::config("synthetic k must be > 0, a and b finite, noise_sd >= 0"));
        }
        if !(0.0..1.0).contains(&self.censor_fraction) {
            return Err(Error::config("censor_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Ground truth for one synthetic device, times in window units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub device_id: String,
    pub lambda: f64,
    pub k: f64,
    /// Sampled failure time, whether or not it was observed.
    pub event_time: f64,
    /// Observed time: the failure time, or the censoring time if earlier.
    pub observed_time: f64,
    pub failed: bool,
}

impl SynthTruth {
    pub fn params(&self) -> WeibullParams<f64> {
        WeibullParams {
            lambda: self.lambda,
            k: self.k,
        }
    }
}

/// `(1/g) * integral_0^g exp(-s^k) ds`, the censored share when
/// `C = lambda * U(0, g)`.
fn censored_share(g: f64, k: f64) -> f64 {
    const N: usize = 2000;
    let h = g / N as f64;
    let f = |s: f64| (-s.powf(k)).exp();
    let mut acc = f(0.0) + f(g);
    for i in 1..N {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    acc * h / 3.0 / g
}

/// Upper limit of the censoring multiplier giving the requested share.
pub fn censor_scale(fraction: f64, k: f64) -> f64 {
    let (mut lo, mut hi) = (1e-6f64.ln(), 1e6f64.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if censored_share(mid.exp(), k) > fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Generates `(sequences, truth)`. Sequence length is `w + max(1, round(e w))`
/// observations for observed time `e`, so the first landmark window sees
/// exactly `(c_p - w) / w` window units of remaining time.
pub fn synth_weibull(cfg: &SynthConfig) -> Result<(Vec<SensorSequence>, Vec<SynthTruth>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let loading: Vec<f64> = (0..cfg.dim).map(|_| std_normal.sample(&mut rng)).collect();
    let g_max = (cfg.censor_fraction > 0.0).then(|| censor_scale(cfg.censor_fraction, cfg.k));
    let w = cfg.w as f64;
    let mut seqs = Vec::with_capacity(cfg.n_devices);
    let mut truth = Vec::with_capacity(cfg.n_devices);
    for i in 0..cfg.n_devices {
        let z = std_normal.sample(&mut rng);
        let params = WeibullParams::new((cfg.a * z + cfg.b).exp(), cfg.k)?;
        let event_time = sample(&params, rng.sample(Open01))?;
        let censor_time = g_max.map(|g| params.lambda * g * rng.random::<f64>());
        let (observed_time, failed) = match censor_time {
            Some(c) if c < event_time => (c, false),
            _ => (event_time, true),
        };
        let len = cfg.w + ((observed_time * w).round() as usize).max(1);
        let observations = (0..len)
            .map(|_| {
                loading
                    .iter()
                    .map(|v| z * v + cfg.noise_sd * std_normal.sample(&mut rng))
                    .collect()
            })
            .collect();
        let device_id = format!("syn{i:06}");
        seqs.push(SensorSequence::new(device_id.clone(), observations, failed)?);
        truth.push(SynthTruth {
            device_id,
            lambda: params.lambda,
            k: params.k,
            event_time,
            observed_time,
            failed,
        });
    }
    Ok((seqs, truth))
}

pub fn write_truth_csv(path: &std::path::Path, truth: &[SynthTruth]) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    for t in truth {
        out.serialize(t)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_truth_csv(path: &std::path::Path) -> Result<Vec<SynthTruth>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weibull::weibull_eval;

    fn small(n: usize, censor: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            n_devices: n,
            censor_fraction: censor,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn censored_share_matches_quadrature_limits() {
        assert!((censored_share(1e-6, 1.8) - 1.0).abs() < 1e-9);
        // k = 1: (1 - e^{-g}) / g
        let g = 2.0;
        assert!((censored_share(g, 1.0) - (1.0 - (-g).exp()) / g).abs() < 1e-12);
        let s = censor_scale(0.3, 1.8);
        assert!((censored_share(s, 1.8) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn zero_censoring_means_all_failed() {
        let (seqs, truth) = synth_weibull(&small(300, 0.0, 1)).unwrap();
        assert!(seqs.iter().all(|s| s.failed));
        assert!(truth.iter().all(|t| t.event_time == t.observed_time));
    }

    #[test]
    fn deterministic_under_seed() {
        let a = synth_weibull(&small(50, 0.3, 9)).unwrap();
        let b = synth_weibull(&small(50, 0.3, 9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.1, synth_weibull(&small(50, 0.3, 10)).unwrap().1);
    }

    #[test]
    fn censored_share_near_target() {
        let (seqs, truth) = synth_weibull(&small(10_000, 0.3, 4)).unwrap();
        let share = seqs.iter().filter(|s| !s.failed).count() as f64 / 1e4;
        assert!((share - 0.3).abs() < 0.02, "{share}");
        assert_eq!(truth.len(), 10_000);
        for (s, t) in seqs.iter().zip(&truth) {
            assert_eq!(s.censor_time(), 4 + ((t.observed_time * 4.0).round() as usize).max(1));
            assert_eq!(s.failed, t.failed);
            assert!(t.observed_time <= t.event_time);
        }
    }

    /// Probability-integral transform: F(T; lambda_i, k) is U(0,1) across
    /// devices, checked per covariate stratum with the Kolmogorov distance.
    #[test]
    fn failure_times_follow_weibull_per_stratum() {
        let (_, truth) = synth_weibull(&SynthConfig { dim: 1, ..small(40_000, 0.0, 5) }).unwrap();
        let mut sorted: Vec<_> = truth.iter().collect();
        sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        for stratum in sorted.chunks(10_000) {
            let mut u: Vec<f64> = stratum
                .iter()
                .map(|t| weibull_eval(t.event_time, &t.params()).unwrap().cdf)
                .collect();
            u.sort_by(f64::total_cmp);
            let n = u.len() as f64;
            let ks = u
                .iter()
                .enumerate()
                .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
                .fold(0.0, f64::max);
            assert!(ks < 0.02, "ks {ks}");
        }
        // all devices pooled
        let mut u: Vec<f64> = truth
            .iter()
            .map(|t| weibull_eval(t.event_time, &t.params()).unwrap().cdf)
            .collect();
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "ks {ks}");
    }

    #[test]
    fn truth_csv_round_trip() {
        let (_, truth) = synth_weibull(&small(20, 0.3, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.csv");
        write_truth_csv(&p, &truth).unwrap();
        assert_eq!(read_truth_csv(&p).unwrap(), truth);
    }

    #[test]
    fn invalid_config() {
        assert!(synth_weibull(&small(10, 1.0, 0)).is_err());
        assert!(synth_weibull(&SynthConfig { k: 0.0, ..small(10, 0.0, 0) }).is_err());
    }
}
