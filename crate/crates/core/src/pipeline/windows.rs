use serde::{Deserialize, Serialize};

use super::SensorSequence;
use crate::error::{Error, Result};

/// Window geometry and labeling horizons, all in raw dataset time units
/// (cycles or days). Model targets are converted to window units by
/// dividing by `w`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowingConfig {
    pub w: usize,
    pub stride: usize,
    /// Filter region before failure; windows ending there are dropped.
    pub tau_f: usize,
    /// Evidence region before the filter region; windows ending there are
    /// labeled positive.
    pub tau_e: usize,
    pub max_rul: usize,
}

impl WindowingConfig {
    /// C-MAPSS settings: 10-cycle windows, evidence 20, filter 5, cap 130.
    pub fn cmapss() -> Self {
        Self {
            w: 10,
            stride: 10,
            tau_f: 5,
            tau_e: 20,
            max_rul: 130,
        }
    }

    /// Backblaze settings: 4-day windows, evidence 12, filter 4, cap 50.
    pub fn backblaze() -> Self {
        Self {
            w: 4,
            stride: 4,
            tau_f: 4,
            tau_e: 12,
            max_rul: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || self.stride == 0 {
            return Err(Error::config("window size and stride must be >= 1"));
        }
        if self.tau_e == 0 {
            return Err(Error::config("evidence window must be > 0"));
        }
        if self.max_rul <= self.tau_f + self.tau_e {
            return Err(Error::config(format!(
                "max_rul {} must exceed tau_f + tau_e = {}",
                self.max_rul,
                self.tau_f + self.tau_e
            )));
        }
        Ok(())
    }

    /// Failure-prediction horizon `tau_f + tau_e` in window units.
    pub fn horizon(&self) -> f64 {
        (self.tau_f + self.tau_e) as f64 / self.w as f64
    }

    /// RUL cap in window units.
    pub fn max_rul_windows(&self) -> f64 {
        self.max_rul as f64 / self.w as f64
    }
}

/// A `w x d` slice of one device's sequence with both task labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub device_id: String,
    /// Time index of the last observation in the window.
    pub end_time: usize,
    pub w: usize,
    pub d: usize,
    /// Row-major `w x d` values, oldest time step first.
    pub values: Vec<f64>,
    /// Capped remaining life in window units; present iff the failure time
    /// is known.
    pub rul_target: Option<f64>,
    pub fp_label: bool,
    pub censored: bool,
    /// `(c_p - t) / w`, present iff censored.
    pub censor_remaining: Option<f64>,
}

impl Window {
    pub fn step(&self, s: usize) -> &[f64] {
        &self.values[s * self.d..(s + 1) * self.d]
    }
}

pub fn cap_rul(remaining: f64, max_rul: f64) -> f64 {
    remaining.min(max_rul)
}

fn slice_values(seq: &SensorSequence, end: usize, w: usize) -> Vec<f64> {
    seq.observations[end - w..end]
        .iter()
        .flat_map(|o| o.iter().copied())
        .collect()
}

fn window_ends(c_p: usize, cfg: &WindowingConfig) -> impl Iterator<Item = usize> {
    (cfg.w..=c_p).step_by(cfg.stride)
}

/// Labeled windows for a device whose failure time is known to be
/// `failure_time` (which may lie after the last observation, as for test
/// devices with a ground-truth residual life).
fn windows_failing_at(seq: &SensorSequence, cfg: &WindowingConfig, failure_time: usize) -> Vec<Window> {
    let w = cfg.w as f64;
    // remaining life r = failure_time - t: kept iff r > tau_f, positive iff
    // r <= tau_f + tau_e
    window_ends(seq.censor_time(), cfg)
        .filter(|&t| t + cfg.tau_f < failure_time)
        .map(|t| Window {
            device_id: seq.device_id.clone(),
            end_time: t,
            w: cfg.w,
            d: seq.dim(),
            values: slice_values(seq, t, cfg.w),
            rul_target: Some(cap_rul((failure_time - t) as f64, cfg.max_rul as f64) / w),
            fp_label: failure_time - t <= cfg.tau_f + cfg.tau_e,
            censored: false,
            censor_remaining: None,
        })
        .collect()
}

fn too_short(seq: &SensorSequence, cfg: &WindowingConfig) -> bool {
    if seq.censor_time() < cfg.w {
        log::warn!(
            "device {} skipped: {} observations < window size {}",
            seq.device_id,
            seq.censor_time(),
            cfg.w
        );
        return true;
    }
    false
}

/// Landmark windows ending at `w, w + stride, ...`.
///
/// Failed devices drop windows in the filter region and label the evidence
/// region positive. Censored devices yield negative windows carrying the
/// remaining observed time instead of an RUL target.
pub fn make_windows(seq: &SensorSequence, cfg: &WindowingConfig) -> Vec<Window> {
    if too_short(seq, cfg) {
        return Vec::new();
    }
    let c_p = seq.censor_time();
    if seq.failed {
        return windows_failing_at(seq, cfg, c_p);
    }
    window_ends(c_p, cfg)
        .map(|t| Window {
            device_id: seq.device_id.clone(),
            end_time: t,
            w: cfg.w,
            d: seq.dim(),
            values: slice_values(seq, t, cfg.w),
            rul_target: None,
            fp_label: false,
            censored: true,
            censor_remaining: Some((c_p - t) as f64 / cfg.w as f64),
        })
        .collect()
}

/// Windows for an observed-but-unfailed device whose residual life after
/// the last observation is known (C-MAPSS test units). Labels are built as
/// if the device failed at `c_p + residual`.
pub fn make_labeled_windows(seq: &SensorSequence, cfg: &WindowingConfig, residual: usize) -> Vec<Window> {
    if too_short(seq, cfg) {
        return Vec::new();
    }
    windows_failing_at(seq, cfg, seq.censor_time() + residual)
}

/// Share of windows labeled positive.
pub fn positive_fraction(windows: &[Window]) -> f64 {
    if windows.is_empty() {
        return 0.0;
    }
    windows.iter().filter(|w| w.fp_label).count() as f64 / windows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(c_p: usize, failed: bool) -> SensorSequence {
        let obs = (1..=c_p).map(|t| vec![t as f64, -(t as f64)]).collect();
        SensorSequence::new("dev", obs, failed).unwrap()
    }

    fn cfg(w: usize, stride: usize, tau_f: usize, tau_e: usize) -> WindowingConfig {
        WindowingConfig {
            w,
            stride,
            tau_f,
            tau_e,
            max_rul: 130,
        }
    }

    /// Brute-force labeling of every candidate end time.
    fn enumerate(c_p: usize, c: &WindowingConfig) -> Vec<(usize, bool, f64)> {
        let mut out = Vec::new();
        let mut t = c.w;
        while t <= c_p {
            let remaining = c_p - t;
            if remaining > c.tau_f {
                let positive = remaining <= c.tau_f + c.tau_e;
                let target = (remaining.min(c.max_rul)) as f64 / c.w as f64;
                out.push((t, positive, target));
            }
            t += c.stride;
        }
        out
    }

    #[test]
    fn cap_rul_examples() {
        assert_eq!(cap_rul(200.0, 130.0), 130.0);
        assert_eq!(cap_rul(50.0, 130.0), 50.0);
        assert_eq!(cap_rul(130.0, 130.0), 130.0);
    }

    #[test]
    fn failed_device_example() {
        let c = cfg(10, 10, 5, 20);
        let ws = make_windows(&seq(100, true), &c);
        let ends: Vec<_> = ws.iter().map(|w| w.end_time).collect();
        assert_eq!(ends, (1..=9).map(|i| i * 10).collect::<Vec<_>>());
        let pos: Vec<_> = ws.iter().filter(|w| w.fp_label).map(|w| w.end_time).collect();
        assert_eq!(pos, vec![80, 90]);
        assert_eq!(ws[8].rul_target, Some(1.0));
        let brute = enumerate(100, &c);
        assert_eq!(brute.len(), ws.len());
        for (w, (t, p, target)) in ws.iter().zip(brute) {
            assert_eq!((w.end_time, w.fp_label, w.rul_target), (t, p, Some(target)));
        }
    }

    #[test]
    fn censored_device_example() {
        let ws = make_windows(&seq(50, false), &cfg(10, 10, 5, 20));
        assert_eq!(ws.len(), 5);
        assert!(ws.iter().all(|w| !w.fp_label && w.censored && w.rul_target.is_none()));
        let rem: Vec<_> = ws.iter().map(|w| w.censor_remaining.unwrap()).collect();
        assert_eq!(rem, vec![4.0, 3.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn short_device_is_skipped() {
        assert!(make_windows(&seq(7, true), &cfg(10, 10, 5, 20)).is_empty());
    }

    #[test]
    fn window_values_are_the_last_w_observations() {
        let ws = make_windows(&seq(30, false), &cfg(10, 10, 5, 20));
        assert_eq!(ws[1].step(0), &[11.0, -11.0]);
        assert_eq!(ws[1].step(9), &[20.0, -20.0]);
    }

    #[test]
    fn labeled_test_windows_use_virtual_failure() {
        let c = cfg(10, 10, 5, 20);
        // observed 60 cycles, fails 20 cycles later -> failure at 80
        let ws = make_labeled_windows(&seq(60, false), &c, 20);
        assert_eq!(ws.len(), 6);
        assert!(ws.iter().all(|w| !w.censored));
        let pos: Vec<_> = ws.iter().filter(|w| w.fp_label).map(|w| w.end_time).collect();
        assert_eq!(pos, vec![60]);
        assert_eq!(ws[5].rul_target, Some(2.0));
    }

    #[test]
    fn config_validation() {
        assert!(WindowingConfig::cmapss().validate().is_ok());
        assert!(WindowingConfig::backblaze().validate().is_ok());
        assert!(cfg(0, 1, 0, 1).validate().is_err());
        assert!(WindowingConfig { max_rul: 25, ..WindowingConfig::cmapss() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn window_invariants(c_p in 1usize..400, w in 1usize..15, stride in 1usize..15,
                             tau_f in 0usize..10, tau_e in 1usize..40, failed: bool) {
            let c = WindowingConfig { w, stride, tau_f, tau_e, max_rul: tau_f + tau_e + 60 };
            let ws = make_windows(&seq(c_p, failed), &c);
            for win in &ws {
                prop_assert_eq!(win.values.len(), w * 2);
                let remaining = c_p - win.end_time;
                if failed {
                    prop_assert!(win.end_time + tau_f <= c_p);
                    if win.fp_label {
                        prop_assert!(remaining > tau_f);
                        prop_assert!(remaining <= tau_f + tau_e);
                    } else {
                        prop_assert!(remaining > tau_f + tau_e);
                    }
                    let t_g = win.rul_target.unwrap();
                    prop_assert!(t_g <= c.max_rul_windows());
                    prop_assert!(win.censor_remaining.is_none());
                } else {
                    prop_assert!(win.rul_target.is_none());
                    prop_assert!(!win.fp_label);
                }
            }
        }
    }
}
