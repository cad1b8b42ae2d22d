use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SensorSequence;
use crate::error::{Error, Result};

/// Keeps every failed device and down-samples censored devices uniformly
/// to the failed-device count. Input order is preserved.
pub fn balance_devices(seqs: Vec<SensorSequence>, seed: u64) -> Result<Vec<SensorSequence>> {
    balance_devices_with_ratio(seqs, 1.0, seed)
}

/// As [`balance_devices`], keeping at most `max_censored_per_failed`
/// censored devices per failed device.
pub fn balance_devices_with_ratio(
    seqs: Vec<SensorSequence>,
    max_censored_per_failed: f64,
    seed: u64,
) -> Result<Vec<SensorSequence>> {
    if !(max_censored_per_failed >= 0.0) {
        return Err(Error::config("censored-to-failed ratio must be >= 0"));
    }
    let failed = seqs.iter().filter(|s| s.failed).count();
    if failed == 0 {
        return Err(Error::config("balancing needs at least one failed device"));
    }
    let censored: Vec<usize> = (0..seqs.len()).filter(|&i| !seqs[i].failed).collect();
    let keep_censored = ((failed as f64 * max_censored_per_failed).floor() as usize).min(censored.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; seqs.len()];
    for i in seqs.iter().enumerate().filter(|(_, s)| s.failed).map(|(i, _)| i) {
        keep[i] = true;
    }
    for j in index::sample(&mut rng, censored.len(), keep_censored) {
        keep[censored[j]] = true;
    }
    log::info!(
        "balanced devices: {failed} failed, {keep_censored} of {} censored kept",
        censored.len()
    );
    Ok(seqs
        .into_iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect())
}

/// Device-level split into (train, validation). Failed and censored devices
/// are split separately so both sides keep the failure ratio.
pub fn split_devices(
    seqs: Vec<SensorSequence>,
    validation_fraction: f64,
    seed: u64,
) -> Result<(Vec<SensorSequence>, Vec<SensorSequence>)> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::config("validation fraction must be in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut to_val = vec![false; seqs.len()];
    for failed in [true, false] {
        let group: Vec<usize> = (0..seqs.len()).filter(|&i| seqs[i].failed == failed).collect();
        let n_val = (group.len() as f64 * validation_fraction).round() as usize;
        for j in index::sample(&mut rng, group.len(), n_val) {
            to_val[group[j]] = true;
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (s, v) in seqs.into_iter().zip(to_val) {
        if v {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    Ok((train, val))
}
