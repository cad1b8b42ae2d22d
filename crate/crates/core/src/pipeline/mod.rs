//! Data preparation: ingestion, landmark windowing with filter and evidence
//! regions, normalization, device balancing and the synthetic generator.

pub mod backblaze;
pub mod balance;
pub mod cmapss;
pub mod normalize;
pub mod sequences;
pub mod synth;
pub mod window_file;
pub mod windows;

pub use backblaze::{load_backblaze, DEFAULT_SMART_FEATURES};
pub use balance::{balance_devices, split_devices};
pub use cmapss::{load_cmapss, CmapssData};
pub use cmapss::{feature_names as cmapss_feature_names, CMAPSS_FEATURES};
pub use balance::balance_devices_with_ratio;
pub use sequences::{read_sequences_csv, write_sequences_csv};
pub use synth::{censor_scale, read_truth_csv, write_truth_csv};
pub use window_file::{read_windows_csv, window_header, write_windows_csv};
pub use normalize::{apply_normalizer, fit_normalizer, NormalizationStats};
pub use synth::{synth_weibull, SynthConfig, SynthTruth};
pub use windows::{cap_rul, make_labeled_windows, make_windows, positive_fraction, Window, WindowingConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One device's multivariate sensor series.
///
/// Time indices run `1..=c_p` without gaps; `observations[t - 1]` is the
/// sensor vector at time `t`. A failed device fails at its last observed
/// time, so `t_{p,f} = c_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSequence {
    pub device_id: String,
    pub observations: Vec<Vec<f64>>,
    pub failed: bool,
}

impl SensorSequence {
    pub fn new(device_id: impl Into<String>, observations: Vec<Vec<f64>>, failed: bool) -> Result<Self> {
        let device_id = device_id.into();
        if let Some(first) = observations.first() {
            let d = first.len();
            if observations.iter().any(|o| o.len() != d) {
                return Err(Error::data(format!("device {device_id}: ragged observations")));
            }
        }
        Ok(Self {
            device_id,
            observations,
            failed,
        })
    }

    /// Last observed time index `c_p`.
    pub fn censor_time(&self) -> usize {
        self.observations.len()
    }

    /// `t_{p,f}`, present iff the device failed.
    pub fn failure_time(&self) -> Option<usize> {
        self.failed.then(|| self.censor_time())
    }

    pub fn dim(&self) -> usize {
        self.observations.first().map_or(0, Vec::len)
    }
}
