//! Backblaze daily drive snapshots.
//!
//! Every `*.csv` file in the input directory is one day (files are read in
//! name order). Required columns: `date` (YYYY-MM-DD), `serial_number`,
//! `model`, `failure`, plus the SMART columns of the feature manifest. Empty
//! cells are missing values.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::SensorSequence;
use crate::error::{Error, Result};

/// The 26 SMART columns used as features, in feature order.
pub const DEFAULT_SMART_FEATURES: [&str; 26] = [
    "smart_1_normalized",
    "smart_1_raw",
    "smart_3_normalized",
    "smart_4_raw",
    "smart_5_normalized",
    "smart_5_raw",
    "smart_7_normalized",
    "smart_7_raw",
    "smart_9_normalized",
    "smart_9_raw",
    "smart_10_normalized",
    "smart_12_raw",
    "smart_183_raw",
    "smart_184_raw",
    "smart_187_normalized",
    "smart_187_raw",
    "smart_188_raw",
    "smart_189_raw",
    "smart_190_normalized",
    "smart_190_raw",
    "smart_192_raw",
    "smart_193_raw",
    "smart_194_raw",
    "smart_197_raw",
    "smart_198_raw",
    "smart_199_raw",
];

struct Drive {
    last_date: NaiveDate,
    rows: Vec<Vec<f64>>,
    failed: bool,
    closed: bool,
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// One sequence per serial of `model`, in order of first appearance.
///
/// A drive is failed if its failure flag is 1 on some day; that day ends its
/// sequence. A missing day also ends the sequence (later rows are ignored
/// with a warning). Missing values are forward-filled; leading missing
/// values stay NaN.
pub fn load_backblaze(dir: &Path, model: &str, features: &[&str]) -> Result<Vec<SensorSequence>> {
    let mut drives: HashMap<String, Drive> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    for path in csv_files(dir)? {
        let file = path.display().to_string();
        let mut rdr = csv::Reader::from_path(&path)?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
                file: file.clone(),
                line: 1,
                detail: format!("missing column {name}"),
            })
        };
        let (c_date, c_serial, c_model, c_fail) = (col("date")?, col("serial_number")?, col("model")?, col("failure")?);
        let feature_cols = features.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if &rec[c_model] != model {
                continue;
            }
            let err = |detail: String| Error::Parse {
                file: file.clone(),
                line: i + 2,
                detail,
            };
            let date = NaiveDate::parse_from_str(&rec[c_date], "%Y-%m-%d").map_err(|e| err(format!("date: {e}")))?;
            let failure = match rec[c_fail].trim() {
                "0" => false,
                "1" => true,
                other => return Err(err(format!("failure flag {other:?}"))),
            };
            let values = feature_cols
                .iter()
                .map(|&c| {
                    let v = rec[c].trim();
                    if v.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        v.parse::<f64>().map_err(|e| err(format!("{v:?}: {e}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let serial = rec[c_serial].to_string();
            match drives.get_mut(&serial) {
                None => {
                    order.push(serial.clone());
                    drives.insert(
                        serial,
                        Drive {
                            last_date: date,
                            rows: vec![values],
                            failed: failure,
                            closed: failure,
                        },
                    );
                }
                Some(d) => {
                    if date <= d.last_date {
                        return Err(Error::data(format!(
                            "serial {serial}: date {date} does not follow {}",
                            d.last_date
                        )));
                    }
                    let gap = date.signed_duration_since(d.last_date).num_days() > 1;
                    d.last_date = date;
                    if d.closed {
                        continue;
                    }
                    if gap {
                        log::warn!("serial {serial}: missing day before {date}, sequence ends");
                        d.closed = true;
                        continue;
                    }
                    let prev = d.rows.last().expect("nonempty");
                    let filled = values
                        .iter()
                        .zip(prev)
                        .map(|(&v, &p)| if v.is_nan() { p } else { v })
                        .collect();
                    d.rows.push(filled);
                    if failure {
                        d.failed = true;
                        d.closed = true;
                    }
                }
            }
        }
    }
    if order.is_empty() {
        log::warn!("no rows for model {model} in {}", dir.display());
    }
    order
        .into_iter()
        .map(|s| {
            let d = drives.remove(&s).expect("recorded serial");
            SensorSequence::new(s, d.rows, d.failed)
        })
        .collect()
}
