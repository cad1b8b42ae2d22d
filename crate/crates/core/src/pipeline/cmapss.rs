//! C-MAPSS turbofan ingestion.
//!
//! Layout per subset `FDxxx` in one directory: `train_FDxxx.txt` and
//! `test_FDxxx.txt` hold space-delimited rows of 26 columns (unit id, cycle,
//! three operational settings, 21 sensors); `RUL_FDxxx.txt` holds one integer
//! per test unit, the cycles remaining after its last test row.

use std::fs;
use std::path::Path;

use super::SensorSequence;
use crate::error::{Error, Result};

pub const CMAPSS_COLUMNS: usize = 26;
pub const CMAPSS_FEATURES: usize = 24;

#[derive(Clone, Debug)]
pub struct CmapssData {
    /// Run-to-failure training units.
    pub train: Vec<SensorSequence>,
    /// Test units, censored before failure.
    pub test: Vec<SensorSequence>,
    /// Residual life after the last observation of each test unit.
    pub test_rul: Vec<usize>,
}

pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = (1..=3).map(|i| format!("setting_{i}")).collect();
    names.extend((1..=21).map(|i| format!("sensor_{i}")));
    names
}

fn parse_rows(text: &str, file: &str) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |detail: String| Error::Parse {
            file: file.to_string(),
            line: i + 1,
            detail,
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != CMAPSS_COLUMNS {
            return Err(parse_err(format!("expected {CMAPSS_COLUMNS} columns, found {}", cols.len())));
        }
        let unit: usize = cols[0]
            .parse()
            .map_err(|e| parse_err(format!("unit id {:?}: {e}", cols[0])))?;
        let cycle: usize = cols[1]
            .parse()
            .map_err(|e| parse_err(format!("cycle {:?}: {e}", cols[1])))?;
        let features = cols[2..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|e| parse_err(format!("value {c:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push((unit, cycle, features));
    }
    Ok(rows)
}

fn group_units(rows: Vec<(usize, usize, Vec<f64>)>, failed: bool, file: &str) -> Result<Vec<SensorSequence>> {
    let mut out: Vec<SensorSequence> = Vec::new();
    let mut current: Option<usize> = None;
    for (unit, cycle, features) in rows {
        if current != Some(unit) {
            if out.iter().any(|s| s.device_id == unit.to_string()) {
                return Err(Error::data(format!("{file}: unit {unit} rows are not contiguous")));
            }
            out.push(SensorSequence::new(unit.to_string(), Vec::new(), failed)?);
            current = Some(unit);
        }
        let seq = out.last_mut().expect("pushed above");
        if cycle != seq.observations.len() + 1 {
            return Err(Error::data(format!(
                "{file}: unit {unit} jumps to cycle {cycle} after {}",
                seq.observations.len()
            )));
        }
        seq.observations.push(features);
    }
    Ok(out)
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Loads subset `FD001`..`FD004` from `dir`.
pub fn load_cmapss(dir: &Path, subset: &str) -> Result<CmapssData> {
    if !matches!(subset, "FD001" | "FD002" | "FD003" | "FD004") {
        return Err(Error::config(format!("unknown C-MAPSS subset {subset}")));
    }
    let train_name = format!("train_{subset}.txt");
    let test_name = format!("test_{subset}.txt");
    let rul_name = format!("RUL_{subset}.txt");
    let train = group_units(parse_rows(&read(dir, &train_name)?, &train_name)?, true, &train_name)?;
    let test = group_units(parse_rows(&read(dir, &test_name)?, &test_name)?, false, &test_name)?;
    let test_rul = read(dir, &rul_name)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| Error::Parse {
                file: rul_name.clone(),
                line: i + 1,
                detail: format!("{e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if test_rul.len() != test.len() {
        return Err(Error::data(format!(
            "{rul_name} has {} entries for {} test units",
            test_rul.len(),
            test.len()
        )));
    }
    log::info!(
        "C-MAPSS {subset}: {} training units, {} test units",
        train.len(),
        test.len()
    );
    Ok(CmapssData {
        train,
        test,
        test_rul,
    })
}
