//! Prepared-window CSV.
//!
//! Columns, in order: `device_id, end_time, f, t_g, censored,
//! censor_remaining`, then `x{s}_{j}` for time step `s` in `0..w` and feature
//! `j` in `0..d`, step-major. `t_g` is empty for censored windows and
//! `censor_remaining` is empty for uncensored ones. Floats use the shortest
//! representation that parses back to the same bits.

use std::fs::File;
use std::path::Path;

use super::Window;
use crate::error::{Error, Result};

pub const WINDOW_LABEL_COLUMNS: [&str; 6] = ["device_id", "end_time", "f", "t_g", "censored", "censor_remaining"];

pub fn window_header(w: usize, d: usize) -> Vec<String> {
    let mut h: Vec<String> = WINDOW_LABEL_COLUMNS.iter().map(|s| s.to_string()).collect();
    for s in 0..w {
        for j in 0..d {
            h.push(format!("x{s}_{j}"));
        }
    }
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_windows_csv(path: &Path, windows: &[Window], w: usize, d: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(File::create(path)?);
    out.write_record(window_header(w, d))?;
    for win in windows {
        if win.w != w || win.d != d || win.values.len() != w * d {
            return Err(Error::data(format!(
                "window {}@{} is {}x{}, file is {w}x{d}",
                win.device_id, win.end_time, win.w, win.d
            )));
        }
        let mut rec = vec![
            win.device_id.clone(),
            win.end_time.to_string(),
            u8::from(win.fp_label).to_string(),
            opt(win.rul_target),
            u8::from(win.censored).to_string(),
            opt(win.censor_remaining),
        ];
        rec.extend(win.values.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Window shape `(w, d)` recorded in a header.
fn parse_shape(header: &csv::StringRecord, file: &str) -> Result<(usize, usize)> {
    let bad = |detail: String| Error::Parse {
        file: file.to_string(),
        line: 1,
        detail,
    };
    for (i, name) in WINDOW_LABEL_COLUMNS.iter().enumerate() {
        if header.get(i) != Some(name) {
            return Err(bad(format!("column {i} must be {name}")));
        }
    }
    let features: Vec<&str> = header.iter().skip(WINDOW_LABEL_COLUMNS.len()).collect();
    let d = features.iter().take_while(|n| n.starts_with("x0_")).count();
    if d == 0 {
        return Ok((0, 0));
    }
    if !features.len().is_multiple_of(d) {
        return Err(bad(format!("{} feature columns do not divide into rows of {d}", features.len())));
    }
    let (w, d) = (features.len() / d, d);
    if window_header(w, d)[WINDOW_LABEL_COLUMNS.len()..] != features[..] {
        return Err(bad("feature columns out of order".into()));
    }
    Ok((w, d))
}

/// Reads windows and the `(w, d)` shape from the header.
pub fn read_windows_csv(path: &Path) -> Result<(Vec<Window>, usize, usize)> {
    let file = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path)?;
    let (w, d) = parse_shape(rdr.headers()?, &file)?;
    let mut windows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let err = |detail: String| Error::Parse {
            file: file.clone(),
            line: i + 2,
            detail,
        };
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(err(format!("expected 0/1, found {other:?}"))),
        };
        let float = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let opt_float = |s: &str| if s.is_empty() { Ok(None) } else { float(s).map(Some) };
        let censored = flag(&rec[4])?;
        let rul_target = opt_float(&rec[3])?;
        let censor_remaining = opt_float(&rec[5])?;
        if censored != censor_remaining.is_some() || (censored && rul_target.is_some()) {
            return Err(err("censored flag disagrees with t_g/censor_remaining".into()));
        }
        windows.push(Window {
            device_id: rec[0].to_string(),
            end_time: rec[1].parse().map_err(|e| err(format!("end_time: {e}")))?,
            w,
            d,
            values: rec.iter().skip(WINDOW_LABEL_COLUMNS.len()).map(float).collect::<Result<_>>()?,
            rul_target,
            fp_label: flag(&rec[2])?,
            censored,
            censor_remaining,
        });
    }
    Ok((windows, w, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{make_windows, SensorSequence, WindowingConfig};
    use proptest::prelude::*;

    #[test]
    fn empty_file_keeps_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        write_windows_csv(&p, &[], 3, 2).unwrap();
        let (ws, w, d) = read_windows_csv(&p).unwrap();
        assert!(ws.is_empty());
        assert_eq!((w, d), (3, 2));
    }

    #[test]
    fn bad_flag_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        std::fs::write(&p, "device_id,end_time,f,t_g,censored,censor_remaining,x0_0\na,1,0,1.0,0,,0.5\na,2,2,1.0,0,,0.5\n").unwrap();
        match read_windows_csv(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3), 8..40),
                                   failed: bool) {
            let seq = SensorSequence::new("dev-1", rows, failed).unwrap();
            let cfg = WindowingConfig { w: 4, stride: 2, tau_f: 1, tau_e: 3, max_rul: 20 };
            let ws = make_windows(&seq, &cfg);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("w.csv");
            write_windows_csv(&p, &ws, 4, 3).unwrap();
            let (back, w, d) = read_windows_csv(&p).unwrap();
            prop_assert_eq!((w, d), (4, 3));
            prop_assert_eq!(back, ws);
        }
    }
}
