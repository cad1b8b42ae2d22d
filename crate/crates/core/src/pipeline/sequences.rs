//! Long-format sequence CSV: `device_id,time,failed,x0,x1,...`, one row per
//! observation, times `1..=c_p` in order within each device.

use std::fs::File;
use std::path::Path;

use super::SensorSequence;
use crate::error::{Error, Result};

pub fn write_sequences_csv(path: &Path, seqs: &[SensorSequence]) -> Result<()> {
    let d = seqs.iter().map(SensorSequence::dim).max().unwrap_or(0);
    let mut out = csv::Writer::from_writer(File::create(path)?);
    let mut header = vec!["device_id".to_string(), "time".into(), "failed".into()];
    header.extend((0..d).map(|j| format!("x{j}")));
    out.write_record(&header)?;
    for s in seqs {
        for (t, obs) in s.observations.iter().enumerate() {
            let mut rec = vec![s.device_id.clone(), (t + 1).to_string(), u8::from(s.failed).to_string()];
            rec.extend(obs.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_sequences_csv(path: &Path) -> Result<Vec<SensorSequence>> {
    let file_name = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "device_id" || &headers[1] != "time" || &headers[2] != "failed" {
        return Err(Error::Parse {
            file: file_name,
            line: 1,
            detail: "expected header device_id,time,failed,...".into(),
        });
    }
    let mut seqs: Vec<SensorSequence> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let err = |detail: String| Error::Parse {
            file: file_name.clone(),
            line,
            detail,
        };
        let id = rec[0].to_string();
        let time: usize = rec[1].parse().map_err(|e| err(format!("time: {e}")))?;
        let failed = match &rec[2] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(err(format!("failed flag {other:?}"))),
        };
        let obs = rec
            .iter()
            .skip(3)
            .map(|v| {
                if v.is_empty() {
                    Ok(f64::NAN)
                } else {
                    v.parse::<f64>().map_err(|e| err(format!("value {v:?}: {e}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        match seqs.last_mut() {
            Some(s) if s.device_id == id => {
                if time != s.observations.len() + 1 || failed != s.failed {
                    return Err(err(format!("device {id}: unexpected time {time} or failure flag")));
                }
                s.observations.push(obs);
            }
            _ => {
                if time != 1 {
                    return Err(err(format!("device {id} must start at time 1")));
                }
                if seqs.iter().any(|s| s.device_id == id) {
                    return Err(err(format!("device {id} rows are not contiguous")));
                }
                seqs.push(SensorSequence::new(id, vec![obs], failed)?);
            }
        }
    }
    Ok(seqs)
}
