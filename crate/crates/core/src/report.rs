//! CSV and JSON writers. Files are written to a sibling temporary path and
//! renamed into place, so a reader never sees a partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulator::RunTrace;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().ok_or_else(|| Error::Config(format!("`{}` is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(value).map_err(|e| Error::Config(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json(value)?)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per checkpoint: `t, tracking_error, regret, eps_0.., drift, dynamic_regret`.
pub fn trace_csv(trace: &RunTrace) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string(), "tracking_error".into(), "regret".into()];
    header.extend((0..trace.m).map(|i| format!("eps_{i}")));
    header.extend(["drift".to_string(), "dynamic_regret".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for c in &trace.checkpoints {
        let mut row = vec![c.t.to_string(), c.tracking_error.to_string(), c.regret.to_string()];
        row.extend(c.eps.iter().map(|e| e.to_string()));
        row.push(opt(c.drift));
        row.push(opt(c.dynamic_regret));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Header plus rows of plain strings.
pub fn table_csv(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Write `<stem>.csv` and `<stem>.json` under `dir`.
pub fn write_run(trace: &RunTrace, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_atomic(&csv_path, &trace_csv(trace)?)?;
    write_json(&json_path, trace)?;
    Ok((csv_path, json_path))
}
