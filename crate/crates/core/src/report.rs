//! CSV and JSON artifacts. Floats are written in shortest round-trip form
//! so output is byte-stable across runs and platforms.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::array::CurveTable;
use crate::bench::{BenchReport, BENCH_HEADER};
use crate::error::{Error, Result};
use crate::scenarios::{Profile, Quantity};

pub const CURVE_HEADER: [&str; 3] = ["voltage_V", "current_A", "power_W"];

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_curve_csv<W: Write>(table: &CurveTable, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CURVE_HEADER).map_err(csv_err)?;
    for &(v, i) in &table.points {
        out.write_record([v.to_string(), i.to_string(), (v * i).to_string()])
            .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_bench_csv<W: Write>(report: &BenchReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(BENCH_HEADER).map_err(csv_err)?;
    for r in &report.rows {
        out.write_record([
            r.algorithm.clone(),
            r.scenario.clone(),
            r.converter.clone(),
            opt(r.eta_pct),
            opt(r.startup_time_s),
            opt(r.tracking_time_s),
            opt(r.ss_oscillation_pct),
            r.x_comp.to_string(),
            opt(r.fom),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Parse(e.to_string()))
}

/// Samples a profile every `dt` seconds, end point included. Irradiance
/// profiles use the trace header so the output loads back as a trace.
pub fn write_profile_csv<W: Write>(p: &Profile, dt: f64, w: W) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!(
            "sampling step must be > 0, got {dt}"
        )));
    }
    let mut out = csv::Writer::from_writer(w);
    let value_col = match p.quantity {
        Quantity::Irradiance => "irradiance_wm2",
        Quantity::Temperature => "temperature_c",
    };
    out.write_record(["time_s", value_col]).map_err(csv_err)?;
    let n = (p.duration() / dt * (1.0 + 1e-12)).floor() as usize;
    for k in 0..=n {
        let t = (k as f64 * dt).min(p.duration());
        out.write_record([format!("{t:.9}"), p.sample(t)?.to_string()])
            .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Parse(e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn to_bytes<F>(f: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
