//! Deterministic CSV and JSON outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::Result;
use crate::experiments::{Report, SweepRecord};
use crate::spectral::FunctionalSample;

pub const SAMPLE_HEADER: &str = "t,s,s_prime,s_second,E,F,I,H1,S,V,residual";
pub const SWEEP_HEADER: &str = "epsilon,t_event,censored,t_cap,sup_f_ratio,sup_f_ratio_envelope,status,accepted_steps,scaling_ok";

/// Shortest decimal that round-trips to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        ryu::Buffer::new().format_finite(x).to_string()
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_samples_csv<W: Write>(mut w: W, samples: &[FunctionalSample]) -> Result<()> {
    writeln!(w, "{SAMPLE_HEADER}")?;
    for s in samples {
        let i = s.i.map(fmt_f64).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(s.t),
            fmt_f64(s.s),
            fmt_f64(s.s_prime),
            fmt_f64(s.s_second),
            fmt_f64(s.e),
            fmt_f64(s.f),
            i,
            fmt_f64(s.h1),
            fmt_f64(s.s_accum),
            fmt_f64(s.v_accum),
            fmt_f64(s.residual),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(mut w: W, records: &[SweepRecord]) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in records {
        let status = serde_json::to_value(r.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.epsilon),
            fmt_f64(r.t_event),
            r.censored,
            fmt_f64(r.t_cap),
            fmt_f64(r.sup_f_ratio),
            fmt_f64(r.sup_f_ratio_envelope),
            status,
            r.accepted_steps,
            r.scaling_ok,
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Machine-readable verdict. Everything except `timestamp` is a function of
/// the configuration alone.
#[derive(Debug, Clone, Serialize)]
pub struct VerdictDoc {
    pub experiment: String,
    pub params: serde_json::Value,
    pub verdict: crate::experiments::Verdict,
    pub max_drift: f64,
    pub tolerances: std::collections::BTreeMap<String, f64>,
    pub per_sample_csv_path: Option<PathBuf>,
    pub status: Option<crate::integrator::TrajectoryStatus>,
    pub warnings: Vec<String>,
    pub details: serde_json::Value,
    /// Seconds since the Unix epoch; excluded from reproducibility checks.
    pub timestamp: u64,
}

impl VerdictDoc {
    pub fn new(report: &Report, params: serde_json::Value, csv: Option<PathBuf>) -> Self {
        Self {
            experiment: report.experiment.clone(),
            params,
            verdict: report.verdict,
            max_drift: report.max_drift,
            tolerances: report.tolerances.clone(),
            per_sample_csv_path: csv,
            status: report.status,
            warnings: report.warnings.clone(),
            details: report.details.clone(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict documents always serialize")
    }
}

/// What an experiment leaves on disk.
pub enum Table<'a> {
    Samples(&'a [FunctionalSample]),
    Sweep(&'a [SweepRecord]),
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json` and returns the verdict
/// document. With no directory nothing is written.
pub fn write_outputs(
    dir: Option<&Path>,
    stem: &str,
    report: &Report,
    table: Table<'_>,
    params: serde_json::Value,
) -> Result<VerdictDoc> {
    let Some(dir) = dir else {
        return Ok(VerdictDoc::new(report, params, None));
    };
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let file = BufWriter::new(File::create(&csv_path)?);
    match table {
        Table::Samples(s) => write_samples_csv(file, s)?,
        Table::Sweep(r) => write_sweep_csv(file, r)?,
    }
    let doc = VerdictDoc::new(report, params, Some(csv_path));
    let mut json = BufWriter::new(File::create(dir.join(format!("{stem}.json")))?);
    writeln!(json, "{}", doc.to_json())?;
    json.flush()?;
    Ok(doc)
}
