//! Output files for a run or sweep.
//!
//! Everything is written into a staging directory inside the output
//! directory first and moved into place only once all files exist, so a
//! failed invocation leaves no partial outputs behind. Currency is printed
//! with 4 decimals.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::SimulationReport;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Run,
    Sweep,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput<'a> {
    pub id: String,
    pub report: &'a SimulationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_path: String,
    pub config_sha256: String,
    pub tax_policy: String,
    pub penalties: Vec<f64>,
    pub output_dir: String,
    pub tool_version: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        config_path: &Path,
        config_bytes: &[u8],
        tax_policy: String,
        penalties: Vec<f64>,
        out: &Path,
    ) -> Self {
        RunManifest {
            config_path: config_path.display().to_string(),
            config_sha256: sha256_hex(config_bytes),
            tax_policy,
            penalties,
            output_dir: out.display().to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn currency(x: f64) -> String {
    let s = format!("{x:.4}");
    // avoid "-0.0000"
    if s.trim_start_matches('-')
        .chars()
        .all(|c| c == '0' || c == '.')
    {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn penalty_cell(p: Option<f64>) -> String {
    p.map_or_else(String::new, |p| p.to_string())
}

fn write_allocation(
    path: &Path,
    mode: Mode,
    scenarios: &[ScenarioOutput],
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    let base = ["provider", "hosted_count", "interpolation_factor"];
    match mode {
        Mode::Run => w.write_record(base)?,
        Mode::Sweep => w.write_record(["scenario_id", "eco_penalty"].iter().chain(&base))?,
    }
    for s in scenarios {
        for a in &s.report.allocation {
            let cells = [
                a.provider.clone(),
                a.hosted.to_string(),
                format!("{:.6}", a.interpolation_factor),
            ];
            match mode {
                Mode::Run => w.write_record(&cells)?,
                Mode::Sweep => {
                    let lead = [s.id.clone(), penalty_cell(s.report.policy.eco_penalty())];
                    w.write_record(lead.iter().chain(&cells))?
                }
            }
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn write_summary(path: &Path, scenarios: &[ScenarioOutput]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario_id",
        "tax_policy",
        "eco_penalty",
        "tax_revenue",
        "bazaar_score",
        "consumers_served",
    ])?;
    for s in scenarios {
        let r = s.report;
        w.write_record([
            s.id.clone(),
            r.policy.kind().to_string(),
            penalty_cell(r.policy.eco_penalty()),
            currency(r.tax_revenue),
            currency(r.consumer_bazaar_score),
            r.consumers_served.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn write_agreements(path: &Path, scenarios: &[ScenarioOutput]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario_id",
        "consumer",
        "provider",
        "t",
        "storage",
        "ram",
        "processing_power",
        "net_price",
        "tax",
        "gross_price",
    ])?;
    for s in scenarios {
        for a in &s.report.agreements {
            let vm = a.vm();
            w.write_record([
                s.id.clone(),
                a.consumer().to_string(),
                s.report.provider_label(a.provider()).to_string(),
                a.timestamp().to_string(),
                vm.storage.to_string(),
                vm.ram.to_string(),
                vm.processing_power.to_string(),
                currency(a.net_price()),
                currency(a.tax()),
                currency(a.gross_price()),
            ])?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Serialize)]
struct TraceLine<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario_id: Option<&'a str>,
    session: &'a str,
    t: u64,
    sender: &'a str,
    storage: f64,
    ram: f64,
    processing_power: f64,
    net_price: f64,
    gross_price: f64,
}

fn write_traces(path: &Path, mode: Mode, scenarios: &[ScenarioOutput]) -> Result<(), ReportError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(file);
    for s in scenarios {
        for e in s.report.traces.iter().flatten() {
            let line = TraceLine {
                scenario_id: (mode == Mode::Sweep).then_some(s.id.as_str()),
                session: &e.session,
                t: e.t,
                sender: &e.sender,
                storage: e.storage,
                ram: e.ram,
                processing_power: e.processing_power,
                net_price: round4(e.net_price),
                gross_price: round4(e.gross_price),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn write_curve(
    path: &Path,
    column: &str,
    scenarios: &[ScenarioOutput],
    value: impl Fn(&SimulationReport) -> f64,
) -> Result<(), ReportError> {
    let mut rows: Vec<(f64, f64)> = scenarios
        .iter()
        .map(|s| {
            (
                s.report.policy.eco_penalty().unwrap_or(0.0),
                value(s.report),
            )
        })
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["eco_penalty", column])?;
    for (p, v) in rows {
        w.write_record([p.to_string(), currency(v)])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes every output of one invocation into `out`, all or nothing.
/// Returns the paths written.
pub fn write_outputs(
    out: &Path,
    mode: Mode,
    scenarios: &[ScenarioOutput],
    mut manifest: RunManifest,
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(out)
        .map_err(io_err(out))?;
    let dir = staging.path();

    let mut names = vec!["allocation.csv", "summary.csv", "agreements.csv"];
    write_allocation(&dir.join("allocation.csv"), mode, scenarios)?;
    write_summary(&dir.join("summary.csv"), scenarios)?;
    write_agreements(&dir.join("agreements.csv"), scenarios)?;
    if scenarios.iter().any(|s| s.report.traces.is_some()) {
        write_traces(&dir.join("traces.jsonl"), mode, scenarios)?;
        names.push("traces.jsonl");
    }
    if mode == Mode::Sweep {
        write_curve(&dir.join("laffer.csv"), "tax_revenue", scenarios, |r| {
            r.tax_revenue
        })?;
        write_curve(&dir.join("welfare.csv"), "bazaar_score", scenarios, |r| {
            r.consumer_bazaar_score
        })?;
        names.extend(["laffer.csv", "welfare.csv"]);
    }
    manifest.outputs = names.iter().map(|n| n.to_string()).collect();
    let manifest_path = dir.join("manifest.json");
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    names.push("manifest.json");

    let mut written = Vec::new();
    for name in names {
        let target = out.join(name);
        fs::rename(dir.join(name), &target).map_err(io_err(&target))?;
        written.push(target);
    }
    Ok(written)
}
