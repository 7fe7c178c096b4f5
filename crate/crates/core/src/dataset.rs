//! Server efficiency dataset: one row per provider with the ssj_ops/watt of
//! the (homogeneous) server type its datacenter runs.
//!
//! Format: UTF-8 CSV with the header `provider,vendor_model,ssj_ops_per_watt`.
//! Quoting is optional; vendor strings containing commas must be quoted.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::market::ServerProfile;
use crate::taxation::{EfficiencyTable, TaxError};

pub const HEADER: [&str; 3] = ["provider", "vendor_model", "ssj_ops_per_watt"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: duplicate provider label {label:?}")]
    DuplicateLabel { line: u64, label: String },
    #[error("need at least 2 servers, found {0}")]
    TooFewRows(usize),
    #[error(transparent)]
    Tax(#[from] TaxError),
}

pub type ServerDatasetRow = ServerProfile;

pub fn load_server_dataset(path: impl AsRef<Path>) -> Result<Vec<ServerDatasetRow>, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_server_dataset(file)
}

pub fn parse_server_dataset(reader: impl Read) -> Result<Vec<ServerDatasetRow>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(e, 1))?,
        None => return Err(DatasetError::TooFewRows(0)),
    };
    let got: Vec<&str> = header
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}'))
        .collect();
    if got != HEADER {
        return Err(DatasetError::Parse {
            line: 1,
            message: format!(
                "expected header {:?}, found {:?}",
                HEADER.join(","),
                got.join(",")
            ),
        });
    }

    let mut rows = Vec::new();
    let mut labels = BTreeSet::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(e, 0))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 3 {
            return Err(DatasetError::Parse {
                line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let label = rec[0].to_string();
        if label.is_empty() {
            return Err(DatasetError::Parse {
                line,
                message: "empty provider label".into(),
            });
        }
        let ssj: f64 = rec[2].parse().map_err(|_| DatasetError::Parse {
            line,
            message: format!("ssj_ops_per_watt {:?} is not a number", &rec[2]),
        })?;
        if !(ssj > 0.0 && ssj.is_finite()) {
            return Err(DatasetError::Parse {
                line,
                message: format!("ssj_ops_per_watt must be > 0, got {ssj}"),
            });
        }
        if !labels.insert(label.clone()) {
            return Err(DatasetError::DuplicateLabel { line, label });
        }
        rows.push(ServerProfile {
            provider_label: label,
            vendor_model: rec[1].to_string(),
            ssj_ops_per_watt: ssj,
        });
    }
    if rows.len() < 2 {
        return Err(DatasetError::TooFewRows(rows.len()));
    }
    Ok(rows)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> DatasetError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    DatasetError::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn build_efficiency_table(
    rows: &[ServerDatasetRow],
    eco_penalty: f64,
) -> Result<EfficiencyTable, DatasetError> {
    Ok(EfficiencyTable::from_servers(rows, eco_penalty)?)
}
