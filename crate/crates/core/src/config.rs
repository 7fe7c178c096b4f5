//! Scenario files.
//!
//! Plain `key = value` lines grouped under `[simulation]`, `[consumers]`,
//! `[providers]` and `[tax]`. `#` starts a comment. Keys not given keep the
//! values of [`ScenarioConfig::table2`]. Per-resource provider keys are
//! written `<resource>.<field>`, e.g. `ram.min_rp_low = 0.002`.
//!
//! ```text
//! [simulation]
//! dt = 60
//! servers = ../data/table3.csv
//!
//! [tax]
//! policy = greencloud
//! rate = 0.10
//! eco_penalty = 1.2
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::engine::ScenarioConfig;
use crate::market::{Bounds, Concession, PlanTax, Resource};
use crate::taxation::{Bracket, Schedule, TaxPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config not found: {0}")]
    NotFound(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

fn syntax(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Syntax {
        line,
        message: message.into(),
    }
}

/// Reads a scenario file. A relative `servers` path is resolved against the
/// file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    load_config_bytes(path).map(|(c, _)| c)
}

/// Like [`load_config`], also returning the bytes that were parsed.
pub fn load_config_bytes(path: impl AsRef<Path>) -> Result<(ScenarioConfig, Vec<u8>), ConfigError> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(ConfigError::NotFound(path.display().to_string()))
        }
        Err(source) => {
            return Err(ConfigError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    };
    let text = std::str::from_utf8(&bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
            + 1;
        syntax(line, "config is not valid UTF-8")
    })?;
    let mut config = parse_config(text)?;
    if let Some(servers) = &config.servers {
        if servers.is_relative() {
            let base = path.parent().unwrap_or(Path::new(""));
            config.servers = Some(base.join(servers));
        }
    }
    Ok((config, bytes))
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut config = ScenarioConfig::table2();
    let mut section = String::new();
    let mut tax: BTreeMap<String, (usize, String)> = BTreeMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| syntax(line, "unterminated section header"))?
                .trim();
            if !matches!(name, "simulation" | "consumers" | "providers" | "tax") {
                return Err(syntax(line, format!("unknown section [{name}]")));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| syntax(line, format!("expected key = value, found {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match section.as_str() {
            "simulation" => simulation_key(&mut config, key, value, line)?,
            "consumers" => consumer_key(&mut config, key, value, line)?,
            "providers" => provider_key(&mut config, key, value, line)?,
            "tax" => {
                tax.insert(key.to_string(), (line, value.to_string()));
            }
            _ => return Err(syntax(line, format!("{key} is outside any section"))),
        }
    }
    if !tax.is_empty() {
        config.tax = tax_policy(tax)?;
    }
    Ok(config)
}

fn num<T: FromStr>(value: &str, line: usize, key: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| syntax(line, format!("{key}: {value:?} is not a valid number")))
}

fn bounds(value: &str, line: usize, key: &str) -> Result<Bounds, ConfigError> {
    let (lo, hi) = value
        .split_once("..")
        .ok_or_else(|| syntax(line, format!("{key}: expected min..max, found {value:?}")))?;
    Ok(Bounds::new(
        num(lo.trim(), line, key)?,
        num(hi.trim(), line, key)?,
    ))
}

fn simulation_key(
    c: &mut ScenarioConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    match key {
        "dt" => c.dt = num(value, line, key)?,
        "servers" => c.servers = Some(PathBuf::from(value)),
        _ => return Err(syntax(line, format!("unknown key {key} in [simulation]"))),
    }
    Ok(())
}

fn consumer_key(
    c: &mut ScenarioConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    let cs = &mut c.consumers;
    match key {
        "count" => cs.count = num(value, line, key)?,
        "min_price" => cs.min_price = num(value, line, key)?,
        "max_price" => {
            let b = bounds(value, line, key)?;
            cs.max_price_low = b.min;
            cs.max_price_high = b.max;
        }
        "storage" => cs.storage = bounds(value, line, key)?,
        "ram" => cs.ram = bounds(value, line, key)?,
        "cpu" | "processing_power" => cs.processing_power = bounds(value, line, key)?,
        "w_storage" => cs.weights.storage = num(value, line, key)?,
        "w_ram" => cs.weights.ram = num(value, line, key)?,
        "w_cpu" | "w_processing_power" => cs.weights.processing_power = num(value, line, key)?,
        "w_price" => cs.weights.price = num(value, line, key)?,
        "k" => cs.k = num(value, line, key)?,
        "beta" => cs.beta = num(value, line, key)?,
        "t_max" => cs.t_max = num(value, line, key)?,
        "plan_tax" => {
            cs.plan_tax = match value {
                "included" => PlanTax::Included,
                "excluded" => PlanTax::Excluded,
                _ => return Err(syntax(line, "plan_tax must be included or excluded")),
            }
        }
        _ => return Err(syntax(line, format!("unknown key {key} in [consumers]"))),
    }
    Ok(())
}

fn provider_key(
    c: &mut ScenarioConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    let ps = &mut c.providers;
    if let Some((res, field)) = key.split_once('.') {
        let r = Resource::parse(res)
            .ok_or_else(|| syntax(line, format!("unknown resource {res:?}")))?;
        let v: f64 = num(value, line, key)?;
        let slot = match field {
            "availability" => &mut ps.availability,
            "importance" => &mut ps.importance,
            "min_rp_low" => &mut ps.min_rp_low,
            "min_rp_high" => &mut ps.min_rp_high,
            "max_rp_low" => &mut ps.max_rp_low,
            "max_rp_high" => &mut ps.max_rp_high,
            _ => return Err(syntax(line, format!("unknown key {key} in [providers]"))),
        };
        *slot.get_mut(r) = v;
        return Ok(());
    }
    match key {
        "count" => ps.count = Some(num(value, line, key)?),
        "capacity" => ps.capacity = num(value, line, key)?,
        "irp_fraction" => ps.irp_fraction = num(value, line, key)?,
        "t_max" => ps.t_max = num(value, line, key)?,
        "concession" => {
            ps.concession = match value {
                "rising" => Concession::Rising,
                "falling" => Concession::Falling,
                _ => return Err(syntax(line, "concession must be rising or falling")),
            }
        }
        _ => return Err(syntax(line, format!("unknown key {key} in [providers]"))),
    }
    Ok(())
}

/// `from:rate` pairs separated by commas.
fn brackets(value: &str, line: usize) -> Result<Vec<Bracket>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (from, rate) = pair
                .split_once(':')
                .ok_or_else(|| syntax(line, format!("bracket {pair:?} is not from:rate")))?;
            Ok(Bracket {
                from: num(from.trim(), line, "brackets")?,
                rate: num(rate.trim(), line, "brackets")?,
            })
        })
        .collect()
}

fn tax_policy(mut keys: BTreeMap<String, (usize, String)>) -> Result<TaxPolicy, ConfigError> {
    let (line, kind) = keys.remove("policy").ok_or_else(|| {
        syntax(
            keys.values().map(|v| v.0).min().unwrap_or(0),
            "[tax] needs a policy",
        )
    })?;
    let mut take = |k: &str| keys.remove(k);
    let required = |v: Option<(usize, String)>, k: &str| -> Result<f64, ConfigError> {
        let (l, s) = v.ok_or_else(|| syntax(line, format!("{kind} policy needs {k}")))?;
        num(&s, l, k)
    };
    let policy = match kind.as_str() {
        "vat" => TaxPolicy::Vat {
            rate: required(take("rate"), "rate")?,
        },
        "fee" => TaxPolicy::Fee {
            amount: required(take("amount"), "amount")?,
        },
        "resource" => {
            let base = match take("base") {
                Some((l, s)) => Resource::parse(&s)
                    .ok_or_else(|| syntax(l, format!("unknown resource {s:?}")))?,
                None => return Err(syntax(line, "resource policy needs base")),
            };
            let rate_per_unit = required(take("rate_per_unit"), "rate_per_unit")?;
            let list = match take("brackets") {
                Some((l, s)) => brackets(&s, l)?,
                None => Vec::new(),
            };
            let schedule = match take("schedule").map(|v| v.1).as_deref() {
                None | Some("proportional") => Schedule::Proportional,
                Some("progressive") => Schedule::Progressive(list),
                Some("regressive") => Schedule::Regressive(list),
                Some(other) => return Err(syntax(line, format!("unknown schedule {other:?}"))),
            };
            TaxPolicy::ResourceTax {
                base,
                rate_per_unit,
                schedule,
            }
        }
        "greencloud" => TaxPolicy::GreenCloud {
            rate: required(take("rate"), "rate")?,
            eco_penalty: required(take("eco_penalty"), "eco_penalty")?,
            progressive: match take("progressive") {
                Some((l, s)) => brackets(&s, l)?,
                None => Vec::new(),
            },
        },
        other => return Err(syntax(line, format!("unknown tax policy {other:?}"))),
    };
    if let Some((k, (l, _))) = keys.into_iter().next() {
        return Err(syntax(
            l,
            format!("key {k} does not apply to the {kind} policy"),
        ));
    }
    Ok(policy)
}
