//! VM tax models: price-based VAT, lump-sum fee, resource-based taxes with
//! proportional or bracketed schedules, and the efficiency-weighted
//! GreenCloud tax. Also the efficiency factors it depends on and a couple of
//! market analytics (revenue, price elasticity).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{Agreement, Resource, ServerProfile, Violation, Violations, VmOffer};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaxError {
    #[error("degenerate fleet: ssj_ops/watt min equals max ({0})")]
    DegenerateFleet(f64),
    #[error("ssj_ops/watt {value} outside fleet range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
    #[error("price elasticity undefined: {0}")]
    Elasticity(&'static str),
    #[error("no efficiency entry for provider {0}")]
    UnknownProvider(String),
}

/// A marginal bracket: amounts above `from` are taxed at `rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub from: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "brackets", rename_all = "snake_case")]
pub enum Schedule {
    Proportional,
    Progressive(Vec<Bracket>),
    Regressive(Vec<Bracket>),
}

impl Schedule {
    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Proportional => "proportional",
            Schedule::Progressive(_) => "progressive",
            Schedule::Regressive(_) => "regressive",
        }
    }

    pub fn brackets(&self) -> &[Bracket] {
        match self {
            Schedule::Proportional => &[],
            Schedule::Progressive(b) | Schedule::Regressive(b) => b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum TaxPolicy {
    /// `rate` is a fraction of the net price.
    Vat { rate: f64 },
    /// Lump sum per VM.
    Fee { amount: f64 },
    ResourceTax {
        base: Resource,
        /// Currency per unit of `base`, for the first bracket.
        rate_per_unit: f64,
        schedule: Schedule,
    },
    /// `price · rate · efficiency factor`.
    GreenCloud {
        rate: f64,
        eco_penalty: f64,
        /// Optional rate steps keyed by efficiency factor; empty means
        /// proportional.
        #[serde(default)]
        progressive: Vec<Bracket>,
    },
}

impl TaxPolicy {
    pub fn vat(rate: f64) -> Self {
        TaxPolicy::Vat { rate }
    }

    pub fn green_cloud(rate: f64, eco_penalty: f64) -> Self {
        TaxPolicy::GreenCloud {
            rate,
            eco_penalty,
            progressive: Vec::new(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TaxPolicy::Vat { .. } => "vat",
            TaxPolicy::Fee { .. } => "fee",
            TaxPolicy::ResourceTax { .. } => "resource",
            TaxPolicy::GreenCloud { .. } => "greencloud",
        }
    }

    pub fn eco_penalty(&self) -> Option<f64> {
        match self {
            TaxPolicy::GreenCloud { eco_penalty, .. } => Some(*eco_penalty),
            _ => None,
        }
    }

    /// Same policy with a different eco penalty. Other policies are returned
    /// unchanged.
    pub fn with_eco_penalty(&self, penalty: f64) -> Self {
        match self {
            TaxPolicy::GreenCloud {
                rate, progressive, ..
            } => TaxPolicy::GreenCloud {
                rate: *rate,
                eco_penalty: penalty,
                progressive: progressive.clone(),
            },
            other => other.clone(),
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Violations::new("tax");
        let nonneg = |x: f64| x >= 0.0 && x.is_finite();
        match self {
            TaxPolicy::Vat { rate } => v.check(nonneg(*rate), "rate", "rate must be >= 0"),
            TaxPolicy::Fee { amount } => v.check(nonneg(*amount), "amount", "amount must be >= 0"),
            TaxPolicy::ResourceTax {
                rate_per_unit,
                schedule,
                ..
            } => {
                v.check(nonneg(*rate_per_unit), "rate_per_unit", "rate must be >= 0");
                check_brackets(&mut v, *rate_per_unit, schedule);
            }
            TaxPolicy::GreenCloud {
                rate,
                eco_penalty,
                progressive,
            } => {
                v.check(nonneg(*rate), "rate", "rate must be >= 0");
                v.check(
                    nonneg(*eco_penalty),
                    "eco_penalty",
                    "eco penalty must be >= 0",
                );
                check_brackets(&mut v, *rate, &Schedule::Progressive(progressive.clone()));
            }
        }
        v.into_vec()
    }
}

fn check_brackets(v: &mut Violations, base_rate: f64, schedule: &Schedule) {
    let brackets = schedule.brackets();
    let mut prev_from = 0.0;
    let mut prev_rate = base_rate;
    for (i, b) in brackets.iter().enumerate() {
        let field = format!("bracket[{i}]");
        v.check(b.rate >= 0.0, field.clone(), "rate must be >= 0");
        v.check(
            b.from > prev_from,
            field.clone(),
            "brackets must be strictly increasing",
        );
        match schedule {
            Schedule::Progressive(_) => v.check(
                b.rate > prev_rate,
                field,
                "progressive rates must be strictly increasing",
            ),
            Schedule::Regressive(_) => v.check(
                b.rate < prev_rate,
                field,
                "regressive rates must be strictly decreasing",
            ),
            Schedule::Proportional => {}
        }
        prev_from = b.from;
        prev_rate = b.rate;
    }
}

impl fmt::Display for TaxPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaxPolicy::Vat { rate } => write!(f, "vat(rate={rate})"),
            TaxPolicy::Fee { amount } => write!(f, "fee(amount={amount})"),
            TaxPolicy::ResourceTax {
                base,
                rate_per_unit,
                schedule,
            } => write!(
                f,
                "resource(base={base},rate_per_unit={rate_per_unit},schedule={})",
                schedule.name()
            ),
            TaxPolicy::GreenCloud {
                rate,
                eco_penalty,
                progressive,
            } => {
                write!(f, "greencloud(rate={rate},eco_penalty={eco_penalty}")?;
                if !progressive.is_empty() {
                    write!(f, ",progressive={}", progressive.len())?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Min-max normalised ssj_ops/watt.
pub fn interpolation_factor(ssj: f64, ssj_min: f64, ssj_max: f64) -> Result<f64, TaxError> {
    if !(ssj_max > ssj_min) {
        return Err(TaxError::DegenerateFleet(ssj_min));
    }
    if !(ssj >= ssj_min && ssj <= ssj_max) {
        return Err(TaxError::OutOfRange {
            value: ssj,
            min: ssj_min,
            max: ssj_max,
        });
    }
    Ok((ssj - ssj_min) / (ssj_max - ssj_min))
}

/// Zero for the fleet's best server, `eco_penalty` for its worst.
pub fn efficiency_factor(interp: f64, eco_penalty: f64) -> f64 {
    (1.0 - interp) * eco_penalty
}

/// Marginal tax of `amount` under a base bracket from zero plus `brackets`.
fn bracketed(amount: f64, base_rate: f64, brackets: &[Bracket]) -> f64 {
    let mut tax = 0.0;
    let mut lower = 0.0;
    let mut rate = base_rate;
    for b in brackets {
        if amount <= b.from {
            break;
        }
        tax += rate * (b.from - lower);
        lower = b.from;
        rate = b.rate;
    }
    tax + rate * (amount - lower).max(0.0)
}

fn step_rate(key: f64, base_rate: f64, brackets: &[Bracket]) -> f64 {
    brackets
        .iter()
        .take_while(|b| key >= b.from)
        .last()
        .map_or(base_rate, |b| b.rate)
}

/// Tax due on a VM sold at `net_price` by a host with the given efficiency
/// factor. Never negative.
pub fn compute_tax(
    policy: &TaxPolicy,
    net_price: f64,
    vm: &VmOffer,
    host_efficiency_factor: f64,
) -> f64 {
    let tax = match policy {
        TaxPolicy::Vat { rate } => net_price * rate,
        TaxPolicy::Fee { amount } => *amount,
        TaxPolicy::ResourceTax {
            base,
            rate_per_unit,
            schedule,
        } => bracketed(vm.quantity(*base), *rate_per_unit, schedule.brackets()),
        TaxPolicy::GreenCloud {
            rate, progressive, ..
        } => {
            let rate = step_rate(host_efficiency_factor, *rate, progressive);
            net_price * rate * host_efficiency_factor
        }
    };
    if tax.is_nan() {
        0.0
    } else {
        tax.max(0.0)
    }
}

pub fn tax_revenue(agreements: &[Agreement]) -> f64 {
    agreements.iter().map(Agreement::tax).sum()
}

/// `|(dq/q) / (dp/p)|`
pub fn price_elasticity(q: f64, dq: f64, p: f64, dp: f64) -> Result<f64, TaxError> {
    if !(q > 0.0) {
        return Err(TaxError::Elasticity("quantity must be > 0"));
    }
    if !(p > 0.0) {
        return Err(TaxError::Elasticity("price must be > 0"));
    }
    if dp == 0.0 {
        return Err(TaxError::Elasticity("price change must be non-zero"));
    }
    Ok(((dq / q) / (dp / p)).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyEntry {
    pub server: ServerProfile,
    pub interpolation_factor: f64,
    pub efficiency_factor: f64,
}

/// Per-provider efficiency factors for one eco penalty, in fleet order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyTable {
    entries: Vec<EfficiencyEntry>,
    index: BTreeMap<String, usize>,
    eco_penalty: f64,
}

impl EfficiencyTable {
    /// Normalises the fleet's ssj_ops/watt and applies `eco_penalty`.
    pub fn from_servers(servers: &[ServerProfile], eco_penalty: f64) -> Result<Self, TaxError> {
        let (min, max) = servers
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.ssj_ops_per_watt), hi.max(s.ssj_ops_per_watt))
            });
        let entries = servers
            .iter()
            .map(|s| {
                let interp = interpolation_factor(s.ssj_ops_per_watt, min, max)?;
                Ok(EfficiencyEntry {
                    server: s.clone(),
                    interpolation_factor: interp,
                    efficiency_factor: efficiency_factor(interp, eco_penalty),
                })
            })
            .collect::<Result<Vec<_>, TaxError>>()?;
        Ok(Self::from_entries(entries, eco_penalty))
    }

    /// Builds a table from precomputed entries (synthetic fleets in tests).
    pub fn from_entries(entries: Vec<EfficiencyEntry>, eco_penalty: f64) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.server.provider_label.clone(), i))
            .collect();
        EfficiencyTable {
            entries,
            index,
            eco_penalty,
        }
    }

    pub fn with_eco_penalty(&self, eco_penalty: f64) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| EfficiencyEntry {
                efficiency_factor: efficiency_factor(e.interpolation_factor, eco_penalty),
                ..e.clone()
            })
            .collect();
        Self::from_entries(entries, eco_penalty)
    }

    pub fn entries(&self) -> &[EfficiencyEntry] {
        &self.entries
    }

    pub fn get(&self, provider_label: &str) -> Option<&EfficiencyEntry> {
        self.index.get(provider_label).map(|&i| &self.entries[i])
    }

    pub fn eco_penalty(&self) -> f64 {
        self.eco_penalty
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
