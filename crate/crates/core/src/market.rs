//! Domain types shared by the negotiation, taxation and engine modules.
//!
//! Quantities are plain `f64` (megabytes, MIPS, currency units). Time is an
//! integer tick counter; see [`Tick`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ScenarioConfig;

/// Simulation clock, in integer clock units.
pub type Tick = u64;

/// Tolerance used for "weights sum to one" checks.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// A market participant. Displayed as `C1..CN` / `P1..PM` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentId {
    Consumer(u32),
    Provider(u32),
}

impl AgentId {
    pub fn is_consumer(&self) -> bool {
        matches!(self, AgentId::Consumer(_))
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentId::Consumer(n) => write!(f, "C{n}"),
            AgentId::Provider(n) => write!(f, "P{n}"),
        }
    }
}

/// The three metered VM resources. Price is handled separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Storage,
    Ram,
    ProcessingPower,
}

impl Resource {
    pub const ALL: [Resource; 3] = [Resource::Storage, Resource::Ram, Resource::ProcessingPower];

    pub fn name(&self) -> &'static str {
        match self {
            Resource::Storage => "storage",
            Resource::Ram => "ram",
            Resource::ProcessingPower => "processing_power",
        }
    }

    pub fn parse(s: &str) -> Option<Resource> {
        match s {
            "storage" => Some(Resource::Storage),
            "ram" => Some(Resource::Ram),
            "processing_power" | "cpu" => Some(Resource::ProcessingPower),
            _ => None,
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per resource.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerResource<T> {
    pub storage: T,
    pub ram: T,
    pub processing_power: T,
}

impl<T: Copy> PerResource<T> {
    pub fn splat(v: T) -> Self {
        PerResource {
            storage: v,
            ram: v,
            processing_power: v,
        }
    }

    pub fn get(&self, r: Resource) -> T {
        match r {
            Resource::Storage => self.storage,
            Resource::Ram => self.ram,
            Resource::ProcessingPower => self.processing_power,
        }
    }

    pub fn get_mut(&mut self, r: Resource) -> &mut T {
        match r {
            Resource::Storage => &mut self.storage,
            Resource::Ram => &mut self.ram,
            Resource::ProcessingPower => &mut self.processing_power,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Resource) -> T) -> Self {
        PerResource {
            storage: f(Resource::Storage),
            ram: f(Resource::Ram),
            processing_power: f(Resource::ProcessingPower),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> PerResource<U> {
        PerResource {
            storage: f(self.storage),
            ram: f(self.ram),
            processing_power: f(self.processing_power),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Resource, T)> + '_ {
        Resource::ALL.into_iter().map(move |r| (r, self.get(r)))
    }
}

impl PerResource<f64> {
    pub fn sum(&self) -> f64 {
        self.storage + self.ram + self.processing_power
    }
}

/// The negotiated good: a VM description plus a net price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VmOffer {
    /// MB
    pub storage: f64,
    /// MB
    pub ram: f64,
    /// MIPS
    pub processing_power: f64,
    /// Net price, tax excluded.
    pub price: f64,
    pub sender: AgentId,
    pub timestamp: Tick,
}

impl VmOffer {
    pub fn resources(&self) -> PerResource<f64> {
        PerResource {
            storage: self.storage,
            ram: self.ram,
            processing_power: self.processing_power,
        }
    }

    pub fn quantity(&self, r: Resource) -> f64 {
        match r {
            Resource::Storage => self.storage,
            Resource::Ram => self.ram,
            Resource::ProcessingPower => self.processing_power,
        }
    }
}

/// Inclusive `[min, max]` range for one negotiable characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const fn new(min: f64, max: f64) -> Self {
        Bounds { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Consumer utility weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsumerWeights {
    pub storage: f64,
    pub ram: f64,
    pub processing_power: f64,
    pub price: f64,
}

impl ConsumerWeights {
    pub fn resource(&self, r: Resource) -> f64 {
        match r {
            Resource::Storage => self.storage,
            Resource::Ram => self.ram,
            Resource::ProcessingPower => self.processing_power,
        }
    }

    pub fn sum(&self) -> f64 {
        self.storage + self.ram + self.processing_power + self.price
    }
}

/// What price the consumer plugs into its own planned counteroffer when it
/// decides whether to accept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanTax {
    /// The planned price is a net price; estimated tax is added.
    #[default]
    Included,
    /// The planned price is already the consumer's all-in budget.
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerParams {
    pub id: AgentId,
    pub storage: Bounds,
    pub ram: Bounds,
    pub processing_power: Bounds,
    pub price: Bounds,
    pub weights: ConsumerWeights,
    pub k: f64,
    pub beta: f64,
    pub t_max: Tick,
    pub plan_tax: PlanTax,
}

impl ConsumerParams {
    pub fn resource_bounds(&self, r: Resource) -> Bounds {
        match r {
            Resource::Storage => self.storage,
            Resource::Ram => self.ram,
            Resource::ProcessingPower => self.processing_power,
        }
    }

    pub fn max_price(&self) -> f64 {
        self.price.max
    }
}

/// Direction in which the provider's resource prices move over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concession {
    /// `MinRP` at t=0 (with irp_fraction 0) up to `MaxRP` at the deadline.
    #[default]
    Rising,
    /// `MaxRP` down to `MinRP`.
    Falling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerProfile {
    pub provider_label: String,
    pub vendor_model: String,
    pub ssj_ops_per_watt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderParams {
    pub id: AgentId,
    /// Currency per resource unit.
    pub min_rp: PerResource<f64>,
    pub max_rp: PerResource<f64>,
    pub availability: PerResource<f64>,
    pub importance: PerResource<f64>,
    pub irp_fraction: f64,
    pub t_max: Tick,
    pub capacity: u32,
    pub server: ServerProfile,
    pub concession: Concession,
}

/// A binding deal. Built only through [`Agreement::new`], which fixes
/// `gross_price = net_price + tax`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    consumer: AgentId,
    provider: AgentId,
    vm: VmOffer,
    net_price: f64,
    tax: f64,
    gross_price: f64,
    timestamp: Tick,
}

impl Agreement {
    /// `vm` is the accepted provider offer; its price is the net price.
    pub fn new(consumer: AgentId, provider: AgentId, vm: VmOffer, tax: f64) -> Self {
        let tax = tax.max(0.0);
        Agreement {
            consumer,
            provider,
            vm,
            net_price: vm.price,
            tax,
            gross_price: vm.price + tax,
            timestamp: vm.timestamp,
        }
    }

    pub fn consumer(&self) -> AgentId {
        self.consumer
    }
    pub fn provider(&self) -> AgentId {
        self.provider
    }
    pub fn vm(&self) -> &VmOffer {
        &self.vm
    }
    pub fn net_price(&self) -> f64 {
        self.net_price
    }
    pub fn tax(&self) -> f64 {
        self.tax
    }
    pub fn gross_price(&self) -> f64 {
        self.gross_price
    }
    pub fn timestamp(&self) -> Tick {
        self.timestamp
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// `C7`, `P3`, `providers`, `scenario`, `tax`, ...
    pub agent: String,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}: {}", self.agent, self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid scenario ({} violation(s)): {}", .violations.len(), join_violations(.violations))]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) struct Violations {
    agent: String,
    out: Vec<Violation>,
}

impl Violations {
    pub(crate) fn new(agent: impl Into<String>) -> Self {
        Violations {
            agent: agent.into(),
            out: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.out.push(Violation {
            agent: self.agent.clone(),
            field: field.into(),
            message: message.into(),
        });
    }

    pub(crate) fn check(&mut self, ok: bool, field: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.push(field, message);
        }
    }

    pub(crate) fn into_vec(self) -> Vec<Violation> {
        self.out
    }
}

fn check_bounds(v: &mut Violations, field: &str, b: Bounds) {
    v.check(
        b.min.is_finite() && b.max.is_finite(),
        field,
        "bounds must be finite",
    );
    v.check(b.min >= 0.0, field, "min must be >= 0");
    v.check(b.min < b.max, field, "min must be < max");
}

pub fn validate_consumer(p: &ConsumerParams) -> Vec<Violation> {
    let mut v = Violations::new(p.id.to_string());
    for r in Resource::ALL {
        let b = p.resource_bounds(r);
        check_bounds(&mut v, r.name(), b);
        v.check(b.min > 0.0, r.name(), "resource min must be > 0");
    }
    check_bounds(&mut v, "price", p.price);
    let w = &p.weights;
    for (name, x) in [
        ("w_storage", w.storage),
        ("w_ram", w.ram),
        ("w_processing_power", w.processing_power),
        ("w_price", w.price),
    ] {
        v.check(x >= 0.0, name, "weight must be >= 0");
    }
    v.check(
        (w.sum() - 1.0).abs() <= WEIGHT_SUM_TOLERANCE,
        "weights",
        format!("weights sum ≠ 1 (got {})", w.sum()),
    );
    v.check((0.0..=1.0).contains(&p.k), "k", "k must be in [0, 1]");
    v.check(
        p.beta > 0.0 && p.beta.is_finite(),
        "beta",
        "beta must be > 0",
    );
    v.check(p.t_max > 0, "t_max", "t_max must be > 0");
    v.into_vec()
}

pub fn validate_provider(p: &ProviderParams) -> Vec<Violation> {
    validate_provider_as(p, &p.id.to_string())
}

pub(crate) fn validate_provider_as(p: &ProviderParams, agent: &str) -> Vec<Violation> {
    let mut v = Violations::new(agent);
    for r in Resource::ALL {
        let (lo, hi) = (p.min_rp.get(r), p.max_rp.get(r));
        let field = format!("rp_{}", r.name());
        v.check(lo > 0.0, field.clone(), "MinRP must be > 0");
        v.check(lo < hi, field, "min must be < max");
        v.check(
            (0.0..=1.0).contains(&p.availability.get(r)),
            format!("a_{}", r.name()),
            "availability must be in [0, 1]",
        );
        v.check(
            (0.0..=1.0).contains(&p.importance.get(r)),
            format!("w_{}", r.name()),
            "importance must be in [0, 1]",
        );
    }
    v.check(
        (p.importance.sum() - 1.0).abs() <= WEIGHT_SUM_TOLERANCE,
        "weights",
        format!("weights sum ≠ 1 (got {})", p.importance.sum()),
    );
    v.check(
        (0.0..=1.0).contains(&p.irp_fraction),
        "irp_fraction",
        "irp_fraction must be in [0, 1]",
    );
    v.check(p.t_max > 0, "t_max", "t_max must be > 0");
    v.check(
        p.server.ssj_ops_per_watt > 0.0,
        "ssj_ops_per_watt",
        "ssj_ops_per_watt must be > 0",
    );
    v.into_vec()
}

/// Checks every agent-level invariant the scenario implies. Consumers are
/// expanded individually; provider ranges are checked at both endpoints,
/// since every expanded provider lies on the segment between them.
pub fn validate_scenario(config: ScenarioConfig) -> Result<ScenarioConfig, ValidationError> {
    let mut violations = config.scenario_violations();
    for c in config.expand_consumers() {
        violations.extend(validate_consumer(&c));
    }
    for (label, interp) in [("providers(low)", 0.0), ("providers(high)", 1.0)] {
        let p = config.providers.provider_at(
            0,
            interp,
            ServerProfile {
                provider_label: label.to_string(),
                vendor_model: String::new(),
                ssj_ops_per_watt: 1.0,
            },
        );
        violations.extend(validate_provider_as(&p, label));
    }
    violations.extend(config.tax.violations());
    if violations.is_empty() {
        Ok(config)
    } else {
        Err(ValidationError { violations })
    }
}
