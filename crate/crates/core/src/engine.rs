//! Market simulation: scenario expansion, the global tick loop, capacity
//! enforcement and report metrics.
//!
//! Every consumer negotiates with every provider at once. At each tick all
//! active sessions play one round; acceptances are then resolved in
//! ascending consumer order, each consumer taking the cheapest acceptable
//! (gross) offer from a provider that still has room, lowest provider index
//! on ties.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{DatasetError, ServerDatasetRow};
use crate::market::{
    validate_consumer, validate_provider, AgentId, Agreement, Bounds, Concession, ConsumerParams,
    ConsumerWeights, PerResource, PlanTax, ProviderParams, ServerProfile, Tick, ValidationError,
    Violation, Violations,
};
use crate::negotiation::{gross_price, NegotiationError, NegotiationSession, RoundOutcome};
use crate::taxation::{compute_tax, tax_revenue, EfficiencyTable, TaxError, TaxPolicy};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tax(#[from] TaxError),
    #[error(transparent)]
    Negotiation(#[from] NegotiationError),
    #[error("scenario declares {declared} providers but the server dataset has {found}")]
    ProviderCountMismatch { declared: usize, found: usize },
    #[error("penalty sweep needs at least one eco penalty")]
    EmptyPenalties,
}

/// Consumer population: identical except for `max_price`, which is spread
/// linearly from `max_price_low` (C1) to `max_price_high` (CN).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsumerRange {
    pub count: usize,
    pub min_price: f64,
    pub max_price_low: f64,
    pub max_price_high: f64,
    pub storage: Bounds,
    pub ram: Bounds,
    pub processing_power: Bounds,
    pub weights: ConsumerWeights,
    pub k: f64,
    pub beta: f64,
    pub t_max: Tick,
    pub plan_tax: PlanTax,
}

/// Provider population: resource prices are placed between the `_low` and
/// `_high` endpoints by each provider's interpolation factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderRange {
    /// Must match the server dataset when given.
    pub count: Option<usize>,
    pub capacity: u32,
    pub availability: PerResource<f64>,
    pub importance: PerResource<f64>,
    pub min_rp_low: PerResource<f64>,
    pub min_rp_high: PerResource<f64>,
    pub max_rp_low: PerResource<f64>,
    pub max_rp_high: PerResource<f64>,
    pub irp_fraction: f64,
    pub t_max: Tick,
    pub concession: Concession,
}

impl ProviderRange {
    /// Concrete provider number `index` (1-based) with interpolation factor
    /// `interp`.
    pub fn provider_at(&self, index: u32, interp: f64, server: ServerProfile) -> ProviderParams {
        let lerp = |lo: &PerResource<f64>, hi: &PerResource<f64>| {
            PerResource::from_fn(|r| lo.get(r) + interp * (hi.get(r) - lo.get(r)))
        };
        ProviderParams {
            id: AgentId::Provider(index),
            min_rp: lerp(&self.min_rp_low, &self.min_rp_high),
            max_rp: lerp(&self.max_rp_low, &self.max_rp_high),
            availability: self.availability,
            importance: self.importance,
            irp_fraction: self.irp_fraction,
            t_max: self.t_max,
            capacity: self.capacity,
            server,
            concession: self.concession,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub consumers: ConsumerRange,
    pub providers: ProviderRange,
    pub tax: TaxPolicy,
    /// Round interval.
    pub dt: Tick,
    /// Server dataset, if the scenario names one.
    pub servers: Option<PathBuf>,
}

impl ScenarioConfig {
    /// The 60-consumer market with the consumer/provider parameters of the
    /// reference experiments, VAT 10%.
    pub fn table2() -> Self {
        ScenarioConfig {
            consumers: ConsumerRange {
                count: 60,
                min_price: 10.0,
                max_price_low: 23.0,
                max_price_high: 100.0,
                storage: Bounds::new(102_400.0, 1_024_000.0),
                ram: Bounds::new(3072.0, 7168.0),
                processing_power: Bounds::new(5000.0, 30_000.0),
                weights: ConsumerWeights {
                    storage: 0.01,
                    ram: 0.01,
                    processing_power: 0.01,
                    price: 0.97,
                },
                k: 0.0,
                beta: 2.0,
                t_max: 7200,
                plan_tax: PlanTax::Included,
            },
            providers: ProviderRange {
                count: Some(15),
                capacity: 10,
                availability: PerResource::splat(0.8),
                importance: PerResource {
                    storage: 0.25,
                    ram: 0.5,
                    processing_power: 0.25,
                },
                min_rp_low: PerResource {
                    storage: 0.000002,
                    ram: 0.002,
                    processing_power: 0.0002,
                },
                min_rp_high: PerResource {
                    storage: 0.0000022,
                    ram: 0.0022,
                    processing_power: 0.00022,
                },
                max_rp_low: PerResource {
                    storage: 0.00001,
                    ram: 0.03,
                    processing_power: 0.001,
                },
                max_rp_high: PerResource {
                    storage: 0.000011,
                    ram: 0.033,
                    processing_power: 0.0011,
                },
                irp_fraction: 0.0,
                t_max: 7200,
                concession: Concession::Rising,
            },
            tax: TaxPolicy::vat(0.10),
            dt: 60,
            servers: None,
        }
    }

    pub fn consumer_max_price(&self, index: usize) -> f64 {
        let c = &self.consumers;
        if c.count <= 1 {
            return c.max_price_low;
        }
        c.max_price_low
            + (index as f64) / ((c.count - 1) as f64) * (c.max_price_high - c.max_price_low)
    }

    pub fn expand_consumers(&self) -> Vec<ConsumerParams> {
        let c = &self.consumers;
        (0..c.count)
            .map(|j| ConsumerParams {
                id: AgentId::Consumer(j as u32 + 1),
                storage: c.storage,
                ram: c.ram,
                processing_power: c.processing_power,
                price: Bounds::new(c.min_price, self.consumer_max_price(j)),
                weights: c.weights,
                k: c.k,
                beta: c.beta,
                t_max: c.t_max,
                plan_tax: c.plan_tax,
            })
            .collect()
    }

    pub(crate) fn scenario_violations(&self) -> Vec<Violation> {
        let mut v = Violations::new("scenario");
        v.check(
            self.consumers.count >= 1,
            "consumers.count",
            "need at least 1 consumer",
        );
        if let Some(n) = self.providers.count {
            v.check(n >= 2, "providers.count", "need at least 2 providers");
        }
        v.check(
            self.consumers.max_price_low <= self.consumers.max_price_high,
            "consumers.max_price",
            "max_price_low must be <= max_price_high",
        );
        v.check(self.dt > 0, "dt", "round interval must be > 0");
        v.into_vec()
    }
}

/// Concrete agents for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    pub consumers: Vec<ConsumerParams>,
    pub providers: Vec<ProviderParams>,
    pub policy: TaxPolicy,
    pub dt: Tick,
}

/// Expands the scenario against the fleet in `table` (fleet order defines
/// provider numbering).
pub fn expand_scenario(
    config: &ScenarioConfig,
    table: &EfficiencyTable,
) -> Result<Market, EngineError> {
    if let Some(declared) = config.providers.count {
        if declared != table.len() {
            return Err(EngineError::ProviderCountMismatch {
                declared,
                found: table.len(),
            });
        }
    }
    let consumers = config.expand_consumers();
    let providers: Vec<_> = table
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            config
                .providers
                .provider_at(i as u32 + 1, e.interpolation_factor, e.server.clone())
        })
        .collect();

    let mut violations = config.scenario_violations();
    if providers.len() < 2 {
        violations.push(Violation {
            agent: "scenario".into(),
            field: "providers.count".into(),
            message: "need at least 2 providers".into(),
        });
    }
    violations.extend(consumers.iter().flat_map(validate_consumer));
    violations.extend(providers.iter().flat_map(validate_provider));
    violations.extend(config.tax.violations());
    if !violations.is_empty() {
        return Err(ValidationError { violations }.into());
    }
    Ok(Market {
        consumers,
        providers,
        policy: config.tax.clone(),
        dt: config.dt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderAllocation {
    pub provider: String,
    pub hosted: u32,
    pub capacity: u32,
    pub interpolation_factor: f64,
    pub efficiency_factor: f64,
}

/// One offer as it went over the wire.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub session: String,
    pub t: Tick,
    pub sender: String,
    pub storage: f64,
    pub ram: f64,
    pub processing_power: f64,
    pub net_price: f64,
    pub gross_price: f64,
}

impl TraceEvent {
    fn new(session: &str, offer: &crate::market::VmOffer, gross: f64) -> Self {
        TraceEvent {
            session: session.to_string(),
            t: offer.timestamp,
            sender: offer.sender.to_string(),
            storage: offer.storage,
            ram: offer.ram,
            processing_power: offer.processing_power,
            net_price: offer.price,
            gross_price: gross,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub policy: TaxPolicy,
    /// Fleet order.
    pub allocation: Vec<ProviderAllocation>,
    /// Acceptance order.
    pub agreements: Vec<Agreement>,
    pub tax_revenue: f64,
    pub consumer_bazaar_score: f64,
    pub consumers_served: usize,
    pub consumer_count: usize,
    /// Hosted-consumer weighted mean, `None` when nobody was served.
    pub mean_interpolation_factor: Option<f64>,
    pub traces: Option<Vec<TraceEvent>>,
}

impl SimulationReport {
    pub fn provider_label(&self, id: AgentId) -> &str {
        match id {
            AgentId::Provider(n) => self
                .allocation
                .get(n as usize - 1)
                .map_or("?", |a| a.provider.as_str()),
            AgentId::Consumer(_) => "?",
        }
    }

    /// 1-based indices of providers hosting at least one consumer.
    pub fn serving_providers(&self) -> Vec<usize> {
        self.allocation
            .iter()
            .enumerate()
            .filter(|(_, a)| a.hosted > 0)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub traces: bool,
}

/// Aggregate consumer surplus, `max_price - gross` over all agreements.
pub fn compute_bazaar_score(agreements: &[Agreement], consumers: &[ConsumerParams]) -> f64 {
    let max_price: BTreeMap<AgentId, f64> =
        consumers.iter().map(|c| (c.id, c.max_price())).collect();
    agreements
        .iter()
        .filter_map(|a| max_price.get(&a.consumer()).map(|m| m - a.gross_price()))
        .sum()
}

/// Runs the market with the efficiency factors in `table`, taken as given.
pub fn run_simulation(
    market: &Market,
    table: &EfficiencyTable,
    options: RunOptions,
) -> Result<SimulationReport, EngineError> {
    let efficiency: Vec<_> = market
        .providers
        .iter()
        .map(|p| {
            table
                .get(&p.server.provider_label)
                .cloned()
                .ok_or_else(|| TaxError::UnknownProvider(p.server.provider_label.clone()))
        })
        .collect::<Result<_, _>>()?;
    let policy = &market.policy;
    let estimators: Vec<_> = efficiency
        .iter()
        .map(|e| {
            let factor = e.efficiency_factor;
            move |net: f64, vm: &crate::market::VmOffer| compute_tax(policy, net, vm, factor)
        })
        .collect();

    let n_providers = market.providers.len();
    let mut sessions: Vec<Vec<NegotiationSession>> = market
        .consumers
        .iter()
        .map(|c| {
            market
                .providers
                .iter()
                .map(|p| NegotiationSession::new(c, p))
                .collect()
        })
        .collect();
    let mut remaining: Vec<u32> = market.providers.iter().map(|p| p.capacity).collect();
    for (p, &cap) in remaining.iter().enumerate() {
        if cap == 0 {
            sessions.iter_mut().for_each(|row| row[p].fail());
        }
    }
    let mut agreements = Vec::new();
    let mut traces = options.traces.then(Vec::new);
    let horizon = sessions
        .iter()
        .flatten()
        .map(NegotiationSession::t_max)
        .max()
        .unwrap_or(0);

    let mut t: Tick = 0;
    while t < horizon {
        // every active session plays its round
        let mut outcomes: Vec<Vec<Option<RoundOutcome>>> =
            vec![vec![None; n_providers]; sessions.len()];
        for (c, row) in sessions.iter_mut().enumerate() {
            let consumer = &market.consumers[c];
            for (p, session) in row.iter_mut().enumerate() {
                if !session.is_active() {
                    continue;
                }
                let est = &estimators[p];
                let outcome = session.propose(t, market.dt, consumer, &market.providers[p], est)?;
                if let (Some(o), Some(tr)) = (&outcome, traces.as_mut()) {
                    let id = session.id();
                    tr.push(TraceEvent::new(
                        &id,
                        &o.counteroffer,
                        gross_price(&o.counteroffer, est),
                    ));
                    tr.push(TraceEvent::new(&id, &o.reply, o.reply_gross));
                }
                outcomes[c][p] = outcome;
            }
        }

        // serialized resolution in consumer order
        for c in 0..sessions.len() {
            let mut best: Option<(usize, f64)> = None;
            for (p, outcome) in outcomes[c].iter().enumerate() {
                let Some(o) = outcome else { continue };
                if !o.acceptable || remaining[p] == 0 || !sessions[c][p].is_active() {
                    continue;
                }
                if best.is_none_or(|(_, g)| o.reply_gross < g) {
                    best = Some((p, o.reply_gross));
                }
            }
            let Some((p, _)) = best else { continue };
            let agreement = sessions[c][p].accept(&estimators[p])?;
            agreements.push(agreement);
            for (q, s) in sessions[c].iter_mut().enumerate() {
                if q != p {
                    s.fail();
                }
            }
            remaining[p] -= 1;
            if remaining[p] == 0 {
                sessions.iter_mut().for_each(|row| row[p].fail());
            }
        }
        t += market.dt;
    }
    sessions
        .iter_mut()
        .flatten()
        .for_each(NegotiationSession::fail);

    let mut hosted = vec![0u32; n_providers];
    for a in &agreements {
        if let AgentId::Provider(n) = a.provider() {
            hosted[n as usize - 1] += 1;
        }
    }
    let allocation: Vec<_> = market
        .providers
        .iter()
        .zip(&efficiency)
        .zip(&hosted)
        .map(|((p, e), &h)| ProviderAllocation {
            provider: p.server.provider_label.clone(),
            hosted: h,
            capacity: p.capacity,
            interpolation_factor: e.interpolation_factor,
            efficiency_factor: e.efficiency_factor,
        })
        .collect();
    let served = agreements.len();
    let mean_interpolation_factor = (served > 0).then(|| {
        allocation
            .iter()
            .map(|a| a.hosted as f64 * a.interpolation_factor)
            .sum::<f64>()
            / served as f64
    });

    Ok(SimulationReport {
        policy: policy.clone(),
        tax_revenue: tax_revenue(&agreements),
        consumer_bazaar_score: compute_bazaar_score(&agreements, &market.consumers),
        consumers_served: served,
        consumer_count: market.consumers.len(),
        mean_interpolation_factor,
        allocation,
        agreements,
        traces,
    })
}

/// Builds the efficiency table for the scenario's own policy, expands and
/// runs.
pub fn simulate(
    config: &ScenarioConfig,
    servers: &[ServerDatasetRow],
    options: RunOptions,
) -> Result<SimulationReport, EngineError> {
    let penalty = config.tax.eco_penalty().unwrap_or(0.0);
    let table = crate::dataset::build_efficiency_table(servers, penalty)?;
    let market = expand_scenario(config, &table)?;
    run_simulation(&market, &table, options)
}

/// One independent run per eco penalty, in input order.
pub fn sweep_eco_penalty(
    config: &ScenarioConfig,
    servers: &[ServerDatasetRow],
    penalties: &[f64],
    options: RunOptions,
) -> Result<Vec<(f64, SimulationReport)>, EngineError> {
    if penalties.is_empty() {
        return Err(EngineError::EmptyPenalties);
    }
    penalties
        .par_iter()
        .map(|&ep| {
            let cfg = ScenarioConfig {
                tax: config.tax.with_eco_penalty(ep),
                ..config.clone()
            };
            simulate(&cfg, servers, options).map(|r| (ep, r))
        })
        .collect()
}
