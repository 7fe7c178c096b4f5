//! Deterministic agent-based simulator for an IaaS bazaar market, where VM
//! consumers and datacenter providers negotiate bilaterally under a
//! configurable tax policy.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod market;
pub mod negotiation;
pub mod report;
pub mod taxation;

pub use engine::{
    run_simulation, simulate, sweep_eco_penalty, RunOptions, ScenarioConfig, SimulationReport,
};
pub use market::{validate_scenario, AgentId, Resource};
pub use taxation::TaxPolicy;
