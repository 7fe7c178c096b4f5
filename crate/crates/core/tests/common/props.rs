//! Strategies and invariant checks shared by the property tests and the
//! acceptance run.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use bazaar_tax_sim::dataset::ServerDatasetRow;
use bazaar_tax_sim::market::{Concession, PlanTax, Resource, ServerProfile};
use bazaar_tax_sim::negotiation::{consumer_counteroffer, provider_resource_price};
use bazaar_tax_sim::{simulate, AgentId, RunOptions, ScenarioConfig, TaxPolicy};

use super::table3;

#[derive(Debug, Clone)]
pub struct SmallMarket {
    pub config: ScenarioConfig,
    pub servers: Vec<ServerDatasetRow>,
}

fn policy() -> impl Strategy<Value = TaxPolicy> {
    prop_oneof![
        (0.0..0.5f64).prop_map(TaxPolicy::vat),
        (0.0..0.5f64, 0.0..20.0f64).prop_map(|(r, ep)| TaxPolicy::green_cloud(r, ep)),
        (0.0..10.0f64).prop_map(|amount| TaxPolicy::Fee { amount }),
    ]
}

pub fn small_market() -> impl Strategy<Value = SmallMarket> {
    (
        1usize..=20,
        proptest::sample::subsequence((0..15).collect::<Vec<_>>(), 2..=6),
        0u32..=5,
        prop::sample::select(vec![60u64, 120, 450, 1800]),
        policy(),
        23.0..200.0f64,
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(n, picks, capacity, dt, tax, high, excluded, falling)| {
            let all = table3();
            let servers: Vec<_> = picks.iter().map(|&i| all[i].clone()).collect();
            let mut config = ScenarioConfig::table2();
            config.consumers.count = n;
            config.consumers.max_price_high = high.max(config.consumers.max_price_low);
            config.consumers.plan_tax = if excluded {
                PlanTax::Excluded
            } else {
                PlanTax::Included
            };
            config.providers.count = Some(servers.len());
            config.providers.capacity = capacity;
            config.providers.concession = if falling {
                Concession::Falling
            } else {
                Concession::Rising
            };
            config.dt = dt;
            config.tax = tax;
            SmallMarket { config, servers }
        })
}

pub fn check_market(m: &SmallMarket) -> Result<(), TestCaseError> {
    let r = simulate(&m.config, &m.servers, RunOptions { traces: true })
        .map_err(|e| TestCaseError::fail(e.to_string()))?;

    // capacity
    for a in &r.allocation {
        prop_assert!(
            a.hosted <= a.capacity,
            "{} hosts {} > {}",
            a.provider,
            a.hosted,
            a.capacity
        );
    }
    prop_assert_eq!(
        r.allocation
            .iter()
            .map(|a| a.hosted as usize)
            .sum::<usize>(),
        r.agreements.len()
    );

    // one agreement per consumer, gross = net + tax, tax never negative
    let mut seen = BTreeSet::new();
    for a in &r.agreements {
        prop_assert!(seen.insert(a.consumer()), "{} agreed twice", a.consumer());
        prop_assert_eq!(a.gross_price(), a.net_price() + a.tax());
        prop_assert!(a.tax() >= 0.0);
        prop_assert!(a.timestamp() < m.config.consumers.t_max);
    }
    let revenue: f64 = r.agreements.iter().map(|a| a.tax()).sum();
    prop_assert!((revenue - r.tax_revenue).abs() <= 1e-9 * revenue.max(1.0));

    // per-session message order: alternating senders, non-decreasing time
    let mut sessions: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for e in r.traces.as_ref().unwrap() {
        sessions.entry(e.session.as_str()).or_default().push(e);
    }
    for (id, events) in sessions {
        for (i, pair) in events.windows(2).enumerate() {
            prop_assert!(pair[0].t <= pair[1].t, "{id}: time went backwards");
            prop_assert_ne!(
                &pair[0].sender,
                &pair[1].sender,
                "{} sent twice in a row at {}",
                id,
                i
            );
            if i % 2 == 1 {
                prop_assert!(pair[0].t < pair[1].t, "{id}: two rounds at the same tick");
            }
        }
        prop_assert!(events[0].sender.starts_with('C'));
    }

    // determinism
    let again = simulate(&m.config, &m.servers, RunOptions { traces: true }).unwrap();
    prop_assert_eq!(&r, &again);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OfferCase {
    pub consumer: usize,
    pub k: f64,
    pub beta: f64,
    pub t1: u64,
    pub t2: u64,
    pub interp: f64,
    pub irp: f64,
    pub provider_beta: f64,
    pub falling: bool,
}

pub fn offer_case() -> impl Strategy<Value = OfferCase> {
    (
        0usize..60,
        0.0..1.0f64,
        0.05..10.0f64,
        0u64..9000,
        0u64..9000,
        0.0..=1.0f64,
        0.0..1.0f64,
        0.05..10.0f64,
        any::<bool>(),
    )
        .prop_map(
            |(consumer, k, beta, a, b, interp, irp, provider_beta, falling)| OfferCase {
                consumer,
                k,
                beta,
                t1: a.min(b),
                t2: a.max(b),
                interp,
                irp,
                provider_beta,
                falling,
            },
        )
}

/// Offers stay inside the agents' ranges and concede monotonically in time.
pub fn check_offers(c: &OfferCase) -> Result<(), TestCaseError> {
    let cfg = ScenarioConfig::table2();
    let mut consumer = cfg.expand_consumers().remove(c.consumer);
    consumer.k = c.k;
    consumer.beta = c.beta;
    let early = consumer_counteroffer(c.t1, &consumer);
    let late = consumer_counteroffer(c.t2, &consumer);
    for o in [&early, &late] {
        for r in Resource::ALL {
            let b = consumer.resource_bounds(r);
            prop_assert!(b.min <= o.quantity(r) && o.quantity(r) <= b.max);
        }
        prop_assert!(consumer.price.min <= o.price && o.price <= consumer.price.max);
    }
    prop_assert!(early.price <= late.price);
    for r in Resource::ALL {
        prop_assert!(early.quantity(r) >= late.quantity(r));
    }

    let mut range = cfg.providers.clone();
    range.irp_fraction = c.irp;
    range.concession = if c.falling {
        Concession::Falling
    } else {
        Concession::Rising
    };
    let server = ServerProfile {
        provider_label: "PX".into(),
        vendor_model: "x".into(),
        ssj_ops_per_watt: 1.0,
    };
    let p = range.provider_at(1, c.interp, server);
    prop_assert_eq!(p.id, AgentId::Provider(1));
    for r in Resource::ALL {
        let a = provider_resource_price(c.t1, r, c.provider_beta, &p);
        let b = provider_resource_price(c.t2, r, c.provider_beta, &p);
        let (lo, hi) = (p.min_rp.get(r), p.max_rp.get(r));
        prop_assert!(lo <= a && a <= hi && lo <= b && b <= hi);
        if c.falling {
            prop_assert!(a >= b);
        } else {
            prop_assert!(a <= b);
        }
    }
    Ok(())
}
