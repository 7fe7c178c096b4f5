//! Straight-line reference formulas and fixtures shared by the integration
//! tests. Deliberately written without the library's helpers.

#![allow(dead_code)]

pub mod props;

use std::path::PathBuf;

use bazaar_tax_sim::dataset::{parse_server_dataset, ServerDatasetRow};

pub const TABLE3: &str = include_str!("../../../../data/table3.csv");

pub fn table3() -> Vec<ServerDatasetRow> {
    parse_server_dataset(TABLE3.as_bytes()).unwrap()
}

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        return 0.0;
    }
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

#[allow(clippy::too_many_arguments)]
pub mod oracle {
    pub fn consumer_alpha(t: f64, t_max: f64, k: f64, beta: f64) -> f64 {
        let tt = if t < t_max { t } else { t_max };
        k + (1.0 - k) * (tt / t_max).powf(1.0 / beta)
    }

    /// (storage, ram, cpu, price)
    pub fn consumer_counteroffer(
        t: f64,
        t_max: f64,
        k: f64,
        beta: f64,
        storage: (f64, f64),
        ram: (f64, f64),
        cpu: (f64, f64),
        price: (f64, f64),
    ) -> (f64, f64, f64, f64) {
        let a = consumer_alpha(t, t_max, k, beta);
        (
            storage.0 + (1.0 - a) * (storage.1 - storage.0),
            ram.0 + (1.0 - a) * (ram.1 - ram.0),
            cpu.0 + (1.0 - a) * (cpu.1 - cpu.0),
            price.0 + a * (price.1 - price.0),
        )
    }

    pub fn provider_resource_price(
        t: f64,
        t_max: f64,
        irp: f64,
        beta: f64,
        min_rp: f64,
        max_rp: f64,
    ) -> f64 {
        let tt = if t < t_max { t } else { t_max };
        let a = irp + (1.0 - irp) * (tt / t_max).powf(1.0 / beta);
        min_rp + a * (max_rp - min_rp)
    }

    /// `quantities`, `availability`, `importance`, `min_rp`, `max_rp` in the
    /// order storage, ram, cpu.
    pub fn provider_price(
        t: f64,
        t_max: f64,
        irp: f64,
        quantities: [f64; 3],
        availability: [f64; 3],
        importance: [f64; 3],
        min_rp: [f64; 3],
        max_rp: [f64; 3],
    ) -> f64 {
        let mean_a = (availability[0] + availability[1] + availability[2]) / 3.0;
        let mut total = 0.0;
        for i in 0..3 {
            let b1 = (availability[i] - mean_a).exp();
            let b2 = (1.0 / 3.0 - importance[i]).exp();
            let p1 = provider_resource_price(t, t_max, irp, b1, min_rp[i], max_rp[i]);
            let p2 = provider_resource_price(t, t_max, irp, b2, min_rp[i], max_rp[i]);
            total += (p1 + p2) / 2.0 * quantities[i];
        }
        total
    }

    pub fn interpolation_factor(ssj: f64, lo: f64, hi: f64) -> f64 {
        (ssj - lo) / (hi - lo)
    }

    pub fn efficiency_factor(interp: f64, ep: f64) -> f64 {
        ep - interp * ep
    }

    pub fn green_cloud_tax(price: f64, rate: f64, eff: f64) -> f64 {
        price * rate * eff
    }

    pub fn vat(price: f64, rate: f64) -> f64 {
        price * rate
    }
}

/// Largest relative error of each library formula against its oracle over
/// a 100-point grid.
pub fn formula_grid_errors() -> Vec<(&'static str, f64)> {
    use bazaar_tax_sim::market::{Resource, ServerProfile, VmOffer};
    use bazaar_tax_sim::negotiation::{
        consumer_alpha, consumer_counteroffer, provider_price_offer, provider_resource_price,
    };
    use bazaar_tax_sim::taxation::{compute_tax, efficiency_factor, interpolation_factor};
    use bazaar_tax_sim::{ScenarioConfig, TaxPolicy};

    let cfg = ScenarioConfig::table2();
    let consumers = cfg.expand_consumers();
    let server = ServerProfile {
        provider_label: "PX".into(),
        vendor_model: "grid".into(),
        ssj_ops_per_watt: 1000.0,
    };
    let mut worst = [0.0f64; 7];
    let mut bump =
        |slot: usize, got: f64, want: f64| worst[slot] = worst[slot].max(rel_err(got, want));

    for i in 0..100u64 {
        let fi = i as f64;
        let mut c = consumers[(i % 60) as usize].clone();
        c.k = (i % 10) as f64 / 20.0;
        c.beta = 0.25 + (i % 7) as f64 * 0.5;
        let t = i * 73;
        let tm = c.t_max as f64;

        bump(
            0,
            consumer_alpha(t, &c),
            oracle::consumer_alpha(t as f64, tm, c.k, c.beta),
        );

        let o = consumer_counteroffer(t, &c);
        let (s, r, p, price) = oracle::consumer_counteroffer(
            t as f64,
            tm,
            c.k,
            c.beta,
            (c.storage.min, c.storage.max),
            (c.ram.min, c.ram.max),
            (c.processing_power.min, c.processing_power.max),
            (c.price.min, c.price.max),
        );
        for (got, want) in [
            (o.storage, s),
            (o.ram, r),
            (o.processing_power, p),
            (o.price, price),
        ] {
            bump(1, got, want);
        }

        let mut range = cfg.providers.clone();
        range.irp_fraction = (i % 5) as f64 / 10.0;
        range.availability.ram = 0.5 + (i % 4) as f64 * 0.1;
        let prov = range.provider_at(1, fi / 99.0, server.clone());
        let beta = 0.3 + (i % 9) as f64 * 0.4;
        let res = Resource::ALL[(i % 3) as usize];
        let tp = i * 72;
        bump(
            2,
            provider_resource_price(tp, res, beta, &prov),
            oracle::provider_resource_price(
                tp as f64,
                prov.t_max as f64,
                prov.irp_fraction,
                beta,
                prov.min_rp.get(res),
                prov.max_rp.get(res),
            ),
        );

        let incoming = VmOffer {
            sender: c.id,
            ..consumer_counteroffer(tp, &c)
        };
        let offer = provider_price_offer(&incoming, tp, &prov);
        let arr =
            |v: bazaar_tax_sim::market::PerResource<f64>| [v.storage, v.ram, v.processing_power];
        bump(
            3,
            offer.price,
            oracle::provider_price(
                tp as f64,
                prov.t_max as f64,
                prov.irp_fraction,
                [incoming.storage, incoming.ram, incoming.processing_power],
                arr(prov.availability),
                arr(prov.importance),
                arr(prov.min_rp),
                arr(prov.max_rp),
            ),
        );

        let ssj = 498.0 + fi * (12368.0 - 498.0) / 99.0;
        bump(
            4,
            interpolation_factor(ssj, 498.0, 12368.0).unwrap(),
            oracle::interpolation_factor(ssj, 498.0, 12368.0),
        );

        let interp = fi / 99.0;
        let ep = fi * 0.8;
        let eff = efficiency_factor(interp, ep);
        bump(5, eff, oracle::efficiency_factor(interp, ep));

        let net = 5.0 + fi * 0.9;
        let rate = (i % 30) as f64 * 0.01;
        let (got, want) = if i % 2 == 0 {
            (
                compute_tax(&TaxPolicy::vat(rate), net, &offer, 0.0),
                oracle::vat(net, rate),
            )
        } else {
            (
                compute_tax(&TaxPolicy::green_cloud(rate, ep), net, &offer, eff),
                oracle::green_cloud_tax(net, rate, oracle::efficiency_factor(interp, ep)),
            )
        };
        bump(6, got, want);
    }
    let names = [
        "consumer_alpha",
        "consumer_counteroffer",
        "provider_resource_price",
        "provider_price_offer",
        "interpolation_factor",
        "efficiency_factor",
        "compute_tax",
    ];
    names.into_iter().zip(worst).collect()
}
