//! `bazaar-tax-sim run|sweep`.
//!
//! Exit status: 0 on success, 1 when the simulation or report writing
//! fails, 2 for usage, config and dataset errors.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::load_config_bytes;
use crate::dataset::load_server_dataset;
use crate::engine::{simulate, sweep_eco_penalty, EngineError, RunOptions, ScenarioConfig};
use crate::report::{write_outputs, Mode, RunManifest, ScenarioOutput};
use crate::taxation::TaxPolicy;

#[derive(Debug, Parser)]
#[command(
    name = "bazaar-tax-sim",
    version,
    about = "IaaS bazaar market simulator with tax policies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation.
    Run(CommonArgs),
    /// Run one simulation per eco penalty.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated eco penalties.
        #[arg(long, value_delimiter = ',', required = true)]
        penalties: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaxKind {
    Vat,
    Fee,
    Resource,
    Greencloud,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file.
    #[arg(long)]
    pub config: PathBuf,
    /// Server dataset CSV, overriding the scenario's.
    #[arg(long)]
    pub servers: Option<PathBuf>,
    /// Tax policy, overriding the scenario's.
    #[arg(long, value_enum)]
    pub tax: Option<TaxKind>,
    /// VAT or GreenCloud rate, or the per-unit rate of a resource tax.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub fee_amount: Option<f64>,
    #[arg(long)]
    pub eco_penalty: Option<f64>,
    /// Round interval.
    #[arg(long)]
    pub dt: Option<u64>,
    /// Also write traces.jsonl.
    #[arg(long)]
    pub traces: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

fn sim(message: impl ToString) -> Failure {
    Failure {
        code: 1,
        message: message.to_string(),
    }
}

fn engine_failure(e: EngineError) -> Failure {
    match e {
        EngineError::Validation(_)
        | EngineError::Dataset(_)
        | EngineError::ProviderCountMismatch { .. } => usage(e),
        EngineError::EmptyPenalties => usage(e),
        EngineError::Tax(_) | EngineError::Negotiation(_) => sim(e),
    }
}

fn pick_policy(current: &TaxPolicy, args: &CommonArgs) -> Result<TaxPolicy, Failure> {
    let kind = args.tax.map_or(current.kind(), |k| match k {
        TaxKind::Vat => "vat",
        TaxKind::Fee => "fee",
        TaxKind::Resource => "resource",
        TaxKind::Greencloud => "greencloud",
    });
    let same = current.kind() == kind;
    let policy = match kind {
        "vat" => {
            let old = match current {
                TaxPolicy::Vat { rate } => Some(*rate),
                _ => None,
            };
            let rate = args
                .rate
                .or(old)
                .ok_or_else(|| usage("--tax vat needs --rate"))?;
            TaxPolicy::Vat { rate }
        }
        "fee" => {
            let old = match current {
                TaxPolicy::Fee { amount } => Some(*amount),
                _ => None,
            };
            let amount = args
                .fee_amount
                .or(old)
                .ok_or_else(|| usage("--tax fee needs --fee-amount"))?;
            TaxPolicy::Fee { amount }
        }
        "resource" => match (current, same) {
            (
                TaxPolicy::ResourceTax {
                    base,
                    rate_per_unit,
                    schedule,
                },
                true,
            ) => TaxPolicy::ResourceTax {
                base: *base,
                rate_per_unit: args.rate.unwrap_or(*rate_per_unit),
                schedule: schedule.clone(),
            },
            _ => {
                return Err(usage(
                    "--tax resource needs a [tax] resource policy in the config",
                ))
            }
        },
        _ => {
            let (old_rate, old_ep, progressive) = match current {
                TaxPolicy::GreenCloud {
                    rate,
                    eco_penalty,
                    progressive,
                } => (Some(*rate), Some(*eco_penalty), progressive.clone()),
                _ => (None, None, Vec::new()),
            };
            TaxPolicy::GreenCloud {
                rate: args
                    .rate
                    .or(old_rate)
                    .ok_or_else(|| usage("--tax greencloud needs --rate"))?,
                eco_penalty: args.eco_penalty.or(old_ep).unwrap_or(f64::NAN),
                progressive,
            }
        }
    };
    if args.fee_amount.is_some() && kind != "fee" {
        return Err(usage("--fee-amount only applies to --tax fee"));
    }
    if args.eco_penalty.is_some() && kind != "greencloud" {
        return Err(usage("--eco-penalty only applies to --tax greencloud"));
    }
    Ok(policy)
}

struct Prepared {
    config: ScenarioConfig,
    servers: Vec<crate::dataset::ServerDatasetRow>,
    bytes: Vec<u8>,
}

fn prepare(args: &CommonArgs) -> Result<Prepared, Failure> {
    let (mut config, bytes) = load_config_bytes(&args.config).map_err(usage)?;
    config.tax = pick_policy(&config.tax, args)?;
    if let Some(dt) = args.dt {
        config.dt = dt;
    }
    if let Some(s) = &args.servers {
        config.servers = Some(s.clone());
    }
    let path = config
        .servers
        .clone()
        .ok_or_else(|| usage("no server dataset: pass --servers or set servers in [simulation]"))?;
    let servers = load_server_dataset(&path).map_err(usage)?;
    Ok(Prepared {
        config,
        servers,
        bytes,
    })
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>, Failure> {
    match cli.command {
        Command::Run(args) => {
            let p = prepare(&args)?;
            if let Some(ep) = p.config.tax.eco_penalty() {
                if ep.is_nan() {
                    return Err(usage("--tax greencloud needs --eco-penalty"));
                }
            }
            let report = simulate(
                &p.config,
                &p.servers,
                RunOptions {
                    traces: args.traces,
                },
            )
            .map_err(engine_failure)?;
            let penalties = p.config.tax.eco_penalty().into_iter().collect();
            let manifest = RunManifest::new(
                &args.config,
                &p.bytes,
                p.config.tax.to_string(),
                penalties,
                &args.out,
            );
            let scenarios = [ScenarioOutput {
                id: "s1".into(),
                report: &report,
            }];
            write_outputs(&args.out, Mode::Run, &scenarios, manifest).map_err(sim)
        }
        Command::Sweep {
            common: args,
            penalties,
        } => {
            let p = prepare(&args)?;
            if p.config.tax.kind() != "greencloud" {
                return Err(usage("sweep needs the greencloud tax policy"));
            }
            let runs = sweep_eco_penalty(
                &p.config,
                &p.servers,
                &penalties,
                RunOptions {
                    traces: args.traces,
                },
            )
            .map_err(engine_failure)?;
            let summary = match &p.config.tax {
                TaxPolicy::GreenCloud { rate, .. } => {
                    format!("greencloud(rate={rate},eco_penalty=swept)")
                }
                other => other.to_string(),
            };
            let manifest = RunManifest::new(&args.config, &p.bytes, summary, penalties, &args.out);
            let scenarios: Vec<_> = runs
                .iter()
                .enumerate()
                .map(|(i, (_, report))| ScenarioOutput {
                    id: format!("s{}", i + 1),
                    report,
                })
                .collect();
            write_outputs(&args.out, Mode::Sweep, &scenarios, manifest).map_err(sim)
        }
    }
}

/// Parses `args` (program name first), runs, and returns the exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", display(&p));
            }
            0
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
