use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cbdc_core::harness::{self, bundled_names, FuzzOptions, ImscMode, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "cbdc-sim",
    about = "Run interoperable ledger scenarios against the invariant suite"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Registry {
    Decentralized,
    Centralized,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario, bundled or from a TOML file.
    Run {
        #[arg(long)]
        scenario: String,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        imsc: Option<Registry>,
        #[arg(long)]
        finality_depth: Option<u64>,
        /// Timelock length in seconds.
        #[arg(long)]
        htlc_timeout: Option<u64>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Print the execution trace.
        #[arg(long)]
        trace: bool,
    },
    /// Run every bundled scenario.
    All {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the bundled scenarios.
    List,
    /// Run randomized transfer worlds.
    Fuzz {
        #[arg(long, default_value_t = 100)]
        rounds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_stalls: bool,
        #[arg(long)]
        no_aborts: bool,
        /// Run only this round and print its full report.
        #[arg(long)]
        show: Option<u64>,
    },
}

fn load(scenario: &str) -> Result<ScenarioConfig> {
    if bundled_names().any(|n| n == scenario) {
        return Ok(ScenarioConfig::bundled(scenario)?);
    }
    let text = std::fs::read_to_string(scenario)
        .with_context(|| format!("{scenario} is neither a bundled scenario nor a readable file"))?;
    Ok(ScenarioConfig::parse(scenario, &text)?)
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let ok = match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            imsc,
            finality_depth,
            htlc_timeout,
            report,
            trace,
        } => {
            let mut cfg = load(&scenario)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = imsc {
                cfg.imsc = match m {
                    Registry::Decentralized => ImscMode::Decentralized,
                    Registry::Centralized => ImscMode::Centralized,
                };
            }
            if let Some(d) = finality_depth {
                cfg.finality_depth = d;
            }
            if let Some(t) = htlc_timeout {
                cfg.htlc_timeout = t;
            }
            cfg.validate()?;
            let r = harness::run_scenario(cfg)?;
            print!("{}", r.summary());
            if trace {
                for line in &r.trace {
                    println!("{line}");
                }
            }
            if let Some(path) = report {
                std::fs::write(&path, r.to_json())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            r.passed
        }
        Cmd::All { seed } => {
            let mut all = true;
            for name in bundled_names() {
                let mut cfg = ScenarioConfig::bundled(name)?;
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                let r = harness::run_scenario(cfg)?;
                print!("{}", r.summary());
                all &= r.passed;
            }
            all
        }
        Cmd::List => {
            for name in bundled_names() {
                let cfg = ScenarioConfig::bundled(name)?;
                println!("{name:28} {}", cfg.description);
            }
            true
        }
        Cmd::Fuzz {
            rounds,
            seed,
            no_stalls,
            no_aborts,
            show,
        } => {
            if rounds == 0 {
                bail!("at least one round is required");
            }
            let opts = FuzzOptions {
                seed,
                rounds,
                stalls: !no_stalls,
                aborts: !no_aborts,
                collusion: !no_aborts,
            };
            if let Some(round) = show {
                let cfg = harness::fuzz_config(&opts, round);
                println!("{cfg:#?}");
                let r = harness::run_scenario(cfg)?;
                print!("{}", r.summary());
                for line in &r.trace {
                    println!("{line}");
                }
                return Ok(if r.passed {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                });
            }
            let s = harness::fuzz_transfers(&opts);
            println!(
                "{} rounds, {} transfers: {} completed, {} refunded, {} rejected, {} unclaimed, {} unsettled; {} escalations",
                s.rounds, s.transfers, s.completed, s.refunded, s.rejected, s.unclaimed, s.unsettled, s.escalations
            );
            if !s.unsettled_rounds.is_empty() {
                println!("unsettled in rounds {:?}", s.unsettled_rounds);
            }
            for v in &s.violations {
                println!(
                    "round {} (seed {}): {}",
                    v.round,
                    v.seed,
                    v.failed.join(", ")
                );
                for w in &v.witnesses {
                    println!("    {w}");
                }
            }
            s.passed()
        }
    };
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
