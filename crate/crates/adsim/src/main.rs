//! Thin command-line front end; all logic lives in [`adsim::harness`].
//!
//! Exit codes: 0 success, 1 usage error, 2 data/config error, 3 a
//! counterexample's claim failed to reproduce.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use adsim::harness::{
    self, HarnessError, RuleFamily, SneSearchSpec, SweepSpec,
};
use adsim::objectives::{EstimatorConfig, PaymentRule};
use adsim::position_auction::SlotLayout;
use adsim::templates::GridSearchConfig;
use adsim::valuations::ObjectiveWeights;

#[derive(Parser)]
#[command(
    name = "adsim",
    version,
    about = "Sponsored-search auction simulation: parameter sweeps, trade-off \
             frontiers, impression caps, log replay, and equilibrium checks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate auction metrics over a rule's parameter grid; emits CSV.
    Sweep {
        /// Preset name (`uniform8x3`, `lahaie-pennock`) or scenario JSON path.
        #[arg(long)]
        scenario: String,
        /// standard | subtractive | impression | two-param | psi
        #[arg(long, default_value = "standard")]
        rule: String,
        /// Comma-separated parameter values; two-param crosses the grid
        /// with itself (r outer, rho inner).
        #[arg(long, default_value = "0")]
        grid: String,
        /// truthful | gsp
        #[arg(long, default_value = "truthful")]
        pricing: String,
        /// Objective weight on revenue (psi rule only).
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Objective weight on welfare (psi rule only).
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        /// Objective weight on clicks (psi rule only).
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        /// Monte Carlo samples per grid point.
        #[arg(long, default_value_t = 10_000)]
        samples: u64,
        /// Master seed; defaults to the scenario's `seed` field.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores, 1 = inline); the output bytes are
        /// identical for any setting.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the revenue/welfare objective mix of the psi-optimal auction.
    Frontier {
        /// Preset name or scenario JSON path.
        #[arg(long)]
        scenario: String,
        /// Comma-separated revenue weights alpha in [0, 1]; each point runs
        /// the psi-optimal auction for (alpha, 1 - alpha, 0).
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        grid: String,
        #[arg(long, default_value_t = 10_000)]
        samples: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve an impression-capped allocation problem; emits a JSON report.
    Adcap {
        /// Path to the problem JSON (bidders, terms, weights, theta).
        config: String,
        /// Override the config's impression cap.
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, default_value_t = 20_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustively search a template scenario's bid grid for a symmetric
    /// Nash equilibrium; emits a JSON report (exit 0 whether or not one
    /// exists — absence at a resolution is a result, not an error).
    SneSearch {
        /// Scenario JSON path (must carry a templates block).
        #[arg(long)]
        scenario: String,
        /// Grid points per bidder.
        #[arg(long, default_value_t = 15)]
        grid: usize,
        /// considerate | indifferent | indifferent-cap
        #[arg(long, default_value = "considerate")]
        payment: String,
        /// standard | second-highest
        #[arg(long, default_value = "standard")]
        allocation: String,
        /// Restrict bids to at most each bidder's value.
        #[arg(long, action = ArgAction::Set, default_value_t = true)]
        conservative: bool,
        /// Extra comma-separated bid levels added to every bidder's grid.
        #[arg(long, default_value = "")]
        anchors: String,
        /// Abort if the profile count would exceed this.
        #[arg(long, default_value_t = 4_000_000_000)]
        budget: u64,
        /// Deviation-grid resolution for re-verifying a found profile.
        #[arg(long, default_value_t = 200)]
        verify_grid: usize,
        /// Objective weight on revenue (requires linear virtual values; the
        /// default objective is pure welfare).
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        /// Objective weight on welfare.
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Objective weight on clicks.
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-score a historical bid log under alternative rules; emits CSV.
    Replay {
        /// Path to the log CSV (`auction_id,bidder_id,bid,weight`).
        log: String,
        /// Scenario providing the slot layout.
        #[arg(long)]
        scenario: Option<String>,
        /// Comma-separated slot effects (overrides --scenario).
        #[arg(long)]
        slots: Option<String>,
        /// standard | subtractive | impression | two-param
        #[arg(long, default_value = "standard")]
        rule: String,
        #[arg(long, default_value = "0")]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild and re-check a packaged counterexample scenario. Exits 0
    /// iff the claim reproduces, 3 otherwise.
    Counterexample {
        /// non-implementation | tc-nonexistence | tc-unoptimal | ti-nonexistence
        name: String,
        /// Size parameter for tc-unoptimal.
        #[arg(long)]
        m: Option<usize>,
        /// Perturbation epsilon.
        #[arg(long)]
        eps: Option<f64>,
        /// Template scale delta for ti-nonexistence.
        #[arg(long)]
        delta: Option<f64>,
        /// Write the full JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the instance as a harness scenario JSON here.
        #[arg(long)]
        export_scenario: Option<PathBuf>,
    },
}

fn parse_pricing(name: &str) -> Result<PaymentRule, HarnessError> {
    match name.to_ascii_lowercase().as_str() {
        "truthful" => Ok(PaymentRule::Truthful),
        "gsp" => Ok(PaymentRule::Gsp),
        other => Err(HarnessError::Usage(format!(
            "unknown pricing '{other}' (expected truthful or gsp)"
        ))),
    }
}

fn with_output(
    path: Option<&Path>,
    emit: impl FnOnce(&mut dyn Write) -> Result<(), HarnessError>,
) -> Result<(), HarnessError> {
    match path {
        Some(p) => {
            let mut file = std::fs::File::create(p)
                .map_err(|e| HarnessError::Data(format!("cannot write {}: {e}", p.display())))?;
            emit(&mut file)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            emit(&mut lock)
        }
    }
}

fn emit_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value)?;
    with_output(path, |w| {
        writeln!(w, "{text}").map_err(HarnessError::from)
    })
}

fn run(cmd: Cmd) -> Result<(), HarnessError> {
    match cmd {
        Cmd::Sweep {
            scenario,
            rule,
            grid,
            pricing,
            alpha,
            beta,
            gamma,
            samples,
            seed,
            threads,
            out,
        } => {
            let loaded = harness::load_scenario(&scenario)?;
            let spec = SweepSpec {
                family: RuleFamily::parse(&rule)?,
                grid: harness::parse_float_list(&grid)?,
                weights: ObjectiveWeights::new(alpha, beta, gamma)?,
                pricing: parse_pricing(&pricing)?,
            };
            let est = EstimatorConfig {
                samples,
                seed: seed.unwrap_or(loaded.config.seed),
                threads,
            };
            let rows = harness::run_sweep(&loaded, &spec, &est)?;
            with_output(out.as_deref(), |w| harness::write_sweep_csv(&rows, w))
        }
        Cmd::Frontier { scenario, grid, samples, seed, threads, out } => {
            let loaded = harness::load_scenario(&scenario)?;
            let alphas = harness::parse_float_list(&grid)?;
            let est = EstimatorConfig {
                samples,
                seed: seed.unwrap_or(loaded.config.seed),
                threads,
            };
            let points = harness::run_frontier(&loaded, &alphas, &est)?;
            with_output(out.as_deref(), |w| harness::write_frontier_csv(&points, w))
        }
        Cmd::Adcap { config, theta, samples, seed, threads, out } => {
            let mut cfg = harness::load_adcap(&config)?;
            if let Some(t) = theta {
                cfg.theta = t;
            }
            let est = EstimatorConfig { samples, seed, threads };
            let solution = harness::run_adcap(&cfg, &est)?;
            emit_json(&solution, out.as_deref())
        }
        Cmd::SneSearch {
            scenario,
            grid,
            payment,
            allocation,
            conservative,
            anchors,
            budget,
            verify_grid,
            alpha,
            beta,
            gamma,
            threads,
            out,
        } => {
            if threads >= 1 {
                // The grid search runs on the global pool; the result is
                // identical for any pool size.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
            }
            let loaded = harness::load_scenario(&scenario)?;
            let spec = SneSearchSpec {
                weights: ObjectiveWeights::new(alpha, beta, gamma)?,
                payment: harness::parse_payment(&payment)?,
                allocation: harness::parse_allocation(&allocation)?,
                config: GridSearchConfig {
                    grid,
                    conservative,
                    anchors: harness::parse_float_list(&anchors)?,
                    budget,
                },
                verify_grid,
            };
            let report = harness::run_sne_search(&loaded, &spec)?;
            emit_json(&report, out.as_deref())
        }
        Cmd::Replay { log, scenario, slots, rule, grid, out } => {
            let layout = match (&slots, &scenario) {
                (Some(list), _) => SlotLayout::new(harness::parse_float_list(list)?)
                    .map_err(|e| HarnessError::Data(format!("slots: {e}")))?,
                (None, Some(s)) => harness::load_scenario(s)?.scenario.slots,
                (None, None) => {
                    return Err(HarnessError::Usage(
                        "replay needs --slots or --scenario for the slot layout".into(),
                    ))
                }
            };
            let family = RuleFamily::parse(&rule)?;
            let grid = harness::parse_float_list(&grid)?;
            let file = std::fs::File::open(&log)
                .map_err(|e| HarnessError::Data(format!("cannot read log '{log}': {e}")))?;
            let parsed = harness::parse_replay_log(file)?;
            let rows = harness::run_replay(&parsed, family, &grid, &layout)?;
            with_output(out.as_deref(), |w| harness::write_replay_csv(&rows, w))
        }
        Cmd::Counterexample { name, m, eps, delta, out, export_scenario } => {
            let kind = harness::parse_counterexample(&name, m, eps, delta)?;
            let (cx, report) = harness::run_counterexample(kind)?;
            println!(
                "{}: {}",
                report.name,
                if report.reproduced { "reproduced" } else { "NOT reproduced" }
            );
            println!("  {}", cx.description);
            println!("  {}", report.details);
            if let Some(r) = report.ratio {
                println!("  welfare ratio (equilibrium / truthful): {r:.6}");
            }
            if let Some(g) = report.deviation_gap {
                println!("  deviation margin: {g:.6}");
            }
            if let Some(p) = report.profiles {
                println!("  profiles scanned: {p}");
            }
            if let Some(path) = &out {
                emit_json(&report, Some(path))?;
            }
            if let Some(path) = &export_scenario {
                emit_json(&harness::counterexample_scenario(&cx), Some(path))?;
            }
            if report.reproduced {
                Ok(())
            } else {
                Err(HarnessError::ClaimNotReproduced(report.details))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
