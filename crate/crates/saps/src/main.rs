use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use saps::config::{TransportKind, TransportSpec};
use saps::runner::{build_bandwidth, estimate_config_rho, run_experiment, RunOptions};
use saps::verify::{run_verification_suite, SuiteOptions};
use saps::{metrics, ExperimentConfig, SapsError};
use saps_core::coordinator::{comm_cost, CostAlgorithm, CostModelInput};

const EXIT_VALIDATION: u8 = 1;
const EXIT_SUITE: u8 = 2;

#[derive(Parser)]
#[command(name = "saps", version, about = "Sparsified single-peer gossip SGD: experiments and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Sim,
    Tcp,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Per-round metrics CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        transport: Option<TransportArg>,
        /// Overrides master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Mixing matrices sampled for the ρ estimate (0 skips it).
        #[arg(long, default_value_t = 1000)]
        rho_samples: usize,
    },
    /// Run the verification suite.
    Verify {
        #[arg(long)]
        quick: bool,
        /// Negative control: the suite must fail on a corrupted mixing matrix.
        #[arg(long, hide = true)]
        inject_bad_matrix: bool,
    },
    /// Estimate ρ for a config's peer selection.
    Rho {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Analytic communication cost (server, worker) in parameters.
    Cost {
        #[arg(long)]
        algo: CostAlgorithm,
        #[arg(long = "N")]
        n_params: u64,
        #[arg(long = "n")]
        n_workers: u64,
        #[arg(long = "T")]
        rounds: u64,
        #[arg(long = "c", default_value_t = 1)]
        ratio: u64,
        #[arg(long = "np")]
        n_peers: Option<u64>,
    },
}

fn run(command: Command) -> Result<ExitCode, SapsError> {
    match command {
        Command::Run {
            config,
            out,
            transport,
            seed,
            rho_samples,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(t) = transport {
                let kind = match t {
                    TransportArg::Sim => TransportKind::Sim,
                    TransportArg::Tcp => TransportKind::Tcp,
                };
                cfg.transport = TransportSpec::Tcp {
                    kind,
                    bind: cfg.transport.bind().to_string(),
                };
            }
            let opts = RunOptions {
                rho_samples,
                ..RunOptions::default()
            };
            let output = run_experiment(&cfg, &opts)?;
            if let Some(path) = out {
                metrics::export_csv(&output.records, &path)?;
            }
            println!("{}", output.summary);
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            quick,
            inject_bad_matrix,
        } => {
            let report = run_verification_suite(&SuiteOptions {
                quick,
                inject_bad_matrix,
            });
            println!("{report}");
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_SUITE)
            })
        }
        Command::Rho { config, samples } => {
            let cfg = ExperimentConfig::load(&config)?;
            let b = build_bandwidth(&cfg)?;
            let est = estimate_config_rho(&cfg, &b, samples)?;
            println!("rho {:.9} ± {:.2e} ({} samples)", est.rho, est.std_error, est.n_samples);
            Ok(ExitCode::SUCCESS)
        }
        Command::Cost {
            algo,
            n_params,
            n_workers,
            rounds,
            ratio,
            n_peers,
        } => {
            let (server, worker) = comm_cost(&CostModelInput {
                algorithm: algo,
                n_params,
                n_workers,
                rounds,
                ratio,
                n_peers,
            })?;
            println!("{algo}: server {server} worker {worker}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}
