//! Command-line front end: run scenarios, compare runs and sweep parameters.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fogsim::metrics::{self, Comparable, MetricsError};
use fogsim::sim::Mode;

#[derive(Parser)]
#[command(name = "fogsim", version, about = "Edge-node resource management simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write report, latency, audit, termination and
    /// trace files.
    Run {
        /// Scenario file (TOML).
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory.
        #[arg(long, env = "FOGSIM_OUT", default_value = "fogsim-out")]
        out: PathBuf,
        /// Override the scenario's mode: `fog` or `cloud_only`.
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Print latency, data and frequency reductions of a fog report against a
    /// cloud-only report of the same workload.
    Compare { fog: PathBuf, cloud: PathBuf },
    /// Run fog and cloud-only once per value of a numeric config path and
    /// write `sweep.csv`.
    Sweep {
        config: PathBuf,
        /// Dotted config path, e.g. `workload.n_users`.
        #[arg(long)]
        param: String,
        /// Comma-separated values; may be empty.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, env = "FOGSIM_OUT", default_value = "fogsim-out")]
        out: PathBuf,
    },
}

fn execute(command: Command) -> Result<(), MetricsError> {
    match command {
        Command::Run { config, seed, out, mode } => {
            let report = metrics::run_scenario(&config, seed, &out, mode)?;
            print!("{}", metrics::render_summary(&report));
            println!("outputs in {}", out.display());
        }
        Command::Compare { fog, cloud } => {
            let summary = metrics::compare(&Comparable::from_report_csv(&fog)?, &Comparable::from_report_csv(&cloud)?)?;
            print!("{}", summary.render());
        }
        Command::Sweep { config, param, values, seed, out } => {
            let values: Vec<String> =
                values.into_iter().map(|v| v.trim().to_owned()).filter(|v| !v.is_empty()).collect();
            let rows = metrics::sweep(&config, &param, &values, seed)?;
            std::fs::create_dir_all(&out).map_err(|e| MetricsError::Io { path: out.clone(), reason: e.to_string() })?;
            let path = out.join("sweep.csv");
            metrics::write_sweep(&path, &rows)?;
            println!("{} rows written to {}", rows.len(), path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fogsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
