//! `esvf` — scenario-driven extremum-seeking experiments.
//!
//! Exit codes: 0 all checks passed, 1 a verification or assertion failed,
//! 2 configuration or input error, 3 numeric failure (divergence, domain
//! escape).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use esvf_cli::commands::{
    self, cmd_certify, cmd_compare, cmd_simulate, cmd_sweep, cmd_verify,
};

#[derive(Parser)]
#[command(
    name = "esvf",
    version,
    about = "Simulate, verify, and certify extremum-seeking vector fields"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural identities of a scenario: cost regularity,
    /// generator identity residuals, and the dither averaging pattern
    Verify {
        /// Scenario file to verify
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Integrate a scenario, print a summary, and apply its [checks]
    Simulate {
        /// Scenario file to run
        #[arg(long)]
        scenario: PathBuf,
        /// Write the trajectory as CSV to this path
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the dither period
        #[arg(long)]
        eps: Option<f64>,
        /// Override the final time
        #[arg(long)]
        t_end: Option<f64>,
        /// Override the integration step
        #[arg(long)]
        h: Option<f64>,
    },
    /// Repeat a scenario across parameter values, writing per-run CSVs and a
    /// summary table
    Sweep {
        /// Scenario file to sweep
        #[arg(long)]
        scenario: PathBuf,
        /// Swept parameter: eps, x0, alpha, mu, or lambda
        #[arg(long)]
        param: String,
        /// Comma-separated values; an empty string sweeps nothing
        #[arg(long, allow_hyphen_values = true, default_value = "")]
        values: String,
        /// Output directory for run CSVs and summary.csv
        #[arg(long)]
        out: PathBuf,
        /// Concurrent runs
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Override the dither period
        #[arg(long)]
        eps: Option<f64>,
        /// Override the final time
        #[arg(long)]
        t_end: Option<f64>,
        /// Override the integration step
        #[arg(long)]
        h: Option<f64>,
    },
    /// Assemble the admissible-period certificate and re-run the loop at the
    /// certified period
    Certify {
        /// Scenario file with a [certificate] section
        #[arg(long)]
        scenario: PathBuf,
        /// Write the certificate as key=value lines to this path
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two trajectory CSVs cell by cell
    Compare {
        /// Reference CSV
        a: PathBuf,
        /// Candidate CSV
        b: PathBuf,
        /// Largest allowed cellwise deviation
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Verify { scenario } => cmd_verify(scenario),
        Command::Simulate {
            scenario,
            out,
            eps,
            t_end,
            h,
        } => cmd_simulate(scenario, out.as_deref(), *eps, *t_end, *h),
        Command::Sweep {
            scenario,
            param,
            values,
            out,
            workers,
            eps,
            t_end,
            h,
        } => cmd_sweep(scenario, param, values, out, *workers, *eps, *t_end, *h),
        Command::Certify { scenario, out } => cmd_certify(scenario, out.as_deref()),
        Command::Compare { a, b, tolerance } => cmd_compare(a, b, *tolerance),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code_for(&err) as u8)
        }
    }
}
