//! `passlab`: certificates for passivity under sampling and quantization.

mod commands;
mod report;
mod scenario;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};

use crate::commands::CommandOpts;
use crate::report::Report;
use crate::scenario::Scenario;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Core(passlab_core::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<passlab_core::Error> for CliError {
    fn from(e: passlab_core::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Scenario JSON file
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for the report and CSV artifacts
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed override for randomized checks
    #[arg(long)]
    seed: Option<u64>,
    /// Trial count for randomized checks
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Proposed closed-loop input index; defaults to a value strictly below
    /// both side indices
    #[arg(long = "nu-c")]
    nu_c: Option<f64>,
    /// Forced closed-loop output index, bypassing the feasible bound
    #[arg(long = "rho-c")]
    rho_c: Option<f64>,
}

#[derive(Debug, Parser)]
#[command(
    name = "passlab",
    version,
    about = "Certificates for passivity under sampling and quantization"
)]
enum Cli {
    /// Check storage, passivity, gain, incremental-stability and
    /// detectability certificates
    Verify(CommonArgs),
    /// Abstraction feasibility and the symbolic transition system
    Abstract(CommonArgs),
    /// Index degradation under sampling and quantization
    Degrade(CommonArgs),
    /// Closed-loop index composition and the feasible index region
    Closedloop(CommonArgs),
    /// Simulate the loop and monitor the dissipation inequality
    Simulate(CommonArgs),
    /// Ultimate state-norm bound for the interconnection
    Bound(CommonArgs),
    /// Everything above in one report
    Report(CommandArgsReport),
}

#[derive(Debug, Args)]
struct CommandArgsReport {
    #[command(flatten)]
    common: CommonArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let (name, args): (&str, &CommonArgs) = match &cli {
        Cli::Verify(a) => ("verify", a),
        Cli::Abstract(a) => ("abstract", a),
        Cli::Degrade(a) => ("degrade", a),
        Cli::Closedloop(a) => ("closedloop", a),
        Cli::Simulate(a) => ("simulate", a),
        Cli::Bound(a) => ("bound", a),
        Cli::Report(a) => ("report", &a.common),
    };
    match run(name, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(name: &str, args: &CommonArgs) -> Result<bool, CliError> {
    let ctx = Scenario::load(&args.scenario)?.into_context(&args.scenario, args.seed)?;
    let opts = CommandOpts {
        out_dir: args.out.clone(),
        trials: args.trials,
        nu_c: args.nu_c,
        rho_c: args.rho_c,
    };
    let mut report = Report::new(name, &ctx.name, ctx.seed);
    match name {
        "verify" => commands::run_verify(&ctx, &opts, &mut report)?,
        "abstract" => commands::run_abstract(&ctx, &opts, &mut report)?,
        "degrade" => commands::run_degrade(&ctx, &opts, &mut report)?,
        "closedloop" => commands::run_closedloop(&ctx, &opts, &mut report)?,
        "simulate" => commands::run_simulate(&ctx, &opts, &mut report)?,
        "bound" => commands::run_bound(&ctx, &opts, &mut report)?,
        "report" => commands::run_report(&ctx, &opts, &mut report)?,
        _ => unreachable!("subcommands are exhaustive"),
    }
    let path = report.write(&opts.out_dir)?;
    report.print_summary();
    let ok = report.all_hold();
    println!(
        "{}: {} ({} certificates, report at {})",
        name,
        if ok { "all certificates hold" } else { "certificate failure" },
        report.certificates.len(),
        path.display()
    );
    Ok(ok)
}
