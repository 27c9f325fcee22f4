use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use shortpulse::config::{AppendixSection, ExperimentConfig};
use shortpulse::error::Error;
use shortpulse::exec::{self, Exec};
use shortpulse::harness;
use shortpulse::selftest::Fault;

/// Short-pulse equation simulation and scattering diagnostics.
#[derive(Parser, Debug)]
#[command(name = "shortpulse", version)]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for probes, bands and scan cases.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Accept a trajectory whose hash does not match the config.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve the initial data and store snapshots plus the norms table.
    Simulate,
    /// Probe a stored trajectory and fit the scattering diagnostics.
    Scatter {
        /// Trajectory directory written by `simulate`.
        trajectory: PathBuf,
    },
    /// Scan the counterexample ratios.
    Appendix {
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        n_min: Option<f64>,
        #[arg(long)]
        n_max: Option<f64>,
    },
    /// Run the identity suite.
    Selftest {
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Scatter { .. } => "scatter",
            Command::Appendix { .. } => "appendix",
            Command::Selftest { .. } => "selftest",
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn emit(value: &serde_json::Value) {
    println!("{value:#}");
}

/// Returns the exit code for a completed command.
fn run(cli: &Cli) -> Result<u8, Error> {
    let exec = Exec::default();
    if let Command::Selftest { inject_fault } = &cli.command {
        let (report, summary) = harness::selftest_cmd(*inject_fault);
        eprint!("{}", report.render());
        emit(&serde_json::to_value(&summary)?);
        return Ok(if summary.passed { 0 } else { 1 });
    }
    let cfg = load_config(cli.config.as_deref())?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let json = match &cli.command {
        Command::Simulate => {
            let s = harness::simulate(&cfg, &out, exec)?;
            eprintln!(
                "simulate: {} snapshots to t = {}, L2 drift {:.2e}",
                s.stats.snapshots, s.stats.t_last, s.stats.l2_max_drift
            );
            serde_json::to_value(&s)
        }
        Command::Scatter { trajectory } => {
            let s = harness::scatter(&cfg, trajectory, &out, cli.force, exec)?;
            for (name, why) in &s.degenerate {
                eprintln!("scatter: {name} degenerate: {why}");
            }
            serde_json::to_value(&s)
        }
        Command::Appendix { rho, n_min, n_max } => {
            let d = &cfg.appendix;
            let section = AppendixSection {
                rho: rho.unwrap_or(d.rho),
                n_min: n_min.unwrap_or(d.n_min),
                n_max: n_max.unwrap_or(d.n_max),
            };
            serde_json::to_value(&harness::appendix_cmd(&cfg, &section, &out, exec)?)
        }
        Command::Selftest { .. } => unreachable!("handled above"),
    }?;
    emit(&json);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        if !exec::set_jobs(jobs) {
            eprintln!("warning: --jobs {jobs} ignored");
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = harness::exit_code(&e);
            eprintln!("error: {e}");
            emit(&json!({
                "command": cli.command.name(),
                "error": e.to_string(),
                "exit_code": code,
            }));
            ExitCode::from(code as u8)
        }
    }
}
