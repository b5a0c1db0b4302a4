use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fuzzy_euler::config::parse_config;
use fuzzy_euler::hydro::System;
use fuzzy_euler::runner::{self, RunOptions, EXIT_CONFIG};
use fuzzy_euler::Error;

#[derive(Parser)]
#[command(name = "fuzzy-euler", version, about = "Damped Euler flows with nonlocal pressure: solvers, limit studies and particle model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one system and write diagnostics and snapshots.
    Simulate(Common),
    /// Dispersion relation of the linearized system on the grid lattice.
    LinearModes(Common),
    /// Vanishing kernel width against the local Euler system.
    EpsLimit(Common),
    /// High-friction limit against the regularized porous-media equation.
    FrictionLimit(Common),
    /// Vanishing kernel width for the porous-media equations.
    PmeLimit(Common),
    /// Joint friction and kernel-width limit.
    CombinedLimit(Common),
    /// Agent-based simulation with sampled trajectories.
    Particles(Common),
    /// Particle densities against the continuum solver over ensemble sizes.
    MicroMacro(Common),
    /// Check the structural hypotheses of the configured kernel.
    VerifyKernel(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to `output_dir` from the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override `solver.system`.
    #[arg(long, value_parser = ["fuzzy", "fuzzy-pp", "euler", "pme", "pmeps"])]
    system: Option<String>,
    /// Worker threads (falls back to FUZZY_EULER_JOBS).
    #[arg(long)]
    jobs: Option<usize>,
    /// Exit with status 4 when the acceptance gate of the subcommand fails.
    #[arg(long)]
    gate: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::LinearModes(c) => ("linear-modes", c),
        Command::EpsLimit(c) => ("eps-limit", c),
        Command::FrictionLimit(c) => ("friction-limit", c),
        Command::PmeLimit(c) => ("pme-limit", c),
        Command::CombinedLimit(c) => ("combined-limit", c),
        Command::Particles(c) => ("particles", c),
        Command::MicroMacro(c) => ("micro-macro", c),
        Command::VerifyKernel(c) => ("verify-kernel", c),
    };
    let fail = |code: i32, e: &Error| {
        eprintln!("fuzzy-euler {name}: {e}");
        ExitCode::from(code as u8)
    };
    let text = match std::fs::read_to_string(&common.config) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CONFIG, &Error::Io(format!("{}: {e}", common.config.display()))),
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, &e),
    };
    let out = match common.out.clone().or_else(|| cfg.output_dir.as_ref().map(PathBuf::from)) {
        Some(o) => o,
        None => {
            let e = Error::Config { location: "output_dir".into(), message: "pass --out or set output_dir".into() };
            return fail(EXIT_CONFIG, &e);
        }
    };
    let system = common.system.as_deref().map(|s| System::parse(s).expect("restricted by clap"));
    let jobs = match runner::resolve_jobs(common.jobs) {
        Ok(j) => j,
        Err(e) => return fail(EXIT_CONFIG, &e),
    };
    let sub = runner::Subcommand::parse(name).expect("clap names match");
    let opts = RunOptions { system, gate: common.gate };
    let result = runner::with_jobs(jobs, || runner::dispatch(sub, &cfg, &out, &opts)).and_then(|r| r);
    let code = runner::exit_code(&result, common.gate);
    match &result {
        Ok(o) => {
            println!("{}", o.summary);
            if code != 0 {
                eprintln!("fuzzy-euler {name}: acceptance gate failed");
            }
        }
        Err(e) => eprintln!("fuzzy-euler {name}: {e}"),
    }
    ExitCode::from(code as u8)
}
