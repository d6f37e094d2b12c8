use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use snls_cli::experiments::{EXIT_IO, EXIT_OK, EXIT_VALIDATION};
use snls_cli::{parse_config, run, Experiment};

#[derive(Parser)]
#[command(name = "snls", version, about = "Stochastic NLS simulator and estimate verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set physics.epsilon=0.2` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `stochastic.master_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides `stochastic.workers`).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Ensemble of trajectories with norm time series and snapshots.
    Simulate(Common),
    /// Pathwise mass conservation across the ensemble.
    MassCheck(Common),
    /// Compensated decay t^{d/2} ||P(t) f||_inf / ||f||_1.
    VerifyDispersive(Common),
    /// Mixed space-time norms over growing horizons.
    VerifyStrichartz(Common),
    /// Local smoothing ratios over a random datum family.
    VerifySmoothing(Common),
    /// Maximal functional of the stochastic convolution.
    Maximal(Common),
    /// Split of the solution into a controlled part and a convolution part.
    Decompose(Common),
    /// Dyadic Cauchy differences of the scattering profile.
    Scatter(Common),
    /// Empirical Burkholder ratios.
    Burkholder(Common),
    /// Dense-matrix and closed-form oracles plus a convergence study.
    Oracle(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (exp, common) = match cli.command {
        Command::Simulate(c) => (Experiment::Simulate, c),
        Command::MassCheck(c) => (Experiment::MassCheck, c),
        Command::VerifyDispersive(c) => (Experiment::VerifyDispersive, c),
        Command::VerifyStrichartz(c) => (Experiment::VerifyStrichartz, c),
        Command::VerifySmoothing(c) => (Experiment::VerifySmoothing, c),
        Command::Maximal(c) => (Experiment::Maximal, c),
        Command::Decompose(c) => (Experiment::Decompose, c),
        Command::Scatter(c) => (Experiment::Scatter, c),
        Command::Burkholder(c) => (Experiment::Burkholder, c),
        Command::Oracle(c) => (Experiment::Oracle, c),
    };
    ExitCode::from(execute(exp, common) as u8)
}

fn execute(exp: Experiment, common: Common) -> i32 {
    let text = match &common.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read {}: {e}", path.display());
                return EXIT_IO;
            }
        },
        None => String::new(),
    };
    let mut overrides = common.overrides;
    if let Some(seed) = common.seed {
        overrides.push(format!("stochastic.master_seed={seed}"));
    }
    if let Some(w) = common.workers {
        overrides.push(format!("stochastic.workers={w}"));
    }
    if let Some(out) = &common.out {
        let dir = toml::Value::String(out.to_string_lossy().into_owned());
        overrides.push(format!("output.dir={dir}"));
    }
    let cfg = match parse_config(&text, &overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprint!("{e}");
            return EXIT_VALIDATION;
        }
    };
    let out = PathBuf::from(&cfg.output.dir);
    match run(exp, &cfg, &out) {
        Ok(summary) => {
            for c in &summary.checks {
                println!("PASS {}: {}", c.name, c.detail);
            }
            println!("{} complete; config {} -> {}", exp.name(), summary.config_hash, out.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}: {e}", exp.name());
            e.exit_code()
        }
    }
}
