use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use harness::{parse_config_with, split_override, ConfigError, HarnessError, Scenario};

/// Dark-state and spin-lock simulations of a two-spin NMR system.
#[derive(Parser)]
#[command(name = "darksim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inversion recovery and singlet decay under the lock, with fitted T1 and Ts
    Lifetimes(RunArgs),
    /// Singlet correlation under free evolution, probe only, and probe + control
    Fig3a(RunArgs),
    /// Deviation populations under probe + control
    Fig3b(RunArgs),
    /// Correlation after irradiation vs tone offset
    Fig4a(RunArgs),
    /// Correlation after irradiation vs probe/control amplitude ratio
    Fig4b(RunArgs),
    /// Reference, probe-only and probe + control spectra
    Spectra(RunArgs),
    /// Robust two-tone pulse design, naive vs optimized fidelity
    Optimize(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// configuration file (sectioned key = value)
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV output path; side files go next to it. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// override a key, e.g. --set noise.rms=0.5 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Command {
    fn split(self) -> (Scenario, RunArgs) {
        match self {
            Command::Lifetimes(a) => (Scenario::Lifetimes, a),
            Command::Fig3a(a) => (Scenario::Fig3a, a),
            Command::Fig3b(a) => (Scenario::Fig3b, a),
            Command::Fig4a(a) => (Scenario::Fig4a, a),
            Command::Fig4b(a) => (Scenario::Fig4b, a),
            Command::Spectra(a) => (Scenario::Spectra, a),
            Command::Optimize(a) => (Scenario::Optimize, a),
        }
    }
}

fn execute(scenario: Scenario, args: RunArgs) -> Result<(), HarnessError> {
    harness::configure_threads()?;
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| {
            ConfigError::Invalid { key: "--config".into(), message: format!("{}: {e}", path.display()), line: None }
        })?,
        None => String::new(),
    };
    // the subcommand and flags win over the file; --set entries apply in order
    let mut overrides = vec![("scenario".to_string(), scenario.to_string())];
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(out) = &args.out {
        overrides.push(("output".into(), out.display().to_string()));
    }
    for s in &args.set {
        overrides.push(split_override(s)?);
    }
    let cfg = parse_config_with(&text, &overrides)?;
    let out = harness::run(&cfg)?;
    match &cfg.output {
        Some(path) => {
            for p in harness::write_outputs(&out, path)? {
                eprintln!("wrote {}", p.display());
            }
        }
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            out.series.write(&mut stdout)?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (scenario, args) = cli.command.split();
    match execute(scenario, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("darksim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
