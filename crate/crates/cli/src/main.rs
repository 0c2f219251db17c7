//! Batch driver: `qhfpe <command> --config run.toml [--output DIR] [--workers N]`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qhfpe::runs::{self, RunSummary};
use qhfpe::{parse_config, Error, ErrorKind, IoError, RunConfig, Workers};

/// Worker count override read from the environment.
const WORKERS_ENV: &str = "QHFPE_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "qhfpe", version, about = "Hierarchical quantum Fokker-Planck solver for a dissipative Aharonov-Bohm ring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Relax to the steady state and write the PDF, Wigner function and checkpoint.
    Equilibrium(Common),
    /// Linear response of <cos θ> and its spectrum.
    Response {
        #[command(flatten)]
        common: Common,
        /// Equilibrium checkpoint to start from instead of relaxing first.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Equilibrium observables over the configured flux list.
    FluxScan(Common),
    /// Parse and check a configuration without running it.
    ValidateConfig(Common),
    /// Padé poles, hierarchy coefficients and surrogate error.
    PadeCheck {
        #[command(flatten)]
        common: Common,
        /// Upper end of the x range for the coth comparison.
        #[arg(long, default_value_t = 5.0)]
        xmax: f64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory (overrides `run.output`).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads, 0 for all cores (overrides `run.workers` and the environment).
    #[arg(short = 'j', long, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Use the verbatim zeroth lowering operator without f(θ) in its fluctuation term.
    #[arg(long)]
    strict_paper_form: bool,
    /// Suppress progress messages on stderr.
    #[arg(short, long)]
    quiet: bool,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Parse => 3,
        ErrorKind::Validation => 4,
        ErrorKind::Convergence => 5,
        ErrorKind::Numeric => 6,
        ErrorKind::Io => 7,
    }
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(&common.config).map_err(|source| IoError::Io { path: common.config.clone(), source })?;
    let mut config = parse_config(&text)?;
    if let Some(dir) = &common.output {
        config.run.output = dir.clone();
    }
    if let Some(n) = common.workers {
        config.run.workers = n;
    }
    if common.strict_paper_form {
        config.run.strict_paper_form = true;
        config.rehash();
    }
    Ok(config)
}

fn workers(config: &RunConfig) -> Result<Workers, Error> {
    Workers::new(config.run.workers).map_err(|e| Error::Workers(e.to_string()))
}

fn run(command: &Command) -> Result<RunSummary, Error> {
    let common = match command {
        Command::Equilibrium(c) | Command::FluxScan(c) | Command::ValidateConfig(c) => c,
        Command::Response { common, .. } | Command::PadeCheck { common, .. } => common,
    };
    let config = load(common)?;
    let quiet = common.quiet;
    let mut log = |msg: &str| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    match command {
        Command::Equilibrium(_) => runs::run_equilibrium(&config, &workers(&config)?, &mut log),
        Command::Response { checkpoint, .. } => {
            runs::run_response(&config, &workers(&config)?, checkpoint.as_deref().map(Path::new), &mut log)
        }
        Command::FluxScan(_) => runs::run_flux_scan(&config, &workers(&config)?, &mut log),
        Command::ValidateConfig(_) => runs::validate(&config),
        Command::PadeCheck { xmax, .. } => {
            if !(*xmax > 0.0 && xmax.is_finite()) {
                return Err(Error::Config(qhfpe::ConfigError::Validation {
                    line: None,
                    key: "--xmax".into(),
                    message: format!("must be positive and finite, got {xmax}"),
                }));
            }
            runs::run_pade_check(&config, *xmax)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(summary) => {
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            // A closed stdout (e.g. piped into `head`) is not a run failure.
            let mut out = std::io::stdout().lock();
            for line in &summary.lines {
                let _ = writeln!(out, "{line}");
            }
            for f in &summary.files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
