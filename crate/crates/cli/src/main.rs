mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Learn a metric and controller; writes a checkpoint and loss history.
    Train,
    /// Certify a policy against the tracking-error bounds.
    Certify,
    /// Roll out a policy without checking bounds.
    Simulate,
    /// Solve the constant-metric CV-STEM problem.
    Cvstem,
    /// Run the closed-form oracle suite.
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Certify => "certify",
            Command::Simulate => "simulate",
            Command::Cvstem => "cvstem",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "contraction-kit", version, about = "Neural contraction metrics for tracking control")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration (optional for selftest).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Caps the number of worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("certificate failed: {0}")]
    CertificateFailed(String),
    #[error(transparent)]
    Core(#[from] contraction_kit::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::CertificateFailed(_) => 1,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if cli.command == Command::Selftest => serde_json::from_str(r#"{"system": "scalar"}"#).expect("static config"),
        None => return Err(CliError::Config("--config is required".into())),
    };
    let cfg = cfg.resolve(cli.seed, cli.out.clone());
    cfg.validate(cli.command)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        let cfg = load(&cli)?;
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(k) = cli.threads {
            if k == 0 {
                return Err(CliError::Config("--threads must be at least 1".into()));
            }
            pool = pool.num_threads(k);
        }
        let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
        pool.install(|| run::run(cli.command, &cfg))
    })();
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("contraction-kit {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
