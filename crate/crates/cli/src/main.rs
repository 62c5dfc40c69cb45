mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] evotask::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn message(&self) -> String {
        match self {
            CliError::Config(s) => s.clone(),
            other => other.to_string(),
        }
    }

    /// 1 for configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(evotask::Error::Config(_)) => 1,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "evotask", version, about = "Minimax risk classification for sequences of evolving tasks")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run a scenario over one or more repetitions.
    Run(RunArgs),
    /// Tabulate effective sample sizes, bounds and window baselines.
    Ess(commands::EssArgs),
    /// Partial autocorrelation of per-task mean vectors.
    Diag(DiagArgs),
    /// Re-segment a CSV file into the task-sequence layout.
    Convert(commands::ConvertArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Config file (`key = value` lines) or a previous manifest.json.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "EVOTASK_OUT")]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<config::RunConfig, CliError> {
        let mut cfg = config::RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        for kv in &self.set {
            cfg.apply_override(kv)?;
        }
        if let Some(s) = &self.scenario {
            cfg.set("scenario", s)?;
        }
        if let Some(r) = self.reps {
            cfg.reps = r;
        }
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Worker threads for repetitions (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct DiagArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 10)]
    max_lag: usize,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Run(a) => {
            let cfg = a.config.resolve()?;
            let summary = commands::cmd_run(&cfg, a.workers)?;
            println!("{summary}");
            Ok(())
        }
        Cmd::Ess(a) => commands::cmd_ess(&a),
        Cmd::Diag(a) => {
            let cfg = a.config.resolve()?;
            commands::cmd_diag(&cfg, a.max_lag, a.output.as_deref())
        }
        Cmd::Convert(a) => commands::cmd_convert(&a),
    }
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
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("evotask: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
