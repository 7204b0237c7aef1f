use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use agentrouter_core::commands::{self, CommandOutput, Overrides, RunConfig};
use agentrouter_core::eval::DropMode;
use agentrouter_core::{Error, ErrorKind, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

/// Graph-based routing over a pool of QA agents.
#[derive(Parser, Debug)]
#[command(name = "agentrouter", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Train/evaluate a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to runs/<command>-<time>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Top-k clip for eval, or the single k for sweep/transfer.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// relative or absolute.
    #[arg(long, global = true)]
    drop_mode: Option<DropMode>,
    /// Use per-agent F1 from the cache instead of recomputing it.
    #[arg(long, global = true)]
    trust_cache_f1: bool,
    /// Answer agent calls from gold answers, without network access.
    #[arg(long, global = true)]
    mock_backend: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build per-record graphs and print summary statistics.
    BuildGraphs,
    /// Train one router per seed.
    Train,
    /// Evaluate checkpoints against the baselines on the test split.
    Eval(CheckpointArg),
    /// Router accuracy across top-k values.
    SweepTopk(CheckpointArg),
    /// Apply checkpoints to other datasets and report the drop.
    Transfer {
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Target run config; repeatable. Defaults to transfer_targets.
        #[arg(long = "target")]
        targets: Vec<PathBuf>,
    },
    /// Agent pool operations.
    #[command(subcommand)]
    Agents(AgentsCommand),
    /// Reports over cached answers.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Args, Debug)]
struct CheckpointArg {
    /// Directory with seed-<s>/checkpoint.bin; defaults to checkpoint_dir.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum AgentsCommand {
    /// Run every agent on every record into a resumable cache.
    Run,
    /// Ask the entity judge which entities each agent manages.
    Judge,
}

#[derive(Subcommand, Debug)]
enum ReportCommand {
    /// Per-agent F1 spread across question types.
    Variance,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildGraphs => "build-graphs",
            Command::Train => "train",
            Command::Eval(_) => "eval",
            Command::SweepTopk(_) => "sweep-topk",
            Command::Transfer { .. } => "transfer",
            Command::Agents(AgentsCommand::Run) => "agents-run",
            Command::Agents(AgentsCommand::Judge) => "agents-judge",
            Command::Report(ReportCommand::Variance) => "report-variance",
        }
    }
}

fn run(cli: Cli) -> Result<CommandOutput> {
    let g = &cli.global;
    let path = g
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let overrides = Overrides {
        seed: g.seed,
        k: g.k,
        drop_mode: g.drop_mode,
        trust_cache_f1: g.trust_cache_f1,
        mock_backend: g.mock_backend,
    };
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(&overrides);
    cfg.validate()?;
    let out = commands::prepare_out_dir(g.out.as_deref(), cli.command.name())?;
    let ck = |c: &CheckpointArg| c.checkpoint.clone();
    match &cli.command {
        Command::BuildGraphs => commands::cmd_build_graphs(cfg, &out),
        Command::Train => commands::cmd_train(cfg, &out),
        Command::Eval(c) => commands::cmd_eval(cfg, ck(c).as_deref(), &out),
        Command::SweepTopk(c) => commands::cmd_sweep_topk(cfg, ck(c).as_deref(), g.k, &out),
        Command::Transfer { ckpt, targets } => {
            commands::cmd_transfer(cfg, ck(ckpt).as_deref(), targets, g.k, &overrides, &out)
        }
        Command::Agents(AgentsCommand::Run) => commands::cmd_agents_run(cfg, g.mock_backend, &out),
        Command::Agents(AgentsCommand::Judge) => {
            commands::cmd_agents_judge(cfg, g.mock_backend, &out)
        }
        Command::Report(ReportCommand::Variance) => commands::cmd_report_variance(cfg, &out),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(o) => {
            let mut stdout = std::io::stdout().lock();
            // A closed pipe (e.g. `| head`) is not a failure of the command.
            let _ = writeln!(stdout, "{}outputs: {}", o.summary, o.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
