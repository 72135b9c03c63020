use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cilc::harness::{
    cmd_appendix_a, cmd_certify, cmd_consensus, cmd_perf_eval, cmd_twipr, Artifacts,
    HarnessResult, RunOptions, ScenarioConfig,
};

/// Collective iterative learning control experiments.
#[derive(Parser)]
#[command(name = "cilc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Golden two-agent example: loci, norms, certificate.
    AppendixA(Common),
    /// Simulated balancing robot with three tuned agents.
    Twipr(Common),
    /// Convergence certificate for a configured collective.
    Certify(Common),
    /// Closed-form best-performer prediction and well-performing verdict.
    PerfEval(Common),
    /// Distributed max-consensus election.
    Consensus(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: out/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of trials recorded, trial 0 included.
    #[arg(long)]
    trials: Option<usize>,
    /// Keep the previous input when the collective error would grow.
    #[arg(long)]
    hold: bool,
    /// Elect best performers by max-consensus over a topology.
    #[arg(long)]
    distributed: bool,
    /// Edge-list file ("from to" per line, 1-based).
    #[arg(long, requires = "distributed")]
    topology: Option<PathBuf>,
}

type Runner = fn(ScenarioConfig, &RunOptions) -> HarnessResult<Artifacts>;

fn run(common: Common, runner: Runner) -> HarnessResult<Artifacts> {
    let cfg = match &common.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    let opts = RunOptions {
        seed: common.seed,
        out_dir: common.out,
        trials: common.trials,
        hold: common.hold,
        distributed: common.distributed,
        topology: common.topology,
    };
    runner(cfg, &opts)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (common, runner): (Common, Runner) = match cli.command {
        Command::AppendixA(c) => (c, cmd_appendix_a),
        Command::Twipr(c) => (c, cmd_twipr),
        Command::Certify(c) => (c, cmd_certify),
        Command::PerfEval(c) => (c, cmd_perf_eval),
        Command::Consensus(c) => (c, cmd_consensus),
    };
    match run(common, runner) {
        Ok(artifacts) => {
            print!("{}", artifacts.summary);
            log::info!("wrote {} files to {}", artifacts.files.len(), artifacts.dir.display());
            println!("artifacts: {}", artifacts.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cilc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
