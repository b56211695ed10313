use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tuneup_cli::report::aggregate;
use tuneup_cli::{CliError, ExperimentConfig, Options, RunContext};

#[derive(Parser)]
#[command(name = "tuneup", version, about = "Two-stage GNN training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or ingest) the dataset for every seed.
    Generate(Common),
    /// Split every seed's dataset.
    Split(Common),
    /// Train every configured method for every seed.
    Train(Common),
    /// Evaluate trained checkpoints in every setting.
    Eval(Common),
    /// Monte Carlo check of the tail-node generalization bound.
    Theory(Common),
    /// Aggregate evaluations over seeds.
    Report {
        #[command(flatten)]
        common: Common,
        /// A `<out>/<config-hash>` directory; defaults to the one implied by `--config`.
        run_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write CSV outputs.
    #[arg(long)]
    csv: bool,
}

impl Common {
    fn context(&self) -> Result<RunContext, CliError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        let cfg = ExperimentConfig::load(path)?;
        RunContext::new(
            cfg,
            &Options {
                seeds: self.seed.clone(),
                out: self.out.clone(),
                csv: self.csv,
            },
        )
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(c) => c.context()?.generate(),
        Command::Split(c) => c.context()?.split(),
        Command::Train(c) => c.context()?.train(),
        Command::Eval(c) => c.context()?.eval(),
        Command::Theory(c) => c.context()?.theory(),
        Command::Report { common, run_dir } => {
            let root = match run_dir {
                Some(d) => d,
                None => common.context()?.root,
            };
            let report = aggregate(&root)?;
            report.write(&root, common.csv)?;
            print!("{}", report.to_table());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
