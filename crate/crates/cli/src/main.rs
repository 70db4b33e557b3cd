//! `emodist`: generate candidate predictions, evaluate them against soft
//! labels, and render reports.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use emodist_core::harness::{
    cmd_evaluate, cmd_generate, cmd_parse_test, cmd_report, HarnessError, Overrides, RunConfig,
};
use emodist_core::labels::BinningMode;
use emodist_core::tts::Strategy;

#[derive(Parser)]
#[command(
    name = "emodist",
    version,
    about = "Distribution-valued speech emotion evaluation under test-time scaling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: emodist_core::tts::TtsError| e.to_string())
}

fn parse_bin_mode(s: &str) -> Result<BinningMode, String> {
    s.parse()
        .map_err(|e: emodist_core::labels::LabelError| e.to_string())
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (TOML)
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Strategy to run (repeatable); defaults to the configured list
    #[arg(long = "strategy", value_name = "NAME", value_parser = parse_strategy)]
    strategies: Vec<Strategy>,
    /// Restrict the run to one dataset id
    #[arg(long, value_name = "ID")]
    dataset: Option<String>,
    /// Global seed override
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Concurrency limit override
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Entropy binning mode
    #[arg(long = "bin-mode", value_name = "quantile|equal-width", value_parser = parse_bin_mode)]
    bin_mode: Option<BinningMode>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, HarnessError> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply(&Overrides {
            strategies: self.strategies.clone(),
            dataset: self.dataset.clone(),
            seed: self.seed,
            jobs: self.jobs,
            bin_mode: self.bin_mode,
        })?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Populate the candidate cache for every utterance and strategy
    Generate(CommonArgs),
    /// Replay cached candidates, compute metrics, and write report files
    Evaluate(CommonArgs),
    /// Pretty-print the last evaluation's tables
    Report(CommonArgs),
    /// Feed a file of raw model outputs through the parsing cascade
    ParseTest {
        #[command(flatten)]
        common: CommonArgs,
        /// File of raw outputs, one per line
        #[arg(value_name = "FILE")]
        input: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Generate(args) => {
            let config = args.load()?;
            let outcome = cmd_generate(&config)?;
            println!(
                "generated {} unit(s), {} cache hit(s), {} failure(s)",
                outcome.generated,
                outcome.cache_hits,
                outcome.failures.len()
            );
            Ok(())
        }
        Command::Evaluate(args) => {
            let config = args.load()?;
            let outcome = cmd_evaluate(&config)?;
            for file in &outcome.files {
                println!("{}", file.display());
            }
            Ok(())
        }
        Command::Report(args) => {
            let config = args.load()?;
            print!("{}", cmd_report(&config)?);
            Ok(())
        }
        Command::ParseTest { common, input } => {
            let config = common.load()?;
            print!("{}", cmd_parse_test(&config, &input)?.render());
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        let code = if matches!(err, HarnessError::Usage(_)) {
            2
        } else {
            1
        };
        std::process::exit(code);
    }
}
