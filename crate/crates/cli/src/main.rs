use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prognostics_cli::commands::{self, Failure};
use prognostics_cli::RunConfig;

#[derive(Parser)]
#[command(name = "prognostics", version, about = "RUL estimation and failure prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.kind=dw`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Failure> {
        Ok(RunConfig::load(self.config.as_deref(), &self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Read a raw dataset and write normalized, labeled window files.
    Prepare {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a synthetic Weibull dataset with its ground truth.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the configured model on prepared windows.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Number of runs with seeds offset by the run index.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
    /// Score a trained model on test windows.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory with checkpoint.json and manifest.json.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Window file; defaults to the prepared test split.
        #[arg(long)]
        windows: Option<PathBuf>,
        /// Output directory; defaults to `<output_dir>/evaluation`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one prediction row per input window.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to `<output_dir>/predictions.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of every layer and loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random points (seeds) per expression.
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Prepare { cfg } => commands::cmd_prepare(&cfg.load()?).map(drop),
        Command::Synth { cfg } => commands::cmd_synth(&cfg.load()?).map(drop),
        Command::Train { cfg, repeat } => commands::cmd_train(&cfg.load()?, repeat).map(drop),
        Command::Evaluate { cfg, model, windows, out } => {
            commands::cmd_evaluate(&cfg.load()?, model.as_deref(), windows.as_deref(), out.as_deref()).map(drop)
        }
        Command::Predict { cfg, model, input, output } => {
            commands::cmd_predict(&cfg.load()?, model.as_deref(), &input, output.as_deref()).map(drop)
        }
        Command::Gradcheck {
            seed,
            points,
            corrupt_gradient,
        } => commands::cmd_gradcheck(seed, points, corrupt_gradient).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
