use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfc_lab::commands::EXIT_CONFIG;
use mfc_lab::presets::{load_file, load_preset};
use mfc_lab::{cmd_compare, cmd_design, cmd_run, cmd_sweep, ConfigError, Outcome, Overrides, ScenarioConfig};

#[derive(Parser)]
#[command(name = "mfc-lab", version, about = "Model-following control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trajectory CSV.
    Run(Common),
    /// Run several controller modes and scalings side by side.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated controller modes.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
        /// Comma-separated scalings.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// Print the gain design, epsilon limits and PI margins.
    Design(Common),
    /// Compare peak inputs over a grid of initial states.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    config: Option<PathBuf>,
    /// Use a built-in preset instead of a file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Integration step in seconds.
    #[arg(long)]
    step: Option<f64>,
    /// Simulated horizon in seconds.
    #[arg(long)]
    horizon: Option<f64>,
    /// Seed for the sweep grid jitter.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the effective scenario as TOML and exit.
    #[arg(long)]
    dump_config: bool,
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => load_file(path)?,
            (None, Some(name)) => load_preset(name)?,
            (None, None) => {
                return Err(ConfigError::Invalid {
                    field: "arguments".into(),
                    message: "give a scenario file or --preset NAME".into(),
                })
            }
        };
        Overrides {
            out: self.out.clone(),
            step: self.step,
            horizon: self.horizon,
            seed: self.seed,
        }
        .apply(&mut cfg);
        Ok(cfg)
    }
}

fn dispatch(common: &Common, run: impl FnOnce(&ScenarioConfig) -> Outcome) -> Outcome {
    let cfg = match common.load() {
        Ok(c) => c,
        Err(e) => {
            return Outcome {
                exit_code: EXIT_CONFIG,
                text: format!("error: {e}"),
                report: None,
            }
        }
    };
    if common.dump_config {
        if let Err(e) = cfg.resolve() {
            return Outcome {
                exit_code: EXIT_CONFIG,
                text: format!("error: {e}"),
                report: None,
            };
        }
        return Outcome {
            exit_code: 0,
            text: cfg.to_toml(),
            report: None,
        };
    }
    run(&cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(c) => dispatch(c, cmd_run),
        Command::Design(c) => dispatch(c, cmd_design),
        Command::Sweep(c) => dispatch(c, cmd_sweep),
        Command::Compare { common, modes, eps } => {
            dispatch(common, |cfg| cmd_compare(cfg, modes.as_deref(), eps.as_deref()))
        }
    };
    if outcome.exit_code == EXIT_CONFIG {
        eprintln!("{}", outcome.text.trim_end());
    } else {
        print!("{}", outcome.text);
    }
    ExitCode::from(outcome.exit_code as u8)
}
