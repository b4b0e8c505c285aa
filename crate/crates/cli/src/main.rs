use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tfilter_cli::{
    cmd_control, cmd_filter, cmd_sweep, cmd_synthesize, cmd_verify, CliError, ExperimentConfig, Grid, Overrides,
    Report, EXIT_ERROR, EXIT_FAIL, EXIT_PASS,
};

#[derive(Parser)]
#[command(name = "tfilter", version, about = "Transformer filter and controller experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize gains and print β bounds and certificates.
    Synthesize(Common),
    /// Compare the transformer filter with the Kalman filter.
    Filter(Common),
    /// Compare the transformer controller with LQG.
    Control(Common),
    /// Sweep over ε or β with a fixed seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ε values.
        #[arg(long, value_delimiter = ',', conflicts_with = "beta_grid")]
        eps_grid: Option<Vec<f64>>,
        /// Comma-separated β values.
        #[arg(long, value_delimiter = ',')]
        beta_grid: Option<Vec<f64>>,
    },
    /// Run the equivalence, factorization and bound certificates.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in system, used instead of (or to replace) the config's system.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the CSV (or the report, for synthesize and verify).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                let preset = self.preset.as_deref().unwrap_or("scalar");
                ExperimentConfig::for_preset(preset, 0)
            }
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            output: self.out.clone(),
            beta: self.beta,
            eps: self.eps,
            horizon: self.horizon,
            window: self.window,
            preset: self.preset.clone(),
        });
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<Report, CliError> {
    let (common, grid_flags) = match &cli.command {
        Command::Synthesize(c) | Command::Filter(c) | Command::Control(c) | Command::Verify(c) => (c, None),
        Command::Sweep {
            common,
            eps_grid,
            beta_grid,
        } => (common, Some((eps_grid.clone(), beta_grid.clone()))),
    };
    let exp = common.load()?.resolve()?;
    let report = match &cli.command {
        Command::Synthesize(_) => cmd_synthesize(&exp)?,
        Command::Filter(_) => cmd_filter(&exp)?,
        Command::Control(_) => cmd_control(&exp)?,
        Command::Verify(_) => cmd_verify(&exp)?,
        Command::Sweep { .. } => {
            let grid = match grid_flags {
                Some((Some(eps), _)) => Grid::Eps(eps),
                Some((_, Some(beta))) => Grid::Beta(beta),
                _ => Grid::from_experiment(&exp)?,
            };
            cmd_sweep(&exp, &grid)?
        }
    };
    if let Some(path) = &exp.output {
        let body = report.csv.clone().unwrap_or_else(|| report.render());
        std::fs::write(path, body).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    Ok(report)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) => {
            print!("{}", report.render());
            let code = if report.all_passed() { EXIT_PASS } else { EXIT_FAIL };
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
