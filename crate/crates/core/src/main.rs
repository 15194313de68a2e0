use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};
use silt::harness::{run_subcommand, ExperimentConfig, Subcommand};
use silt::Result;

#[derive(Parser)]
#[command(version, about = "Self-intersection local time of fractional Brownian motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Sample fBm paths and dump the kernel table.
    Simulate(Overrides),
    /// Mollified local time along an ε schedule.
    EstimateLocaltime(Overrides),
    /// Residual of the martingale representation over grid sizes.
    VerifyRepresentation(Overrides),
    /// Numerical conformance of the analytic bounds.
    CheckBounds(Overrides),
    /// Local nondeterminism constant on a grid.
    CertifyLnd(Overrides),
    /// Growth of the local-time moments.
    Moments(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// TOML config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hurst: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Grid size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid sizes for verify-representation, comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Also write one CSV row per path (verify-representation).
    #[arg(long)]
    per_path: bool,
    /// Root for run directories.
    #[arg(long, env = silt::harness::OUTPUT_ROOT_VAR)]
    output: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.hurst {
            cfg.model.hurst = v;
        }
        if let Some(v) = self.dim {
            cfg.model.dim = v;
        }
        if let Some(v) = self.horizon {
            cfg.model.horizon = v;
        }
        if let Some(v) = self.n {
            cfg.run.n = v;
        }
        if let Some(v) = self.eps {
            cfg.run.eps = v;
        }
        if let Some(v) = self.paths {
            cfg.run.n_paths = v;
        }
        if let Some(v) = self.seed {
            cfg.run.seed = v;
        }
        if let Some(v) = &self.sizes {
            cfg.representation.sizes = v.clone();
        }
        if self.per_path {
            cfg.representation.per_path_csv = true;
        }
        if let Some(v) = &self.output {
            cfg.run.output_dir = Some(v.clone());
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, overrides) = match &cli.command {
        Command::Simulate(o) => (Subcommand::Simulate, o),
        Command::EstimateLocaltime(o) => (Subcommand::EstimateLocaltime, o),
        Command::VerifyRepresentation(o) => (Subcommand::VerifyRepresentation, o),
        Command::CheckBounds(o) => (Subcommand::CheckBounds, o),
        Command::CertifyLnd(o) => (Subcommand::CertifyLnd, o),
        Command::Moments(o) => (Subcommand::Moments, o),
    };
    let outcome = overrides.resolve().and_then(|cfg| {
        if overrides.print_config {
            print!("{}", cfg.to_toml());
            return Ok(None);
        }
        run_subcommand(command, &cfg).map(Some)
    });
    match outcome {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(out)) => {
            println!("{}", out.store.dir.display());
            if out.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: checks failed, see {}", command.name(), out.store.dir.display());
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
