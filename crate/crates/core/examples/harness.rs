//! Run a subcommand from a TOML configuration into a sealed result directory.
use silt::harness::{run_subcommand, ExperimentConfig, Subcommand};

fn main() -> silt::Result<()> {
    let mut config = ExperimentConfig::from_toml(
        r#"
        [model]
        hurst = 0.3
        dim = 2

        [run]
        n = 64
        n_paths = 200
        "#,
    )?;
    config.run.output_dir = Some(std::env::temp_dir().join("silt-example"));
    let outcome = run_subcommand(Subcommand::EstimateLocaltime, &config)?;
    println!("passed={} estimates in {}", outcome.passed, outcome.store.path("localtime.csv").display());
    Ok(())
}
