use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpmpcc::config::ExperimentConfig;
use gpmpcc::error::SimError;
use gpmpcc::experiment::run_experiment;
use gpmpcc::io::{replay, write_experiment};

/// Directory holding `default.toml` when no config path is given.
const CONFIG_DIR_VAR: &str = "GPMPCC_CONFIG_DIR";

#[derive(Parser)]
#[command(name = "gpmpcc", version, about = "Learning-based contouring control race simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write the report, lap logs and trajectories.
    Race {
        #[command(flatten)]
        config: ConfigArgs,
        /// Seed list or inclusive range, e.g. `1..20`.
        #[arg(long)]
        seeds: Option<String>,
        /// Comma-separated variants.
        #[arg(long)]
        variants: Option<String>,
        /// Output directory (overrides `experiment.output_dir`).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Laps simulated in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Recompute the metrics of a lap log and compare with its stored summary.
    Replay {
        /// Lap CSV (or its JSON summary).
        log: PathBuf,
    },
    /// Check a config without running anything.
    Validate {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file; defaults to `$GPMPCC_CONFIG_DIR/default.toml`.
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set mpcc.horizon=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn path(&self) -> Result<PathBuf, SimError> {
        match (&self.config, std::env::var_os(CONFIG_DIR_VAR)) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(PathBuf::from(dir).join("default.toml")),
            (None, None) => Err(SimError::Other(format!("no config given and {CONFIG_DIR_VAR} is not set"))),
        }
    }

    fn load(&self, extra: &[String]) -> Result<ExperimentConfig, SimError> {
        let mut overrides = self.overrides.clone();
        overrides.extend_from_slice(extra);
        Ok(ExperimentConfig::load(&self.path()?, &overrides)?)
    }
}

fn race(config: &ConfigArgs, seeds: Option<String>, variants: Option<String>, output: Option<PathBuf>, jobs: usize) -> Result<(), SimError> {
    let mut extra = Vec::new();
    if let Some(s) = seeds {
        extra.push(format!("experiment.seeds={s}"));
    }
    if let Some(v) = variants {
        extra.push(format!("experiment.variants={v}"));
    }
    let mut cfg = config.load(&extra)?;
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    let out = run_experiment(&cfg, jobs)?;
    write_experiment(&cfg.output_dir, &out)?;
    println!("config hash {}", cfg.hash);
    for a in &out.report.aggregates {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<10} runs {:>3}  completed {:>3}  outliers {:>3}  lap time {}  mean s0^2 {}  mean |e| {}",
            a.variant.name(),
            a.runs,
            a.completed,
            a.outliers,
            fmt(a.lap_time),
            fmt(a.mean_squared_slack),
            fmt(a.mean_error_norm)
        );
    }
    println!("report written to {}", cfg.output_dir.join("report.json").display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), SimError> {
    match cli.command {
        Command::Race { config, seeds, variants, output, jobs } => race(&config, seeds, variants, output, jobs),
        Command::Replay { log } => {
            let (summary, metrics, drift) = replay(&log)?;
            if drift.is_empty() {
                println!("{} seed {}: metrics match ({:?})", summary.variant, summary.seed, metrics.lap_time);
                Ok(())
            } else {
                Err(SimError::Other(format!("metrics drift in {}:\n  {}", log.display(), drift.join("\n  "))))
            }
        }
        Command::Validate { config } => {
            let cfg = config.load(&[])?;
            println!("{}: valid (hash {})", config.path()?.display(), cfg.hash);
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
