//! Experiment pipeline: training lap, GP fit, races over variants and seeds.

use std::collections::BTreeMap;
use std::sync::Arc;

use gpmpcc_core::controller::SparseSettings;
use gpmpcc_core::gp::{fit_hyperparameters, GpDataset, GpModel, HyperBounds, Hyperparameters, KernelHyper};
use gpmpcc_core::vehicle::{perturbed_plant, NoiseSpec, VehicleParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::SimError;
use crate::files::{load_track, load_vehicle};
use crate::metrics::{compute_metrics, compute_timing, Metrics, TimingMetrics};
use crate::sim::{collect_training_data, run_lap, LapLog, LapOutcome, LapSetup};
use crate::variant::Variant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: LapOutcome,
    /// The car lost the track; excluded from the aggregates.
    pub outlier: bool,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantAggregate {
    pub variant: Variant,
    pub runs: usize,
    pub completed: usize,
    pub outliers: usize,
    /// Means over completed runs.
    pub lap_time: Option<f64>,
    pub mean_squared_slack: Option<f64>,
    pub mean_error_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputHyper {
    pub signal_variance: f64,
    pub length_scales: Vec<f64>,
    pub noise_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub seed: u64,
    pub lap_outcome: LapOutcome,
    pub points: usize,
    pub hyperparameters: Vec<OutputHyper>,
    pub log_marginal_likelihood: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    /// Physical parameters of the perturbed plant.
    pub plant: BTreeMap<String, f64>,
    pub training: Option<TrainingSummary>,
    pub aggregates: Vec<VariantAggregate>,
    pub runs: Vec<RunSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub config_hash: String,
    pub runs: Vec<(Variant, u64, TimingMetrics)>,
}

pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub timing: TimingReport,
    pub logs: Vec<LapLog>,
    pub training_log: Option<LapLog>,
    pub dataset: Option<GpDataset>,
    pub plant: VehicleParams,
}

fn column_variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len().max(1) as f64
}

/// Data-driven starting point for the hyperparameter search: target
/// variance, input spreads as length scales, 1% noise.
pub fn initial_hyperparameters(data: &GpDataset) -> Hyperparameters {
    let nz = data.input_dim();
    let length_scales: Vec<f64> = (0..nz)
        .map(|i| {
            let col: Vec<f64> = (0..data.len()).map(|j| data.input(j)[i]).collect();
            column_variance(&col).sqrt().max(1e-2)
        })
        .collect();
    let outputs = (0..data.output_dim())
        .map(|a| {
            let s = column_variance(&data.target_column(a)).max(1e-8);
            KernelHyper { signal_variance: s, length_scales: length_scales.clone(), noise_variance: 0.01 * s }
        })
        .collect();
    Hyperparameters { outputs }
}

pub fn setup_from_config(cfg: &ExperimentConfig) -> Result<(LapSetup, VehicleParams), SimError> {
    let track = load_track(&cfg.track_file, cfg.track_half_width, cfg.track_closed)?;
    let nominal = match &cfg.vehicle_file {
        Some(p) => load_vehicle(p)?,
        None => VehicleParams::default(),
    };
    let plant = perturbed_plant(&nominal, cfg.perturbation, cfg.perturbation_seed)?;
    let setup = LapSetup {
        track: Arc::new(track),
        nominal,
        plant,
        noise: NoiseSpec::from_psd(cfg.noise_psd, nominal.ts),
        substeps: cfg.substeps,
        mpcc: cfg.mpcc,
        sqp: cfg.sqp,
        cold_start_rounds: cfg.cold_start_rounds,
        min_radius_fraction: cfg.tube.min_radius_fraction,
        include_process_noise: cfg.tube.include_process_noise,
        gp: None,
        sparse: SparseSettings { count: cfg.gp.inducing_points, decay: cfg.gp.inducing_decay, reuse_tolerance: cfg.gp.reuse_tolerance },
        max_steps: cfg.max_steps,
        divergence_factor: cfg.divergence_factor,
        config_hash: cfg.hash.clone(),
    };
    Ok((setup, nominal))
}

/// Baseline lap on the plant, residual data, hyperparameter fit.
pub fn train(cfg: &ExperimentConfig, setup: &LapSetup) -> Result<(LapLog, GpDataset, GpModel), SimError> {
    let log = run_lap(setup, Variant::Baseline, cfg.gp.training_seed);
    let data = collect_training_data(&log, &setup.nominal, cfg.gp.data_points)?;
    let mut init = initial_hyperparameters(&data);
    for h in &mut init.outputs {
        h.noise_variance = h.noise_variance.max(cfg.gp.noise_floor);
    }
    let bounds = HyperBounds { noise_variance: (cfg.gp.noise_floor, 1e2), ..HyperBounds::default() };
    let hyper = if cfg.gp.fit_hyperparameters {
        fit_hyperparameters(&data, &init, &bounds, cfg.gp.hyper_budget)?
    } else {
        init
    };
    let model = GpModel::fit(data.clone(), hyper)?;
    Ok((log, data, model))
}

fn aggregate(variant: Variant, runs: &[RunSummary]) -> VariantAggregate {
    let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.variant == variant).collect();
    let done: Vec<&RunSummary> = mine.iter().copied().filter(|r| r.outcome == LapOutcome::Completed).collect();
    let mean = |f: &dyn Fn(&Metrics) -> f64| (!done.is_empty()).then(|| done.iter().map(|r| f(&r.metrics)).sum::<f64>() / done.len() as f64);
    VariantAggregate {
        variant,
        runs: mine.len(),
        completed: done.len(),
        outliers: mine.iter().filter(|r| r.outlier).count(),
        lap_time: mean(&|m| m.lap_time.unwrap_or(f64::NAN)),
        mean_squared_slack: mean(&|m| m.mean_squared_slack),
        mean_error_norm: mean(&|m| m.mean_error_norm),
    }
}

/// Run the full pipeline with at most `jobs` laps in parallel.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput, SimError> {
    let (mut setup, _) = setup_from_config(cfg)?;
    let mut training = None;
    let mut training_log = None;
    let mut dataset = None;
    if cfg.variants.iter().any(|v| v.uses_gp()) {
        let (log, data, model) = train(cfg, &setup)?;
        training = Some(TrainingSummary {
            seed: cfg.gp.training_seed,
            lap_outcome: log.outcome.clone(),
            points: data.len(),
            hyperparameters: model
                .hyperparameters()
                .outputs
                .iter()
                .map(|h| OutputHyper { signal_variance: h.signal_variance, length_scales: h.length_scales.clone(), noise_variance: h.noise_variance })
                .collect(),
            log_marginal_likelihood: model.log_marginal_likelihood(),
        });
        training_log = Some(log);
        dataset = Some(data);
        setup.gp = Some(Arc::new(model));
    }

    let tasks: Vec<(Variant, u64)> = cfg.variants.iter().flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SimError::Other(e.to_string()))?;
    let logs: Vec<LapLog> = pool.install(|| tasks.par_iter().map(|&(v, s)| run_lap(&setup, v, s)).collect());

    let runs: Vec<RunSummary> = logs
        .iter()
        .map(|l| RunSummary {
            variant: l.variant,
            seed: l.seed,
            outcome: l.outcome.clone(),
            outlier: l.outcome == LapOutcome::Diverged,
            metrics: compute_metrics(&l.records, l.track_length, l.ts),
        })
        .collect();
    let aggregates = cfg.variants.iter().map(|&v| aggregate(v, &runs)).collect();
    let timing = TimingReport {
        config_hash: cfg.hash.clone(),
        runs: logs.iter().map(|l| (l.variant, l.seed, compute_timing(&l.timings))).collect(),
    };
    Ok(ExperimentOutput {
        report: ExperimentReport {
            config_hash: cfg.hash.clone(),
            plant: setup.plant.physical().iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            training, aggregates, runs },
        timing,
        logs,
        training_log,
        dataset,
        plant: setup.plant,
    })
}
