//! Closed-loop lap simulation and training-data collection.

use std::sync::Arc;
use std::time::Instant;

use gpmpcc_core::controller::{Controller, ControllerConfig, Residual, SparseSettings};
use gpmpcc_core::gp::{GpDataset, GpModel};
use gpmpcc_core::linalg::Mat;
use gpmpcc_core::propagation::{NominalVehicle, TubeConfig};
use gpmpcc_core::solver::{SolveStatus, SqpOptions};
use gpmpcc_core::track::Track;
use gpmpcc_core::mpcc::MpccConfig;
use gpmpcc_core::vehicle::{discrete_step, ControlInput, NoiseSpec, Plant, VehicleParams, VehicleState, ND, NX, VEL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::variant::Variant;

/// One control step. Fields about the next state refer to `x(k+1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
    pub duty: f64,
    pub steer: f64,
    /// `Θ(k)`, unwrapped.
    pub theta: f64,
    /// `Θ(k) − Θ(0)`
    pub progress: f64,
    /// Progress of `x(k+1)`.
    pub next_progress: f64,
    /// Realized slack of `x(k+1)`: distance beyond the track boundary.
    pub slack: f64,
    /// `‖μ₁ˣ − x(k+1)‖`
    pub error_norm: f64,
    pub error_x: f64,
    pub error_y: f64,
    pub error_phi: f64,
    pub error_vx: f64,
    pub error_vy: f64,
    pub error_omega: f64,
    pub sqp_iterations: usize,
    pub status: String,
    /// Largest tube margin over the horizon.
    pub max_margin: f64,
}

impl StepRecord {
    pub fn state(&self) -> [f64; NX] {
        [self.x, self.y, self.phi, self.vx, self.vy, self.omega]
    }

    pub fn input(&self) -> [f64; 2] {
        [self.duty, self.steer]
    }
}

/// Wall-clock measurements, kept apart from the deterministic log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub k: usize,
    pub solve_s: f64,
    pub refresh_s: f64,
}

/// Predicted stage with its tightened bound, for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub k: usize,
    pub stage: usize,
    pub x: f64,
    pub y: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub heading: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LapOutcome {
    Completed,
    /// The car got further than the divergence threshold from the centerline.
    Diverged,
    StepBudget,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LapLog {
    pub variant: Variant,
    pub seed: u64,
    pub config_hash: String,
    pub ts: f64,
    pub track_length: f64,
    pub records: Vec<StepRecord>,
    pub timings: Vec<StepTiming>,
    pub predictions: Vec<PredictionRow>,
    pub final_state: [f64; NX],
    pub outcome: LapOutcome,
}

impl LapLog {
    /// `x(0)..x(K)`
    pub fn states(&self) -> Vec<[f64; NX]> {
        let mut s: Vec<[f64; NX]> = self.records.iter().map(StepRecord::state).collect();
        s.push(self.final_state);
        s
    }
}

/// Everything shared by the runs of one experiment.
#[derive(Clone, Debug)]
pub struct LapSetup {
    pub track: Arc<Track>,
    pub nominal: VehicleParams,
    pub plant: VehicleParams,
    pub noise: NoiseSpec,
    pub substeps: usize,
    pub mpcc: MpccConfig,
    pub sqp: SqpOptions,
    pub cold_start_rounds: usize,
    pub min_radius_fraction: f64,
    pub include_process_noise: bool,
    pub gp: Option<Arc<GpModel>>,
    pub sparse: SparseSettings,
    pub max_steps: usize,
    pub divergence_factor: f64,
    pub config_hash: String,
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Converged => "converged",
        SolveStatus::IterationCapped => "iteration-capped",
        SolveStatus::InfeasibleQpRecovered => "infeasible-qp-recovered",
    }
}

/// The controller a variant races with.
pub fn controller_for(setup: &LapSetup, variant: Variant) -> Result<Controller<NominalVehicle>, String> {
    let mut mpcc = setup.mpcc;
    mpcc.steer_max = setup.nominal.steer_max;
    let tube_for = |gp: &GpModel| TubeConfig {
        chi2_level: mpcc.chi2_level,
        tightened_steps: mpcc.tightened_steps,
        min_radius_fraction: setup.min_radius_fraction,
        process_noise: if setup.include_process_noise { gp.hyperparameters().outputs.iter().map(|h| h.noise_variance).collect() } else { vec![0.0; ND] },
    };
    let need_gp = || setup.gp.clone().ok_or_else(|| format!("variant {variant} needs a trained GP"));
    let (params, residual, tube) = match variant {
        Variant::Baseline => (setup.nominal, Residual::None, None),
        Variant::Reference => (setup.plant, Residual::None, None),
        Variant::GpFull => {
            let gp = need_gp()?;
            let tube = tube_for(&gp);
            (setup.nominal, Residual::Full(gp), Some(tube))
        }
        Variant::GpSparse => {
            let gp = need_gp()?;
            let tube = tube_for(&gp);
            (setup.nominal, Residual::Sparse { parent: gp, settings: setup.sparse }, Some(tube))
        }
    };
    let config = ControllerConfig { mpcc, sqp: setup.sqp, tube, cold_start_rounds: setup.cold_start_rounds };
    Controller::new(NominalVehicle(params), residual, setup.track.clone(), config).map_err(|e| e.to_string())
}

/// Start pose: on the centerline at `Θ = 0`, at rest.
pub fn start_state(track: &Track) -> [f64; NX] {
    let p = track.eval_centerline(0.0);
    [p.x, p.y, p.phi, 0.0, 0.0, 0.0]
}

/// Race one lap from standstill.
pub fn run_lap(setup: &LapSetup, variant: Variant, seed: u64) -> LapLog {
    let track = &setup.track;
    let mut log = LapLog {
        variant,
        seed,
        config_hash: setup.config_hash.clone(),
        ts: setup.nominal.ts,
        track_length: track.length(),
        records: Vec::new(),
        timings: Vec::new(),
        predictions: Vec::new(),
        final_state: start_state(track),
        outcome: LapOutcome::StepBudget,
    };
    let mut ctrl = match controller_for(setup, variant) {
        Ok(c) => c,
        Err(e) => {
            log.outcome = LapOutcome::Failed(e);
            return log;
        }
    };
    let mut plant = Plant::new(setup.plant, setup.noise);
    plant.substeps = setup.substeps;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = track.half_width();
    let mut x = start_state(track);
    let mut theta0 = None;
    for k in 0..setup.max_steps {
        let t0 = Instant::now();
        let out = match ctrl.step(&x) {
            Ok(o) => o,
            Err(e) => {
                log.outcome = LapOutcome::Failed(e.to_string());
                break;
            }
        };
        let solve_s = t0.elapsed().as_secs_f64();
        let theta_start = *theta0.get_or_insert(out.theta);
        let u = ControlInput::from_array(out.input);
        let next = match plant.step(&VehicleState::from_array(x), &u, &mut rng) {
            Ok(n) => n.to_array(),
            Err(e) => {
                log.outcome = LapOutcome::Failed(e.to_string());
                break;
            }
        };
        let t1 = Instant::now();
        let refreshed = ctrl.refresh_model();
        let refresh_s = t1.elapsed().as_secs_f64();
        if let Err(e) = refreshed {
            log.outcome = LapOutcome::Failed(e.to_string());
            break;
        }

        let next_theta = track.project([next[0], next[1]], out.theta + out.solution.progress[0]).or_else(|_| {
            track.project_global([next[0], next[1]]).map(|g| {
                let l = track.length();
                g + l * ((out.theta - g) / l).round()
            })
        });
        let next_theta = match next_theta {
            Ok(t) => t,
            Err(e) => {
                log.outcome = LapOutcome::Failed(e.to_string());
                break;
            }
        };
        let c = track.point(next_theta);
        let dist = ((next[0] - c.pos[0]).powi(2) + (next[1] - c.pos[1]).powi(2)).sqrt();
        let e: Vec<f64> = out.predicted_next.iter().zip(&next).map(|(a, b)| a - b).collect();
        let record = StepRecord {
            k,
            x: x[0],
            y: x[1],
            phi: x[2],
            vx: x[3],
            vy: x[4],
            omega: x[5],
            duty: out.input[0],
            steer: out.input[1],
            theta: out.theta,
            progress: out.theta - theta_start,
            next_progress: next_theta - theta_start,
            slack: (dist - r).max(0.0),
            error_norm: e.iter().map(|v| v * v).sum::<f64>().sqrt(),
            error_x: e[0],
            error_y: e[1],
            error_phi: e[2],
            error_vx: e[3],
            error_vy: e[4],
            error_omega: e[5],
            sqp_iterations: out.solution.report.iterations,
            status: status_name(out.solution.report.status).to_string(),
            max_margin: out.tube.margins.iter().fold(0.0, |m: f64, v| m.max(*v)),
        };
        for (i, s) in out.solution.states.iter().enumerate() {
            let pose = track.eval_centerline(out.solution.thetas[i]);
            log.predictions.push(PredictionRow {
                k,
                stage: i,
                x: s[0],
                y: s[1],
                center_x: pose.x,
                center_y: pose.y,
                heading: pose.phi,
                radius: out.tube.radii[i],
            });
        }
        log.records.push(record);
        log.timings.push(StepTiming { k, solve_s, refresh_s });
        log.final_state = next;
        x = next;
        if next_theta - theta_start >= track.length() {
            log.outcome = LapOutcome::Completed;
            break;
        }
        if dist > setup.divergence_factor * r {
            log.outcome = LapOutcome::Diverged;
            break;
        }
    }
    log
}

/// Residual targets `y_j = B_d†(x(j+1) − f(x(j), u(j)))` and inputs
/// `z_j = [x(j); u(j)]`, subsampled with a uniform stride to at most `count`.
pub fn collect_training_data(log: &LapLog, nominal: &VehicleParams, count: usize) -> Result<GpDataset, gpmpcc_core::Error> {
    let states = log.states();
    let n = log.records.len();
    let idx: Vec<usize> = if n <= count { (0..n).collect() } else { (0..count).map(|j| j * n / count).collect() };
    let mut z = Vec::with_capacity(idx.len() * 8);
    let mut y = Vec::with_capacity(idx.len() * ND);
    for &j in &idx {
        let rec = &log.records[j];
        let x = VehicleState::from_array(states[j]);
        let u = ControlInput::from_array(rec.input());
        let f = discrete_step(&x, &u, nominal)?.to_array();
        z.extend_from_slice(&states[j]);
        z.extend_from_slice(&rec.input());
        for a in 0..ND {
            y.push(states[j + 1][VEL + a] - f[VEL + a]);
        }
    }
    GpDataset::new(Mat::from_row_slice(idx.len(), 8, &z), Mat::from_row_slice(idx.len(), ND, &y))
}
