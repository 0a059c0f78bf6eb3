//! One receding-horizon controller: warm start, variance tube, OCP, solve,
//! and the between-steps refresh of the sparse model.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::gp::{GpModel, ResidualModel, ZeroResidual};
use crate::mpcc::{build_ocp, solve_ocp, Guess, MpccConfig, MpccSolution, OcpInputs};
use crate::propagation::{build_variance_tube, propagate_mean, Dynamics, TubeConfig, VarianceTube};
use crate::solver::SqpOptions;
use crate::sparse::{select_inducing, RefreshReport, SparseGpModel};
use crate::track::Track;
use crate::vehicle::{ND, NU, NX, NZ};
use crate::{Error, Result};

/// Inducing-point settings of the sparse variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparseSettings {
    pub count: usize,
    /// Gap growth factor along the horizon (`1` is uniform).
    pub decay: f64,
    pub reuse_tolerance: f64,
}

/// Residual model used by a controller.
#[derive(Clone, Debug)]
pub enum Residual {
    None,
    Full(Arc<GpModel>),
    Sparse { parent: Arc<GpModel>, settings: SparseSettings },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerConfig {
    pub mpcc: MpccConfig,
    pub sqp: SqpOptions,
    /// `None` disables tightening (zero margins).
    pub tube: Option<TubeConfig>,
    /// Extra re-linearize-and-solve rounds on the first step.
    pub cold_start_rounds: usize,
}

/// Result of one control step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub input: [f64; NU],
    /// `Θ(k)` used in the problem (unwrapped).
    pub theta: f64,
    /// `μ₁ˣ`, the predicted mean of the next state.
    pub predicted_next: Vec<f64>,
    pub solution: MpccSolution,
    pub tube: VarianceTube,
}

pub struct Controller<D: Dynamics> {
    dynamics: D,
    residual: Residual,
    sparse: Option<SparseGpModel>,
    track: Arc<Track>,
    config: ControllerConfig,
    previous: Option<MpccSolution>,
    previous_input: [f64; NU],
    previous_progress: f64,
}

fn gp_row(x: &[f64], u: &[f64; NU]) -> Vec<f64> {
    let mut z = Vec::with_capacity(NZ);
    z.extend_from_slice(&x[..NX]);
    z.extend_from_slice(u);
    z
}

impl<D: Dynamics> Controller<D> {
    pub fn new(dynamics: D, residual: Residual, track: Arc<Track>, config: ControllerConfig) -> Result<Self> {
        config.mpcc.validate()?;
        if dynamics.state_dim() != NX || dynamics.input_dim() != NU {
            return Err(Error::Dimension { what: "controller dynamics", expected: NX, got: dynamics.state_dim() });
        }
        if let Some(t) = &config.tube {
            if t.process_noise.len() != ND {
                return Err(Error::Dimension { what: "tube process noise", expected: ND, got: t.process_noise.len() });
            }
        }
        Ok(Self {
            dynamics,
            residual,
            sparse: None,
            track,
            config,
            previous: None,
            previous_input: [0.0; NU],
            previous_progress: 0.0,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn sparse_model(&self) -> Option<&SparseGpModel> {
        self.sparse.as_ref()
    }

    pub fn previous_solution(&self) -> Option<&MpccSolution> {
        self.previous.as_ref()
    }

    fn model(&self) -> &dyn ResidualModel {
        static ZERO: ZeroResidual = ZeroResidual { input_dim: NZ, output_dim: ND };
        match &self.residual {
            Residual::None => &ZERO,
            Residual::Full(gp) => gp.as_ref(),
            Residual::Sparse { parent, .. } => match &self.sparse {
                Some(s) => s,
                None => parent.as_ref(),
            },
        }
    }

    /// Zero-duty rollout of the model from `x` (cold-start trajectory).
    fn braking_guess(&self, x: &[f64], theta: f64) -> Result<(Guess, Vec<Vec<f64>>)> {
        let n = self.config.mpcc.horizon;
        let u = [0.0, 0.0];
        let mut states = vec![x.to_vec()];
        let mut progress = Vec::with_capacity(n);
        let mut th = theta;
        for i in 0..n {
            let next = propagate_mean(&self.dynamics, self.model(), &states[i], &u)?;
            let t = self.track.project([next[0], next[1]], th).unwrap_or(th);
            progress.push((t - th).clamp(0.0, self.config.mpcc.progress_max));
            th += progress[i];
            states.push(next);
        }
        Ok((Guess { inputs: vec![u; n], progress }, states))
    }

    /// Progress of `pos` near the previous prediction (unwrapped).
    fn locate(&self, pos: [f64; 2]) -> Result<f64> {
        match &self.previous {
            Some(prev) => {
                let hint = prev.thetas[1];
                match self.track.project(pos, hint) {
                    Ok(t) => Ok(t),
                    Err(_) => {
                        let g = self.track.project_global(pos)?;
                        let l = self.track.length();
                        let k = libm::round((hint - g) / l);
                        Ok(if self.track.is_closed() { g + k * l } else { g })
                    }
                }
            }
            None => self.track.project_global(pos),
        }
    }

    /// Tube trajectory: the shifted previous prediction with its last point
    /// duplicated.
    fn tube_trajectory(prev: &MpccSolution) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = prev.inputs.len();
        let states: Vec<Vec<f64>> = (0..n).map(|i| prev.states[(i + 1).min(n)].clone()).collect();
        let inputs: Vec<Vec<f64>> = (0..n).map(|i| prev.inputs[(i + 1).min(n - 1)].to_vec()).collect();
        (states, inputs)
    }

    fn tube(&self, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Result<VarianceTube> {
        let n = self.config.mpcc.horizon;
        match &self.config.tube {
            None => Ok(VarianceTube::zero(NX, n, self.track.half_width())),
            Some(cfg) => build_variance_tube(&self.dynamics, self.model(), states, inputs, self.track.half_width(), cfg),
        }
    }

    /// Solve for the measured state `x` and return the input to apply.
    pub fn step(&mut self, x: &[f64]) -> Result<StepOutput> {
        if x.len() != NX {
            return Err(Error::Dimension { what: "measured state", expected: NX, got: x.len() });
        }
        let theta = self.locate([x[0], x[1]])?;
        let cold = self.previous.is_none();
        let (guess, states, inputs) = match &self.previous {
            Some(prev) => {
                let (s, u) = Self::tube_trajectory(prev);
                (prev.shifted(), s, u)
            }
            None => {
                let (g, s) = self.braking_guess(x, theta)?;
                let u = g.inputs.iter().map(|u| u.to_vec()).collect();
                (g, s[..self.config.mpcc.horizon].to_vec(), u)
            }
        };
        if cold {
            self.recenter_sparse(&states, &inputs)?;
        }
        let mut tube = self.tube(&states, &inputs)?;
        let mut solution = self.solve(x, theta, &guess, &tube)?;
        if cold {
            // the braking rollout is a poor trajectory; re-center the sparse
            // model and the tube on each round's solution
            for _ in 0..self.config.cold_start_rounds {
                let n = self.config.mpcc.horizon;
                let states = solution.states[..n].to_vec();
                let inputs: Vec<Vec<f64>> = solution.inputs.iter().map(|u| u.to_vec()).collect();
                self.recenter_sparse(&states, &inputs)?;
                tube = self.tube(&states, &inputs)?;
                let g = Guess { inputs: solution.inputs.clone(), progress: solution.progress.clone() };
                solution = self.solve(x, theta, &g, &tube)?;
            }
        }
        let steer_max = self.config.mpcc.steer_max;
        let input = [solution.inputs[0][0].clamp(0.0, 1.0), solution.inputs[0][1].clamp(-steer_max, steer_max)];
        self.previous_input = input;
        self.previous_progress = solution.progress[0];
        let predicted_next = solution.states[1].clone();
        self.previous = Some(solution.clone());
        Ok(StepOutput { input, theta, predicted_next, solution, tube })
    }

    /// Rebuild the sparse model on inducing points along a trajectory.
    fn recenter_sparse(&mut self, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Result<()> {
        if let Residual::Sparse { parent, settings } = &self.residual {
            let traj: Vec<Vec<f64>> = states.iter().zip(inputs).map(|(s, u)| gp_row(s, &[u[0], u[1]])).collect();
            let set = select_inducing(parent, &traj, settings.count, settings.decay)?;
            self.sparse = Some(SparseGpModel::build(parent.clone(), set)?);
        }
        Ok(())
    }

    fn solve(&self, x: &[f64], theta: f64, guess: &Guess, tube: &VarianceTube) -> Result<MpccSolution> {
        let inputs = OcpInputs {
            state: x,
            theta,
            previous_input: self.previous_input,
            previous_progress: self.previous_progress,
            guess,
            tube,
        };
        let ocp = build_ocp(&inputs, &self.dynamics, self.model(), &self.track, &self.config.mpcc)?;
        solve_ocp(&ocp, &self.config.sqp)
    }

    /// Move the sparse model's inducing points onto the shifted latest
    /// prediction. No-op for other variants.
    pub fn refresh_model(&mut self) -> Result<Option<RefreshReport>> {
        let (Residual::Sparse { parent, settings }, Some(prev), Some(sparse)) = (&self.residual, &self.previous, &mut self.sparse) else {
            return Ok(None);
        };
        let (states, inputs) = Self::tube_trajectory(prev);
        let traj: Vec<Vec<f64>> = states.iter().zip(&inputs).map(|(s, u)| gp_row(s, &[u[0], u[1]])).collect();
        let targets = select_inducing(parent, &traj, settings.count, settings.decay)?;
        sparse.refresh(&targets, settings.reuse_tolerance).map(Some)
    }
}
