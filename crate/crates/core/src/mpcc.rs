//! Receding-horizon contouring problem by single shooting.
//!
//! Decision vector `w = [u₀..u_{N−1}, v₀..v_{N−1}, s₁..s_N]`. States are
//! reconstructed from the inputs with the mean dynamics. Contouring and lag
//! errors are linearized at a frozen point `(p̄ᵢ, Θ̄ᵢ)` taken from the warm
//! start, and the lateral constraint uses the centerline tangent at `Θ̄ᵢ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::gp::ResidualModel;
use crate::linalg::Mat;
use crate::math::{cos, sin};
use crate::propagation::{propagate_mean, propagate_mean_with_jacobians, Dynamics, VarianceTube};
use crate::solver::{solve_sqp, NlpEvaluation, NlpProblem, SolveReport, SqpOptions};
use crate::track::{contouring_errors, Track};
use crate::vehicle::NU;
use crate::{Error, Result};

/// Weights and limits of the contouring problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MpccConfig {
    pub horizon: usize,
    pub contouring_weight: f64,
    pub lag_weight: f64,
    pub progress_weight: f64,
    /// Symmetric PSD weight on `uᵢ − uᵢ₋₁`.
    pub input_rate_weight: [[f64; 2]; 2],
    pub progress_rate_weight: f64,
    pub slack_quadratic: f64,
    pub slack_linear: f64,
    pub tightened_steps: usize,
    pub chi2_level: f64,
    /// Upper bound on the progress increment per step [m].
    pub progress_max: f64,
    /// Input box: duty in `[0, 1]`, `|δ| ≤ steer_max`.
    pub steer_max: f64,
}

impl Default for MpccConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            contouring_weight: 50.0,
            lag_weight: 500.0,
            progress_weight: 1.0,
            input_rate_weight: [[0.1, 0.0], [0.0, 0.5]],
            progress_rate_weight: 0.5,
            slack_quadratic: 1000.0,
            slack_linear: 100.0,
            tightened_steps: 15,
            chi2_level: 1.0,
            progress_max: 0.12,
            steer_max: 0.35,
        }
    }
}

impl MpccConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason| Err(Error::InvalidParameter { name, reason });
        if self.horizon < 2 {
            return bad("horizon", "must be at least 2");
        }
        let r = self.input_rate_weight;
        let weights = [
            ("contouring_weight", self.contouring_weight),
            ("lag_weight", self.lag_weight),
            ("progress_weight", self.progress_weight),
            ("progress_rate_weight", self.progress_rate_weight),
            ("slack_quadratic", self.slack_quadratic),
            ("chi2_level", self.chi2_level),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(name, "must be finite and non-negative");
            }
        }
        if !(self.slack_linear > 0.0 && self.slack_linear.is_finite()) {
            return bad("slack_linear", "must be positive");
        }
        if r[0][1] != r[1][0] || r[0][0] < 0.0 || r[1][1] < 0.0 || r[0][0] * r[1][1] < r[0][1] * r[0][1] {
            return bad("input_rate_weight", "must be symmetric positive semidefinite");
        }
        if self.tightened_steps < 1 || self.tightened_steps > self.horizon {
            return bad("tightened_steps", "must lie in 1..=horizon");
        }
        if !(self.progress_max > 0.0 && self.progress_max.is_finite()) {
            return bad("progress_max", "must be positive");
        }
        if !(self.steer_max > 0.0 && self.steer_max.is_finite()) {
            return bad("steer_max", "must be positive");
        }
        Ok(())
    }

    /// Length of the decision vector.
    pub fn decision_dim(&self) -> usize {
        4 * self.horizon
    }

    pub fn input_index(&self, i: usize) -> usize {
        NU * i
    }

    pub fn progress_index(&self, i: usize) -> usize {
        NU * self.horizon + i
    }

    /// Slack of stage `i + 1`.
    pub fn slack_index(&self, i: usize) -> usize {
        3 * self.horizon + i
    }
}

/// Exact stage cost and its partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageCost {
    pub value: f64,
    /// With respect to `(X, Y)`.
    pub grad_position: [f64; 2],
    pub grad_theta: f64,
    pub grad_progress: f64,
    pub grad_input_rate: [f64; 2],
    pub grad_progress_rate: f64,
}

/// `q_c ê_c² + q_l ê_l² − γ v + ‖Δu‖²_{R_u} + R_v Δv²`.
pub fn stage_cost(
    track: &Track,
    state: &[f64],
    theta: f64,
    progress: f64,
    input_rate: [f64; 2],
    progress_rate: f64,
    cfg: &MpccConfig,
) -> StageCost {
    let e = contouring_errors(track, [state[0], state[1]], theta);
    let (qc, ql) = (cfg.contouring_weight, cfg.lag_weight);
    let r = cfg.input_rate_weight;
    let ru = [
        r[0][0] * input_rate[0] + r[0][1] * input_rate[1],
        r[1][0] * input_rate[0] + r[1][1] * input_rate[1],
    ];
    let value = qc * e.contouring * e.contouring + ql * e.lag * e.lag - cfg.progress_weight * progress
        + input_rate[0] * ru[0]
        + input_rate[1] * ru[1]
        + cfg.progress_rate_weight * progress_rate * progress_rate;
    let g = |k: usize| 2.0 * (qc * e.contouring * e.grad_contouring[k] + ql * e.lag * e.grad_lag[k]);
    StageCost {
        value,
        grad_position: [g(0), g(1)],
        grad_theta: g(2),
        grad_progress: -cfg.progress_weight,
        grad_input_rate: [2.0 * ru[0], 2.0 * ru[1]],
        grad_progress_rate: 2.0 * cfg.progress_rate_weight * progress_rate,
    }
}

/// Frozen data of one predicted stage `i ∈ 1..=N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrozenStage {
    pub theta: f64,
    pub position: [f64; 2],
    pub contouring: f64,
    pub lag: f64,
    pub grad_contouring: [f64; 3],
    pub grad_lag: [f64; 3],
    /// Centerline point and heading at `theta`.
    pub center: [f64; 2],
    pub heading: f64,
    /// Tightened half-width.
    pub radius: f64,
    pub margin: f64,
}

impl FrozenStage {
    /// Linearized contouring and lag errors.
    fn errors(&self, pos: [f64; 2], theta: f64) -> (f64, f64) {
        let d = [pos[0] - self.position[0], pos[1] - self.position[1], theta - self.theta];
        let gc = self.grad_contouring;
        let gl = self.grad_lag;
        (
            self.contouring + gc[0] * d[0] + gc[1] * d[1] + gc[2] * d[2],
            self.lag + gl[0] * d[0] + gl[1] * d[1] + gl[2] * d[2],
        )
    }

    /// Lateral offset from the frozen centerline point along its normal.
    pub fn lateral(&self, pos: [f64; 2]) -> f64 {
        let (s, c) = (sin(self.heading), cos(self.heading));
        s * (pos[0] - self.center[0]) - c * (pos[1] - self.center[1])
    }
}

/// Warm start: inputs and progress increments over the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct Guess {
    pub inputs: Vec<[f64; NU]>,
    pub progress: Vec<f64>,
}

impl Guess {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
}

/// The assembled problem for one control step.
pub struct Ocp<'a> {
    config: MpccConfig,
    dynamics: &'a dyn Dynamics,
    model: &'a dyn ResidualModel,
    initial_state: Vec<f64>,
    initial_theta: f64,
    previous_input: [f64; NU],
    previous_progress: f64,
    stages: Vec<FrozenStage>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    guess: Vec<f64>,
}

/// Everything needed to set up an [`Ocp`].
pub struct OcpInputs<'a> {
    pub state: &'a [f64],
    pub theta: f64,
    /// Input applied at the previous step (reference of the first rate term).
    pub previous_input: [f64; NU],
    pub previous_progress: f64,
    pub guess: &'a Guess,
    pub tube: &'a VarianceTube,
}

/// Assemble the OCP. The errors are linearized at the rollout of `guess`
/// from the measured state.
pub fn build_ocp<'a>(
    inputs: &OcpInputs<'_>,
    dynamics: &'a dyn Dynamics,
    model: &'a dyn ResidualModel,
    track: &Track,
    config: &MpccConfig,
) -> Result<Ocp<'a>> {
    config.validate()?;
    let n = config.horizon;
    let guess = inputs.guess;
    if guess.inputs.len() != n || guess.progress.len() != n {
        return Err(Error::Dimension { what: "warm start horizon", expected: n, got: guess.inputs.len().min(guess.progress.len()) });
    }
    if inputs.tube.horizon() != n {
        return Err(Error::Dimension { what: "tube horizon", expected: n, got: inputs.tube.horizon() });
    }
    if inputs.state.len() != dynamics.state_dim() {
        return Err(Error::Dimension { what: "initial state", expected: dynamics.state_dim(), got: inputs.state.len() });
    }
    if !inputs.state.iter().all(|v| v.is_finite()) || !inputs.theta.is_finite() {
        return Err(Error::NonFinite { field: "initial state" });
    }

    let mut lower = vec![0.0; config.decision_dim()];
    let mut upper = vec![0.0; config.decision_dim()];
    for i in 0..n {
        let k = config.input_index(i);
        lower[k] = 0.0;
        upper[k] = 1.0;
        lower[k + 1] = -config.steer_max;
        upper[k + 1] = config.steer_max;
        lower[config.progress_index(i)] = 0.0;
        upper[config.progress_index(i)] = config.progress_max;
        lower[config.slack_index(i)] = 0.0;
        upper[config.slack_index(i)] = f64::INFINITY;
    }

    let mut w = vec![0.0; config.decision_dim()];
    for i in 0..n {
        let k = config.input_index(i);
        w[k] = guess.inputs[i][0].clamp(lower[k], upper[k]);
        w[k + 1] = guess.inputs[i][1].clamp(lower[k + 1], upper[k + 1]);
        let kv = config.progress_index(i);
        w[kv] = guess.progress[i].clamp(lower[kv], upper[kv]);
    }

    let mut x = inputs.state.to_vec();
    let mut theta = inputs.theta;
    let mut stages = Vec::with_capacity(n);
    for i in 0..n {
        let k = config.input_index(i);
        x = propagate_mean(dynamics, model, &x, &w[k..k + NU])?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { field: "warm start rollout" });
        }
        theta += w[config.progress_index(i)];
        let pos = [x[0], x[1]];
        let e = contouring_errors(track, pos, theta);
        let pose = track.eval_centerline(theta);
        let stage = FrozenStage {
            theta,
            position: pos,
            contouring: e.contouring,
            lag: e.lag,
            grad_contouring: e.grad_contouring,
            grad_lag: e.grad_lag,
            center: [pose.x, pose.y],
            heading: pose.phi,
            radius: inputs.tube.radii[i + 1],
            margin: inputs.tube.margins[i + 1],
        };
        w[config.slack_index(i)] = (stage.lateral(pos).abs() - stage.radius).max(0.0);
        stages.push(stage);
    }

    Ok(Ocp {
        config: *config,
        dynamics,
        model,
        initial_state: inputs.state.to_vec(),
        initial_theta: inputs.theta,
        previous_input: inputs.previous_input,
        previous_progress: inputs.previous_progress,
        stages,
        lower,
        upper,
        guess: w,
    })
}

/// Cost, constraint residuals and trajectories of one decision vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OcpEvaluation {
    pub cost: f64,
    /// `g(w) ≤ 0`: two rows per stage (`e ≤ ρ + s`, `−e ≤ ρ + s`).
    pub constraints: Vec<f64>,
    /// `x₀..x_N`
    pub states: Vec<Vec<f64>>,
    /// `Θ₀..Θ_N`
    pub thetas: Vec<f64>,
}

/// Plain data view of an OCP for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct OcpDump {
    pub config: MpccConfig,
    pub initial_state: Vec<f64>,
    pub initial_theta: f64,
    pub previous_input: [f64; NU],
    pub previous_progress: f64,
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
    pub stages: Vec<FrozenStage>,
    pub initial_guess: Vec<f64>,
}

impl<'a> Ocp<'a> {
    pub fn config(&self) -> &MpccConfig {
        &self.config
    }

    pub fn stages(&self) -> &[FrozenStage] {
        &self.stages
    }

    /// Warm start with slacks that make the rollout feasible.
    pub fn initial_guess(&self) -> &[f64] {
        &self.guess
    }

    pub fn dump(&self) -> OcpDump {
        OcpDump {
            config: self.config,
            initial_state: self.initial_state.clone(),
            initial_theta: self.initial_theta,
            previous_input: self.previous_input,
            previous_progress: self.previous_progress,
            lower_bounds: self.lower.clone(),
            upper_bounds: self.upper.clone(),
            stages: self.stages.clone(),
            initial_guess: self.guess.clone(),
        }
    }

    fn check_dim(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.config.decision_dim() {
            return Err(Error::Dimension { what: "decision vector", expected: self.config.decision_dim(), got: w.len() });
        }
        Ok(())
    }

    /// Costs that do not involve the states.
    fn regularization(&self, w: &[f64]) -> f64 {
        let c = &self.config;
        let r = c.input_rate_weight;
        let mut cost = 0.0;
        let mut prev_u = self.previous_input;
        let mut prev_v = self.previous_progress;
        for i in 0..c.horizon {
            let k = c.input_index(i);
            let du = [w[k] - prev_u[0], w[k + 1] - prev_u[1]];
            cost += du[0] * (r[0][0] * du[0] + r[0][1] * du[1]) + du[1] * (r[1][0] * du[0] + r[1][1] * du[1]);
            prev_u = [w[k], w[k + 1]];
            let v = w[c.progress_index(i)];
            cost += -c.progress_weight * v + c.progress_rate_weight * (v - prev_v) * (v - prev_v);
            prev_v = v;
            let s = w[c.slack_index(i)];
            cost += c.slack_quadratic * s * s + c.slack_linear * s;
        }
        cost
    }

    pub fn evaluate(&self, w: &[f64]) -> Result<OcpEvaluation> {
        self.check_dim(w)?;
        let c = &self.config;
        let n = c.horizon;
        let mut states = Vec::with_capacity(n + 1);
        let mut thetas = Vec::with_capacity(n + 1);
        states.push(self.initial_state.clone());
        thetas.push(self.initial_theta);
        let mut cost = self.regularization(w);
        let mut constraints = Vec::with_capacity(2 * n);
        for i in 0..n {
            let k = c.input_index(i);
            let next = propagate_mean(self.dynamics, self.model, &states[i], &w[k..k + NU])?;
            let theta = thetas[i] + w[c.progress_index(i)];
            let stage = &self.stages[i];
            let pos = [next[0], next[1]];
            let (ec, el) = stage.errors(pos, theta);
            cost += c.contouring_weight * ec * ec + c.lag_weight * el * el;
            let lat = stage.lateral(pos);
            let s = w[c.slack_index(i)];
            constraints.push(lat - stage.radius - s);
            constraints.push(-lat - stage.radius - s);
            states.push(next);
            thetas.push(theta);
        }
        if !cost.is_finite() {
            return Err(Error::NonFinite { field: "ocp cost" });
        }
        Ok(OcpEvaluation { cost, constraints, states, thetas })
    }

    /// Value, gradient, Gauss–Newton Hessian and constraint Jacobian.
    pub fn linearize(&self, w: &[f64]) -> Result<NlpEvaluation> {
        self.check_dim(w)?;
        let c = &self.config;
        let n = c.horizon;
        let nx = self.dynamics.state_dim();
        let dim = c.decision_dim();
        let nu_total = NU * n;

        let mut grad = vec![0.0; dim];
        let mut hess = Mat::zeros(dim, dim);
        let mut jac = Mat::zeros(2 * n, dim);
        let mut constraints = Vec::with_capacity(2 * n);
        let mut cost = self.regularization(w);

        // regularization terms are quadratic: exact gradient and Hessian
        let r = c.input_rate_weight;
        let mut prev_u = self.previous_input;
        let mut prev_v = self.previous_progress;
        for i in 0..n {
            let k = c.input_index(i);
            let du = [w[k] - prev_u[0], w[k + 1] - prev_u[1]];
            let g = [2.0 * (r[0][0] * du[0] + r[0][1] * du[1]), 2.0 * (r[1][0] * du[0] + r[1][1] * du[1])];
            for a in 0..NU {
                grad[k + a] += g[a];
                if i > 0 {
                    grad[k + a - NU] -= g[a];
                }
                for b in 0..NU {
                    let h = 2.0 * r[a][b];
                    hess[(k + a, k + b)] += h;
                    if i > 0 {
                        hess[(k + a - NU, k + b - NU)] += h;
                        hess[(k + a, k + b - NU)] -= h;
                        hess[(k + a - NU, k + b)] -= h;
                    }
                }
            }
            prev_u = [w[k], w[k + 1]];

            let kv = c.progress_index(i);
            let dv = w[kv] - prev_v;
            let rv = c.progress_rate_weight;
            grad[kv] += -c.progress_weight + 2.0 * rv * dv;
            hess[(kv, kv)] += 2.0 * rv;
            if i > 0 {
                grad[kv - 1] -= 2.0 * rv * dv;
                hess[(kv - 1, kv - 1)] += 2.0 * rv;
                hess[(kv, kv - 1)] -= 2.0 * rv;
                hess[(kv - 1, kv)] -= 2.0 * rv;
            }
            prev_v = w[kv];

            let ks = c.slack_index(i);
            grad[ks] += 2.0 * c.slack_quadratic * w[ks] + c.slack_linear;
            hess[(ks, ks)] += 2.0 * c.slack_quadratic;
        }

        // state sensitivities dxᵢ/du (nx × NU·N), only columns < NU·i are nonzero
        let mut x = self.initial_state.clone();
        let mut sens = Mat::zeros(nx, nu_total);
        let mut theta = self.initial_theta;
        let mut row_c = vec![0.0; dim];
        let mut row_l = vec![0.0; dim];
        for i in 0..n {
            let k = c.input_index(i);
            let (next, a, b) = propagate_mean_with_jacobians(self.dynamics, self.model, &x, &w[k..k + NU])?;
            let cols = NU * i;
            let mut new_sens = Mat::zeros(nx, nu_total);
            for row in 0..nx {
                for col in 0..cols {
                    let mut s = 0.0;
                    for m in 0..nx {
                        s += a[(row, m)] * sens[(m, col)];
                    }
                    new_sens[(row, col)] = s;
                }
                for j in 0..NU {
                    new_sens[(row, cols + j)] = b[(row, j)];
                }
            }
            sens = new_sens;
            x = next;
            theta += w[c.progress_index(i)];

            let stage = &self.stages[i];
            let pos = [x[0], x[1]];
            let (ec, el) = stage.errors(pos, theta);
            cost += c.contouring_weight * ec * ec + c.lag_weight * el * el;

            // residual rows r_c = √q_c ê_c, r_l = √q_l ê_l
            row_c.iter_mut().for_each(|v| *v = 0.0);
            row_l.iter_mut().for_each(|v| *v = 0.0);
            let (gc, gl) = (stage.grad_contouring, stage.grad_lag);
            let upto = NU * (i + 1);
            for col in 0..upto {
                row_c[col] = gc[0] * sens[(0, col)] + gc[1] * sens[(1, col)];
                row_l[col] = gl[0] * sens[(0, col)] + gl[1] * sens[(1, col)];
            }
            for j in 0..=i {
                row_c[c.progress_index(j)] = gc[2];
                row_l[c.progress_index(j)] = gl[2];
            }
            let (qc, ql) = (c.contouring_weight, c.lag_weight);
            let touched: Vec<usize> = (0..upto).chain((0..=i).map(|j| c.progress_index(j))).collect();
            for &p in &touched {
                grad[p] += 2.0 * (qc * ec * row_c[p] + ql * el * row_l[p]);
                for &q in &touched {
                    hess[(p, q)] += 2.0 * (qc * row_c[p] * row_c[q] + ql * row_l[p] * row_l[q]);
                }
            }

            // lateral constraint rows
            let lat = stage.lateral(pos);
            let (sh, ch) = (sin(stage.heading), cos(stage.heading));
            let s = w[c.slack_index(i)];
            constraints.push(lat - stage.radius - s);
            constraints.push(-lat - stage.radius - s);
            for col in 0..upto {
                let d = sh * sens[(0, col)] - ch * sens[(1, col)];
                jac[(2 * i, col)] = d;
                jac[(2 * i + 1, col)] = -d;
            }
            jac[(2 * i, c.slack_index(i))] = -1.0;
            jac[(2 * i + 1, c.slack_index(i))] = -1.0;
        }
        if !cost.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite { field: "ocp linearization" });
        }
        Ok(NlpEvaluation { cost, gradient: grad, hessian: hess, constraints, jacobian: jac })
    }
}

impl NlpProblem for Ocp<'_> {
    fn dim(&self) -> usize {
        self.config.decision_dim()
    }

    fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    fn values(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.evaluate(w)?;
        Ok((e.cost, e.constraints))
    }

    fn evaluate(&self, w: &[f64]) -> Result<NlpEvaluation> {
        self.linearize(w)
    }
}

/// Optimized horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct MpccSolution {
    pub inputs: Vec<[f64; NU]>,
    pub progress: Vec<f64>,
    pub slacks: Vec<f64>,
    /// Mean states `x₀..x_N`.
    pub states: Vec<Vec<f64>>,
    /// `Θ₀..Θ_N`
    pub thetas: Vec<f64>,
    pub cost: f64,
    pub decision: Vec<f64>,
    pub report: SolveReport,
}

impl MpccSolution {
    /// Warm start for the next step: drop the first stage, repeat the last.
    pub fn shifted(&self) -> Guess {
        let mut inputs: Vec<[f64; NU]> = self.inputs[1..].to_vec();
        inputs.push(*self.inputs.last().expect("non-empty horizon"));
        let mut progress: Vec<f64> = self.progress[1..].to_vec();
        progress.push(*self.progress.last().expect("non-empty horizon"));
        Guess { inputs, progress }
    }
}

/// Run the SQP from the OCP's warm start.
pub fn solve_ocp(ocp: &Ocp<'_>, opts: &SqpOptions) -> Result<MpccSolution> {
    let res = solve_sqp(ocp, ocp.initial_guess(), opts)?;
    unpack(ocp, res.solution, res.report)
}

fn unpack(ocp: &Ocp<'_>, w: Vec<f64>, report: SolveReport) -> Result<MpccSolution> {
    let c = &ocp.config;
    let eval = ocp.evaluate(&w)?;
    let n = c.horizon;
    Ok(MpccSolution {
        inputs: (0..n).map(|i| [w[c.input_index(i)], w[c.input_index(i) + 1]]).collect(),
        progress: (0..n).map(|i| w[c.progress_index(i)]).collect(),
        slacks: (0..n).map(|i| w[c.slack_index(i)]).collect(),
        states: eval.states,
        thetas: eval.thetas,
        cost: eval.cost,
        decision: w,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::ZeroResidual;
    use crate::propagation::NominalVehicle;
    use crate::solver::SolveStatus;
    use crate::vehicle::{self, ControlInput, VehicleParams, VehicleState, NX};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn oval() -> Track {
        let mut pts = Vec::new();
        for k in 0..12 {
            pts.push([-0.6 + 0.1 * k as f64, -0.5]);
        }
        for k in 0..12 {
            let a = -core::f64::consts::FRAC_PI_2 + core::f64::consts::PI * k as f64 / 12.0;
            pts.push([0.6 + 0.5 * cos(a), 0.5 * sin(a)]);
        }
        for k in 0..12 {
            pts.push([0.6 - 0.1 * k as f64, 0.5]);
        }
        for k in 0..12 {
            let a = core::f64::consts::FRAC_PI_2 + core::f64::consts::PI * k as f64 / 12.0;
            pts.push([-0.6 + 0.5 * cos(a), 0.5 * sin(a)]);
        }
        Track::build(&pts, 0.15, true).unwrap()
    }

    fn cfg(n: usize) -> MpccConfig {
        MpccConfig { horizon: n, tightened_steps: n.min(15), ..MpccConfig::default() }
    }

    fn start_state(track: &Track, speed: f64) -> Vec<f64> {
        let p = track.eval_centerline(0.0);
        vec![p.x, p.y, p.phi, speed, 0.0, 0.0]
    }

    fn cruise_guess(n: usize, speed: f64, ts: f64) -> Guess {
        Guess { inputs: vec![[0.3, 0.0]; n], progress: vec![speed * ts; n] }
    }

    #[test]
    fn stage_cost_examples() {
        let track = oval();
        let c = cfg(10);
        let x = start_state(&track, 0.0);
        let zero = stage_cost(&track, &x, 0.0, 0.0, [0.0; 2], 0.0, &c);
        assert!(zero.value.abs() < 1e-12);
        let prog = stage_cost(&track, &x, 0.0, 0.05, [0.0; 2], 0.0, &c);
        assert!((prog.value + c.progress_weight * 0.05).abs() < 1e-12);
    }

    #[test]
    fn stage_cost_gradient_matches_finite_differences() {
        let track = oval();
        let mut c = cfg(10);
        c.input_rate_weight = [[0.3, 0.1], [0.1, 0.7]];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let theta = rng.gen_range(0.0..track.length());
            let p = track.eval_centerline(theta);
            let x = vec![p.x + rng.gen_range(-0.1..0.1), p.y + rng.gen_range(-0.1..0.1), 0.0, 1.0, 0.0, 0.0];
            let th = theta + rng.gen_range(-0.05..0.05);
            let v = rng.gen_range(0.0..0.1);
            let du = [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)];
            let dv = rng.gen_range(-0.05..0.05);
            let sc = stage_cost(&track, &x, th, v, du, dv, &c);
            let f = |x: &[f64], th: f64, v: f64, du: [f64; 2], dv: f64| stage_cost(&track, x, th, v, du, dv, &c).value;
            let h = 1e-6;
            let mut fd = Vec::new();
            for k in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                fd.push((f(&xp, th, v, du, dv) - f(&xm, th, v, du, dv)) / (2.0 * h));
            }
            fd.push((f(&x, th + h, v, du, dv) - f(&x, th - h, v, du, dv)) / (2.0 * h));
            fd.push((f(&x, th, v + h, du, dv) - f(&x, th, v - h, du, dv)) / (2.0 * h));
            for k in 0..2 {
                let mut p = du;
                let mut m = du;
                p[k] += h;
                m[k] -= h;
                fd.push((f(&x, th, v, p, dv) - f(&x, th, v, m, dv)) / (2.0 * h));
            }
            fd.push((f(&x, th, v, du, dv + h) - f(&x, th, v, du, dv - h)) / (2.0 * h));
            let an = [
                sc.grad_position[0],
                sc.grad_position[1],
                sc.grad_theta,
                sc.grad_progress,
                sc.grad_input_rate[0],
                sc.grad_input_rate[1],
                sc.grad_progress_rate,
            ];
            for (a, b) in an.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    struct Setup {
        track: Track,
        dynamics: NominalVehicle,
        model: ZeroResidual,
    }

    fn setup() -> Setup {
        Setup { track: oval(), dynamics: NominalVehicle(VehicleParams::default()), model: ZeroResidual { input_dim: 8, output_dim: 3 } }
    }

    fn ocp_at<'a>(s: &'a Setup, c: &MpccConfig, x: &[f64], guess: &Guess, tube: &VarianceTube) -> Ocp<'a> {
        let inputs = OcpInputs { state: x, theta: 0.0, previous_input: [0.3, 0.0], previous_progress: guess.progress[0], guess, tube };
        build_ocp(&inputs, &s.dynamics, &s.model, &s.track, c).unwrap()
    }

    /// Full nonlinear cost of the single-shooting problem (errors evaluated
    /// exactly, not linearized), written independently of the OCP.
    fn exact_cost(s: &Setup, c: &MpccConfig, x0: &[f64], u_prev: [f64; 2], v_prev: f64, w: &[f64]) -> f64 {
        let n = c.horizon;
        let mut x = VehicleState::from_array(x0.try_into().unwrap());
        let mut theta = 0.0;
        let mut total = 0.0;
        let (mut pu, mut pv) = (u_prev, v_prev);
        for i in 0..n {
            let u = [w[2 * i], w[2 * i + 1]];
            let v = w[2 * n + i];
            let sl = w[3 * n + i];
            x = vehicle::discrete_step(&x, &ControlInput::from_array(u), &s.dynamics.0).unwrap();
            theta += v;
            let du = [u[0] - pu[0], u[1] - pu[1]];
            total += stage_cost(&s.track, &x.to_array(), theta, v, du, v - pv, c).value;
            total += c.slack_quadratic * sl * sl + c.slack_linear * sl;
            pu = u;
            pv = v;
        }
        total
    }

    #[test]
    fn quadratization_matches_exact_cost_at_linearization_point() {
        let s = setup();
        let c = cfg(12);
        let x0 = start_state(&s.track, 1.2);
        let guess = Guess {
            inputs: (0..12).map(|i| [0.35 + 0.01 * i as f64, 0.05 * sin(i as f64)]).collect(),
            progress: vec![0.03; 12],
        };
        let tube = VarianceTube::zero(NX, 12, s.track.half_width());
        let ocp = ocp_at(&s, &c, &x0, &guess, &tube);
        let w0 = ocp.initial_guess().to_vec();
        let lin = ocp.linearize(&w0).unwrap();
        let exact = exact_cost(&s, &c, &x0, [0.3, 0.0], guess.progress[0], &w0);
        assert!((lin.cost - exact).abs() <= 1e-10 * (1.0 + exact.abs()), "{} vs {exact}", lin.cost);
        let h = 1e-6;
        for k in 0..w0.len() {
            let mut p = w0.clone();
            let mut m = w0.clone();
            p[k] += h;
            m[k] -= h;
            let fd = (exact_cost(&s, &c, &x0, [0.3, 0.0], guess.progress[0], &p) - exact_cost(&s, &c, &x0, [0.3, 0.0], guess.progress[0], &m)) / (2.0 * h);
            assert!((lin.gradient[k] - fd).abs() <= 1e-5 * (1.0 + fd.abs()), "k={k}: {} vs {fd}", lin.gradient[k]);
        }
    }

    #[test]
    fn constraint_jacobian_matches_finite_differences() {
        let s = setup();
        let c = cfg(8);
        let x0 = start_state(&s.track, 1.0);
        let guess = cruise_guess(8, 1.0, 0.03);
        let tube = VarianceTube::zero(NX, 8, s.track.half_width());
        let ocp = ocp_at(&s, &c, &x0, &guess, &tube);
        let mut w = ocp.initial_guess().to_vec();
        w[1] = 0.2;
        w[5] = -0.1;
        let lin = ocp.linearize(&w).unwrap();
        let h = 1e-6;
        for k in 0..w.len() {
            let mut p = w.clone();
            let mut m = w.clone();
            p[k] += h;
            m[k] -= h;
            let gp = ocp.evaluate(&p).unwrap();
            let gm = ocp.evaluate(&m).unwrap();
            let fd_cost = (gp.cost - gm.cost) / (2.0 * h);
            assert!((lin.gradient[k] - fd_cost).abs() <= 1e-5 * (1.0 + fd_cost.abs()));
            for r in 0..lin.constraints.len() {
                let fd = (gp.constraints[r] - gm.constraints[r]) / (2.0 * h);
                assert!((lin.jacobian[(r, k)] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "row {r} col {k}");
            }
        }
    }

    #[test]
    fn standstill_is_feasible() {
        let s = setup();
        let c = cfg(10);
        let x0 = start_state(&s.track, 0.0);
        let guess = Guess { inputs: vec![[0.0, 0.0]; 10], progress: vec![0.0; 10] };
        let tube = VarianceTube::zero(NX, 10, s.track.half_width());
        let ocp = ocp_at(&s, &c, &x0, &guess, &tube);
        let e = ocp.evaluate(ocp.initial_guess()).unwrap();
        assert!(e.constraints.iter().all(|g| *g <= 0.0));
        // the rolling-resistance offset acts at standstill, so the car creeps
        for x in &e.states {
            assert!((x[0] - x0[0]).hypot(x[1] - x0[1]) < 0.1);
        }
    }

    #[test]
    fn tube_margins_set_stage_radii() {
        let s = setup();
        let c = cfg(6);
        let x0 = start_state(&s.track, 1.0);
        let guess = cruise_guess(6, 1.0, 0.03);
        let mut tube = VarianceTube::zero(NX, 6, s.track.half_width());
        for i in 1..=6 {
            tube.margins[i] = 0.01 * i as f64;
            tube.radii[i] = s.track.half_width() - tube.margins[i];
        }
        let ocp = ocp_at(&s, &c, &x0, &guess, &tube);
        for (i, st) in ocp.stages().iter().enumerate() {
            assert!((st.radius - (0.15 - 0.01 * (i + 1) as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_model_and_tube_reduce_to_nominal_problem() {
        let s = setup();
        let c = cfg(10);
        let x0 = start_state(&s.track, 1.5);
        let guess = cruise_guess(10, 1.5, 0.03);
        let tube = VarianceTube::zero(NX, 10, s.track.half_width());
        let ocp = ocp_at(&s, &c, &x0, &guess, &tube);
        let w = ocp.initial_guess();
        let e = ocp.evaluate(w).unwrap();
        let mut x = VehicleState::from_array(x0.clone().try_into().unwrap());
        for i in 0..10 {
            x = vehicle::discrete_step(&x, &ControlInput::new(w[2 * i], w[2 * i + 1]), &s.dynamics.0).unwrap();
            assert_eq!(e.states[i + 1], x.to_array().to_vec());
            assert_eq!(ocp.stages()[i].radius, s.track.half_width());
        }
        let exact = exact_cost(&s, &c, &x0, [0.3, 0.0], guess.progress[0], w);
        assert!((e.cost - exact).abs() < 1e-10 * (1.0 + exact.abs()));
    }

    #[test]
    fn build_is_deterministic() {
        let s = setup();
        let c = cfg(10);
        let x0 = start_state(&s.track, 1.0);
        let guess = cruise_guess(10, 1.0, 0.03);
        let tube = VarianceTube::zero(NX, 10, s.track.half_width());
        let a = ocp_at(&s, &c, &x0, &guess, &tube).dump();
        let b = ocp_at(&s, &c, &x0, &guess, &tube).dump();
        assert_eq!(a, b);
    }

    #[test]
    fn inconsistent_horizons_are_rejected() {
        let s = setup();
        let c = cfg(10);
        let x0 = start_state(&s.track, 1.0);
        let guess = cruise_guess(9, 1.0, 0.03);
        let tube = VarianceTube::zero(NX, 10, s.track.half_width());
        let inputs = OcpInputs { state: &x0, theta: 0.0, previous_input: [0.0; 2], previous_progress: 0.0, guess: &guess, tube: &tube };
        assert!(build_ocp(&inputs, &s.dynamics, &s.model, &s.track, &c).is_err());
    }

    #[test]
    fn solve_reports_cost_consistent_with_evaluation() {
        let s = setup();
        let c = cfg(15);
        let x0 = start_state(&s.track, 1.0);
        let guess = cruise_guess(15, 1.0, 0.03);
        let tube = VarianceTube::zero(NX, 15, s.track.half_width());
        let ocp = ocp_at(&s, &c, &x0, &guess, &tube);
        let opts = SqpOptions { max_iterations: 50, ..SqpOptions::default() };
        let sol = solve_ocp(&ocp, &opts).unwrap();
        let e = ocp.evaluate(&sol.decision).unwrap();
        assert!((e.cost - sol.report.cost).abs() <= 1e-8 * (1.0 + e.cost.abs()));
        assert!((e.cost - sol.cost).abs() <= 1e-12);
        assert_eq!(sol.report.status, SolveStatus::Converged);
        assert!(sol.slacks.iter().all(|s| *s >= 0.0));
        // warm start at the optimum converges at once
        let again = solve_sqp(&ocp, &sol.decision, &opts).unwrap();
        assert!(again.report.iterations <= 2, "{:?}", again.report);
    }

    #[test]
    fn forced_violation_is_absorbed_by_the_slack() {
        let s = setup();
        let mut c = cfg(8);
        c.slack_linear = 1e4;
        // outside the boundary, heading outward
        let p = s.track.eval_centerline(0.0);
        let normal = [sin(p.phi), -cos(p.phi)];
        let x0 = vec![p.x + 0.25 * normal[0], p.y + 0.25 * normal[1], p.phi - 0.3, 1.0, 0.0, 0.0];
        let guess = cruise_guess(8, 1.0, 0.03);
        let tube = VarianceTube::zero(NX, 8, s.track.half_width());
        let ocp = ocp_at(&s, &c, &x0, &guess, &tube);
        let sol = solve_ocp(&ocp, &SqpOptions { max_iterations: 60, ..SqpOptions::default() }).unwrap();
        let st = &ocp.stages()[0];
        let viol = st.lateral([sol.states[1][0], sol.states[1][1]]).abs() - st.radius;
        assert!(viol > 0.05);
        assert!((sol.slacks[0] - viol).abs() < 1e-6, "{} vs {viol}", sol.slacks[0]);
    }

    #[test]
    fn large_linear_slack_weight_is_exact() {
        let s = setup();
        let mut c = cfg(15);
        c.progress_weight = 20.0;
        c.slack_quadratic = 0.0;
        let x0 = start_state(&s.track, 1.5);
        let guess = cruise_guess(15, 1.5, 0.03);
        let tube = VarianceTube::zero(NX, 15, s.track.half_width());
        let opts = SqpOptions { max_iterations: 100, ..SqpOptions::default() };
        let mut zero_from = None;
        c.slack_linear = 0.01;
        for k in 0..16 {
            let ocp = ocp_at(&s, &c, &x0, &guess, &tube);
            let sol = solve_ocp(&ocp, &opts).unwrap();
            let max_s = sol.slacks.iter().fold(0.0f64, |m, v| m.max(*v));
            if max_s <= 1e-8 {
                zero_from.get_or_insert(k);
            } else {
                assert!(zero_from.is_none(), "slack reappeared at c_s = {}", c.slack_linear);
            }
            c.slack_linear *= 2.0;
        }
        assert!(zero_from.is_some());
    }
}
