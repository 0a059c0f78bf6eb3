//! Gaussian belief propagation through learned dynamics
//! `x⁺ = f(x,u) + B_d (d(z) + w)`, the precomputed variance tube, and
//! chance-constraint tightening.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::gp::ResidualModel;
use crate::linalg::{lambda_max_2x2, psd_clamp, Mat};
use crate::math::{log, sqrt};
use crate::vehicle::{self, ControlInput, VehicleParams, VehicleState, NU, NX, VEL};
use crate::{Error, Result};

/// Nominal discrete-time dynamics with a residual acting on a block of rows.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Rows of the state the residual enters (the nonzero block of `B_d`).
    fn residual_rows(&self) -> Range<usize>;
    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
    /// `(∂f/∂x, ∂f/∂u)`
    fn jacobians(&self, x: &[f64], u: &[f64]) -> Result<(Mat, Mat)>;
}

/// Euler-discretized bicycle model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NominalVehicle(pub VehicleParams);

impl Dynamics for NominalVehicle {
    fn state_dim(&self) -> usize {
        NX
    }

    fn input_dim(&self) -> usize {
        NU
    }

    fn residual_rows(&self) -> Range<usize> {
        VEL..NX
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let xs = state_from(x)?;
        let us = ControlInput::new(u[0], u[1]);
        Ok(vehicle::discrete_step(&xs, &us, &self.0)?.to_array().to_vec())
    }

    fn jacobians(&self, x: &[f64], u: &[f64]) -> Result<(Mat, Mat)> {
        let xs = state_from(x)?;
        let us = ControlInput::new(u[0], u[1]);
        let (a, b) = vehicle::discrete_jacobians(&xs, &us, &self.0);
        Ok((
            Mat::from_fn(NX, NX, |i, j| a[i][j]),
            Mat::from_fn(NX, NU, |i, j| b[i][j]),
        ))
    }
}

fn state_from(x: &[f64]) -> Result<VehicleState> {
    if x.len() != NX {
        return Err(Error::Dimension { what: "vehicle state", expected: NX, got: x.len() });
    }
    let mut a = [0.0; NX];
    a.copy_from_slice(x);
    Ok(VehicleState::from_array(a))
}

fn gp_input(x: &[f64], u: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(x.len() + u.len());
    z.extend_from_slice(x);
    z.extend_from_slice(u);
    z
}

/// Mean state and covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub mean: Vec<f64>,
    pub covariance: Mat,
}

/// `μ⁺ = f(μ,u) + B_d μ_d(μ,u)`
pub fn propagate_mean<D: Dynamics + ?Sized, G: ResidualModel + ?Sized>(
    dynamics: &D,
    model: &G,
    mean: &[f64],
    u: &[f64],
) -> Result<Vec<f64>> {
    let mut next = dynamics.step(mean, u)?;
    let (mu, _) = model.mean_with_gradient(&gp_input(mean, u));
    for (row, m) in dynamics.residual_rows().zip(mu) {
        next[row] += m;
    }
    Ok(next)
}

/// Mean step and its Jacobians with respect to state and input.
pub fn propagate_mean_with_jacobians<D: Dynamics + ?Sized, G: ResidualModel + ?Sized>(
    dynamics: &D,
    model: &G,
    mean: &[f64],
    u: &[f64],
) -> Result<(Vec<f64>, Mat, Mat)> {
    let nx = dynamics.state_dim();
    let mut next = dynamics.step(mean, u)?;
    let (mut a, mut b) = dynamics.jacobians(mean, u)?;
    let (mu, grad) = model.mean_with_gradient(&gp_input(mean, u));
    for (k, row) in dynamics.residual_rows().enumerate() {
        next[row] += mu[k];
        for j in 0..nx {
            a[(row, j)] += grad[(k, j)];
        }
        for j in 0..b.cols() {
            b[(row, j)] += grad[(k, nx + j)];
        }
    }
    Ok((next, a, b))
}

/// First-order covariance step
/// `Σ⁺ = ∇f̃ Σ ∇f̃ᵀ + B_d (Σ_d + Σ_w) B_dᵀ` with `f̃ = f + B_d μ_d`,
/// symmetrized and clamped to PSD.
pub fn propagate_variance<D: Dynamics + ?Sized, G: ResidualModel + ?Sized>(
    dynamics: &D,
    model: &G,
    mean: &[f64],
    u: &[f64],
    covariance: &Mat,
    process_noise: &[f64],
) -> Result<Mat> {
    let nx = dynamics.state_dim();
    if covariance.rows() != nx || covariance.cols() != nx {
        return Err(Error::Dimension { what: "state covariance", expected: nx, got: covariance.rows() });
    }
    let (mut a, _) = dynamics.jacobians(mean, u)?;
    let pred = model.predict(&gp_input(mean, u));
    for (k, row) in dynamics.residual_rows().enumerate() {
        for j in 0..nx {
            a[(row, j)] += pred.mean_gradient[(k, j)];
        }
    }
    let mut next = a.matmul(covariance).matmul(&a.transpose());
    for (k, row) in dynamics.residual_rows().enumerate() {
        next[(row, row)] += pred.variance[k] + process_noise.get(k).copied().unwrap_or(0.0);
    }
    next.symmetrize();
    psd_clamp(&mut next);
    Ok(next)
}

/// Margin and tightened radius for one stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tightening {
    pub margin: f64,
    pub radius: f64,
}

/// `margin = sqrt(χ² λ_max(Σ_XY))`, `radius = max(r − margin, floor·r)`.
/// `sigma_xy = [Σ_XX, Σ_XY, Σ_YY]`.
pub fn tighten_radius(r: f64, sigma_xy: [f64; 3], chi2_level: f64, min_radius_fraction: f64) -> Tightening {
    let lmax = lambda_max_2x2(sigma_xy[0], sigma_xy[1], sigma_xy[2]).max(0.0);
    let margin = sqrt(chi2_level * lmax);
    Tightening { margin, radius: (r - margin).max(min_radius_fraction * r) }
}

/// Quantile of the χ² distribution with two degrees of freedom.
pub fn chi2_quantile_2dof(p: f64) -> f64 {
    -2.0 * log(1.0 - p)
}

/// Tube settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TubeConfig {
    pub chi2_level: f64,
    /// Stages `1..=tightened_steps` are tightened.
    pub tightened_steps: usize,
    pub min_radius_fraction: f64,
    /// Per-step variance added on the residual rows.
    pub process_noise: Vec<f64>,
}

/// Covariances `Σ̄_0..Σ̄_N` along an approximate trajectory plus per-stage
/// margins and tightened radii (index 0 is the measured state).
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceTube {
    pub covariances: Vec<Mat>,
    pub margins: Vec<f64>,
    pub radii: Vec<f64>,
}

impl VarianceTube {
    /// Tube with zero uncertainty for a horizon of `n` steps.
    pub fn zero(state_dim: usize, n: usize, r: f64) -> Self {
        Self {
            covariances: vec![Mat::zeros(state_dim, state_dim); n + 1],
            margins: vec![0.0; n + 1],
            radii: vec![r; n + 1],
        }
    }

    pub fn horizon(&self) -> usize {
        self.margins.len() - 1
    }

    /// `[Σ_XX, Σ_XY, Σ_YY]` at stage `i`.
    pub fn position_marginal(&self, i: usize) -> [f64; 3] {
        let c = &self.covariances[i];
        [c[(0, 0)], c[(0, 1)], c[(1, 1)]]
    }
}

/// Runs the covariance recursion from `Σ̄_0 = 0` along `(x̄_i, ū_i)`,
/// `i = 0..N−1`, and tightens stages `1..=tightened_steps`.
pub fn build_variance_tube<D: Dynamics + ?Sized, G: ResidualModel + ?Sized>(
    dynamics: &D,
    model: &G,
    states: &[Vec<f64>],
    inputs: &[Vec<f64>],
    half_width: f64,
    config: &TubeConfig,
) -> Result<VarianceTube> {
    let n = states.len();
    if inputs.len() != n {
        return Err(Error::Dimension { what: "tube inputs", expected: n, got: inputs.len() });
    }
    let nx = dynamics.state_dim();
    let mut covariances = Vec::with_capacity(n + 1);
    covariances.push(Mat::zeros(nx, nx));
    for i in 0..n {
        let next = propagate_variance(dynamics, model, &states[i], &inputs[i], &covariances[i], &config.process_noise)?;
        covariances.push(next);
    }
    let mut margins = vec![0.0; n + 1];
    let mut radii = vec![half_width; n + 1];
    for i in 1..=n.min(config.tightened_steps) {
        let c = &covariances[i];
        let t = tighten_radius(half_width, [c[(0, 0)], c[(0, 1)], c[(1, 1)]], config.chi2_level, config.min_radius_fraction);
        margins[i] = t.margin;
        radii[i] = t.radius;
    }
    Ok(VarianceTube { covariances, margins, radii })
}
