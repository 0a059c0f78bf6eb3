//! Exact Gaussian-process regression, one independent GP per output, with a
//! squared-exponential kernel.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{cholesky_jittered, dot, forward_solve, cholesky_solve, Mat};
use crate::math::{exp, log, PI};
use crate::{Error, Result};

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

/// Kernel and noise hyperparameters of one output dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelHyper {
    pub signal_variance: f64,
    /// One length scale per input dimension; `L = diag(ℓ²)`.
    pub length_scales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.signal_variance) {
            return Err(Error::InvalidParameter { name: "signal_variance", reason: "must be positive" });
        }
        if !ok(self.noise_variance) {
            return Err(Error::InvalidParameter { name: "noise_variance", reason: "must be positive" });
        }
        if self.length_scales.is_empty() || !self.length_scales.iter().all(|&l| ok(l)) {
            return Err(Error::InvalidParameter { name: "length_scales", reason: "must be positive" });
        }
        Ok(())
    }

    /// Inverse squared length scales.
    pub fn precision(&self) -> Vec<f64> {
        self.length_scales.iter().map(|l| 1.0 / (l * l)).collect()
    }
}

/// Per-output hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameters {
    pub outputs: Vec<KernelHyper>,
}

impl Hyperparameters {
    /// Same hyperparameters for every output.
    pub fn uniform(outputs: usize, hyper: KernelHyper) -> Self {
        Self { outputs: vec![hyper; outputs] }
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.outputs.is_empty() {
            return Err(Error::InvalidParameter { name: "hyperparameters", reason: "no outputs" });
        }
        for h in &self.outputs {
            h.validate()?;
            if h.length_scales.len() != input_dim {
                return Err(Error::Dimension { what: "length_scales", expected: input_dim, got: h.length_scales.len() });
            }
        }
        Ok(())
    }
}

/// `σ_f² exp(−½ Σ_i (z_i − z'_i)² / ℓ_i²)` with precomputed `1/ℓ²`.
#[inline]
pub fn kernel_se_with(signal_variance: f64, precision: &[f64], z: &[f64], zp: &[f64]) -> f64 {
    let mut q = 0.0;
    for ((a, b), p) in z.iter().zip(zp).zip(precision) {
        let d = a - b;
        q += d * d * p;
    }
    signal_variance * exp(-0.5 * q)
}

pub fn kernel_se(z: &[f64], zp: &[f64], hyper: &KernelHyper) -> f64 {
    debug_assert_eq!(z.len(), zp.len());
    kernel_se_with(hyper.signal_variance, &hyper.precision(), z, zp)
}

/// Training inputs (rows) and targets (rows), aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct GpDataset {
    inputs: Mat,
    targets: Mat,
}

impl GpDataset {
    pub fn new(inputs: Mat, targets: Mat) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::Dimension { what: "dataset rows", expected: inputs.rows(), got: targets.rows() });
        }
        if inputs.rows() == 0 {
            return Err(Error::InvalidParameter { name: "dataset", reason: "empty" });
        }
        if !inputs.is_finite() || !targets.is_finite() {
            return Err(Error::NonFinite { field: "dataset" });
        }
        Ok(Self { inputs, targets })
    }

    pub fn from_rows(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self> {
        let nz = inputs.first().map_or(0, Vec::len);
        let nd = targets.first().map_or(0, Vec::len);
        if inputs.iter().any(|r| r.len() != nz) || targets.iter().any(|r| r.len() != nd) {
            return Err(Error::InvalidParameter { name: "dataset", reason: "ragged rows" });
        }
        let flat_in: Vec<f64> = inputs.iter().flatten().copied().collect();
        let flat_out: Vec<f64> = targets.iter().flatten().copied().collect();
        Self::new(
            Mat::from_row_slice(inputs.len(), nz, &flat_in),
            Mat::from_row_slice(targets.len(), nd, &flat_out),
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn inputs(&self) -> &Mat {
        &self.inputs
    }

    pub fn targets(&self) -> &Mat {
        &self.targets
    }

    pub fn input(&self, j: usize) -> &[f64] {
        self.inputs.row(j)
    }

    pub fn target_column(&self, a: usize) -> Vec<f64> {
        self.targets.column(a)
    }

    /// Rows at the given indices.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let zi: Vec<f64> = idx.iter().flat_map(|&j| self.inputs.row(j).iter().copied()).collect();
        let yi: Vec<f64> = idx.iter().flat_map(|&j| self.targets.row(j).iter().copied()).collect();
        Self::new(
            Mat::from_row_slice(idx.len(), self.input_dim(), &zi),
            Mat::from_row_slice(idx.len(), self.output_dim(), &yi),
        )
    }
}

/// Predictive mean, latent variance and mean gradient (`outputs × inputs`).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mean_gradient: Mat,
}

/// A model of the residual dynamics `d(z)`.
pub trait ResidualModel {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Mean and its gradient; skips the variance computation.
    fn mean_with_gradient(&self, z: &[f64]) -> (Vec<f64>, Mat);
    fn predict(&self, z: &[f64]) -> Prediction;
    /// Per-output observation noise variance, if the model has one.
    fn noise_variance(&self) -> Vec<f64> {
        vec![0.0; self.output_dim()]
    }
}

/// Residual model that is identically zero with zero variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZeroResidual {
    pub input_dim: usize,
    pub output_dim: usize,
}

impl ResidualModel for ZeroResidual {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn mean_with_gradient(&self, _z: &[f64]) -> (Vec<f64>, Mat) {
        (vec![0.0; self.output_dim], Mat::zeros(self.output_dim, self.input_dim))
    }

    fn predict(&self, _z: &[f64]) -> Prediction {
        Prediction {
            mean: vec![0.0; self.output_dim],
            variance: vec![0.0; self.output_dim],
            mean_gradient: Mat::zeros(self.output_dim, self.input_dim),
        }
    }
}

/// Per-output posterior caches.
#[derive(Clone, Debug, PartialEq)]
struct OutputPosterior {
    precision: Vec<f64>,
    /// Cholesky factor of `K + σ²I` (+ jitter).
    chol: Mat,
    /// `(K + σ²I)⁻¹ y`
    weights: Vec<f64>,
    jitter: f64,
}

/// Exact GP posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct GpModel {
    data: GpDataset,
    hyper: Hyperparameters,
    posts: Vec<OutputPosterior>,
}

/// `K + σ²I` for one output.
fn gram(data: &GpDataset, h: &KernelHyper, precision: &[f64]) -> Mat {
    let m = data.len();
    let mut k = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = kernel_se_with(h.signal_variance, precision, data.input(i), data.input(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += h.noise_variance;
    }
    k
}

fn fit_output(data: &GpDataset, h: &KernelHyper, y: &[f64]) -> Result<OutputPosterior> {
    let precision = h.precision();
    let k = gram(data, h, &precision);
    let (chol, jitter) = cholesky_jittered(&k, h.signal_variance, JITTER_START, JITTER_MAX)
        .ok_or(Error::NotPositiveDefinite { what: "GP Gram matrix" })?;
    let mut weights = y.to_vec();
    cholesky_solve(&chol, &mut weights);
    Ok(OutputPosterior { precision, chol, weights, jitter })
}

impl GpModel {
    pub fn fit(data: GpDataset, hyper: Hyperparameters) -> Result<Self> {
        hyper.validate(data.input_dim())?;
        if hyper.outputs.len() != data.output_dim() {
            return Err(Error::Dimension { what: "hyperparameter outputs", expected: data.output_dim(), got: hyper.outputs.len() });
        }
        let posts = hyper
            .outputs
            .iter()
            .enumerate()
            .map(|(a, h)| fit_output(&data, h, &data.target_column(a)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { data, hyper, posts })
    }

    pub fn dataset(&self) -> &GpDataset {
        &self.data
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    /// Jitter added to each Gram matrix during the fit.
    pub fn jitter(&self) -> Vec<f64> {
        self.posts.iter().map(|p| p.jitter).collect()
    }

    pub fn weights(&self, a: usize) -> &[f64] {
        &self.posts[a].weights
    }

    fn kernel_vector(&self, a: usize, z: &[f64]) -> Vec<f64> {
        let h = &self.hyper.outputs[a];
        let p = &self.posts[a];
        (0..self.data.len())
            .map(|j| kernel_se_with(h.signal_variance, &p.precision, z, self.data.input(j)))
            .collect()
    }

    fn mean_grad_output(&self, a: usize, z: &[f64], kz: &[f64], grad: &mut [f64]) -> f64 {
        let p = &self.posts[a];
        let mut mean = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (j, (&k, &w)) in kz.iter().zip(&p.weights).enumerate() {
            let kw = k * w;
            mean += kw;
            for (i, (zi, zj)) in z.iter().zip(self.data.input(j)).enumerate() {
                grad[i] -= kw * (zi - zj) * p.precision[i];
            }
        }
        mean
    }

    /// Log marginal likelihood summed over outputs.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let m = self.data.len() as f64;
        self.posts
            .iter()
            .enumerate()
            .map(|(a, p)| {
                let y = self.data.target_column(a);
                -0.5 * dot(&y, &p.weights) - log_det_half(&p.chol) - 0.5 * m * log(2.0 * PI)
            })
            .sum()
    }
}

/// `Σ log L_ii`
fn log_det_half(l: &Mat) -> f64 {
    (0..l.rows()).map(|i| log(l[(i, i)])).sum()
}

impl ResidualModel for GpModel {
    fn input_dim(&self) -> usize {
        self.data.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.data.output_dim()
    }

    fn mean_with_gradient(&self, z: &[f64]) -> (Vec<f64>, Mat) {
        let nd = self.output_dim();
        let mut grad = Mat::zeros(nd, self.input_dim());
        let mean = (0..nd)
            .map(|a| {
                let kz = self.kernel_vector(a, z);
                self.mean_grad_output(a, z, &kz, grad.row_mut(a))
            })
            .collect();
        (mean, grad)
    }

    fn predict(&self, z: &[f64]) -> Prediction {
        let nd = self.output_dim();
        let mut grad = Mat::zeros(nd, self.input_dim());
        let mut mean = Vec::with_capacity(nd);
        let mut variance = Vec::with_capacity(nd);
        for a in 0..nd {
            let mut kz = self.kernel_vector(a, z);
            mean.push(self.mean_grad_output(a, z, &kz, grad.row_mut(a)));
            forward_solve(&self.posts[a].chol, &mut kz);
            let sf2 = self.hyper.outputs[a].signal_variance;
            variance.push((sf2 - dot(&kz, &kz)).clamp(0.0, sf2));
        }
        Prediction { mean, variance, mean_gradient: grad }
    }

    fn noise_variance(&self) -> Vec<f64> {
        self.hyper.outputs.iter().map(|h| h.noise_variance).collect()
    }
}

/// Log-space box for the hyperparameter search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperBounds {
    pub signal_variance: (f64, f64),
    pub length_scale: (f64, f64),
    pub noise_variance: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            signal_variance: (1e-8, 1e4),
            length_scale: (1e-3, 1e4),
            noise_variance: (1e-10, 1e2),
        }
    }
}

/// Log marginal likelihood of a single output; `-inf` if the fit fails.
fn output_lml(data: &GpDataset, h: &KernelHyper, y: &[f64]) -> f64 {
    match fit_output(data, h, y) {
        Ok(p) => -0.5 * dot(y, &p.weights) - log_det_half(&p.chol) - 0.5 * data.len() as f64 * log(2.0 * PI),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Derivative-free coordinate descent on the log hyperparameters, run
/// independently per output. `budget` counts likelihood evaluations per
/// output. Only improving moves are accepted.
pub fn fit_hyperparameters(
    data: &GpDataset,
    init: &Hyperparameters,
    bounds: &HyperBounds,
    budget: usize,
) -> Result<Hyperparameters> {
    init.validate(data.input_dim())?;
    let nz = data.input_dim();
    let mut out = Vec::with_capacity(init.outputs.len());
    for (a, h0) in init.outputs.iter().enumerate() {
        let y = data.target_column(a);
        let pack = |h: &KernelHyper| {
            let mut v = Vec::with_capacity(nz + 2);
            v.push(log(h.signal_variance));
            v.extend(h.length_scales.iter().map(|l| log(*l)));
            v.push(log(h.noise_variance));
            v
        };
        let unpack = |v: &[f64]| KernelHyper {
            signal_variance: exp(v[0]),
            length_scales: v[1..=nz].iter().map(|x| exp(*x)).collect(),
            noise_variance: exp(v[nz + 1]),
        };
        let bound = |i: usize| {
            let (lo, hi) = if i == 0 {
                bounds.signal_variance
            } else if i == nz + 1 {
                bounds.noise_variance
            } else {
                bounds.length_scale
            };
            (log(lo), log(hi))
        };
        let mut x: Vec<f64> = pack(h0);
        for (i, v) in x.iter_mut().enumerate() {
            let (lo, hi) = bound(i);
            *v = v.clamp(lo, hi);
        }
        let mut best = output_lml(data, &unpack(&x), &y);
        let mut evals = 1;
        let mut step = 1.0;
        'search: while step > 1e-3 {
            let mut improved = false;
            for i in 0..x.len() {
                let (lo, hi) = bound(i);
                for dir in [1.0, -1.0] {
                    if evals >= budget {
                        break 'search;
                    }
                    let cand = (x[i] + dir * step).clamp(lo, hi);
                    if cand == x[i] {
                        continue;
                    }
                    let mut trial = x.clone();
                    trial[i] = cand;
                    let v = output_lml(data, &unpack(&trial), &y);
                    evals += 1;
                    if v > best {
                        best = v;
                        x = trial;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        out.push(unpack(&x));
    }
    Ok(Hyperparameters { outputs: out })
}
