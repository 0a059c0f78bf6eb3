//! FITC sparse GP with inducing inputs chosen along a planned trajectory,
//! updated one point at a time through Cholesky modifications.
//!
//! Per output the model caches the factor of `Σ⁻¹ = K_uu + K_uz Λ⁻¹ K_zu`,
//! `b = K_uz Λ⁻¹ y` and `w = Σ b`. Prediction then costs `O(M̃²)`:
//!
//! `μ̃(z) = k_uᵀ w`, `σ̃²(z) = k(z,z) − ‖L_uu⁻¹ k_u‖² + ‖L_s⁻¹ k_u‖²`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::gp::{kernel_se_with, GpDataset, GpModel, Prediction, ResidualModel, JITTER_MAX, JITTER_START};
use crate::linalg::{
    cholesky_append, cholesky_delete, cholesky_in_place, cholesky_jittered, cholesky_rank1, cholesky_solve, dot,
    forward_solve, DowndateError, Mat,
};
use crate::math::{floor, sqrt};
use crate::{Error, Result};

/// Minimum separation of inducing inputs in length-scale units.
pub const MIN_SEPARATION: f64 = 1e-6;
/// Rank-1 corrections smaller than this (relative to the diagonal) are skipped.
const NEGLIGIBLE: f64 = 1e-14;
/// Largest componentwise backward residual of the updated `Σ⁻¹` factor
/// accepted after a swap; above it the caches are rebuilt.
const SWAP_RESIDUAL_TOL: f64 = 1e-10;

/// Inducing inputs with the horizon index each one was taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct InducingSet {
    points: Mat,
    horizon_index: Vec<usize>,
}

impl InducingSet {
    pub fn new(points: Mat, horizon_index: Vec<usize>) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::InvalidParameter { name: "inducing set", reason: "empty" });
        }
        if horizon_index.len() != points.rows() {
            return Err(Error::Dimension { what: "inducing horizon indices", expected: points.rows(), got: horizon_index.len() });
        }
        if !points.is_finite() {
            return Err(Error::NonFinite { field: "inducing inputs" });
        }
        Ok(Self { points, horizon_index })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nz = rows.first().map_or(0, Vec::len);
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(Mat::from_row_slice(rows.len(), nz, &flat), (0..rows.len()).collect())
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, k: usize) -> &[f64] {
        self.points.row(k)
    }

    pub fn points(&self) -> &Mat {
        &self.points
    }

    pub fn horizon_index(&self) -> &[usize] {
        &self.horizon_index
    }
}

/// Smallest length-scale-normalized distance over output dimensions.
pub fn scaled_distance(model: &GpModel, a: &[f64], b: &[f64]) -> f64 {
    model
        .hyperparameters()
        .outputs
        .iter()
        .map(|h| {
            let q: f64 = a.iter().zip(b).zip(&h.length_scales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
            sqrt(q)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Horizon indices with geometrically growing gaps `g_k = g₀ λᵏ`
/// summing to `n − 1`. The first index is always 0.
pub fn placement_indices(n: usize, count: usize, decay: f64) -> Vec<usize> {
    assert!(n >= 1 && count >= 1);
    if count >= n {
        return (0..n).collect();
    }
    if count == 1 {
        return vec![0];
    }
    let gaps = count - 1;
    let total: f64 = (0..gaps).map(|k| decay.powi(k as i32)).sum();
    let g0 = (n - 1) as f64 / total;
    let mut idx = Vec::with_capacity(count);
    let mut pos = 0.0;
    for k in 0..count {
        let rounded = floor(pos + 0.5) as usize;
        let lo = idx.last().map_or(0, |&p: &usize| p + 1);
        let hi = n - (count - k);
        idx.push(rounded.clamp(lo, hi));
        if k < gaps {
            pos += g0 * decay.powi(k as i32);
        }
    }
    idx
}

/// Inducing inputs along a trajectory `z̄_0..z̄_{N−1}`: geometric placement,
/// nudged forward to keep the minimum separation. Falls back to uniform
/// spacing; on a trajectory with fewer distinct points than requested the
/// set comes out smaller.
pub fn select_inducing(model: &GpModel, trajectory: &[Vec<f64>], count: usize, decay: f64) -> Result<InducingSet> {
    let n = trajectory.len();
    if n == 0 || count == 0 {
        return Err(Error::InvalidParameter { name: "select_inducing", reason: "empty trajectory or count" });
    }
    let pick = |targets: &[usize], strict: bool| -> Option<Vec<usize>> {
        let mut chosen: Vec<usize> = Vec::with_capacity(targets.len());
        for (k, &t) in targets.iter().enumerate() {
            let lo = chosen.last().map_or(t, |&p| t.max(p + 1));
            let hi = targets.get(k + 1).map_or(n, |&next| next);
            let found = (lo..hi.max(lo + 1).min(n))
                .find(|&i| chosen.iter().all(|&c| scaled_distance(model, &trajectory[c], &trajectory[i]) >= MIN_SEPARATION));
            match found {
                Some(i) => chosen.push(i),
                None if strict => return None,
                None => {}
            }
        }
        Some(chosen)
    };
    let geometric = placement_indices(n, count, decay);
    let idx = match pick(&geometric, true) {
        Some(idx) => idx,
        None => pick(&placement_indices(n, count, 1.0), false).unwrap_or_default(),
    };
    let idx = if idx.is_empty() { vec![0] } else { idx };
    let flat: Vec<f64> = idx.iter().flat_map(|&i| trajectory[i].iter().copied()).collect();
    InducingSet::new(Mat::from_row_slice(idx.len(), trajectory[0].len(), &flat), idx)
}

/// Per-output FITC caches.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOutput {
    signal_variance: f64,
    noise_variance: f64,
    precision: Vec<f64>,
    jitter: f64,
    /// factor of `K_uu + jitter·I`
    l_uu: Mat,
    /// `K_zu` (M × M̃)
    k_zu: Mat,
    /// rows `L_uu⁻¹ k_u(z_j)` (M × M̃)
    v: Mat,
    /// FITC diagonal
    lambda: Vec<f64>,
    /// factor of `Σ⁻¹`
    l_s: Mat,
    b: Vec<f64>,
    w: Vec<f64>,
}

impl SparseOutput {
    pub fn l_uu(&self) -> &Mat {
        &self.l_uu
    }
    pub fn l_sigma_inv(&self) -> &Mat {
        &self.l_s
    }
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }
    pub fn b(&self) -> &[f64] {
        &self.b
    }
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    fn kern(&self, a: &[f64], b: &[f64]) -> f64 {
        kernel_se_with(self.signal_variance, &self.precision, a, b)
    }

    fn lambda_of(&self, vrow: &[f64]) -> f64 {
        (self.signal_variance - dot(vrow, vrow)).max(0.0) + self.noise_variance
    }

    /// Factor with the smallest jitter on `K_uu` that keeps both `K_uu` and
    /// `Σ⁻¹` positive definite. Nearly collinear inducing points together
    /// with a small noise variance can leave `Σ⁻¹` numerically indefinite even
    /// when `K_uu` alone factors.
    fn build(model: &GpModel, a: usize, ind: &InducingSet) -> Result<Self> {
        let h = &model.hyperparameters().outputs[a];
        let mt = ind.len();
        let k_uu = Mat::from_fn(mt, mt, |i, j| kernel_se_with(h.signal_variance, &h.precision(), ind.point(i), ind.point(j)));
        let (_, mut jitter) = cholesky_jittered(&k_uu, h.signal_variance, JITTER_START, JITTER_MAX)
            .ok_or(Error::NotPositiveDefinite { what: "inducing Gram matrix" })?;
        loop {
            if let Some(out) = Self::build_with_jitter(model, a, ind, &k_uu, jitter) {
                return Ok(out);
            }
            jitter = if jitter == 0.0 { JITTER_START * h.signal_variance } else { jitter * 10.0 };
            if jitter > JITTER_MAX * h.signal_variance * (1.0 + 1e-12) {
                return Err(Error::NotPositiveDefinite { what: "FITC Σ⁻¹" });
            }
        }
    }

    fn build_with_jitter(model: &GpModel, a: usize, ind: &InducingSet, k_uu: &Mat, jitter: f64) -> Option<Self> {
        let h = &model.hyperparameters().outputs[a];
        let data = model.dataset();
        let y = data.target_column(a);
        let (m, mt) = (data.len(), ind.len());
        let mut s = k_uu.clone();
        for i in 0..mt {
            s[(i, i)] += jitter;
        }
        let mut l_uu = s.clone();
        cholesky_in_place(&mut l_uu).ok()?;
        let mut out = SparseOutput {
            signal_variance: h.signal_variance,
            noise_variance: h.noise_variance,
            precision: h.precision(),
            jitter,
            l_uu,
            k_zu: Mat::zeros(m, mt),
            v: Mat::zeros(m, mt),
            lambda: vec![0.0; m],
            l_s: Mat::zeros(0, 0),
            b: vec![0.0; mt],
            w: vec![0.0; mt],
        };
        for j in 0..m {
            for i in 0..mt {
                out.k_zu[(j, i)] = out.kern(data.input(j), ind.point(i));
            }
            let mut row = out.k_zu.row(j).to_vec();
            forward_solve(&out.l_uu, &mut row);
            out.lambda[j] = out.lambda_of(&row);
            out.v.row_mut(j).copy_from_slice(&row);
        }
        for j in 0..m {
            let kr = out.k_zu.row(j);
            let inv = 1.0 / out.lambda[j];
            for p in 0..mt {
                for q in 0..=p {
                    s[(p, q)] += kr[p] * kr[q] * inv;
                }
            }
        }
        for p in 0..mt {
            for q in 0..p {
                s[(q, p)] = s[(p, q)];
            }
        }
        cholesky_in_place(&mut s).ok()?;
        out.l_s = s;
        out.refresh_weights(&y);
        Some(out)
    }

    fn refresh_weights(&mut self, y: &[f64]) {
        let mt = self.l_s.rows();
        let mut b = vec![0.0; mt];
        for (j, yj) in y.iter().enumerate() {
            let c = yj / self.lambda[j];
            for (bi, k) in b.iter_mut().zip(self.k_zu.row(j)) {
                *bi += k * c;
            }
        }
        let mut w = b.clone();
        cholesky_solve(&self.l_s, &mut w);
        self.b = b;
        self.w = w;
    }

    /// Replace inducing point `slot` by `z_new`, which is appended last.
    /// `others` are the remaining inducing points in their new order.
    /// On failure `self` is left untouched.
    fn swap(&mut self, data: &GpDataset, y: &[f64], slot: usize, others: &Mat, z_new: &[f64]) -> core::result::Result<(), DowndateError> {
        let m = data.len();
        let mt = self.l_uu.rows();
        let kept = mt - 1;

        // removal: delete row/column `slot` from both factors
        let mut l_uu = cholesky_delete(&self.l_uu, slot);
        let mut l_s = cholesky_delete(&self.l_s, slot);
        let mut k_zu = Mat::from_fn(m, mt, |j, i| match i.cmp(&slot) {
            core::cmp::Ordering::Less => self.k_zu[(j, i)],
            _ if i < kept => self.k_zu[(j, i + 1)],
            _ => 0.0,
        });
        // leading entries of L_uu⁻¹ k_u are unaffected by the deletion
        let mut v = Mat::zeros(m, mt);
        for j in 0..m {
            let row = v.row_mut(j);
            row[..slot].copy_from_slice(&self.v.row(j)[..slot]);
            for i in slot..kept {
                let mut acc = k_zu[(j, i)];
                for p in 0..i {
                    acc -= l_uu[(i, p)] * row[p];
                }
                row[i] = acc / l_uu[(i, i)];
            }
        }

        // insertion with the old Λ
        let col_uu: Vec<f64> = (0..kept).map(|i| self.kern(others.row(i), z_new)).collect();
        let diag = self.signal_variance + self.jitter;
        let new_row = cholesky_append(&mut l_uu, &col_uu, diag)?;
        let k_new: Vec<f64> = (0..m).map(|j| self.kern(data.input(j), z_new)).collect();
        let mut col_s = col_uu.clone();
        let mut diag_s = diag;
        for j in 0..m {
            let c = k_new[j] / self.lambda[j];
            for (i, cs) in col_s.iter_mut().enumerate() {
                *cs += k_zu[(j, i)] * c;
            }
            diag_s += k_new[j] * c;
            k_zu[(j, kept)] = k_new[j];
            let row = v.row_mut(j);
            row[kept] = (k_new[j] - dot(&new_row[..kept], &row[..kept])) / new_row[kept];
        }
        cholesky_append(&mut l_s, &col_s, diag_s)?;

        // Λ changes with the inducing set: correct Σ⁻¹ by Σ_j Δ_j k_j k_jᵀ,
        // updates before downdates so intermediates stay positive definite
        let lambda: Vec<f64> = (0..m).map(|j| self.lambda_of(v.row(j))).collect();
        let scale = (0..mt).map(|i| l_s[(i, i)] * l_s[(i, i)]).fold(0.0, f64::max);
        for sign in [1.0, -1.0] {
            for j in 0..m {
                let delta = 1.0 / lambda[j] - 1.0 / self.lambda[j];
                if delta * sign <= 0.0 {
                    continue;
                }
                let kr = k_zu.row(j);
                if delta.abs() * dot(kr, kr) < NEGLIGIBLE * scale {
                    continue;
                }
                let c = sqrt(delta.abs());
                let mut vec: Vec<f64> = kr.iter().map(|k| k * c).collect();
                cholesky_rank1(&mut l_s, &mut vec, sign)?;
            }
        }
        if self.factor_residual(&l_s, &k_zu, &lambda, others, z_new) > SWAP_RESIDUAL_TOL {
            return Err(DowndateError);
        }
        self.l_uu = l_uu;
        self.l_s = l_s;
        self.k_zu = k_zu;
        self.v = v;
        self.lambda = lambda;
        self.refresh_weights(y);
        Ok(())
    }

    /// Probe `L_s L_sᵀ x` against `(K_uu + jitter·I + K_uzΛ⁻¹K_zu) x` for a
    /// fixed `x`, relative to the same product in absolute values.
    fn factor_residual(&self, l_s: &Mat, k_zu: &Mat, lambda: &[f64], others: &Mat, z_new: &[f64]) -> f64 {
        let mt = l_s.rows();
        let x: Vec<f64> = (0..mt).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 } * (1.0 + i as f64 / mt as f64)).collect();
        let point = |i: usize| if i + 1 < mt { others.row(i) } else { z_new };
        let mut exact = vec![0.0; mt];
        let mut scale = vec![0.0; mt];
        for i in 0..mt {
            for (j, xj) in x.iter().enumerate() {
                let k = self.kern(point(i), point(j)) + if i == j { self.jitter } else { 0.0 };
                exact[i] += k * xj;
                scale[i] += k.abs() * xj.abs();
            }
        }
        for (j, lj) in lambda.iter().enumerate() {
            let kr = k_zu.row(j);
            let (c, ca) = kr.iter().zip(&x).fold((0.0, 0.0), |(c, ca), (k, xi)| (c + k * xi, ca + (k * xi).abs()));
            for i in 0..mt {
                exact[i] += kr[i] * c / lj;
                scale[i] += kr[i].abs() * ca / lj;
            }
        }
        let mut t = vec![0.0; mt];
        for i in 0..mt {
            t[i] = (i..mt).map(|p| l_s[(p, i)] * x[p]).sum();
        }
        (0..mt)
            .map(|i| {
                let lx: f64 = (0..=i).map(|p| l_s[(i, p)] * t[p]).sum();
                (lx - exact[i]).abs() / scale[i]
            })
            .fold(0.0, f64::max)
    }

    fn predict_into(&self, inducing: &Mat, z: &[f64], grad: &mut [f64], want_variance: bool) -> (f64, f64) {
        let mt = inducing.rows();
        let mut ku = Vec::with_capacity(mt);
        let mut mean = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..mt {
            let u = inducing.row(i);
            let k = self.kern(z, u);
            ku.push(k);
            let kw = k * self.w[i];
            mean += kw;
            for (d, ((zi, ui), p)) in z.iter().zip(u).zip(&self.precision).enumerate() {
                grad[d] -= kw * (zi - ui) * p;
            }
        }
        if !want_variance {
            return (mean, 0.0);
        }
        let mut a = ku.clone();
        forward_solve(&self.l_uu, &mut a);
        forward_solve(&self.l_s, &mut ku);
        let var = self.signal_variance - dot(&a, &a) + dot(&ku, &ku);
        (mean, var.clamp(0.0, self.signal_variance))
    }
}

/// How an inducing-point swap was carried out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Incremental,
    /// A downdate lost positive definiteness; the caches were rebuilt.
    Rebuilt,
}

/// Result of aligning the inducing set with a new target set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RefreshReport {
    pub kept: usize,
    pub swapped: usize,
    pub fallback_rebuilds: usize,
    pub rebuilt: bool,
}

fn scaled_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0, |m: f64, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0, |m: f64, (x, y)| m.max((x - y).abs())) / scale
}

/// FITC approximation of an exact GP on an inducing set.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGpModel {
    parent: Arc<GpModel>,
    inducing: InducingSet,
    outputs: Vec<SparseOutput>,
}

impl SparseGpModel {
    pub fn build(parent: Arc<GpModel>, inducing: InducingSet) -> Result<Self> {
        if inducing.points().cols() != parent.dataset().input_dim() {
            return Err(Error::Dimension {
                what: "inducing input dimension",
                expected: parent.dataset().input_dim(),
                got: inducing.points().cols(),
            });
        }
        let outputs = (0..parent.dataset().output_dim())
            .map(|a| SparseOutput::build(&parent, a, &inducing))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { parent, inducing, outputs })
    }

    pub fn parent(&self) -> &Arc<GpModel> {
        &self.parent
    }

    pub fn inducing(&self) -> &InducingSet {
        &self.inducing
    }

    pub fn output(&self, a: usize) -> &SparseOutput {
        &self.outputs[a]
    }

    /// Largest difference of the cached factors, `K_uzΛ⁻¹y` and `Λ` against
    /// `other`, each scaled by `max(1, ‖other‖∞)` of that quantity.
    pub fn max_cache_difference(&self, other: &SparseGpModel) -> f64 {
        self.outputs
            .iter()
            .zip(&other.outputs)
            .map(|(a, b)| {
                scaled_diff(a.l_uu.as_slice(), b.l_uu.as_slice())
                    .max(scaled_diff(a.l_s.as_slice(), b.l_s.as_slice()))
                    .max(scaled_diff(a.k_zu.as_slice(), b.k_zu.as_slice()))
                    .max(scaled_diff(a.v.as_slice(), b.v.as_slice()))
                    .max(scaled_diff(&a.lambda, &b.lambda))
                    .max(scaled_diff(&a.b, &b.b))
            })
            .fold(0.0, f64::max)
    }

    /// Same measure for the weights `Σ b`, whose forward error grows with
    /// the condition number of `Σ⁻¹` on either path.
    pub fn max_weight_difference(&self, other: &SparseGpModel) -> f64 {
        self.outputs.iter().zip(&other.outputs).map(|(a, b)| scaled_diff(&a.w, &b.w)).fold(0.0, f64::max)
    }

    /// Swap inducing point `slot` for `z_new`; the new point is appended at
    /// the end of the set. Falls back to a rebuild if a downdate fails.
    pub fn update_inducing(&mut self, slot: usize, z_new: &[f64], horizon_index: usize) -> Result<UpdateOutcome> {
        let mt = self.inducing.len();
        if slot >= mt {
            return Err(Error::Dimension { what: "inducing slot", expected: mt, got: slot });
        }
        if z_new.len() != self.inducing.points().cols() || z_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter { name: "inducing point", reason: "wrong dimension or non-finite" });
        }
        let mut points = self.inducing.points().without_row(slot);
        if (0..points.rows()).any(|i| scaled_distance(&self.parent, points.row(i), z_new) < MIN_SEPARATION) {
            return Err(Error::InvalidParameter { name: "inducing point", reason: "closer than the minimum separation" });
        }
        let others = points.clone();
        points.push_row(z_new);
        let mut hidx = self.inducing.horizon_index().to_vec();
        hidx.remove(slot);
        hidx.push(horizon_index);
        let next = InducingSet::new(points, hidx)?;

        let data = self.parent.dataset();
        let mut outputs = self.outputs.clone();
        let mut ok = true;
        for (a, out) in outputs.iter_mut().enumerate() {
            if out.swap(data, &data.target_column(a), slot, &others, z_new).is_err() {
                ok = false;
                break;
            }
        }
        if ok {
            self.outputs = outputs;
            self.inducing = next;
            Ok(UpdateOutcome::Incremental)
        } else {
            *self = Self::build(self.parent.clone(), next)?;
            Ok(UpdateOutcome::Rebuilt)
        }
    }

    /// Align the inducing set with `targets`. Points within `reuse_tolerance`
    /// (length-scale units) of a target are kept; the rest are swapped one
    /// at a time. More than half the set changing triggers a rebuild.
    pub fn refresh(&mut self, targets: &InducingSet, reuse_tolerance: f64) -> Result<RefreshReport> {
        let mt = self.inducing.len();
        let mut report = RefreshReport::default();
        if targets.len() != mt {
            *self = Self::build(self.parent.clone(), targets.clone())?;
            report.rebuilt = true;
            return Ok(report);
        }
        let mut used = vec![false; mt];
        let mut hidx = self.inducing.horizon_index().to_vec();
        let mut pending = Vec::new();
        for t in 0..targets.len() {
            let best = (0..mt)
                .filter(|&s| !used[s])
                .map(|s| (s, scaled_distance(&self.parent, self.inducing.point(s), targets.point(t))))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((s, d)) if d <= reuse_tolerance => {
                    used[s] = true;
                    hidx[s] = targets.horizon_index()[t];
                }
                _ => pending.push(t),
            }
        }
        report.kept = mt - pending.len();
        self.inducing = InducingSet::new(self.inducing.points().clone(), hidx)?;
        if 2 * pending.len() > mt {
            *self = Self::build(self.parent.clone(), targets.clone())?;
            report.rebuilt = true;
            return Ok(report);
        }
        // slots to drop, highest first so earlier slot numbers stay valid
        let mut drop: Vec<usize> = (0..mt).filter(|&s| !used[s]).collect();
        drop.reverse();
        for (&slot, &t) in drop.iter().zip(&pending) {
            match self.update_inducing(slot, targets.point(t), targets.horizon_index()[t]) {
                Ok(UpdateOutcome::Incremental) => report.swapped += 1,
                Ok(UpdateOutcome::Rebuilt) => {
                    report.swapped += 1;
                    report.fallback_rebuilds += 1;
                }
                Err(Error::InvalidParameter { .. }) => {
                    *self = Self::build(self.parent.clone(), targets.clone())?;
                    report.rebuilt = true;
                    return Ok(report);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(report)
    }
}

impl ResidualModel for SparseGpModel {
    fn input_dim(&self) -> usize {
        self.parent.dataset().input_dim()
    }

    fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    fn mean_with_gradient(&self, z: &[f64]) -> (Vec<f64>, Mat) {
        let mut grad = Mat::zeros(self.output_dim(), self.input_dim());
        let mean = self
            .outputs
            .iter()
            .enumerate()
            .map(|(a, o)| o.predict_into(self.inducing.points(), z, grad.row_mut(a), false).0)
            .collect();
        (mean, grad)
    }

    fn predict(&self, z: &[f64]) -> Prediction {
        let mut grad = Mat::zeros(self.output_dim(), self.input_dim());
        let mut mean = Vec::with_capacity(self.outputs.len());
        let mut variance = Vec::with_capacity(self.outputs.len());
        for (a, o) in self.outputs.iter().enumerate() {
            let (mu, var) = o.predict_into(self.inducing.points(), z, grad.row_mut(a), true);
            mean.push(mu);
            variance.push(var);
        }
        Prediction { mean, variance, mean_gradient: grad }
    }

    fn noise_variance(&self) -> Vec<f64> {
        self.parent.noise_variance()
    }
}
