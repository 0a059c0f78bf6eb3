//! Dense convex QP by the Goldfarb–Idnani dual active-set method.
//!
//! `min ½xᵀHx + gᵀx  s.t.  Cx ≤ d,  lb ≤ x ≤ ub`, `H` positive definite.
//! Bounds are handled as implicit unit rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{cholesky_jittered, dot, Mat};
use crate::math::sqrt;

/// A convex QP. Infinite bounds are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub hessian: Mat,
    pub gradient: Vec<f64>,
    pub constraints: Mat,
    pub upper: Vec<f64>,
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
}

impl QpProblem {
    /// Unconstrained problem with unbounded variables.
    pub fn unconstrained(hessian: Mat, gradient: Vec<f64>) -> Self {
        let n = gradient.len();
        Self {
            hessian,
            gradient,
            constraints: Mat::zeros(0, n),
            upper: vec![],
            lower_bounds: vec![f64::NEG_INFINITY; n],
            upper_bounds: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.hessian.matvec(x)) + dot(&self.gradient, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    /// The constraints were inconsistent; solved with penalized relaxations.
    Relaxed,
    /// Iteration limit hit; the iterate is dual feasible but may violate constraints.
    IterationLimit,
    /// The Hessian could not be factorized.
    NotConvex,
}

/// Primal solution and multipliers (all `≥ 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub lower_multipliers: Vec<f64>,
    pub upper_multipliers: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

/// Residuals of the KKT conditions at a solution.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

pub fn kkt_residuals(qp: &QpProblem, sol: &QpSolution) -> KktResiduals {
    let n = qp.dim();
    let x = &sol.x;
    let mut grad = qp.hessian.matvec(x);
    for (gi, g0) in grad.iter_mut().zip(&qp.gradient) {
        *gi += g0;
    }
    let ct = qp.constraints.tr_matvec(&sol.multipliers);
    let mut r = 0.0f64;
    for k in 0..n {
        let s = grad[k] + ct[k] - sol.lower_multipliers[k] + sol.upper_multipliers[k];
        r = r.max(s.abs());
    }
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    let cx = qp.constraints.matvec(x);
    for i in 0..cx.len() {
        let slack = cx[i] - qp.upper[i];
        primal = primal.max(slack);
        comp = comp.max((sol.multipliers[i] * slack).abs());
    }
    for k in 0..n {
        if qp.lower_bounds[k].is_finite() {
            let slack = qp.lower_bounds[k] - x[k];
            primal = primal.max(slack);
            comp = comp.max((sol.lower_multipliers[k] * slack).abs());
        }
        if qp.upper_bounds[k].is_finite() {
            let slack = x[k] - qp.upper_bounds[k];
            primal = primal.max(slack);
            comp = comp.max((sol.upper_multipliers[k] * slack).abs());
        }
    }
    let dual = sol
        .multipliers
        .iter()
        .chain(&sol.lower_multipliers)
        .chain(&sol.upper_multipliers)
        .fold(0.0f64, |m, &l| m.max(-l));
    KktResiduals { stationarity: r, primal, dual, complementarity: comp }
}

/// Constraint in the `aᵀx ≥ b` convention of the dual method.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Row {
    General(usize),
    Lower(usize),
    Upper(usize),
}

struct Rows<'a> {
    qp: &'a QpProblem,
}

impl Rows<'_> {
    /// `aᵀx − b`, non-negative when satisfied.
    fn slack(&self, row: Row, x: &[f64]) -> f64 {
        match row {
            Row::General(i) => self.qp.upper[i] - dot(self.qp.constraints.row(i), x),
            Row::Lower(k) => x[k] - self.qp.lower_bounds[k],
            Row::Upper(k) => self.qp.upper_bounds[k] - x[k],
        }
    }

    /// `Jᵀ a`
    fn jt_a(&self, row: Row, j: &Mat, out: &mut [f64]) {
        let n = j.rows();
        match row {
            Row::General(i) => {
                let a = self.qp.constraints.row(i);
                out.iter_mut().for_each(|o| *o = 0.0);
                for k in 0..n {
                    let ak = -a[k];
                    if ak != 0.0 {
                        for (o, jv) in out.iter_mut().zip(j.row(k)) {
                            *o += ak * jv;
                        }
                    }
                }
            }
            Row::Lower(k) => out.copy_from_slice(j.row(k)),
            Row::Upper(k) => {
                for (o, jv) in out.iter_mut().zip(j.row(k)) {
                    *o = -jv;
                }
            }
        }
    }

    /// `aᵀ z`
    fn dot(&self, row: Row, z: &[f64]) -> f64 {
        match row {
            Row::General(i) => -dot(self.qp.constraints.row(i), z),
            Row::Lower(k) => z[k],
            Row::Upper(k) => -z[k],
        }
    }

    fn norm(&self, row: Row) -> f64 {
        match row {
            Row::General(i) => {
                let a = self.qp.constraints.row(i);
                sqrt(dot(a, a))
            }
            _ => 1.0,
        }
    }
}

/// Solve a convex QP. Never panics on infeasible input: inconsistent
/// constraints are relaxed with an exact ℓ1 penalty.
pub fn solve_qp(qp: &QpProblem) -> QpSolution {
    match dual_active_set(qp) {
        Ok(sol) => sol,
        Err(Failure::Infeasible) => solve_relaxed(qp),
        Err(Failure::NotConvex) => QpSolution {
            x: vec![0.0; qp.dim()],
            multipliers: vec![0.0; qp.upper.len()],
            lower_multipliers: vec![0.0; qp.dim()],
            upper_multipliers: vec![0.0; qp.dim()],
            status: QpStatus::NotConvex,
            iterations: 0,
        },
    }
}

enum Failure {
    Infeasible,
    NotConvex,
}

fn givens(a: f64, b: f64) -> f64 {
    sqrt(a * a + b * b)
}

fn dual_active_set(qp: &QpProblem) -> Result<QpSolution, Failure> {
    let n = qp.dim();
    let m = qp.upper.len();
    let scale = (0..n).map(|i| qp.hessian[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let (l, _) = cholesky_jittered(&qp.hessian, scale, 1e-14, 1e-8).ok_or(Failure::NotConvex)?;

    // J = L⁻ᵀ: solve Lᵀ J = I column by column
    let mut j = Mat::zeros(n, n);
    for c in 0..n {
        for r in (0..=c).rev() {
            let mut s = if r == c { 1.0 } else { 0.0 };
            for k in (r + 1)..=c {
                s -= l[(k, r)] * j[(k, c)];
            }
            j[(r, c)] = s / l[(r, r)];
        }
    }

    // unconstrained minimizer x = −H⁻¹ g = −J Jᵀ g
    let jtg = j.tr_matvec(&qp.gradient);
    let mut x: Vec<f64> = j.matvec(&jtg).iter().map(|v| -v).collect();

    let rows = Rows { qp };
    let mut candidates: Vec<Row> = (0..m).map(Row::General).collect();
    for k in 0..n {
        if qp.lower_bounds[k].is_finite() {
            candidates.push(Row::Lower(k));
        }
        if qp.upper_bounds[k].is_finite() {
            candidates.push(Row::Upper(k));
        }
    }
    let norms: Vec<f64> = candidates.iter().map(|&r| rows.norm(r)).collect();

    let mut r_mat = Mat::zeros(n, n);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut in_active = vec![false; candidates.len()];
    let mut r_norm = 1.0f64;
    let mut d = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut r = vec![0.0; n];
    let max_iter = 10 * (n + candidates.len()) + 50;
    let mut iterations = 0;
    let tol = 1e-11;

    loop {
        // most violated constraint (scaled by row norm)
        let mut p = None;
        let mut worst = 0.0;
        for (c, &row) in candidates.iter().enumerate() {
            if in_active[c] {
                continue;
            }
            let s = rows.slack(row, &x);
            let bound_scale = match row {
                Row::General(i) => 1.0 + qp.upper[i].abs(),
                Row::Lower(k) => 1.0 + qp.lower_bounds[k].abs(),
                Row::Upper(k) => 1.0 + qp.upper_bounds[k].abs(),
            };
            if s < -tol * bound_scale && s / norms[c] < worst {
                worst = s / norms[c];
                p = Some(c);
            }
        }
        let Some(p) = p else { break };
        let row_p = candidates[p];
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Ok(finish(qp, &candidates, &active, &u, x, QpStatus::IterationLimit, iterations));
            }
            let q = active.len();
            rows.jt_a(row_p, &j, &mut d);
            // primal direction z = J₂ d₂
            for (k, zk) in z.iter_mut().enumerate() {
                *zk = dot(&j.row(k)[q..], &d[q..]);
            }
            // dual direction r = R⁻¹ d₁
            for i in (0..q).rev() {
                let mut s = d[i];
                for k in (i + 1)..q {
                    s -= r_mat[(i, k)] * r[k];
                }
                r[i] = s / r_mat[(i, i)];
            }
            // partial step length from the active multipliers
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for k in 0..q {
                if r[k] > 0.0 {
                    let t = u[k] / r[k];
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(k);
                    }
                }
            }
            let zn = rows.dot(row_p, &z);
            let s_p = rows.slack(row_p, &x);
            let t2 = if sqrt(dot(&z, &z)) > 1e-14 * (1.0 + d.iter().fold(0.0f64, |a, b| a.max(b.abs()))) && zn > 0.0 {
                -s_p / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Failure::Infeasible);
            }
            if t2.is_infinite() {
                // dual step only
                for k in 0..q {
                    u[k] -= t * r[k];
                }
                u_p += t;
                let k = drop_at.expect("finite partial step has a blocking constraint");
                in_active[active[k]] = false;
                delete_constraint(&mut r_mat, &mut j, &mut active, &mut u, k);
                continue;
            }
            for (xk, zk) in x.iter_mut().zip(&z) {
                *xk += t * zk;
            }
            for k in 0..q {
                u[k] -= t * r[k];
            }
            u_p += t;
            if t == t2 {
                if add_constraint(&mut r_mat, &mut j, &mut d, q, &mut r_norm) {
                    active.push(p);
                    u.push(u_p);
                    in_active[p] = true;
                } else {
                    // numerically dependent on the active set; it is satisfied now
                    in_active[p] = true;
                }
                break;
            }
            let k = drop_at.expect("partial step has a blocking constraint");
            in_active[active[k]] = false;
            delete_constraint(&mut r_mat, &mut j, &mut active, &mut u, k);
            if rows.slack(row_p, &x) >= -tol {
                break;
            }
        }
        // constraints flagged without a multiplier can be re-examined
        for (c, flag) in in_active.iter_mut().enumerate() {
            if *flag && !active.contains(&c) {
                *flag = false;
            }
        }
    }
    Ok(finish(qp, &candidates, &active, &u, x, QpStatus::Optimal, iterations))
}

fn finish(qp: &QpProblem, candidates: &[Row], active: &[usize], u: &[f64], x: Vec<f64>, status: QpStatus, iterations: usize) -> QpSolution {
    let n = qp.dim();
    let mut sol = QpSolution {
        x,
        multipliers: vec![0.0; qp.upper.len()],
        lower_multipliers: vec![0.0; n],
        upper_multipliers: vec![0.0; n],
        status,
        iterations,
    };
    for (&c, &ui) in active.iter().zip(u) {
        match candidates[c] {
            Row::General(i) => sol.multipliers[i] = ui,
            Row::Lower(k) => sol.lower_multipliers[k] = ui,
            Row::Upper(k) => sol.upper_multipliers[k] = ui,
        }
    }
    sol
}

/// Rotate `d` so only its first `q+1` entries are nonzero, updating `J`,
/// and append the result as column `q` of `R`.
fn add_constraint(r: &mut Mat, j: &mut Mat, d: &mut [f64], q: usize, r_norm: &mut f64) -> bool {
    let n = j.rows();
    for col in ((q + 1)..n).rev() {
        let (mut cc, mut ss) = (d[col - 1], d[col]);
        let h = givens(cc, ss);
        if h == 0.0 {
            continue;
        }
        d[col] = 0.0;
        ss /= h;
        cc /= h;
        if cc < 0.0 {
            cc = -cc;
            ss = -ss;
            d[col - 1] = -h;
        } else {
            d[col - 1] = h;
        }
        let xny = ss / (1.0 + cc);
        for k in 0..n {
            let t1 = j[(k, col - 1)];
            let t2 = j[(k, col)];
            let a = t1 * cc + t2 * ss;
            j[(k, col - 1)] = a;
            j[(k, col)] = xny * (t1 + a) - t2;
        }
    }
    if d[q].abs() <= f64::EPSILON * *r_norm {
        return false;
    }
    for i in 0..=q {
        r[(i, q)] = d[i];
    }
    *r_norm = r_norm.max(d[q].abs());
    true
}

/// Remove active constraint at position `k`, restoring the triangular `R`.
fn delete_constraint(r: &mut Mat, j: &mut Mat, active: &mut Vec<usize>, u: &mut Vec<f64>, k: usize) {
    let n = j.rows();
    let q = active.len();
    active.remove(k);
    u.remove(k);
    for col in k..(q - 1) {
        for i in 0..n {
            r[(i, col)] = r[(i, col + 1)];
        }
    }
    for i in 0..n {
        r[(i, q - 1)] = 0.0;
    }
    let q = q - 1;
    for c in k..q {
        let (mut cc, mut ss) = (r[(c, c)], r[(c + 1, c)]);
        let h = givens(cc, ss);
        if h == 0.0 {
            continue;
        }
        cc /= h;
        ss /= h;
        r[(c + 1, c)] = 0.0;
        if cc < 0.0 {
            r[(c, c)] = -h;
            cc = -cc;
            ss = -ss;
        } else {
            r[(c, c)] = h;
        }
        let xny = ss / (1.0 + cc);
        for col in (c + 1)..q {
            let t1 = r[(c, col)];
            let t2 = r[(c + 1, col)];
            let a = t1 * cc + t2 * ss;
            r[(c, col)] = a;
            r[(c + 1, col)] = xny * (t1 + a) - t2;
        }
        for row in 0..n {
            let t1 = j[(row, c)];
            let t2 = j[(row, c + 1)];
            let a = t1 * cc + t2 * ss;
            j[(row, c)] = a;
            j[(row, c + 1)] = xny * (a + t1) - t2;
        }
    }
}

/// Penalty weight on constraint relaxations.
const RELAX_PENALTY: f64 = 1e6;

/// Re-solve with one non-negative relaxation per general constraint,
/// penalized linearly (exact for weights above the multipliers) plus a small
/// quadratic term to keep the Hessian positive definite.
fn solve_relaxed(qp: &QpProblem) -> QpSolution {
    let n = qp.dim();
    let m = qp.upper.len();
    let scale = (0..n).map(|i| qp.hessian[(i, i)].abs()).fold(1.0, f64::max);
    let mut h = Mat::zeros(n + m, n + m);
    for i in 0..n {
        h.row_mut(i)[..n].copy_from_slice(qp.hessian.row(i));
    }
    for i in 0..m {
        h[(n + i, n + i)] = 1e-6 * scale;
    }
    let mut g = qp.gradient.clone();
    g.extend(core::iter::repeat(RELAX_PENALTY).take(m));
    let mut c = Mat::zeros(m, n + m);
    for i in 0..m {
        c.row_mut(i)[..n].copy_from_slice(qp.constraints.row(i));
        c[(i, n + i)] = -1.0;
    }
    let mut lb = qp.lower_bounds.clone();
    lb.extend(core::iter::repeat(0.0).take(m));
    let mut ub = qp.upper_bounds.clone();
    ub.extend(core::iter::repeat(f64::INFINITY).take(m));
    let relaxed = QpProblem { hessian: h, gradient: g, constraints: c, upper: qp.upper.clone(), lower_bounds: lb, upper_bounds: ub };
    let inner = match dual_active_set(&relaxed) {
        Ok(s) => s,
        Err(_) => {
            return QpSolution {
                x: vec![0.0; n],
                multipliers: vec![0.0; m],
                lower_multipliers: vec![0.0; n],
                upper_multipliers: vec![0.0; n],
                status: QpStatus::NotConvex,
                iterations: 0,
            }
        }
    };
    QpSolution {
        x: inner.x[..n].to_vec(),
        multipliers: inner.multipliers,
        lower_multipliers: inner.lower_multipliers[..n].to_vec(),
        upper_multipliers: inner.upper_multipliers[..n].to_vec(),
        status: QpStatus::Relaxed,
        iterations: inner.iterations,
    }
}
