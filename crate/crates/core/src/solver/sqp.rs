//! Sequential quadratic programming with a Gauss–Newton Hessian,
//! Levenberg damping and an ℓ1 merit line search.

use alloc::vec::Vec;

use crate::linalg::{dot, norm_inf, Mat};
use crate::solver::qp::{solve_qp, QpProblem, QpStatus};
use crate::Result;

/// Everything the SQP needs at one point. Constraints are `g(w) ≤ 0`.
#[derive(Clone, Debug)]
pub struct NlpEvaluation {
    pub cost: f64,
    pub gradient: Vec<f64>,
    /// Positive semidefinite approximation of the cost Hessian.
    pub hessian: Mat,
    pub constraints: Vec<f64>,
    pub jacobian: Mat,
}

impl NlpEvaluation {
    pub fn violation(&self) -> f64 {
        self.constraints.iter().map(|g| g.max(0.0)).sum()
    }
}

pub trait NlpProblem {
    fn dim(&self) -> usize;
    fn lower_bounds(&self) -> &[f64];
    fn upper_bounds(&self) -> &[f64];
    /// Cost and constraint values only.
    fn values(&self, w: &[f64]) -> Result<(f64, Vec<f64>)>;
    fn evaluate(&self, w: &[f64]) -> Result<NlpEvaluation>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SqpOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Initial Levenberg term `μ` added to the Hessian diagonal.
    pub levenberg: f64,
    pub levenberg_min: f64,
    pub levenberg_max: f64,
    pub initial_penalty: f64,
    pub armijo: f64,
    pub min_step: f64,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            tolerance: 1e-6,
            levenberg: 1e-6,
            levenberg_min: 1e-9,
            levenberg_max: 1e6,
            initial_penalty: 10.0,
            armijo: 1e-4,
            min_step: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    IterationCapped,
    /// Not converged and at least one QP subproblem needed constraint relaxation.
    InfeasibleQpRecovered,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub stationarity: f64,
    pub primal_violation: f64,
    pub relaxed_subproblems: usize,
    pub cost: f64,
    /// Filled in by callers that have a clock.
    pub wall_time_s: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SqpResult {
    pub solution: Vec<f64>,
    /// Multipliers of `g(w) ≤ 0` from the last subproblem.
    pub multipliers: Vec<f64>,
    pub report: SolveReport,
}

/// Solve from `start` (projected onto the bounds). Iterates always satisfy
/// the bounds, and the merit `f + ν Σ max(0, g)` is non-increasing.
pub fn solve_sqp<P: NlpProblem + ?Sized>(problem: &P, start: &[f64], opts: &SqpOptions) -> Result<SqpResult> {
    let n = problem.dim();
    let lb = problem.lower_bounds();
    let ub = problem.upper_bounds();
    let mut w: Vec<f64> = start.iter().enumerate().map(|(i, v)| v.clamp(lb[i], ub[i])).collect();
    let mut eval = problem.evaluate(&w)?;
    let mut mu = opts.levenberg;
    let mut nu = opts.initial_penalty;
    let mut relaxed = 0;
    let mut multipliers = alloc::vec![0.0; eval.constraints.len()];
    let mut stationarity = f64::INFINITY;
    let mut status = None;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let mut h = eval.hessian.clone();
        for i in 0..n {
            h[(i, i)] += mu;
        }
        let qp = QpProblem {
            hessian: h,
            gradient: eval.gradient.clone(),
            constraints: eval.jacobian.clone(),
            upper: eval.constraints.iter().map(|g| -g).collect(),
            lower_bounds: (0..n).map(|i| lb[i] - w[i]).collect(),
            upper_bounds: (0..n).map(|i| ub[i] - w[i]).collect(),
        };
        let sol = solve_qp(&qp);
        match sol.status {
            QpStatus::NotConvex => {
                mu = (mu * 10.0).max(1e-8);
                if mu > opts.levenberg_max {
                    break;
                }
                continue;
            }
            QpStatus::Relaxed => relaxed += 1,
            _ => {}
        }
        let d = sol.x;
        multipliers.clone_from(&sol.multipliers);
        let hd = qp.hessian.matvec(&d);
        stationarity = norm_inf(&hd);
        let viol0 = eval.violation();
        let max_g = eval.constraints.iter().fold(0.0f64, |m, &g| m.max(g));
        if stationarity <= opts.tolerance && max_g <= opts.tolerance {
            status = Some(SolveStatus::Converged);
            break;
        }

        let lam_max = sol.multipliers.iter().fold(0.0f64, |m, &l| m.max(l));
        if nu < 1.1 * lam_max {
            nu = 2.0 * lam_max;
        }
        let merit0 = eval.cost + nu * viol0;
        let mut slope = dot(&eval.gradient, &d) - nu * viol0;
        if slope >= 0.0 {
            slope = -dot(&d, &hd);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= opts.min_step {
            let trial: Vec<f64> = (0..n).map(|i| (w[i] + alpha * d[i]).clamp(lb[i], ub[i])).collect();
            if let Ok((cost, g)) = problem.values(&trial) {
                let merit = cost + nu * g.iter().map(|v| v.max(0.0)).sum::<f64>();
                if merit.is_finite() && merit <= merit0 + opts.armijo * alpha * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(trial) = accepted else {
            mu = (mu * 10.0).max(1e-6);
            if mu > opts.levenberg_max {
                break;
            }
            continue;
        };
        let step = alpha * norm_inf(&d);
        w = trial;
        eval = problem.evaluate(&w)?;
        mu = (mu * 0.1).max(opts.levenberg_min);
        let max_g = eval.constraints.iter().fold(0.0f64, |m, &g| m.max(g));
        if step <= opts.tolerance * (1.0 + norm_inf(&w)) && max_g <= opts.tolerance {
            status = Some(SolveStatus::Converged);
            break;
        }
    }

    let primal = eval.constraints.iter().fold(0.0f64, |m, &g| m.max(g));
    let status = status.unwrap_or(if relaxed > 0 { SolveStatus::InfeasibleQpRecovered } else { SolveStatus::IterationCapped });
    Ok(SqpResult {
        solution: w,
        multipliers,
        report: SolveReport {
            status,
            iterations,
            stationarity,
            primal_violation: primal,
            relaxed_subproblems: relaxed,
            cost: eval.cost,
            wall_time_s: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lu_solve;
    use alloc::vec;
    use alloc::vec::Vec;

    /// Linear dynamics `x⁺ = a x + b u`, quadratic tracking cost,
    /// input bounds and a state upper limit, by single shooting.
    struct LinearOcp {
        a: f64,
        b: f64,
        x0: f64,
        horizon: usize,
        target: f64,
        state_max: f64,
        lb: Vec<f64>,
        ub: Vec<f64>,
    }

    impl LinearOcp {
        fn new() -> Self {
            let horizon = 8;
            Self { a: 1.1, b: 0.5, x0: 0.0, horizon, target: 3.0, state_max: 2.0, lb: vec![-1.0; horizon], ub: vec![1.0; horizon] }
        }

        /// Row `i` maps inputs to `x_{i+1}` (affine part separately).
        fn maps(&self) -> (Mat, Vec<f64>) {
            let n = self.horizon;
            let mut m = Mat::zeros(n, n);
            let mut c = vec![0.0; n];
            let mut free = self.x0;
            for i in 0..n {
                free *= self.a;
                c[i] = free;
                for j in 0..=i {
                    m[(i, j)] = self.b * libm::pow(self.a, (i - j) as f64);
                }
            }
            (m, c)
        }
    }

    impl NlpProblem for LinearOcp {
        fn dim(&self) -> usize {
            self.horizon
        }
        fn lower_bounds(&self) -> &[f64] {
            &self.lb
        }
        fn upper_bounds(&self) -> &[f64] {
            &self.ub
        }
        fn values(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
            let e = self.evaluate(w)?;
            Ok((e.cost, e.constraints))
        }
        fn evaluate(&self, w: &[f64]) -> Result<NlpEvaluation> {
            let (m, c) = self.maps();
            let x: Vec<f64> = m.matvec(w).iter().zip(&c).map(|(a, b)| a + b).collect();
            let n = self.horizon;
            let mut cost = 0.0;
            let mut grad = vec![0.0; n];
            for i in 0..n {
                let r = x[i] - self.target;
                cost += r * r + 0.1 * w[i] * w[i];
                for j in 0..n {
                    grad[j] += 2.0 * r * m[(i, j)];
                }
                grad[i] += 0.2 * w[i];
            }
            let mut hess = m.transpose().matmul(&m);
            for v in hess.as_mut_slice() {
                *v *= 2.0;
            }
            for i in 0..n {
                hess[(i, i)] += 0.2;
            }
            Ok(NlpEvaluation {
                cost,
                gradient: grad,
                hessian: hess,
                constraints: x.iter().map(|xi| xi - self.state_max).collect(),
                jacobian: m,
            })
        }
    }

    /// Dense KKT oracle: enumerate active sets of the small convex problem.
    fn enumerate_optimum(p: &LinearOcp) -> Vec<f64> {
        let n = p.horizon;
        let (m, c) = p.maps();
        let e = p.evaluate(&vec![0.0; n]).unwrap();
        // rows: x_i ≤ max, u ≤ 1, −u ≤ 1
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for i in 0..n {
            rows.push((m.row(i).to_vec(), p.state_max - c[i]));
        }
        for i in 0..n {
            let mut r = vec![0.0; n];
            r[i] = 1.0;
            rows.push((r.clone(), 1.0));
            r[i] = -1.0;
            rows.push((r, 1.0));
        }
        let total = rows.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        // active sets with at most n members containing no opposite bound pair
        let mut stack: Vec<(usize, Vec<usize>)> = vec![(0, vec![])];
        while let Some((next, set)) = stack.pop() {
            // solve the equality-constrained problem
            let k = set.len();
            let mut kkt = Mat::zeros(n + k, n + k);
            let mut rhs = vec![0.0; n + k];
            for i in 0..n {
                for j in 0..n {
                    kkt[(i, j)] = e.hessian[(i, j)];
                }
                rhs[i] = -e.gradient[i];
            }
            for (a, &ri) in set.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + a, j)] = rows[ri].0[j];
                    kkt[(j, n + a)] = rows[ri].0[j];
                }
                rhs[n + a] = rows[ri].1;
            }
            if let Some(sol) = lu_solve(&kkt, &rhs) {
                let x = &sol[..n];
                let feasible = rows.iter().all(|(r, b)| dot(r, x) <= b + 1e-9);
                let dual = sol[n..].iter().all(|&l| l >= -1e-9);
                if feasible && dual {
                    let cost = e.cost + dot(&e.gradient, x) + 0.5 * dot(x, &e.hessian.matvec(x));
                    if best.as_ref().map_or(true, |(c0, _)| cost < *c0) {
                        best = Some((cost, x.to_vec()));
                    }
                }
            }
            if k < n {
                for r in next..total {
                    let mut s = set.clone();
                    s.push(r);
                    stack.push((r + 1, s));
                }
            }
        }
        best.expect("oracle finds the optimum").1
    }

    #[test]
    fn linear_ocp_matches_enumeration_oracle() {
        let mut p = LinearOcp::new();
        p.horizon = 5;
        p.lb = vec![-1.0; 5];
        p.ub = vec![1.0; 5];
        let oracle = enumerate_optimum(&p);
        let res = solve_sqp(&p, &vec![0.0; 5], &SqpOptions::default()).unwrap();
        assert_eq!(res.report.status, SolveStatus::Converged);
        for (a, b) in res.solution.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(res.report.primal_violation <= 1e-8);
    }

    #[test]
    fn warm_start_at_optimum_converges_immediately() {
        let p = LinearOcp::new();
        let res = solve_sqp(&p, &vec![0.0; p.horizon], &SqpOptions::default()).unwrap();
        assert_eq!(res.report.status, SolveStatus::Converged);
        let again = solve_sqp(&p, &res.solution, &SqpOptions::default()).unwrap();
        assert_eq!(again.report.status, SolveStatus::Converged);
        assert!(again.report.iterations <= 2);
    }

    #[test]
    fn iteration_cap_returns_bounded_iterate() {
        let p = LinearOcp::new();
        let opts = SqpOptions { max_iterations: 1, ..SqpOptions::default() };
        let res = solve_sqp(&p, &vec![5.0; p.horizon], &opts).unwrap();
        assert_eq!(res.report.iterations, 1);
        assert!(res.solution.iter().all(|u| (-1.0..=1.0).contains(u)));
        assert_ne!(res.report.status, SolveStatus::Converged);
    }

    /// Nonlinear: min (w₀−1)² + (w₁−2)² s.t. w₀² + w₁² ≤ 1, with exact
    /// Hessian of the cost only. Optimum is the projection onto the disc.
    struct Disc;

    impl NlpProblem for Disc {
        fn dim(&self) -> usize {
            2
        }
        fn lower_bounds(&self) -> &[f64] {
            &[f64::NEG_INFINITY, f64::NEG_INFINITY]
        }
        fn upper_bounds(&self) -> &[f64] {
            &[f64::INFINITY, f64::INFINITY]
        }
        fn values(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
            let e = self.evaluate(w)?;
            Ok((e.cost, e.constraints))
        }
        fn evaluate(&self, w: &[f64]) -> Result<NlpEvaluation> {
            Ok(NlpEvaluation {
                cost: (w[0] - 1.0).powi(2) + (w[1] - 2.0).powi(2),
                gradient: vec![2.0 * (w[0] - 1.0), 2.0 * (w[1] - 2.0)],
                hessian: Mat::from_diag(&[2.0, 2.0]),
                constraints: vec![w[0] * w[0] + w[1] * w[1] - 1.0],
                jacobian: Mat::from_row_slice(1, 2, &[2.0 * w[0], 2.0 * w[1]]),
            })
        }
    }

    #[test]
    fn nonlinear_constraint_reaches_projection() {
        let opts = SqpOptions { max_iterations: 100, ..SqpOptions::default() };
        let res = solve_sqp(&Disc, &[0.0, 0.0], &opts).unwrap();
        let r = libm::sqrt(5.0);
        assert!((res.solution[0] - 1.0 / r).abs() < 1e-5, "{:?}", res.solution);
        assert!((res.solution[1] - 2.0 / r).abs() < 1e-5);
        assert_eq!(res.report.status, SolveStatus::Converged);
    }
}
