//! Dense QP and SQP solvers for the receding-horizon problem.

pub mod qp;
pub mod sqp;

pub use qp::{kkt_residuals, solve_qp, KktResiduals, QpProblem, QpSolution, QpStatus};
pub use sqp::{solve_sqp, NlpEvaluation, NlpProblem, SolveReport, SolveStatus, SqpOptions, SqpResult};
