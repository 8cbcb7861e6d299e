//! Independent checks: condition residuals, second-order sufficiency,
//! finite-difference policy gradients and a dense one-shot oracle.

mod monolithic;
mod policy;
mod residual;
mod sufficiency;

pub use monolithic::{monolithic_oracle, MonolithicSolution, MAX_WIDTH};
pub use policy::{fd_policy_gradient, fd_policy_gradient_lq, DEFAULT_STEP};
pub use residual::{residual, ResidualBreakdown};
pub use sufficiency::{check_sufficiency, PlayerSufficiency, SufficiencyReport, Verdict, CURVATURE_TOLERANCE};
