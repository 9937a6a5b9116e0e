//! Time-consistent asset allocation in markets driven by heavy-tailed
//! stable processes.
//!
//! The library computes Nash-subgame-equilibrium investment strategies for
//! objectives of the form
//!
//! ```text
//!     J(t, u) = E[ T(gain) ] - lambda(t) * F( rho(gain) )
//! ```
//!
//! where the gain is the excess of terminal wealth over the risk-free
//! roll-up, `T` is a concave target, `F` a penalty, and `rho` a positively
//! homogeneous risk measure. For the supported market regimes the gain under
//! a deterministic strategy has the exact one-dimensional representation
//! `a + b * Z` with `Z` the standardized driver, which gives closed forms for
//! `rho` and for `J`; the solver exploits them in a backward per-interval
//! maximization. Monte Carlo simulation of the same gains provides an
//! independent cross-check of every closed form.
//!
//! Modules, in dependency order:
//!
//! - [`quad`]: Gauss-Legendre panels and adaptive Simpson quadrature.
//! - [`stable`]: stable laws (characteristic functions, sampling, quantiles).
//! - [`market`]: market model, time grid, strategies, gain decomposition.
//! - [`risk`]: risk-measure specifications and their closed-form evaluation.
//! - [`objective`]: target/penalty specifications, objective value and
//!   gradient.
//! - [`solver`]: equilibrium solvers, closed-form special cases, optimality
//!   residuals.
//! - [`montecarlo`]: path simulation, empirical risk and objective
//!   estimators.

pub(crate) mod linalg;

pub mod market;
pub mod montecarlo;
pub mod objective;
pub mod quad;
pub mod risk;
pub mod solver;
pub mod stable;

/// Errors shared by all modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or argument lies outside the mathematical domain of the
    /// operation (wrong stability index range, probability outside (0,1),
    /// undefined moment, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative routine failed to reach its tolerance (root bracketing,
    /// bisection, Newton iteration, quadrature refinement).
    #[error("convergence error: {0}")]
    Convergence(String),

    /// Input data is structurally invalid (dimension mismatch, non-symmetric
    /// matrix, grid not equidistant, weights not summing to one, ...).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// The requested combination of model, objective and method is not
    /// supported (callers may fall back to a more general code path).
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// A linear system arising in a closed form or FOC solve is singular.
    #[error("singular system: {0}")]
    Singular(String),

    /// Too few samples for the requested estimator.
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
}

pub type Result<T> = std::result::Result<T, Error>;
