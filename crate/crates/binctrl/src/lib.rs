//! Two-level control signals for linear systems.
//!
//! Given a discrete-time linear plant and a target output trajectory, this
//! crate computes a binary input sequence `u_1..u_K` over levels `{a, b}`
//! whose output tracks the target. The combinatorial restriction to two
//! levels is handled by a binary-enforcing prior: each input carries a
//! product of two Gaussians centered at the levels with unknown variances,
//! and estimating those variances (by alternating maximization or by
//! expectation maximization) drives the estimates toward the levels. Every
//! iteration is a Kalman-type forward-backward sweep, so the cost per
//! iteration is linear in the horizon and long planning horizons are
//! practical.
//!
//! The crate is organized around the solve pipeline:
//!
//! - [`model`]: plant, target, levels, and scenario configuration
//! - [`nuvcell`]: the scalar two-Gaussian prior and its variance updates
//! - [`smoother`]: posterior input moments by forward-backward recursion,
//!   with a dense oracle for validation
//! - [`ikie`]: the outer loop alternating smoothing and variance updates
//! - [`oracle`]: exhaustive search over all `2^K` sequences for small `K`
//! - [`scenarios`]: the bundled digital-to-analog and checkpoint demos
//! - [`io`]: scenario/report files and CSV outputs
//! - [`cli`]: the command-line front end
//!
//! The `examples/` directory contains one runnable example per capability;
//! start with `cargo run --example dac`.

pub mod cli;
pub mod error;
pub mod ikie;
pub mod io;
pub mod model;
pub mod nuvcell;
pub mod oracle;
pub mod scenarios;
pub mod smoother;

pub use error::{Error, Result};
pub use ikie::{ikie_solve, solve_with_s2_sweep, SolveReport};
pub use model::{cost, simulate, Levels, LtiModel, Method, Scenario, SolverOptions, Target};
pub use nuvcell::{characteristic, sweep_characteristic, CellOpts, NuvPair};
pub use oracle::{brute_force, compare, OracleResult};
pub use smoother::{batch_posterior, log_evidence, smooth, InputPosterior, InputPrior, ObsSpec};
