//! Discrete-time linear state-space model, tracking target, and scenario
//! configuration.
//!
//! The plant is `x_k = A x_{k-1} + B u_k + d` with output `y_k = C x_k`,
//! scalar input `u_k`, known initial state `x0`, and an optional constant
//! per-step drift `d` (all-zero by default). The tracking objective is the
//! weighted squared error `sum_k w_k ||y_k - ybreve_k||^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete-time LTI system with scalar input.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiModel {
    /// State transition matrix, N x N.
    pub a: DMatrix<f64>,
    /// Input map, length N.
    pub b: DVector<f64>,
    /// Output map, L x N.
    pub c: DMatrix<f64>,
    /// Constant per-step drift added to the state, length N.
    pub drift: DVector<f64>,
    /// Known initial state, length N.
    pub x0: DVector<f64>,
}

impl LtiModel {
    /// Builds a model and checks dimensions and finiteness.
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DMatrix<f64>,
        drift: DVector<f64>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let model = LtiModel { a, b, c, drift, x0 };
        model.validate()?;
        Ok(model)
    }

    /// Model without drift (`d = 0`).
    pub fn without_drift(
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DMatrix<f64>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        LtiModel::new(a, b, c, DVector::zeros(n), x0)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let l = self.c.nrows();
        if n == 0 {
            return Err(Error::Config("model.A: state dimension must be >= 1".into()));
        }
        if l == 0 {
            return Err(Error::Config("model.C: output dimension must be >= 1".into()));
        }
        if self.a.ncols() != n {
            return Err(Error::Config(format!(
                "model.A must be square, got {}x{}",
                n,
                self.a.ncols()
            )));
        }
        if self.b.len() != n {
            return Err(Error::Config(format!(
                "model.B must have length {} (state dimension), got {}",
                n,
                self.b.len()
            )));
        }
        if self.c.ncols() != n {
            return Err(Error::Config(format!(
                "model.C must have {} columns (state dimension), got {}",
                n,
                self.c.ncols()
            )));
        }
        if self.drift.len() != n {
            return Err(Error::Config(format!(
                "model.d must have length {} (state dimension), got {}",
                n,
                self.drift.len()
            )));
        }
        if self.x0.len() != n {
            return Err(Error::Config(format!(
                "model.x0 must have length {} (state dimension), got {}",
                n,
                self.x0.len()
            )));
        }
        for (name, finite) in [
            ("model.A", self.a.iter().all(|v| v.is_finite())),
            ("model.B", self.b.iter().all(|v| v.is_finite())),
            ("model.C", self.c.iter().all(|v| v.is_finite())),
            ("model.d", self.drift.iter().all(|v| v.is_finite())),
            ("model.x0", self.x0.iter().all(|v| v.is_finite())),
        ] {
            if !finite {
                return Err(Error::Config(format!("{name} contains a non-finite entry")));
            }
        }
        Ok(())
    }
}

/// Target trajectory with per-step nonnegative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    /// Target outputs, K vectors of length L.
    pub values: Vec<DVector<f64>>,
    /// Per-step weights, length K. Zero weight means the step is free.
    pub weights: Vec<f64>,
}

impl Target {
    pub fn new(values: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        let target = Target { values, weights };
        target.validate()?;
        Ok(target)
    }

    /// Target with unit weight on every step.
    pub fn uniform(values: Vec<DVector<f64>>) -> Result<Self> {
        let weights = vec![1.0; values.len()];
        Target::new(values, weights)
    }

    /// Planning horizon K.
    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.values.len();
        if k == 0 {
            return Err(Error::Config("target.ybreve: horizon must be >= 1".into()));
        }
        if self.weights.len() != k {
            return Err(Error::Config(format!(
                "target.weights must have length {} (horizon), got {}",
                k,
                self.weights.len()
            )));
        }
        let l = self.values[0].len();
        for (i, v) in self.values.iter().enumerate() {
            if v.len() != l {
                return Err(Error::Config(format!(
                    "target.ybreve row {} has length {}, expected {}",
                    i + 1,
                    v.len(),
                    l
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::Config(format!(
                    "target.ybreve row {} contains a non-finite entry",
                    i + 1
                )));
            }
        }
        for (i, &w) in self.weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!(
                    "target.weights[{}] = {} must be a finite value >= 0",
                    i + 1,
                    w
                )));
            }
        }
        if !self.weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Config(
                "target.weights: at least one weight must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// The two admissible input levels, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    pub a: f64,
    pub b: f64,
}

impl Levels {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Config("levels.a and levels.b must be finite".into()));
        }
        if a >= b {
            return Err(Error::Config(format!(
                "levels must satisfy a < b, got a = {a}, b = {b}"
            )));
        }
        Ok(Levels { a, b })
    }

    pub fn gap(&self) -> f64 {
        self.b - self.a
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    /// Nearest level; exact midpoint resolves to `a`.
    pub fn nearest(&self, x: f64) -> f64 {
        if (x - self.a).abs() <= (x - self.b).abs() {
            self.a
        } else {
            self.b
        }
    }

    /// Distance to the nearest level.
    pub fn distance(&self, x: f64) -> f64 {
        (x - self.a).abs().min((x - self.b).abs())
    }
}

/// Variance update rule for Step 2 of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Alternating maximization of the joint MAP objective.
    Am,
    /// Expectation maximization of the evidence (type-II estimation).
    Em,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Am => "am",
            Method::Em => "em",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "am" => Ok(Method::Am),
            "em" => Ok(Method::Em),
            other => Err(Error::Parse(format!(
                "solver.method must be \"am\" or \"em\", got \"{other}\""
            ))),
        }
    }
}

/// Solver knobs. Defaults are scale-free in the level gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Likelihood variance s^2 (> 0).
    pub s2: f64,
    pub method: Method,
    pub max_iters: usize,
    /// Stop when `max_k |u_hat_k - previous|` falls below this.
    pub tol_convergence: f64,
    /// Snap threshold: the result counts as binary when every input is
    /// within this distance of a level.
    pub tol_binary: f64,
    /// Lower bound applied to every NUV variance.
    pub variance_floor: f64,
}

impl SolverOptions {
    /// Default knobs for the given levels and likelihood variance.
    pub fn new(s2: f64, levels: Levels) -> Self {
        let gap = levels.gap();
        SolverOptions {
            s2,
            method: Method::Em,
            max_iters: 5000,
            tol_convergence: 1e-7 * gap,
            tol_binary: 1e-3 * gap,
            variance_floor: 1e-12 * gap * gap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s2 > 0.0) || !self.s2.is_finite() {
            return Err(Error::Config(format!(
                "solver.s2 must be finite and > 0, got {}",
                self.s2
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("solver.max_iters must be >= 1".into()));
        }
        for (name, v) in [
            ("solver.tol_convergence", self.tol_convergence),
            ("solver.tol_binary", self.tol_binary),
            ("solver.variance_floor", self.variance_floor),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A complete problem instance: plant, target, levels, and solver knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: LtiModel,
    pub target: Target,
    pub levels: Levels,
    pub solver: SolverOptions,
}

impl Scenario {
    pub fn new(model: LtiModel, target: Target, levels: Levels, solver: SolverOptions) -> Result<Self> {
        let scenario = Scenario {
            model,
            target,
            levels,
            solver,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn horizon(&self) -> usize {
        self.target.horizon()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.target.validate()?;
        self.solver.validate()?;
        let l = self.model.output_dim();
        if self.target.values[0].len() != l {
            return Err(Error::Config(format!(
                "target.ybreve rows have length {} but model.C has {} rows",
                self.target.values[0].len(),
                l
            )));
        }
        Ok(())
    }
}

/// Runs the plant forward under the input sequence `u`.
///
/// Returns the state and output trajectories, both of length `u.len()`,
/// starting from `x_1 = A x0 + B u_1 + d`.
pub fn simulate(model: &LtiModel, u: &[f64]) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    model.validate()?;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("input sequence contains a non-finite entry".into()));
    }
    let mut states = Vec::with_capacity(u.len());
    let mut outputs = Vec::with_capacity(u.len());
    let mut x = model.x0.clone();
    for &uk in u {
        x = &model.a * &x + &model.b * uk + &model.drift;
        outputs.push(&model.c * &x);
        states.push(x.clone());
    }
    Ok((states, outputs))
}

/// Weighted squared tracking error `sum_k w_k ||y_k - ybreve_k||^2`.
pub fn cost(target: &Target, outputs: &[DVector<f64>]) -> Result<f64> {
    if outputs.len() != target.horizon() {
        return Err(Error::Config(format!(
            "output trajectory has length {} but target has horizon {}",
            outputs.len(),
            target.horizon()
        )));
    }
    let mut total = 0.0;
    for ((y, ybreve), &w) in outputs.iter().zip(&target.values).zip(&target.weights) {
        if y.len() != ybreve.len() {
            return Err(Error::Config(format!(
                "output dimension {} does not match target dimension {}",
                y.len(),
                ybreve.len()
            )));
        }
        total += w * (y - ybreve).norm_squared();
    }
    Ok(total)
}
