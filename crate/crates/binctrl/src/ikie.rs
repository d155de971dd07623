//! Iterative Kalman input estimation.
//!
//! The outer loop alternates two steps until the input estimates settle:
//! Step 1 reduces each variance pair to a Gaussian input prior and runs the
//! smoother for the posterior moments of every input; Step 2 refreshes the
//! variance pairs from those moments, either by the joint-MAP rule (AM) or by
//! the type-II rule (EM). The result is then snapped to the levels when every
//! input is close enough to one.
//!
//! Inputs that have exactly zero influence on every weighted output (for
//! example trailing inputs whose effect falls entirely beyond the last
//! weighted step) carry no information and would otherwise sit at the level
//! midpoint indefinitely: the EM update contracts an unobserved cell toward
//! the symmetric variance split. Such inputs are detected up front from the
//! impulse response and pinned to the lower level at binarization, where any
//! value is cost-equivalent. They are excluded from the binary residual and
//! counted in the report.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{cost, simulate, Method, Scenario};
use crate::nuvcell::{am_update, em_update, prior_as_gaussian, NuvPair};
use crate::smoother::{smooth_with_evidence, InputPosterior, InputPrior, ObsSpec};

/// Per-step variance pairs of the binary-enforcing prior.
pub type NuvState = Vec<NuvPair>;

/// One record of the per-iteration trace.
#[derive(Debug, Clone, Copy)]
pub struct IterRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    /// Log evidence of the previous variances (EM) or the joint-MAP
    /// objective of the current iterates (AM).
    pub objective: f64,
    /// Largest distance of any constrained input to its nearest level.
    pub binary_residual: f64,
    /// Largest change of any posterior mean against the previous iteration.
    pub max_delta_u: f64,
    /// Number of variance components clipped at the floor this iteration.
    pub clip_events: usize,
}

/// Outcome of a solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Final input sequence: snapped to the levels when binary, otherwise
    /// the raw posterior means.
    pub u: Vec<f64>,
    /// Pre-binarization posterior means.
    pub u_raw: Vec<f64>,
    /// Final posterior variances of the inputs.
    pub v_u: Vec<f64>,
    /// Final variance pairs.
    pub nuv: NuvState,
    /// Output trajectory simulated under `u`.
    pub y: Vec<DVector<f64>>,
    /// Weighted tracking cost of `u`.
    pub cost: f64,
    pub iterations: usize,
    /// True when the estimate change fell below the convergence tolerance.
    pub converged: bool,
    /// True when every constrained input ended within the snap tolerance of
    /// a level (the returned `u` is then exactly two-valued).
    pub binary: bool,
    /// Largest distance of any constrained input to its nearest level.
    pub binary_residual: f64,
    /// Inputs with no influence on any weighted output, pinned to the lower
    /// level at binarization.
    pub unconstrained_inputs: usize,
    /// Total variance-floor clips across all iterations.
    pub clip_events: usize,
    pub trace: Vec<IterRecord>,
    pub method: Method,
    pub s2: f64,
}

impl SolveReport {
    /// Per-iteration objective values (evidence for EM, joint-MAP objective
    /// for AM).
    pub fn objective_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.objective).collect()
    }
}

/// Marks inputs that have exactly zero influence on every weighted output.
///
/// Input `u_k` reaches output `y_j` (1-based, `j >= k`) through the impulse
/// response `h_{j-k} = C A^{j-k} B`. The test is exact: the structural zeros
/// of the model produce exact zeros in floating point.
pub fn unconstrained_inputs(scenario: &Scenario) -> Vec<bool> {
    let model = &scenario.model;
    let weights = &scenario.target.weights;
    let k_total = weights.len();

    let mut h = model.b.clone();
    let mut reaches = vec![false; k_total];
    for m in 0..k_total {
        reaches[m] = (&model.c * &h).iter().any(|&v| v != 0.0);
        h = &model.a * &h;
    }

    (0..k_total)
        .map(|k| {
            !(k..k_total).any(|j| weights[j] > 0.0 && reaches[j - k])
        })
        .collect()
}

/// Element-wise joint-MAP variance refresh.
pub fn am_step(posterior: &InputPosterior, levels: crate::model::Levels, floor: f64) -> NuvState {
    posterior
        .u_hat
        .iter()
        .map(|&u| am_update(u, levels, floor))
        .collect()
}

/// Element-wise type-II variance refresh.
pub fn em_step(posterior: &InputPosterior, levels: crate::model::Levels, floor: f64) -> NuvState {
    posterior
        .u_hat
        .iter()
        .zip(&posterior.v_u)
        .map(|(&u, &v)| em_update(u, v, levels, floor))
        .collect()
}

/// Joint log density `log p(ybreve | u) + sum_k log rho(u_k, theta_k)` with
/// floored variances; the quantity ascended by the AM iteration.
pub fn joint_map_objective(scenario: &Scenario, u: &[f64], theta: &NuvState) -> Result<f64> {
    if u.len() != scenario.horizon() || theta.len() != scenario.horizon() {
        return Err(Error::Config(format!(
            "joint objective needs {} inputs and variance pairs, got {} and {}",
            scenario.horizon(),
            u.len(),
            theta.len()
        )));
    }
    let (_, outputs) = simulate(&scenario.model, u)?;
    let s2 = scenario.solver.s2;
    let ln_norm = |v: f64| (2.0 * std::f64::consts::PI * v).ln();

    let mut total = 0.0;
    for (k, (y, ybreve)) in outputs.iter().zip(&scenario.target.values).enumerate() {
        let w = scenario.target.weights[k];
        if w > 0.0 {
            let r = s2 / w;
            for j in 0..y.len() {
                let e = y[j] - ybreve[j];
                total -= 0.5 * (ln_norm(r) + e * e / r);
            }
        }
    }
    for (k, pair) in theta.iter().enumerate() {
        let da = u[k] - scenario.levels.a;
        let db = u[k] - scenario.levels.b;
        total -= 0.5 * (ln_norm(pair.sigma1_sq) + da * da / pair.sigma1_sq);
        total -= 0.5 * (ln_norm(pair.sigma2_sq) + db * db / pair.sigma2_sq);
    }
    Ok(total)
}

/// Solves a scenario by the alternating iteration.
///
/// A nonbinary outcome is not an error; it is reported through the `binary`
/// flag and the residual.
pub fn ikie_solve(scenario: &Scenario) -> Result<SolveReport> {
    scenario.validate()?;
    let k_total = scenario.horizon();
    let levels = scenario.levels;
    let opts = scenario.solver;
    let gap2 = levels.gap() * levels.gap();

    let obs = ObsSpec::new(&scenario.target, opts.s2)?;
    let dead = unconstrained_inputs(scenario);

    // symmetric start: no preference for either level
    let mut theta: NuvState = vec![NuvPair::symmetric(gap2); k_total];
    let mut u_prev = vec![levels.midpoint(); k_total];
    let mut trace = Vec::new();
    let mut total_clips = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;
    let mut posterior = InputPosterior {
        u_hat: u_prev.clone(),
        v_u: vec![gap2; k_total],
    };

    let mut prior_mean = vec![0.0; k_total];
    let mut prior_var = vec![0.0; k_total];

    for i in 1..=opts.max_iters {
        for (k, pair) in theta.iter().enumerate() {
            let msg = prior_as_gaussian(levels, *pair);
            prior_mean[k] = msg.mean;
            prior_var[k] = msg.var;
        }
        let prior = InputPrior::new(prior_mean.clone(), prior_var.clone())?;
        let (post, evidence) = smooth_with_evidence(&scenario.model, &obs, &prior)
            .map_err(|e| match e {
                Error::Numeric { step, detail } => Error::Numeric {
                    step,
                    detail: format!("{detail} (iteration {i})"),
                },
                other => other,
            })?;

        let mut clips = 0usize;
        for (k, pair) in theta.iter_mut().enumerate() {
            *pair = match opts.method {
                Method::Am => am_update(post.u_hat[k], levels, opts.variance_floor),
                Method::Em => em_update(post.u_hat[k], post.v_u[k], levels, opts.variance_floor),
            };
            if pair.sigma1_sq == opts.variance_floor {
                clips += 1;
            }
            if pair.sigma2_sq == opts.variance_floor {
                clips += 1;
            }
        }
        total_clips += clips;

        let objective = match opts.method {
            Method::Em => evidence,
            Method::Am => joint_map_objective(scenario, &post.u_hat, &theta)?,
        };

        let mut delta: f64 = 0.0;
        let mut residual: f64 = 0.0;
        for k in 0..k_total {
            delta = delta.max((post.u_hat[k] - u_prev[k]).abs());
            if !dead[k] {
                residual = residual.max(levels.distance(post.u_hat[k]));
            }
        }
        trace.push(IterRecord {
            iteration: i,
            objective,
            binary_residual: residual,
            max_delta_u: delta,
            clip_events: clips,
        });
        u_prev.copy_from_slice(&post.u_hat);
        posterior = post;
        iterations = i;

        if delta < opts.tol_convergence {
            converged = true;
            break;
        }
    }

    let u_raw = posterior.u_hat.clone();
    let mut residual: f64 = 0.0;
    for k in 0..k_total {
        if !dead[k] {
            residual = residual.max(levels.distance(u_raw[k]));
        }
    }
    let binary = residual <= opts.tol_binary;
    let u: Vec<f64> = if binary {
        (0..k_total)
            .map(|k| if dead[k] { levels.a } else { levels.nearest(u_raw[k]) })
            .collect()
    } else {
        u_raw.clone()
    };

    let (_, y) = simulate(&scenario.model, &u)?;
    let cost = cost(&scenario.target, &y)?;

    Ok(SolveReport {
        u,
        u_raw,
        v_u: posterior.v_u,
        nuv: theta,
        y,
        cost,
        iterations,
        converged,
        binary,
        binary_residual: residual,
        unconstrained_inputs: dead.iter().filter(|&&d| d).count(),
        clip_events: total_clips,
        trace,
        method: opts.method,
        s2: opts.s2,
    })
}

/// Outcome of the geometric `s2` retry helper.
#[derive(Debug, Clone)]
pub struct S2Sweep {
    pub report: SolveReport,
    /// The likelihood variance that produced the returned report.
    pub s2_used: f64,
    /// Number of solves performed.
    pub attempts: usize,
}

/// Retries a nonbinary solve with doubled `s2` until the result is binary or
/// `s2` would exceed `s2_cap`. A pragmatic wrapper around [`ikie_solve`]; the
/// returned report corresponds to the last attempt.
pub fn solve_with_s2_sweep(scenario: &Scenario, s2_cap: f64) -> Result<S2Sweep> {
    let mut current = scenario.clone();
    let mut attempts = 0;
    loop {
        let report = ikie_solve(&current)?;
        attempts += 1;
        let s2_used = current.solver.s2;
        if report.binary || s2_used * 2.0 > s2_cap {
            return Ok(S2Sweep {
                report,
                s2_used,
                attempts,
            });
        }
        current.solver.s2 = s2_used * 2.0;
    }
}
