//! The scalar binary-enforcing prior cell.
//!
//! The prior on a scalar x is the product of two Gaussians centered at the
//! levels, `N(x; a, sigma1_sq) * N(x; b, sigma2_sq)`, with both variances
//! treated as unknowns. Estimating the variances by alternating maximization
//! (joint MAP) or by expectation maximization (type-II) concentrates the
//! effective prior at the levels. This module provides the variance updates
//! and the scalar fixed-point characteristic x_hat(mu) under a Gaussian
//! likelihood `N(x; mu, s2)`.

use crate::error::{Error, Result};
use crate::model::{Levels, Method};

/// The two prior variances of one input cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuvPair {
    /// Variance of the Gaussian centered at level `a`.
    pub sigma1_sq: f64,
    /// Variance of the Gaussian centered at level `b`.
    pub sigma2_sq: f64,
}

impl NuvPair {
    pub fn symmetric(var: f64) -> Self {
        NuvPair {
            sigma1_sq: var,
            sigma2_sq: var,
        }
    }
}

/// A scalar Gaussian message (mean and variance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussMsg {
    pub mean: f64,
    pub var: f64,
}

/// Reduces the two-Gaussian prior to the single Gaussian it is proportional
/// to: precisions add, the mean is the precision-weighted level average.
pub fn prior_as_gaussian(levels: Levels, pair: NuvPair) -> GaussMsg {
    let var = 1.0 / (1.0 / pair.sigma1_sq + 1.0 / pair.sigma2_sq);
    let mean = var * (levels.a / pair.sigma1_sq + levels.b / pair.sigma2_sq);
    GaussMsg { mean, var }
}

/// Joint-MAP (alternating maximization) variance update:
/// each variance becomes the squared distance of the estimate to its level.
pub fn am_update(u_hat: f64, levels: Levels, floor: f64) -> NuvPair {
    NuvPair {
        sigma1_sq: ((u_hat - levels.a) * (u_hat - levels.a)).max(floor),
        sigma2_sq: ((u_hat - levels.b) * (u_hat - levels.b)).max(floor),
    }
}

/// Type-II (EM) variance update: the posterior variance is added to the
/// squared distance, `sigma^2 = V_U + (u_hat - level)^2`.
pub fn em_update(u_hat: f64, v_u: f64, levels: Levels, floor: f64) -> NuvPair {
    NuvPair {
        sigma1_sq: (v_u + (u_hat - levels.a) * (u_hat - levels.a)).max(floor),
        sigma2_sq: (v_u + (u_hat - levels.b) * (u_hat - levels.b)).max(floor),
    }
}

/// Combines a Gaussian likelihood with a Gaussian prior (precisions add).
pub fn scalar_posterior(lik: GaussMsg, prior: GaussMsg) -> GaussMsg {
    let var = 1.0 / (1.0 / lik.var + 1.0 / prior.var);
    let mean = var * (lik.mean / lik.var + prior.mean / prior.var);
    GaussMsg { mean, var }
}

/// Options for the scalar fixed-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct CellOpts {
    /// Initial variance pair. Symmetric by default, so the iteration has no
    /// built-in preference for either level.
    pub init: NuvPair,
    pub max_iters: usize,
    /// Stop when |x_hat - previous x_hat| falls below this.
    pub tol: f64,
    /// Distance to a level below which the outcome counts as binary.
    pub tol_binary: f64,
    pub variance_floor: f64,
}

impl CellOpts {
    /// Defaults scaled to the level gap.
    ///
    /// The EM iteration approaches a level at a harmonic (1/i) rate when the
    /// likelihood is weak, so the iteration budget is deliberately large;
    /// individual iterations cost a handful of flops.
    pub fn for_levels(levels: Levels) -> Self {
        let gap2 = levels.gap() * levels.gap();
        CellOpts {
            init: NuvPair::symmetric(gap2),
            max_iters: 2_000_000,
            tol: 1e-9,
            tol_binary: 1e-3 * levels.gap(),
            variance_floor: 1e-12 * gap2,
        }
    }
}

/// Outcome of the scalar fixed-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct CellResult {
    /// Fixed-point posterior mean.
    pub x_hat: f64,
    /// Fixed-point posterior variance.
    pub v_hat: f64,
    pub iterations: usize,
    /// False when the tolerance was not reached within the iteration budget;
    /// the last iterate is returned either way.
    pub converged: bool,
    /// True when `x_hat` lies within `tol_binary` of a level.
    pub binary: bool,
}

/// Iterates the scalar cell to a fixed point for likelihood `N(x; mu, s2)`.
pub fn characteristic(
    mu: f64,
    s2: f64,
    levels: Levels,
    method: Method,
    opts: &CellOpts,
) -> Result<CellResult> {
    if !(s2 > 0.0) || !s2.is_finite() {
        return Err(Error::Config(format!("s2 must be finite and > 0, got {s2}")));
    }
    if !mu.is_finite() {
        return Err(Error::Config("mu must be finite".into()));
    }
    let lik = GaussMsg { mean: mu, var: s2 };
    let mut pair = opts.init;
    let mut prev = f64::NAN;
    let mut post = scalar_posterior(lik, prior_as_gaussian(levels, pair));
    for i in 1..=opts.max_iters {
        post = scalar_posterior(lik, prior_as_gaussian(levels, pair));
        pair = match method {
            Method::Am => am_update(post.mean, levels, opts.variance_floor),
            Method::Em => em_update(post.mean, post.var, levels, opts.variance_floor),
        };
        if (post.mean - prev).abs() < opts.tol {
            return Ok(CellResult {
                x_hat: post.mean,
                v_hat: post.var,
                iterations: i,
                converged: true,
                binary: levels.distance(post.mean) <= opts.tol_binary,
            });
        }
        prev = post.mean;
    }
    Ok(CellResult {
        x_hat: post.mean,
        v_hat: post.var,
        iterations: opts.max_iters,
        converged: false,
        binary: levels.distance(post.mean) <= opts.tol_binary,
    })
}

/// One row of a characteristic sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepPoint {
    pub method: Method,
    pub s2: f64,
    pub mu: f64,
    pub x_hat: f64,
    pub converged: bool,
    pub binary: bool,
}

/// Evaluates the characteristic on a grid of likelihood means for each
/// likelihood variance in `s2_list`.
pub fn sweep_characteristic(
    mu_grid: &[f64],
    s2_list: &[f64],
    levels: Levels,
    method: Method,
    opts: &CellOpts,
) -> Result<Vec<SweepPoint>> {
    if mu_grid.is_empty() || s2_list.is_empty() {
        return Err(Error::Config("characteristic sweep grids must be nonempty".into()));
    }
    let mut points = Vec::with_capacity(mu_grid.len() * s2_list.len());
    for &s2 in s2_list {
        for &mu in mu_grid {
            let cell = characteristic(mu, s2, levels, method, opts)?;
            points.push(SweepPoint {
                method,
                s2,
                mu,
                x_hat: cell.x_hat,
                converged: cell.converged,
                binary: cell.binary,
            });
        }
    }
    Ok(points)
}

/// Evenly spaced grid with `steps` points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![lo];
    }
    let h = (hi - lo) / (steps - 1) as f64;
    (0..steps).map(|i| lo + h * i as f64).collect()
}
