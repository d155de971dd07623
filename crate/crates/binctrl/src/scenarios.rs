//! Bundled demonstration scenarios.
//!
//! Two ready-made problem instances cover the crate's two flagship use
//! cases: driving an analog reconstruction filter with a bit stream
//! (digital-to-analog conversion) and steering a falling point mass through
//! sparse checkpoints. The `make-scenario` CLI subcommand writes these as
//! scenario files; the functions here build them directly.

use nalgebra::{DMatrix, DVector};

use crate::model::{Levels, LtiModel, Method, Scenario, SolverOptions, Target};
use crate::model::simulate;

/// Horizon of the DAC scenario.
pub const DAC_HORIZON: usize = 450;

/// Likelihood variance of the DAC scenario.
pub const DAC_S2: f64 = 0.045;

/// Third-order low-pass reconstruction filter, sampled at the bit clock.
pub fn dac_model() -> LtiModel {
    LtiModel::without_drift(
        DMatrix::from_row_slice(
            3,
            3,
            &[
                0.7967, -6.3978, -94.2123, //
                0.0027, 0.9902, -0.1467, //
                0.0, 0.0030, 0.9999,
            ],
        ),
        DVector::from_row_slice(&[0.0027, 0.0, 0.0]),
        DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 35037.9]),
        DVector::from_row_slice(&[0.0, 0.0, 0.0]),
    )
    .expect("the bundled filter matrices are valid")
}

/// Test burst for the DAC demo: a quiet lead-in, three full-swing cycles of
/// a smooth tone, and a short flush below zero.
///
/// The filter has a DC gain of about 0.897 for unit input, so the tone swing
/// [0, 0.9] spans the reachable band. The segments keep every input's level
/// decision data-driven: the lead-in and the (slightly infeasible) flush pin
/// the ends of the horizon, where per-input output leverage is weakest, and
/// the full-swing tone keeps the interior away from ambiguous half-duty
/// stretches. Values are rounded to 1e-6.
pub fn dac_target(k_total: usize) -> Vec<f64> {
    use std::f64::consts::TAU;
    let lead = (2 * k_total).div_euclid(45).max(1); // 20 of 450
    let flush = k_total.div_euclid(30).max(1); // 15 of 450
    let tone_len = k_total.saturating_sub(lead + flush).max(1);
    (1..=k_total)
        .map(|k| {
            let y = if k <= lead {
                0.0
            } else if k <= lead + tone_len {
                let t = (k - lead) as f64 / tone_len as f64;
                0.45 - 0.45 * (TAU * 3.0 * t).cos()
            } else {
                -0.15
            };
            (y * 1e6).round() / 1e6
        })
        .collect()
}

/// The bundled digital-to-analog conversion scenario.
pub fn dac() -> Scenario {
    let levels = Levels::new(0.0, 1.0).unwrap();
    let values = dac_target(DAC_HORIZON)
        .into_iter()
        .map(|y| DVector::from_row_slice(&[y]))
        .collect();
    let target = Target::uniform(values).unwrap();
    let mut solver = SolverOptions::new(DAC_S2, levels);
    solver.method = Method::Em;
    // the weakly observed inputs near the horizon end approach their level
    // at a harmonic rate, so the budget is deliberately large; one iteration
    // is a single O(K) sweep
    solver.max_iters = 400_000;
    solver.tol_convergence = 2e-9;
    Scenario::new(dac_model(), target, levels, solver).unwrap()
}

/// Horizon of the checkpoint scenario.
pub const FLAPPY_HORIZON: usize = 250;

/// Likelihood variance of the checkpoint scenario.
pub const FLAPPY_S2: f64 = 0.1;

/// Falling point mass: vertical position and speed, constant gravity pull,
/// and an impulse of `1/m` on the speed whenever the input is one.
/// Parameters: m = 0.5, T = 0.1, g = 0.25.
pub fn flappy_model() -> LtiModel {
    let (m, t, g) = (0.5, 0.1, 0.25);
    LtiModel::new(
        DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]),
        DVector::from_row_slice(&[0.0, 1.0 / m]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DVector::from_row_slice(&[0.0, -t * g]),
        DVector::from_row_slice(&[0.0, 0.0]),
    )
    .expect("the bundled point-mass matrices are valid")
}

/// Checkpoint steps of the bundled flappy scenario (1-based).
pub const FLAPPY_CHECKPOINTS: [usize; 8] = [20, 50, 80, 110, 140, 170, 200, 230];

/// The bundled checkpoint-steering scenario.
///
/// The checkpoint heights are read off a reference flight with impulses at
/// steps 40, 120, and 200 (rounded to 1e-4), so a two-level control passing
/// all checkpoints exists. All other steps carry zero weight.
pub fn flappy() -> Scenario {
    let model = flappy_model();
    let k_total = FLAPPY_HORIZON;
    let mut reference = vec![0.0; k_total];
    for step in [40, 120, 200] {
        reference[step - 1] = 1.0;
    }
    let (_, outputs) = simulate(&model, &reference).unwrap();

    let mut values = Vec::with_capacity(k_total);
    let mut weights = vec![0.0; k_total];
    for k in 1..=k_total {
        values.push(DVector::from_row_slice(&[
            (outputs[k - 1][0] * 1e4).round() / 1e4,
        ]));
    }
    for &cp in &FLAPPY_CHECKPOINTS {
        weights[cp - 1] = 1.0;
    }
    let target = Target::new(values, weights).unwrap();

    let levels = Levels::new(0.0, 1.0).unwrap();
    let mut solver = SolverOptions::new(FLAPPY_S2, levels);
    solver.method = Method::Em;
    solver.max_iters = 120_000;
    solver.tol_convergence = 1e-10;
    Scenario::new(model, target, levels, solver).unwrap()
}
