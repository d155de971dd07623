//! Exhaustive reference solver for small horizons.
//!
//! Enumerates every two-level input sequence, which is exact but exponential
//! in the horizon; it exists to measure the suboptimality of the iterative
//! solver and to validate planted-solution constructions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ikie::ikie_solve;
use crate::model::{cost, simulate, Levels, LtiModel, Method, Scenario, SolverOptions, Target};

/// Hard cap on the exhaustive horizon (2^24 sequences).
pub const BRUTE_FORCE_GUARD: usize = 24;

/// Result of an exhaustive search.
#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Cost-minimal sequence; ties resolve to the lexicographically smallest
    /// with `a` ordered before `b`.
    pub u_opt: Vec<f64>,
    pub cost_opt: f64,
    /// Number of sequences attaining the minimal cost.
    pub ties: usize,
    /// Total sequences enumerated, `2^K`.
    pub enumerated: u64,
}

/// Enumerates all `2^K` level sequences and returns the cost minimizer.
pub fn brute_force(model: &LtiModel, target: &Target, levels: Levels) -> Result<OracleResult> {
    model.validate()?;
    target.validate()?;
    let k = target.horizon();
    if k > BRUTE_FORCE_GUARD {
        return Err(Error::Guard(format!(
            "exhaustive search horizon {k} exceeds guard {BRUTE_FORCE_GUARD}"
        )));
    }
    if target.values[0].len() != model.output_dim() {
        return Err(Error::Config(
            "target dimension does not match model output dimension".into(),
        ));
    }

    let total: u64 = 1 << k;
    let mut best_cost = f64::INFINITY;
    let mut best_u: Vec<f64> = Vec::new();
    let mut ties = 0usize;
    let mut u = vec![levels.a; k];

    for code in 0..total {
        // bit K-1 of the code is u_1, so increasing codes enumerate
        // sequences in lexicographic order with a < b
        for (i, slot) in u.iter_mut().enumerate() {
            let bit = (code >> (k - 1 - i)) & 1;
            *slot = if bit == 0 { levels.a } else { levels.b };
        }
        let (_, outputs) = simulate(model, &u)?;
        let c = cost(target, &outputs)?;
        if c < best_cost {
            best_cost = c;
            best_u = u.clone();
            ties = 1;
        } else if c == best_cost {
            ties += 1;
        }
    }

    Ok(OracleResult {
        u_opt: best_u,
        cost_opt: best_cost,
        ties,
        enumerated: total,
    })
}

/// Side-by-side result of the iterative solver and the exhaustive oracle on
/// the same instance.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub cost_ikie: f64,
    pub cost_opt: f64,
    /// `cost_ikie / cost_opt`, absent when the optimal cost is zero; use
    /// `gap` in that case.
    pub ratio: Option<f64>,
    /// Absolute excess cost `cost_ikie - cost_opt`.
    pub gap: f64,
    /// Positions where the (level-snapped) iterative solution differs from
    /// the oracle optimum.
    pub hamming: usize,
    pub ikie_iterations: usize,
    /// Whether the iterative solver produced a binary result.
    pub binary: bool,
    pub ties: usize,
}

/// Runs [`ikie_solve`] and [`brute_force`] on the same scenario.
///
/// The iterative result is snapped to the nearest levels before costing, so
/// the comparison always measures a feasible two-level sequence and the
/// oracle cost is a true lower bound. A nonbinary solve is flagged but still
/// compared.
pub fn compare(scenario: &Scenario) -> Result<Comparison> {
    let report = ikie_solve(scenario)?;
    let oracle = brute_force(&scenario.model, &scenario.target, scenario.levels)?;

    let snapped: Vec<f64> = report
        .u_raw
        .iter()
        .map(|&v| scenario.levels.nearest(v))
        .collect();
    let hamming = snapped
        .iter()
        .zip(&oracle.u_opt)
        .filter(|(a, b)| a != b)
        .count();
    let (_, outputs) = simulate(&scenario.model, &snapped)?;
    let cost_ikie = cost(&scenario.target, &outputs)?;
    let ratio = if oracle.cost_opt > 0.0 {
        Some(cost_ikie / oracle.cost_opt)
    } else {
        None
    };

    Ok(Comparison {
        cost_ikie,
        cost_opt: oracle.cost_opt,
        ratio,
        gap: cost_ikie - oracle.cost_opt,
        hamming,
        ikie_iterations: report.iterations,
        binary: report.binary,
        ties: oracle.ties,
    })
}

/// Families of generated comparison instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceKind {
    /// Scalar integrator with an exact-fit planted binary target.
    PlantedIntegrator,
    /// Random stable two-state model with an exact-fit planted target.
    PlantedStable2,
    /// Alternates between the two planted families by trial index.
    PlantedMix,
    /// Scalar integrator tracking a random (generally unreachable) target.
    RandomTarget,
}

impl std::str::FromStr for InstanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planted-integrator" => Ok(InstanceKind::PlantedIntegrator),
            "planted-stable2" => Ok(InstanceKind::PlantedStable2),
            "planted-mix" => Ok(InstanceKind::PlantedMix),
            "random-target" => Ok(InstanceKind::RandomTarget),
            other => Err(Error::Parse(format!(
                "unknown generator \"{other}\"; expected planted-integrator, \
                 planted-stable2, planted-mix, or random-target"
            ))),
        }
    }
}

fn integrator_model() -> LtiModel {
    LtiModel::without_drift(
        nalgebra::DMatrix::from_row_slice(1, 1, &[1.0]),
        nalgebra::DVector::from_row_slice(&[1.0]),
        nalgebra::DMatrix::from_row_slice(1, 1, &[1.0]),
        nalgebra::DVector::from_row_slice(&[0.0]),
    )
    .unwrap()
}

/// Random two-state model with spectral radius in (0, 0.95] and a direct
/// input-output path (so that no input is structurally unobserved).
fn random_stable2(rng: &mut ChaCha8Rng) -> LtiModel {
    loop {
        let mut a =
            nalgebra::DMatrix::<f64>::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        // spectral radius of a 2x2 from trace and determinant
        let tr: f64 = a[(0, 0)] + a[(1, 1)];
        let det: f64 = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        let disc = tr * tr - 4.0 * det;
        let radius = if disc >= 0.0 {
            let r1 = (tr + disc.sqrt()) / 2.0;
            let r2 = (tr - disc.sqrt()) / 2.0;
            r1.abs().max(r2.abs())
        } else {
            det.abs().sqrt()
        };
        if radius < 1e-3 {
            continue;
        }
        let scale = rng.gen_range(0.5..0.95) / radius;
        a *= scale;

        let b = nalgebra::DVector::<f64>::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let c = nalgebra::DMatrix::<f64>::from_fn(1, 2, |_, _| rng.gen_range(-1.0..1.0));
        if b.norm() < 0.3 || c.norm() < 0.3 {
            continue;
        }
        let feedthrough = (c[(0, 0)] * b[0] + c[(0, 1)] * b[1]).abs() / (b.norm() * c.norm());
        if feedthrough < 0.1 {
            continue;
        }
        let x0 = nalgebra::DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
        return LtiModel::without_drift(a, b, c, x0).unwrap();
    }
}

/// Generates one seeded comparison instance.
///
/// Planted kinds simulate a random binary sequence and use its outputs as
/// the target, so the binary optimum has cost zero. Returns the scenario and
/// the planted sequence (empty for [`InstanceKind::RandomTarget`]).
pub fn generate_instance(
    kind: InstanceKind,
    k: usize,
    s2: f64,
    seed: u64,
    index: u64,
) -> Result<(Scenario, Vec<f64>)> {
    if k == 0 {
        return Err(Error::Config("instance horizon must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index.wrapping_mul(0x9e3779b97f4a7c15)));
    let levels = Levels::new(0.0, 1.0).unwrap();
    let effective = match kind {
        InstanceKind::PlantedMix => {
            if index % 2 == 0 {
                InstanceKind::PlantedIntegrator
            } else {
                InstanceKind::PlantedStable2
            }
        }
        other => other,
    };

    let (model, planted, target) = match effective {
        InstanceKind::PlantedIntegrator | InstanceKind::PlantedStable2 => {
            let model = if effective == InstanceKind::PlantedIntegrator {
                integrator_model()
            } else {
                random_stable2(&mut rng)
            };
            let planted: Vec<f64> = (0..k)
                .map(|_| if rng.gen_bool(0.5) { levels.b } else { levels.a })
                .collect();
            let (_, outputs) = simulate(&model, &planted)?;
            let target = Target::uniform(outputs)?;
            (model, planted, target)
        }
        InstanceKind::RandomTarget => {
            // random walk with increments inside and slightly beyond the
            // reachable per-step range, so the target is generally infeasible
            let model = integrator_model();
            let mut level = 0.0;
            let values = (0..k)
                .map(|_| {
                    level += rng.gen_range(-0.3..1.3);
                    nalgebra::DVector::from_row_slice(&[level])
                })
                .collect();
            let target = Target::uniform(values)?;
            (model, Vec::new(), target)
        }
        InstanceKind::PlantedMix => unreachable!(),
    };

    let mut solver = SolverOptions::new(s2, levels);
    solver.method = Method::Em;
    let scenario = Scenario::new(model, target, levels, solver)?;
    Ok((scenario, planted))
}
