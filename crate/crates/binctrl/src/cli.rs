//! Command-line front end.
//!
//! One subcommand per workflow: `solve` runs a scenario file end to end,
//! `characteristic` sweeps the scalar prior cell, `oracle-compare` measures
//! suboptimality against exhaustive search, `bench` times solves across
//! horizons, and `make-scenario` writes the bundled demos. All outputs are
//! plain text (TOML reports, CSV tables) intended for external plotting.
//!
//! Exit codes: 0 on success with a binary result, 2 when a solve finishes
//! nonbinary, 1 on any error.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::ikie::{ikie_solve, solve_with_s2_sweep};
use crate::io;
use crate::model::{Method, Scenario, Target};
use crate::nuvcell::{linspace, sweep_characteristic, CellOpts};
use crate::oracle::{compare, generate_instance, InstanceKind, BRUTE_FORCE_GUARD};
use crate::scenarios;

#[derive(Parser)]
#[command(
    name = "binctrl",
    version,
    about = "Two-level control signal synthesis for linear systems"
)]
struct Cli {
    /// Suppress generation timestamps in output files (byte-reproducible).
    #[arg(long, global = true)]
    no_timestamp: bool,

    /// Directory for generated files.
    #[arg(long, global = true, env = "BINCTRL_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Am,
    Em,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Am => Method::Am,
            MethodArg::Em => Method::Em,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Dac,
    Flappy,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario file; writes report, trajectory CSV, and trace CSV.
    Solve {
        scenario: PathBuf,
        /// Override the scenario's likelihood variance.
        #[arg(long)]
        s2: Option<f64>,
        /// Override the scenario's update rule.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Override the scenario's iteration budget.
        #[arg(long)]
        max_iters: Option<usize>,
        /// On a nonbinary result, retry with doubled s2 until binary or the
        /// cap is reached.
        #[arg(long)]
        s2_sweep: bool,
        /// Cap for the s2 sweep (default: 1000 times the starting value).
        #[arg(long)]
        s2_max: Option<f64>,
    },
    /// Sweep the scalar prior characteristic x_hat(mu); writes a CSV.
    Characteristic {
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Lower level.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        a: f64,
        /// Upper level.
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        b: f64,
        /// Likelihood variances, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0.01,1,10")]
        s2: Vec<f64>,
        #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
        mu_min: f64,
        #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
        mu_max: f64,
        /// Number of grid points (at least 2).
        #[arg(long, default_value_t = 201)]
        steps: usize,
        /// Output file name.
        #[arg(long, default_value = "characteristic.csv")]
        out: PathBuf,
    },
    /// Compare the iterative solver against exhaustive search; writes a CSV.
    OracleCompare {
        /// Compare on a scenario file (truncated to the horizon) instead of
        /// generated instances.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Instance family: planted-integrator, planted-stable2,
        /// planted-mix, or random-target.
        #[arg(long, default_value = "planted-mix")]
        generator: String,
        /// Horizon of the compared instances (at most 24).
        #[arg(long, default_value_t = 12)]
        k: usize,
        /// Number of generated instances.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Likelihood variance of generated instances.
        #[arg(long, default_value_t = 0.05)]
        s2: f64,
        #[arg(long, default_value = "oracle_compare.csv")]
        out: PathBuf,
    },
    /// Time fixed-iteration solves across horizons; writes a CSV.
    Bench {
        scenario: PathBuf,
        /// Horizons, comma separated (at least two, e.g. 450,900,1800).
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
        /// Iterations per timed solve.
        #[arg(long, default_value_t = 25)]
        iters: usize,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
    /// Write a bundled demo scenario file.
    MakeScenario {
        #[arg(long, value_enum)]
        preset: Preset,
        /// Output file name (defaults to <preset>.scenario).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses arguments from the environment and runs; returns the process exit
/// code.
pub fn run() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are not errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let stamp = !cli.no_timestamp;
    if !cli.out_dir.as_os_str().is_empty() && !cli.out_dir.exists() {
        std::fs::create_dir_all(&cli.out_dir)?;
    }
    match &cli.command {
        Command::Solve {
            scenario,
            s2,
            method,
            max_iters,
            s2_sweep,
            s2_max,
        } => cmd_solve(
            scenario,
            *s2,
            method.map(Method::from),
            *max_iters,
            *s2_sweep,
            *s2_max,
            &cli.out_dir,
            stamp,
        ),
        Command::Characteristic {
            method,
            a,
            b,
            s2,
            mu_min,
            mu_max,
            steps,
            out,
        } => cmd_characteristic(
            Method::from(*method),
            *a,
            *b,
            s2,
            *mu_min,
            *mu_max,
            *steps,
            &cli.out_dir.join(out),
            stamp,
        ),
        Command::OracleCompare {
            scenario,
            generator,
            k,
            trials,
            seed,
            s2,
            out,
        } => cmd_oracle_compare(
            scenario.as_deref(),
            generator,
            *k,
            *trials,
            *seed,
            *s2,
            &cli.out_dir.join(out),
            stamp,
        ),
        Command::Bench {
            scenario,
            horizons,
            iters,
            out,
        } => cmd_bench(scenario, horizons, *iters, &cli.out_dir.join(out), stamp),
        Command::MakeScenario { preset, out } => {
            cmd_make_scenario(*preset, out.as_deref(), &cli.out_dir, stamp)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_solve(
    scenario_path: &Path,
    s2: Option<f64>,
    method: Option<Method>,
    max_iters: Option<usize>,
    s2_sweep: bool,
    s2_max: Option<f64>,
    out_dir: &Path,
    stamp: bool,
) -> Result<u8> {
    let mut scenario = io::load_scenario(scenario_path)?;
    if let Some(v) = s2 {
        scenario.solver.s2 = v;
    }
    if let Some(m) = method {
        scenario.solver.method = m;
    }
    if let Some(v) = max_iters {
        scenario.solver.max_iters = v;
    }
    scenario.validate()?;

    let report = if s2_sweep {
        let cap = s2_max.unwrap_or(scenario.solver.s2 * 1000.0);
        let sweep = solve_with_s2_sweep(&scenario, cap)?;
        if sweep.attempts > 1 {
            println!(
                "s2 sweep: {} attempts, final s2 = {}",
                sweep.attempts, sweep.s2_used
            );
        }
        scenario.solver.s2 = sweep.s2_used;
        sweep.report
    } else {
        ikie_solve(&scenario)?
    };

    let stem = scenario_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    let report_path = out_dir.join(format!("{stem}_report.toml"));
    let traj_path = out_dir.join(format!("{stem}_trajectory.csv"));
    let trace_path = out_dir.join(format!("{stem}_trace.csv"));
    io::save_report(&report, &report_path, stamp)?;
    io::write_trajectory_csv(&scenario, &report, &traj_path, stamp)?;
    io::write_trace_csv(&report, &trace_path, stamp)?;

    println!(
        "solved {} (K = {}, method = {}, s2 = {})",
        scenario_path.display(),
        scenario.horizon(),
        report.method.name(),
        report.s2
    );
    println!(
        "iterations = {}, converged = {}, binary = {}, residual = {:e}, cost = {}",
        report.iterations, report.converged, report.binary, report.binary_residual, report.cost
    );
    if report.unconstrained_inputs > 0 {
        println!(
            "{} input(s) have no influence on any weighted output; pinned to the lower level",
            report.unconstrained_inputs
        );
    }
    println!(
        "wrote {}, {}, {}",
        report_path.display(),
        traj_path.display(),
        trace_path.display()
    );
    Ok(if report.binary { 0 } else { 2 })
}

#[allow(clippy::too_many_arguments)]
fn cmd_characteristic(
    method: Method,
    a: f64,
    b: f64,
    s2_list: &[f64],
    mu_min: f64,
    mu_max: f64,
    steps: usize,
    out: &Path,
    stamp: bool,
) -> Result<u8> {
    if steps < 2 {
        return Err(Error::Config(format!("steps must be >= 2, got {steps}")));
    }
    if !(mu_min < mu_max) {
        return Err(Error::Config(format!(
            "mu range must satisfy mu_min < mu_max, got [{mu_min}, {mu_max}]"
        )));
    }
    let levels = crate::model::Levels::new(a, b)?;
    let opts = CellOpts::for_levels(levels);
    let grid = linspace(mu_min, mu_max, steps);
    let points = sweep_characteristic(&grid, s2_list, levels, method, &opts)?;
    io::write_sweep_csv(&points, out, stamp)?;
    let nonbinary = points.iter().filter(|p| !p.binary).count();
    println!(
        "characteristic: {} points ({} nonbinary), wrote {}",
        points.len(),
        nonbinary,
        out.display()
    );
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_oracle_compare(
    scenario_path: Option<&Path>,
    generator: &str,
    k: usize,
    trials: usize,
    seed: u64,
    s2: f64,
    out: &Path,
    stamp: bool,
) -> Result<u8> {
    if k > BRUTE_FORCE_GUARD {
        return Err(Error::Guard(format!(
            "horizon {k} exceeds the exhaustive-search guard {BRUTE_FORCE_GUARD}"
        )));
    }
    let mut rows = Vec::new();
    if let Some(path) = scenario_path {
        let mut scenario = io::load_scenario(path)?;
        let keep = k.min(scenario.horizon());
        scenario.target = Target::new(
            scenario.target.values[..keep].to_vec(),
            scenario.target.weights[..keep].to_vec(),
        )?;
        scenario.validate()?;
        let cmp = compare(&scenario)?;
        rows.push(io::CompareRow {
            instance: 0,
            k: keep,
            cost_opt: cmp.cost_opt,
            cost_ikie: cmp.cost_ikie,
            ratio_or_gap: cmp.ratio.unwrap_or(cmp.gap),
            hamming: cmp.hamming,
            ikie_iterations: cmp.ikie_iterations,
            binary: cmp.binary,
        });
    } else {
        let kind: InstanceKind = generator.parse()?;
        for trial in 0..trials {
            let (scenario, _) = generate_instance(kind, k, s2, seed, trial as u64)?;
            let cmp = compare(&scenario)?;
            rows.push(io::CompareRow {
                instance: trial as u64,
                k,
                cost_opt: cmp.cost_opt,
                cost_ikie: cmp.cost_ikie,
                ratio_or_gap: cmp.ratio.unwrap_or(cmp.gap),
                hamming: cmp.hamming,
                ikie_iterations: cmp.ikie_iterations,
                binary: cmp.binary,
            });
        }
    }
    io::write_compare_csv(&rows, out, stamp)?;
    let exact = rows.iter().filter(|r| r.hamming == 0).count();
    println!(
        "oracle-compare: {} instances, {} matched the optimum exactly, wrote {}",
        rows.len(),
        exact,
        out.display()
    );
    Ok(0)
}

fn cmd_bench(
    scenario_path: &Path,
    horizons: &[usize],
    iters: usize,
    out: &Path,
    stamp: bool,
) -> Result<u8> {
    if horizons.len() < 2 {
        return Err(Error::Config(
            "bench needs at least two horizons to assess scaling".into(),
        ));
    }
    if iters == 0 {
        return Err(Error::Config("iters must be >= 1".into()));
    }
    let base = io::load_scenario(scenario_path)?;
    let mut rows = Vec::new();
    for &horizon in horizons {
        if horizon == 0 {
            return Err(Error::Config("horizons must be >= 1".into()));
        }
        let mut scenario = base.clone();
        // tile or truncate the target cyclically to the requested horizon
        let values = (0..horizon)
            .map(|k| base.target.values[k % base.horizon()].clone())
            .collect();
        let weights = (0..horizon)
            .map(|k| base.target.weights[k % base.horizon()])
            .collect();
        scenario.target = Target::new(values, weights)?;
        scenario.solver.max_iters = iters;
        // run the full iteration budget
        scenario.solver.tol_convergence = f64::MIN_POSITIVE;
        scenario.validate()?;

        let start = Instant::now();
        let report = ikie_solve(&scenario)?;
        let elapsed = start.elapsed().as_secs_f64();
        let per_iter = elapsed / report.iterations as f64;
        rows.push((horizon, per_iter));
        println!("K = {horizon}: {per_iter:.3e} s/iteration");
    }
    io::write_bench_csv(&rows, out, stamp)?;
    println!("wrote {}", out.display());
    Ok(0)
}

fn cmd_make_scenario(
    preset: Preset,
    out: Option<&Path>,
    out_dir: &Path,
    stamp: bool,
) -> Result<u8> {
    let (scenario, default_name, comments): (Scenario, &str, Vec<&str>) = match preset {
        Preset::Dac => (
            scenarios::dac(),
            "dac.scenario",
            vec![
                "digital-to-analog conversion demo",
                "third-order low-pass reconstruction filter driven by a bit stream",
                "target: synthetic test burst (quiet lead-in, three full-swing tone",
                "cycles spanning the filter's reachable band, short flush below zero);",
                "an illustrative waveform choice, values rounded to 1e-6",
            ],
        ),
        Preset::Flappy => (
            scenarios::flappy(),
            "flappy.scenario",
            vec![
                "checkpoint-steering demo: falling point mass with impulse control",
                "(m = 0.5, T = 0.1, g = 0.25); only checkpoint steps carry weight",
                "checkpoint heights follow a reference flight with impulses at",
                "steps 40, 120, 200 (rounded to 1e-4), so they are attainable",
            ],
        ),
    };
    let path = match out {
        Some(p) => out_dir.join(p),
        None => out_dir.join(default_name),
    };
    io::save_scenario(&scenario, &path, &comments, stamp)?;
    println!("wrote {}", path.display());
    Ok(0)
}
