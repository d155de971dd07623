//! Scenario and report files, and the CSV outputs.
//!
//! A scenario file is a TOML document with four sections:
//!
//! ```toml
//! [model]
//! a = [[1.0]]        # state transition, one row per line is fine
//! b = [1.0]          # input map
//! c = [[1.0]]        # output map
//! d = [0.0]          # optional per-step drift, defaults to zero
//! x0 = [0.0]         # optional initial state, defaults to zero
//!
//! [target]
//! ybreve = [[0.5], [1.0]]   # K rows of L values
//! weights = [1.0, 1.0]      # optional, defaults to all ones
//!
//! [levels]
//! a = 0.0
//! b = 1.0
//!
//! [solver]
//! s2 = 0.1           # required
//! method = "em"      # optional: "am" | "em", default "em"
//! max_iters = 5000   # optional
//! tol_convergence = 1e-7   # optional, default 1e-7 * (b - a)
//! tol_binary = 1e-3        # optional, default 1e-3 * (b - a)
//! variance_floor = 1e-12   # optional, default 1e-12 * (b - a)^2
//! ```
//!
//! Reports are TOML documents as well; all CSV outputs use plain comma
//! separation with a header row. Every writer can prepend a generation
//! timestamp comment, which the `--no-timestamp` flag suppresses for
//! byte-reproducible output.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ikie::SolveReport;
use crate::model::{Levels, LtiModel, Scenario, SolverOptions, Target};
use crate::nuvcell::SweepPoint;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    model: ModelFile,
    target: TargetFile,
    levels: LevelsFile,
    solver: SolverFile,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<Vec<f64>>,
    d: Option<Vec<f64>>,
    x0: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetFile {
    ybreve: Vec<Vec<f64>>,
    weights: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelsFile {
    a: f64,
    b: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverFile {
    s2: f64,
    method: Option<String>,
    max_iters: Option<usize>,
    tol_convergence: Option<f64>,
    tol_binary: Option<f64>,
    variance_floor: Option<f64>,
}

fn matrix_from_rows(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Config(format!("{field} must have at least one row")));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::Config(format!("{field} rows must be nonempty")));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::Config(format!(
                "{field} row {} has {} entries, expected {}",
                i + 1,
                row.len(),
                ncols
            )));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Loads and fully validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses a scenario from TOML text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim().to_string()))?;

    let a = matrix_from_rows(&file.model.a, "model.a")?;
    let n = a.nrows();
    let b = DVector::from_vec(file.model.b.clone());
    let c = matrix_from_rows(&file.model.c, "model.c")?;
    let drift = match &file.model.d {
        Some(d) => DVector::from_vec(d.clone()),
        None => DVector::zeros(n),
    };
    let x0 = match &file.model.x0 {
        Some(x0) => DVector::from_vec(x0.clone()),
        None => DVector::zeros(n),
    };
    let model = LtiModel::new(a, b, c, drift, x0)?;

    let values: Vec<DVector<f64>> = file
        .target
        .ybreve
        .iter()
        .map(|row| DVector::from_vec(row.clone()))
        .collect();
    let weights = match &file.target.weights {
        Some(w) => w.clone(),
        None => vec![1.0; values.len()],
    };
    let target = Target::new(values, weights)?;

    let levels = Levels::new(file.levels.a, file.levels.b)?;

    let mut solver = SolverOptions::new(file.solver.s2, levels);
    if let Some(m) = &file.solver.method {
        solver.method = m.parse()?;
    }
    if let Some(v) = file.solver.max_iters {
        solver.max_iters = v;
    }
    if let Some(v) = file.solver.tol_convergence {
        solver.tol_convergence = v;
    }
    if let Some(v) = file.solver.tol_binary {
        solver.tol_binary = v;
    }
    if let Some(v) = file.solver.variance_floor {
        solver.variance_floor = v;
    }

    Scenario::new(model, target, levels, solver)
}

fn fmt_row(values: impl IntoIterator<Item = f64>) -> String {
    let items: Vec<String> = values.into_iter().map(|v| format!("{v}")).collect();
    items.join(", ")
}

fn timestamp_line() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("# generated-at-unix: {secs}\n")
}

/// Renders a scenario in the file format, with optional leading comment
/// lines (without the `# ` prefix) and an optional timestamp.
pub fn render_scenario(scenario: &Scenario, comments: &[&str], stamp: bool) -> String {
    let mut out = String::new();
    for line in comments {
        let _ = writeln!(out, "# {line}");
    }
    if stamp {
        out.push_str(&timestamp_line());
    }
    if !out.is_empty() {
        out.push('\n');
    }

    let m = &scenario.model;
    out.push_str("[model]\n");
    out.push_str("a = [\n");
    for i in 0..m.a.nrows() {
        let _ = writeln!(out, "  [{}],", fmt_row(m.a.row(i).iter().copied()));
    }
    out.push_str("]\n");
    let _ = writeln!(out, "b = [{}]", fmt_row(m.b.iter().copied()));
    out.push_str("c = [\n");
    for i in 0..m.c.nrows() {
        let _ = writeln!(out, "  [{}],", fmt_row(m.c.row(i).iter().copied()));
    }
    out.push_str("]\n");
    let _ = writeln!(out, "d = [{}]", fmt_row(m.drift.iter().copied()));
    let _ = writeln!(out, "x0 = [{}]", fmt_row(m.x0.iter().copied()));

    out.push_str("\n[target]\n");
    out.push_str("ybreve = [\n");
    for row in &scenario.target.values {
        let _ = writeln!(out, "  [{}],", fmt_row(row.iter().copied()));
    }
    out.push_str("]\n");
    let _ = writeln!(
        out,
        "weights = [{}]",
        fmt_row(scenario.target.weights.iter().copied())
    );

    out.push_str("\n[levels]\n");
    let _ = writeln!(out, "a = {}", scenario.levels.a);
    let _ = writeln!(out, "b = {}", scenario.levels.b);

    let s = &scenario.solver;
    out.push_str("\n[solver]\n");
    let _ = writeln!(out, "s2 = {}", s.s2);
    let _ = writeln!(out, "method = \"{}\"", s.method.name());
    let _ = writeln!(out, "max_iters = {}", s.max_iters);
    let _ = writeln!(out, "tol_convergence = {}", s.tol_convergence);
    let _ = writeln!(out, "tol_binary = {}", s.tol_binary);
    let _ = writeln!(out, "variance_floor = {}", s.variance_floor);
    out
}

/// Writes a scenario file.
pub fn save_scenario(scenario: &Scenario, path: &Path, comments: &[&str], stamp: bool) -> Result<()> {
    std::fs::write(path, render_scenario(scenario, comments, stamp))?;
    Ok(())
}

/// Renders a solve report in the report file format.
pub fn render_report(report: &SolveReport, stamp: bool) -> String {
    let mut out = String::from("# solve report\n");
    if stamp {
        out.push_str(&timestamp_line());
    }
    out.push('\n');
    let _ = writeln!(out, "method = \"{}\"", report.method.name());
    let _ = writeln!(out, "s2 = {}", report.s2);
    let _ = writeln!(out, "iterations = {}", report.iterations);
    let _ = writeln!(out, "converged = {}", report.converged);
    let _ = writeln!(out, "binary = {}", report.binary);
    let _ = writeln!(out, "binary_residual = {}", report.binary_residual);
    let _ = writeln!(out, "cost = {}", report.cost);
    let _ = writeln!(out, "unconstrained_inputs = {}", report.unconstrained_inputs);
    let _ = writeln!(out, "clip_events = {}", report.clip_events);
    let _ = writeln!(out, "u = [{}]", fmt_row(report.u.iter().copied()));
    let _ = writeln!(out, "u_raw = [{}]", fmt_row(report.u_raw.iter().copied()));
    out.push_str("y = [\n");
    for row in &report.y {
        let _ = writeln!(out, "  [{}],", fmt_row(row.iter().copied()));
    }
    out.push_str("]\n");
    out
}

/// Writes the report file.
pub fn save_report(report: &SolveReport, path: &Path, stamp: bool) -> Result<()> {
    std::fs::write(path, render_report(report, stamp))?;
    Ok(())
}

/// Trajectory CSV: one row per step with input, output, target, and weight.
pub fn write_trajectory_csv(
    scenario: &Scenario,
    report: &SolveReport,
    path: &Path,
    stamp: bool,
) -> Result<()> {
    let l = scenario.model.output_dim();
    let mut out = String::new();
    if stamp {
        out.push_str(&timestamp_line());
    }
    out.push_str("k,u_k");
    for j in 1..=l {
        let _ = write!(out, ",y_k_{j}");
    }
    for j in 1..=l {
        let _ = write!(out, ",ybreve_k_{j}");
    }
    out.push_str(",w_k\n");
    for k in 0..scenario.horizon() {
        let _ = write!(out, "{},{}", k + 1, report.u[k]);
        for j in 0..l {
            let _ = write!(out, ",{}", report.y[k][j]);
        }
        for j in 0..l {
            let _ = write!(out, ",{}", scenario.target.values[k][j]);
        }
        let _ = writeln!(out, ",{}", scenario.target.weights[k]);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-iteration trace CSV.
pub fn write_trace_csv(report: &SolveReport, path: &Path, stamp: bool) -> Result<()> {
    let mut out = String::new();
    if stamp {
        out.push_str(&timestamp_line());
    }
    out.push_str("iteration,evidence_or_objective,binary_residual,max_delta_u\n");
    for rec in &report.trace {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            rec.iteration, rec.objective, rec.binary_residual, rec.max_delta_u
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Characteristic sweep CSV.
pub fn write_sweep_csv(points: &[SweepPoint], path: &Path, stamp: bool) -> Result<()> {
    let mut out = String::new();
    if stamp {
        out.push_str(&timestamp_line());
    }
    out.push_str("method,s2,mu,x_hat,converged,binary_flag\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.method.name(),
            p.s2,
            p.mu,
            p.x_hat,
            p.converged,
            p.binary
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One row of the oracle-comparison CSV.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub instance: u64,
    pub k: usize,
    pub cost_opt: f64,
    pub cost_ikie: f64,
    /// Cost ratio when the optimum is positive, absolute gap otherwise.
    pub ratio_or_gap: f64,
    pub hamming: usize,
    pub ikie_iterations: usize,
    pub binary: bool,
}

/// Oracle comparison CSV.
pub fn write_compare_csv(rows: &[CompareRow], path: &Path, stamp: bool) -> Result<()> {
    let mut out = String::new();
    if stamp {
        out.push_str(&timestamp_line());
    }
    out.push_str("instance,K,cost_opt,cost_ikie,ratio_or_gap,hamming,ikie_iterations,binary_flag\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.instance,
            r.k,
            r.cost_opt,
            r.cost_ikie,
            r.ratio_or_gap,
            r.hamming,
            r.ikie_iterations,
            r.binary
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Benchmark CSV of per-iteration smoothing time against horizon.
pub fn write_bench_csv(rows: &[(usize, f64)], path: &Path, stamp: bool) -> Result<()> {
    let mut out = String::new();
    if stamp {
        out.push_str(&timestamp_line());
    }
    out.push_str("K,seconds_per_iteration\n");
    for (k, secs) in rows {
        let _ = writeln!(out, "{k},{secs}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Method;
    use approx::assert_abs_diff_eq;

    const MINIMAL: &str = r#"
[model]
a = [[1.0]]
b = [1.0]
c = [[1.0]]

[target]
ybreve = [[0.5], [1.0], [1.5]]

[levels]
a = 0.0
b = 1.0

[solver]
s2 = 0.1
"#;

    #[test]
    fn minimal_scenario_defaults() {
        let scenario = parse_scenario(MINIMAL).unwrap();
        assert_eq!(scenario.horizon(), 3);
        assert_eq!(scenario.model.state_dim(), 1);
        assert_eq!(scenario.target.weights, vec![1.0; 3]);
        assert_eq!(scenario.solver.method, Method::Em);
        assert_eq!(scenario.solver.max_iters, 5000);
        assert_abs_diff_eq!(scenario.solver.tol_convergence, 1e-7);
        assert_abs_diff_eq!(scenario.solver.tol_binary, 1e-3);
        assert_abs_diff_eq!(scenario.solver.variance_floor, 1e-12);
        assert_abs_diff_eq!(scenario.model.drift[0], 0.0);
    }

    #[test]
    fn roundtrip_through_render() {
        let scenario = parse_scenario(MINIMAL).unwrap();
        let text = render_scenario(&scenario, &["test scenario"], false);
        let again = parse_scenario(&text).unwrap();
        assert_eq!(scenario, again);
    }

    #[test]
    fn negative_weight_names_field() {
        let text = MINIMAL.replace(
            "ybreve = [[0.5], [1.0], [1.5]]",
            "ybreve = [[0.5], [1.0], [1.5]]\nweights = [1.0, -1.0, 1.0]",
        );
        match parse_scenario(&text) {
            Err(Error::Config(msg)) => assert!(msg.contains("weights[2]"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = MINIMAL.replace("s2 = 0.1", "s2 = 0.1\nbogus = 3");
        assert!(matches!(parse_scenario(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn ragged_matrix_rejected() {
        let text = MINIMAL.replace("a = [[1.0]]", "a = [[1.0], [1.0, 2.0]]");
        match parse_scenario(&text) {
            Err(Error::Config(msg)) => assert!(msg.contains("model.a"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn equal_levels_rejected() {
        let text = MINIMAL.replace("b = 1.0\n\n[solver]", "b = 0.0\n\n[solver]");
        assert!(parse_scenario(&text).is_err());
    }

    #[test]
    fn method_parsed() {
        let text = MINIMAL.replace("s2 = 0.1", "s2 = 0.1\nmethod = \"am\"");
        let scenario = parse_scenario(&text).unwrap();
        assert_eq!(scenario.solver.method, Method::Am);

        let bad = MINIMAL.replace("s2 = 0.1", "s2 = 0.1\nmethod = \"annealing\"");
        assert!(matches!(parse_scenario(&bad), Err(Error::Parse(_))));
    }
}
