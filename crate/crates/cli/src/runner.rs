//! Run kinds behind the command line.
//!
//! Each run parses its configuration, computes, writes CSV tables into the
//! output directory, and reports summary lines. Tables are written with
//! the shortest round-trip float format, so a repeated run with the same
//! configuration and seed produces byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use tc_alloc_core::market::{MarketModel, TimeGrid};
use tc_alloc_core::montecarlo::{empirical_j, empirical_risk, simulate_gains, SimMethod};
use tc_alloc_core::objective::{evaluate_j, ObjectiveSpec, PenaltyKind, PenaltySpec, TargetSpec};
use tc_alloc_core::risk::RiskSpec;
use tc_alloc_core::solver::{
    mean_variance_closed, mean_variance_continuous, solve_equilibrium, EquilibriumResult,
    SolverConfig, StepMethod,
};

use crate::config::{self, RunConfig, RunKind, RunSpec};
use crate::{CliError, Result};

/// Largest acceptable |z| before a validate run fails with exit code 4.
pub const Z_LIMIT: f64 = 4.0;
/// Largest acceptable solver-versus-closed-form deviation for mv-compare.
pub const MV_MATCH_TOL: f64 = 1e-9;
/// Baseline allocations smaller than this make a scenario ratio undefined.
const RATIO_FLOOR: f64 = 1e-12;
/// Seed tag that separates the pathwise simulation stream from the
/// exact-law stream in validate runs.
const EULER_SEED_TAG: u64 = 0x4575_6c65_7250_6174;

/// What a finished run hands back to the caller.
pub struct RunReport {
    /// Files written, with their data row counts (header excluded).
    pub outputs: Vec<(PathBuf, usize)>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
}

/// Parses the configuration and executes the run kind end to end.
pub fn run(
    kind: RunKind,
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    paths_override: Option<usize>,
) -> Result<RunReport> {
    let mut config = config::parse_file(kind, config_path)?;
    match &mut config.spec {
        RunSpec::Validate { seed, paths, .. } => {
            if let Some(value) = seed_override {
                *seed = value;
            }
            if let Some(value) = paths_override {
                *paths = value;
            }
        }
        _ if seed_override.is_some() || paths_override.is_some() => {
            return Err(CliError::Config(format!(
                "--seed and --paths apply only to run kind validate, not {}",
                kind.name()
            )));
        }
        _ => {}
    }
    fs::create_dir_all(out_dir).map_err(|err| {
        CliError::Engine(format!("cannot create output directory {}: {err}", out_dir.display()))
    })?;

    let RunConfig { model, grid, spec } = config;
    match spec {
        RunSpec::Solve { objective } => solve_run(&model, grid, &objective, out_dir),
        RunSpec::Validate { objective, seed, paths, refine } => {
            validate_run(&model, grid, &objective, seed, paths, refine, out_dir)
        }
        RunSpec::Figure1 { lambda, risk_level } => {
            figure1_run(&model, grid, &lambda, risk_level, out_dir)
        }
        RunSpec::MvCompare { mu, sigma, lambda } => {
            mv_compare_run(&model, grid, mu, sigma, lambda, out_dir)
        }
    }
}

/// In-memory CSV table with a fixed column count.
struct Table {
    name: &'static str,
    columns: usize,
    text: String,
    rows: usize,
}

impl Table {
    fn new(name: &'static str, header: &[String]) -> Self {
        Table { name, columns: header.len(), text: header.join(",") + "\n", rows: 0 }
    }

    fn push(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.columns, "row width must match the header of {}", self.name);
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
        self.rows += 1;
    }

    fn write(self, dir: &Path, outputs: &mut Vec<(PathBuf, usize)>) -> Result<()> {
        let path = dir.join(self.name);
        fs::write(&path, self.text)
            .map_err(|err| CliError::Engine(format!("cannot write {}: {err}", path.display())))?;
        outputs.push((path, self.rows));
        Ok(())
    }
}

/// Shortest round-trip float format, with negative zero normalized so
/// that reruns cannot differ in sign-of-zero only.
fn fmt_num(value: f64) -> String {
    if value == 0.0 {
        return "0".into();
    }
    format!("{value}")
}

fn method_name(method: StepMethod) -> &'static str {
    match method {
        StepMethod::CornerRule => "corner-rule",
        StepMethod::LinearSolve => "linear-solve",
        StepMethod::ConeLock => "cone-lock",
        StepMethod::GradientSearch => "gradient-search",
        StepMethod::ValueSearch => "value-search",
    }
}

/// z statistic with a guard for exact (zero variance) agreement.
fn z_score(estimate: f64, closed: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        (estimate - closed) / stderr
    } else if estimate == closed {
        0.0
    } else {
        f64::INFINITY
    }
}

/// The per-step strategy table shared by solve and validate runs: one row
/// per interval with the allocation in force on (t_n, t_{n+1}], the
/// equilibrium value at t_n, and the step diagnostics.
fn strategy_table(model: &MarketModel, result: &EquilibriumResult) -> Table {
    let dim = model.dim();
    let grid = result.strategy.grid();
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|i| format!("u{i}")));
    header.extend(["value", "residual", "method", "iterations"].map(String::from));

    let mut table = Table::new("strategy.csv", &header);
    for n in 0..grid.intervals() {
        let mut row = vec![fmt_num(grid.point(n))];
        row.extend(result.strategy.value_on(n).iter().map(|&u| fmt_num(u)));
        row.push(fmt_num(result.values[n]));
        row.push(fmt_num(result.residuals[n]));
        row.push(method_name(result.steps[n].method).to_string());
        row.push(result.steps[n].iterations.to_string());
        table.push(&row);
    }
    table
}

fn solve_summary(result: &EquilibriumResult) -> Vec<String> {
    let grid = result.strategy.grid();
    let max_residual = result.residuals.iter().fold(0.0_f64, |acc, &r| acc.max(r));
    let mut lines = vec![
        format!("equilibrium value at t = 0: {}", fmt_num(result.values[0])),
        format!(
            "terminal value at t = {}: {}",
            fmt_num(grid.horizon()),
            fmt_num(result.values[grid.intervals()])
        ),
        format!("largest step residual: {:.3e}", max_residual),
    ];
    lines.extend(result.warnings.iter().map(|w| format!("warning: {w}")));
    lines
}

fn solve_run(
    model: &MarketModel,
    grid: TimeGrid,
    objective: &ObjectiveSpec,
    out_dir: &Path,
) -> Result<RunReport> {
    let result = solve_equilibrium(model, objective, grid, &SolverConfig::default())?;
    let mut outputs = Vec::new();
    strategy_table(model, &result).write(out_dir, &mut outputs)?;
    Ok(RunReport { outputs, summary: solve_summary(&result) })
}

fn validate_run(
    model: &MarketModel,
    grid: TimeGrid,
    objective: &ObjectiveSpec,
    seed: u64,
    paths: usize,
    refine: usize,
    out_dir: &Path,
) -> Result<RunReport> {
    if paths == 0 {
        return Err(CliError::Config("`paths` must be at least 1".into()));
    }
    if refine == 0 {
        return Err(CliError::Config("key `refine` must be at least 1".into()));
    }
    let result = solve_equilibrium(model, objective, grid, &SolverConfig::default())?;
    let strategy = &result.strategy;

    let exact = simulate_gains(model, strategy, 0, paths, seed, SimMethod::ExactLaw)?;
    let euler = simulate_gains(
        model,
        strategy,
        0,
        paths,
        seed ^ EULER_SEED_TAG,
        SimMethod::EulerPath { refine },
    )?;

    // Each check pits a closed-form quantity against its Monte Carlo
    // estimate; the last one pits the two samplers against each other.
    let moments = model.gain_moments(strategy, 0)?;
    let mut checks = vec![("mean_gain", moments.a, exact.mean, exact.mean_stderr)];
    let rho = objective.risk.rho_closed(model, strategy, 0)?;
    let (rho_hat, rho_se) = empirical_risk(&exact.samples, &objective.risk)?;
    checks.push(("risk", rho, rho_hat, rho_se));
    let j = evaluate_j(objective, model, strategy, 0)?;
    let (j_hat, j_se) = empirical_j(&exact.samples, objective, grid.point(0))?;
    checks.push(("objective", j, j_hat, j_se));
    let gap_se = exact.mean_stderr.hypot(euler.mean_stderr);
    checks.push(("euler_gap", exact.mean, euler.mean, gap_se));

    let header = ["check", "closed", "estimate", "stderr", "z"].map(String::from);
    let mut table = Table::new("validation.csv", &header);
    let mut worst: (f64, &str) = (0.0, "none");
    for (name, closed, estimate, stderr) in &checks {
        let z = z_score(*estimate, *closed, *stderr);
        if z.abs() > worst.0 {
            worst = (z.abs(), name);
        }
        table.push(&[
            name.to_string(),
            fmt_num(*closed),
            fmt_num(*estimate),
            fmt_num(*stderr),
            fmt_num(z),
        ]);
    }

    let mut outputs = Vec::new();
    strategy_table(model, &result).write(out_dir, &mut outputs)?;
    table.write(out_dir, &mut outputs)?;

    if !(worst.0 <= Z_LIMIT) {
        return Err(CliError::Validation(format!(
            "check {} deviates by |z| = {:.2} (limit {Z_LIMIT}); see {}",
            worst.1,
            worst.0,
            out_dir.join("validation.csv").display()
        )));
    }
    let mut summary = solve_summary(&result);
    summary.push(format!(
        "{} paths, seed {seed}: largest |z| = {:.2} on check {} (limit {Z_LIMIT})",
        paths, worst.0, worst.1
    ));
    Ok(RunReport { outputs, summary })
}

/// Scenario set for the ratio table: exponential and identity targets
/// under no penalty, a linear penalty, and the positive-square penalty,
/// each against the mean-variance baseline solved from the same market.
fn figure1_run(
    model: &MarketModel,
    grid: TimeGrid,
    lambda: &tc_alloc_core::market::Curve,
    risk_level: f64,
    out_dir: &Path,
) -> Result<RunReport> {
    let solver = SolverConfig::default();
    let baseline_objective = ObjectiveSpec::new(
        TargetSpec::Identity,
        PenaltySpec::new(PenaltyKind::PositiveSquare, lambda.clone())?,
        RiskSpec::std_dev(),
    );
    let baseline = solve_equilibrium(model, &baseline_objective, grid, &solver)?;

    let scenarios: [(&str, bool, PenaltyKind); 5] = [
        ("exp_no_penalty", true, PenaltyKind::Zero),
        ("exp_linear_var", true, PenaltyKind::Identity),
        ("exp_square_var", true, PenaltyKind::PositiveSquare),
        ("id_linear_var", false, PenaltyKind::Identity),
        ("id_square_var", false, PenaltyKind::PositiveSquare),
    ];
    let mut curves = Vec::with_capacity(scenarios.len());
    for (name, exponential, kind) in &scenarios {
        let target = if *exponential {
            TargetSpec::exponential(1.0, 1.0)?
        } else {
            TargetSpec::Identity
        };
        let risk = if matches!(kind, PenaltyKind::Zero) {
            RiskSpec::std_dev()
        } else {
            RiskSpec::var(risk_level)?
        };
        let objective =
            ObjectiveSpec::new(target, PenaltySpec::new(kind.clone(), lambda.clone())?, risk);
        curves.push((*name, solve_equilibrium(model, &objective, grid, &solver)?));
    }

    let mut header = vec!["t".to_string(), "mv_base".to_string()];
    header.extend(scenarios.iter().map(|(name, ..)| name.to_string()));
    let mut table = Table::new("ratios.csv", &header);
    for n in 0..grid.intervals() {
        let base = baseline.strategy.value_on(n)[0];
        if base.abs() < RATIO_FLOOR {
            return Err(CliError::Engine(format!(
                "the mean-variance baseline allocation vanishes on step {n}; ratios are undefined"
            )));
        }
        let mut row = vec![fmt_num(grid.point(n)), fmt_num(base)];
        row.extend(curves.iter().map(|(_, result)| fmt_num(result.strategy.value_on(n)[0] / base)));
        table.push(&row);
    }

    let last = grid.intervals() - 1;
    let final_ratios: Vec<String> = curves
        .iter()
        .map(|(name, result)| {
            let ratio = result.strategy.value_on(last)[0] / baseline.strategy.value_on(last)[0];
            format!("{name} = {:.4}", ratio)
        })
        .collect();
    let mut outputs = Vec::new();
    table.write(out_dir, &mut outputs)?;
    let mut summary = vec![format!(
        "scenario-to-baseline allocation ratios on the last step: {}",
        final_ratios.join(", ")
    )];
    for (name, result) in &curves {
        let clipped = result.steps.iter().filter(|step| step.box_bound).count();
        if clipped > 0 {
            summary.push(format!(
                "note: {name} sits on the allocation bound on {clipped} of {} steps",
                grid.intervals()
            ));
        }
        for warning in &result.warnings {
            summary.push(format!("warning ({name}): {warning}"));
        }
    }
    summary.extend(baseline.warnings.iter().map(|w| format!("warning (mv_base): {w}")));
    Ok(RunReport { outputs, summary })
}

fn mv_compare_run(
    model: &MarketModel,
    grid: TimeGrid,
    mu: f64,
    sigma: f64,
    lambda: f64,
    out_dir: &Path,
) -> Result<RunReport> {
    let objective = ObjectiveSpec::new(
        TargetSpec::Identity,
        PenaltySpec::constant(PenaltyKind::PositiveSquare, lambda)?,
        RiskSpec::std_dev(),
    );
    let solved = solve_equilibrium(model, &objective, grid, &SolverConfig::default())?;
    let closed = mean_variance_closed(mu, model.rate(), sigma, lambda, grid)?;

    let header = ["t", "u_solver", "u_closed", "u_continuous", "abs_diff"].map(String::from);
    let mut table = Table::new("mv_compare.csv", &header);
    let mut max_diff = 0.0_f64;
    for n in 0..grid.intervals() {
        let t = grid.point(n);
        let u_solver = solved.strategy.value_on(n)[0];
        let u_closed = closed.value_on(n)[0];
        let u_continuous =
            mean_variance_continuous(mu, model.rate(), sigma, lambda, t, model.horizon())?;
        let diff = (u_solver - u_closed).abs();
        max_diff = max_diff.max(diff);
        table.push(&[
            fmt_num(t),
            fmt_num(u_solver),
            fmt_num(u_closed),
            fmt_num(u_continuous),
            fmt_num(diff),
        ]);
    }

    let mut outputs = Vec::new();
    table.write(out_dir, &mut outputs)?;
    if !(max_diff <= MV_MATCH_TOL) {
        return Err(CliError::Validation(format!(
            "solver deviates from the mean-variance closed form by {max_diff:.3e} \
             (limit {MV_MATCH_TOL:.0e}); see {}",
            out_dir.join("mv_compare.csv").display()
        )));
    }
    Ok(RunReport {
        outputs,
        summary: vec![format!(
            "largest |solver - closed| deviation: {max_diff:.3e} (limit {MV_MATCH_TOL:.0e})"
        )],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_zero_prints_as_plain_zero() {
        assert_eq!(fmt_num(-0.0), "0", "sign of zero is normalized");
        assert_eq!(fmt_num(0.25), "0.25", "shortest round-trip format");
        assert_eq!(fmt_num(-1.5e-9), "-0.0000000015", "negative values keep their sign");
    }

    #[test]
    fn z_scores_guard_exact_agreement() {
        assert_eq!(z_score(1.0, 1.0, 0.0), 0.0, "exact agreement with zero spread is fine");
        assert!(z_score(1.0, 2.0, 0.0).is_infinite(), "disagreement with zero spread is infinite");
        let z = z_score(1.5, 1.0, 0.25);
        assert!((z - 2.0).abs() < 1e-15, "plain studentized difference, got {z}");
    }

    #[test]
    fn tables_track_row_counts() {
        let mut table = Table::new("x.csv", &["a".to_string(), "b".to_string()]);
        table.push(&["1".to_string(), "2".to_string()]);
        assert_eq!(table.rows, 1, "one data row");
        assert_eq!(table.text, "a,b\n1,2\n", "header plus row");
    }
}
