//! Flat `key = value` run configurations.
//!
//! One assignment per line; `#` starts a comment; blank lines are skipped.
//! Values are numbers, comma-separated lists, semicolon-separated matrix
//! rows, piecewise-linear curves written as `t:v` pairs, or spectral atoms
//! written as `(c1, c2):w` terms. Coefficient entries can be overridden
//! per index with dotted keys (`mu.2`, `sigma.1.2`, `correlation.1.2`),
//! which accept full curves where the base key takes constants.
//!
//! Keys are checked per run kind: anything unknown, misspelled, or not
//! applicable to the requested run is rejected by name.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use tc_alloc_core::market::{Curve, MarketModel, MatrixCurve, TimeGrid};
use tc_alloc_core::objective::{ObjectiveSpec, PenaltyKind, PenaltySpec, TargetSpec};
use tc_alloc_core::risk::RiskSpec;
use tc_alloc_core::stable::SpectralMeasure;

use crate::{CliError, Result};

/// Default simulation seed for validate runs.
pub const DEFAULT_SEED: u64 = 42;
/// Default simulation path count for validate runs.
pub const DEFAULT_PATHS: usize = 100_000;
/// Default Euler sub-steps per grid interval for validate runs.
pub const DEFAULT_REFINE: usize = 16;
/// Default tail level for the scenario-table run kind.
pub const DEFAULT_RISK_LEVEL: f64 = 0.01;

/// The subcommand a configuration is parsed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    /// Solve the equilibrium and write the strategy table.
    Solve,
    /// Solve, then cross-check closed forms against Monte Carlo.
    Validate,
    /// Scenario allocation ratios against the mean-variance baseline.
    Figure1,
    /// Compare the solver against the mean-variance closed form.
    MvCompare,
}

impl RunKind {
    /// The name used on the command line and in error messages.
    pub fn name(self) -> &'static str {
        match self {
            RunKind::Solve => "solve",
            RunKind::Validate => "validate",
            RunKind::Figure1 => "figure1",
            RunKind::MvCompare => "mv-compare",
        }
    }
}

/// Run-kind specific payload of a parsed configuration.
pub enum RunSpec {
    Solve {
        objective: ObjectiveSpec,
    },
    Validate {
        objective: ObjectiveSpec,
        seed: u64,
        paths: usize,
        refine: usize,
    },
    Figure1 {
        /// Penalty weight shared by the baseline and all scenarios.
        lambda: Curve,
        /// Tail level of the value-at-risk scenarios.
        risk_level: f64,
    },
    MvCompare {
        mu: f64,
        sigma: f64,
        lambda: f64,
    },
}

/// A fully parsed run configuration.
pub struct RunConfig {
    pub model: MarketModel,
    pub grid: TimeGrid,
    pub spec: RunSpec,
}

/// Parses the configuration file at `path` for the given run kind.
pub fn parse_file(kind: RunKind, path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|err| {
        CliError::Config(format!("cannot read config file {}: {err}", path.display()))
    })?;
    parse_str(kind, &text)
}

/// Parses configuration text for the given run kind.
pub fn parse_str(kind: RunKind, text: &str) -> Result<RunConfig> {
    let mut map = KeyMap::parse(text)?;
    let (model, regime) = build_market(&mut map)?;
    let steps = integer(&mut map, "grid_steps", None)?;
    let grid = TimeGrid::new(steps, model.horizon())
        .map_err(|err| CliError::Config(format!("key `grid_steps`: {err}")))?;

    let spec = match kind {
        RunKind::Solve => RunSpec::Solve { objective: build_objective(&mut map)? },
        RunKind::Validate => RunSpec::Validate {
            objective: build_objective(&mut map)?,
            seed: optional_integer(&mut map, "seed", DEFAULT_SEED as usize)? as u64,
            paths: optional_integer(&mut map, "paths", DEFAULT_PATHS)?,
            refine: optional_integer(&mut map, "refine", DEFAULT_REFINE)?,
        },
        RunKind::Figure1 => {
            if regime != RegimeName::Alpha2 {
                return Err(CliError::Config(
                    "run kind figure1 requires regime = alpha2 (the exponential-target \
                     scenarios need a brownian driver)"
                        .into(),
                ));
            }
            let lambda = match map.take("lambda") {
                Some(text) => parse_curve("lambda", &text)?,
                None => return Err(CliError::Config("run kind figure1 requires key `lambda`".into())),
            };
            PenaltySpec::new(PenaltyKind::Identity, lambda.clone())
                .map_err(|err| CliError::Config(format!("key `lambda`: {err}")))?;
            let risk_level = match map.take("risk_level") {
                Some(text) => scalar("risk_level", &text)?,
                None => DEFAULT_RISK_LEVEL,
            };
            RiskSpec::var(risk_level)
                .map_err(|err| CliError::Config(format!("key `risk_level`: {err}")))?;
            RunSpec::Figure1 { lambda, risk_level }
        }
        RunKind::MvCompare => build_mv_compare(&mut map, &model, regime)?,
    };

    map.finish(kind)?;
    Ok(RunConfig { model, grid, spec })
}

/// Regime names accepted by the `regime` key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RegimeName {
    Alpha2,
    Symmetric,
    OneDim,
}

/// Raw assignments with consumption tracking, so leftovers can be
/// rejected by name once a builder has taken everything it understands.
struct KeyMap {
    entries: BTreeMap<String, String>,
}

impl KeyMap {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (index, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`, got `{line}`", index + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", index + 1)));
            }
            if value.is_empty() {
                return Err(CliError::Config(format!("key `{key}` has an empty value")));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(CliError::Config(format!("duplicate key `{key}`")));
            }
        }
        Ok(KeyMap { entries })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect()
    }

    /// Rejects a key that is present but meaningless in this context.
    fn reject(&mut self, key: &str, why: &str) -> Result<()> {
        match self.take(key) {
            Some(_) => Err(CliError::Config(format!("key `{key}` {why}"))),
            None => Ok(()),
        }
    }

    /// Errors on any keys left unconsumed, separating typos from keys that
    /// exist but do not belong to this run kind.
    fn finish(self, kind: RunKind) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let known = [
            "regime", "rate", "horizon", "bound", "assets", "alpha", "c", "up_weight",
            "spectral_atoms", "mu", "sigma", "correlation", "target", "beta", "gamma",
            "penalty", "lambda", "risk", "risk_level", "grid_steps", "seed", "paths", "refine",
        ];
        let mut problems = Vec::new();
        for key in self.entries.keys() {
            let base_known = known.contains(&key.as_str())
                || ["mu.", "sigma.", "correlation."].iter().any(|p| key.starts_with(p));
            if base_known {
                problems.push(format!("key `{key}` does not apply to run kind {}", kind.name()));
            } else {
                problems.push(format!("unknown key `{key}`"));
            }
        }
        Err(CliError::Config(problems.join("; ")))
    }
}

fn scalar(key: &str, text: &str) -> Result<f64> {
    let value: f64 = text
        .parse()
        .map_err(|_| CliError::Config(format!("key `{key}`: expected a number, got `{text}`")))?;
    if !value.is_finite() {
        return Err(CliError::Config(format!("key `{key}`: value must be finite, got `{text}`")));
    }
    Ok(value)
}

fn integer(map: &mut KeyMap, key: &str, default: Option<usize>) -> Result<usize> {
    match map.take(key) {
        Some(text) => text
            .parse()
            .map_err(|_| CliError::Config(format!("key `{key}`: expected a non-negative integer, got `{text}`"))),
        None => default.ok_or_else(|| CliError::Config(format!("missing required key `{key}`"))),
    }
}

fn optional_integer(map: &mut KeyMap, key: &str, default: usize) -> Result<usize> {
    integer(map, key, Some(default))
}

fn require(map: &mut KeyMap, key: &str) -> Result<String> {
    map.take(key).ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
}

fn require_scalar(map: &mut KeyMap, key: &str) -> Result<f64> {
    let text = require(map, key)?;
    scalar(key, &text)
}

/// A curve value: a plain number for a constant, or comma-separated `t:v`
/// pairs for a piecewise-linear curve.
fn parse_curve(key: &str, text: &str) -> Result<Curve> {
    if !text.contains(':') {
        return Ok(Curve::constant(scalar(key, text)?));
    }
    let mut samples = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let (t, v) = part.split_once(':').ok_or_else(|| {
            CliError::Config(format!("key `{key}`: expected `t:v` pairs, got `{part}`"))
        })?;
        samples.push((scalar(key, t.trim())?, scalar(key, v.trim())?));
    }
    Curve::from_samples(&samples).map_err(|err| CliError::Config(format!("key `{key}`: {err}")))
}

fn scalar_list(key: &str, text: &str, len: usize) -> Result<Vec<f64>> {
    let values: Vec<&str> = text.split(',').map(str::trim).collect();
    if values.len() != len {
        return Err(CliError::Config(format!(
            "key `{key}`: expected {len} comma-separated entries, got {}",
            values.len()
        )));
    }
    values.iter().map(|v| scalar(key, v)).collect()
}

/// One trailing 1-based index, as in `mu.2`.
fn asset_index(key: &str, base: &str, dim: usize) -> Result<usize> {
    let rest = &key[base.len() + 1..];
    let index: usize = rest.parse().map_err(|_| {
        CliError::Config(format!("key `{key}`: expected one 1-based asset index, like `{base}.1`"))
    })?;
    if index == 0 || index > dim {
        return Err(CliError::Config(format!(
            "key `{key}`: asset index {index} is out of range 1..={dim}"
        )));
    }
    Ok(index)
}

/// Two trailing 1-based indices, as in `sigma.1.2`.
fn matrix_indices(key: &str, base: &str, dim: usize) -> Result<(usize, usize)> {
    let rest = &key[base.len() + 1..];
    let parts: Vec<&str> = rest.split('.').collect();
    let parse = |p: &str| p.parse::<usize>().ok().filter(|&i| i >= 1 && i <= dim);
    match (parts.as_slice(), dim) {
        ([i, j], _) => match (parse(i), parse(j)) {
            (Some(i), Some(j)) => Ok((i, j)),
            _ => Err(CliError::Config(format!(
                "key `{key}`: matrix indices must lie in 1..={dim}"
            ))),
        },
        _ => Err(CliError::Config(format!(
            "key `{key}`: expected two 1-based indices, like `{base}.1.2`"
        ))),
    }
}

/// Per-asset drift curves from the base `mu` list and `mu.K` overrides.
fn drift_curves(map: &mut KeyMap, dim: usize) -> Result<Vec<Curve>> {
    let mut entries: Vec<Option<Curve>> = vec![None; dim];
    if let Some(text) = map.take("mu") {
        for (slot, value) in entries.iter_mut().zip(scalar_list("mu", &text, dim)?) {
            *slot = Some(Curve::constant(value));
        }
    }
    for key in map.keys_with_prefix("mu.") {
        let index = asset_index(&key, "mu", dim)?;
        let text = map.take(&key).expect("key listed from the map");
        entries[index - 1] = Some(parse_curve(&key, &text)?);
    }
    entries
        .into_iter()
        .enumerate()
        .map(|(i, entry)| {
            entry.ok_or_else(|| {
                CliError::Config(format!("missing drift for asset {}: set `mu` or `mu.{}`", i + 1, i + 1))
            })
        })
        .collect()
}

/// A matrix coefficient from the base key (constant rows separated by `;`)
/// and dotted per-entry curve overrides. Returns None when no key touched
/// the matrix at all.
fn matrix_curve(map: &mut KeyMap, base: &str, dim: usize) -> Result<Option<MatrixCurve>> {
    let mut entries: Vec<Option<Curve>> = vec![None; dim * dim];
    let mut touched = false;
    if let Some(text) = map.take(base) {
        touched = true;
        let rows: Vec<&str> = text.split(';').map(str::trim).collect();
        if rows.len() != dim {
            return Err(CliError::Config(format!(
                "key `{base}`: expected {dim} semicolon-separated rows, got {}",
                rows.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            for (j, value) in scalar_list(base, row, dim)?.into_iter().enumerate() {
                entries[i * dim + j] = Some(Curve::constant(value));
            }
        }
    }
    for key in map.keys_with_prefix(&format!("{base}.")) {
        let (i, j) = matrix_indices(&key, base, dim)?;
        let text = map.take(&key).expect("key listed from the map");
        entries[(i - 1) * dim + (j - 1)] = Some(parse_curve(&key, &text)?);
        touched = true;
    }
    if !touched {
        return Ok(None);
    }
    let mut filled = Vec::with_capacity(dim * dim);
    for (pos, entry) in entries.into_iter().enumerate() {
        let (i, j) = (pos / dim + 1, pos % dim + 1);
        filled.push(entry.ok_or_else(|| {
            CliError::Config(format!("matrix `{base}` is missing entry `{base}.{i}.{j}`"))
        })?);
    }
    let matrix = MatrixCurve::new(dim, filled)
        .map_err(|err| CliError::Config(format!("key `{base}`: {err}")))?;
    Ok(Some(matrix))
}

/// Spectral atoms written as `(c1, c2):w` terms separated by top-level
/// commas (commas inside the parentheses separate components).
fn parse_atoms(key: &str, text: &str) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut terms = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (pos, ch) in text.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth = depth.checked_sub(1).ok_or_else(|| {
                    CliError::Config(format!("key `{key}`: unbalanced parentheses"))
                })?;
            }
            ',' if depth == 0 => {
                terms.push(&text[start..pos]);
                start = pos + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(CliError::Config(format!("key `{key}`: unbalanced parentheses")));
    }
    terms.push(&text[start..]);

    let mut atoms = Vec::new();
    for term in terms {
        let term = term.trim();
        let bad = || CliError::Config(format!("key `{key}`: expected `(c1, c2):w` terms, got `{term}`"));
        let (direction, weight) = term.rsplit_once(':').ok_or_else(bad)?;
        let direction = direction.trim();
        let inner = direction
            .strip_prefix('(')
            .and_then(|d| d.strip_suffix(')'))
            .ok_or_else(bad)?;
        let components: Vec<f64> = inner
            .split(',')
            .map(|c| scalar(key, c.trim()))
            .collect::<Result<_>>()?;
        atoms.push((components, scalar(key, weight.trim())?));
    }
    Ok(atoms)
}

/// Builds the market model, consuming every market key the regime accepts
/// and rejecting market keys that belong to other regimes.
fn build_market(map: &mut KeyMap) -> Result<(MarketModel, RegimeName)> {
    let regime = match require(map, "regime")?.as_str() {
        "alpha2" => RegimeName::Alpha2,
        "symmetric" => RegimeName::Symmetric,
        "one-dim" => RegimeName::OneDim,
        other => {
            return Err(CliError::Config(format!(
                "key `regime` must be alpha2, symmetric, or one-dim, got `{other}`"
            )))
        }
    };
    let rate = require_scalar(map, "rate")?;
    let horizon = require_scalar(map, "horizon")?;
    let bound = require_scalar(map, "bound")?;
    let assets = optional_integer(map, "assets", 1)?;
    if assets == 0 {
        return Err(CliError::Config("key `assets` must be at least 1".into()));
    }
    if regime == RegimeName::OneDim && assets != 1 {
        return Err(CliError::Config("regime one-dim supports a single asset only".into()));
    }

    let drift = drift_curves(map, assets)?;
    let sigma = matrix_curve(map, "sigma", assets)?
        .ok_or_else(|| CliError::Config("missing required key `sigma`".into()))?;

    let config_err = |err: tc_alloc_core::Error| CliError::Config(format!("market: {err}"));
    let model = match regime {
        RegimeName::Alpha2 => {
            map.reject("alpha", "applies only to the symmetric and one-dim regimes")?;
            map.reject("c", "applies only to the symmetric and one-dim regimes")?;
            map.reject("up_weight", "applies only to the one-dim regime")?;
            map.reject("spectral_atoms", "applies only to the symmetric regime")?;
            let correlation = match matrix_curve(map, "correlation", assets)? {
                Some(matrix) => matrix,
                None => {
                    let mut identity = vec![0.0; assets * assets];
                    for i in 0..assets {
                        identity[i * assets + i] = 1.0;
                    }
                    MatrixCurve::constant(assets, &identity).map_err(config_err)?
                }
            };
            MarketModel::alpha2(rate, horizon, bound, drift, sigma, correlation).map_err(config_err)?
        }
        RegimeName::Symmetric => {
            reject_correlation(map)?;
            map.reject("up_weight", "applies only to the one-dim regime")?;
            let alpha = require_scalar(map, "alpha")?;
            let c = require_scalar(map, "c")?;
            match map.take("spectral_atoms") {
                Some(text) => {
                    let atoms = parse_atoms("spectral_atoms", &text)?;
                    let measure = SpectralMeasure::new(&atoms, true)
                        .map_err(|err| CliError::Config(format!("key `spectral_atoms`: {err}")))?;
                    MarketModel::symmetric_stable(rate, horizon, bound, drift, sigma, alpha, c, measure)
                        .map_err(config_err)?
                }
                None if assets == 1 => {
                    let [drift_curve] = <[Curve; 1]>::try_from(drift).expect("one asset");
                    let sigma_curve = sigma.entry(0, 0).clone();
                    MarketModel::symmetric_one_asset(rate, horizon, bound, drift_curve, sigma_curve, alpha, c)
                        .map_err(config_err)?
                }
                None => {
                    return Err(CliError::Config(
                        "regime symmetric with assets >= 2 needs key `spectral_atoms`".into(),
                    ))
                }
            }
        }
        RegimeName::OneDim => {
            reject_correlation(map)?;
            map.reject("spectral_atoms", "applies only to the symmetric regime")?;
            let alpha = require_scalar(map, "alpha")?;
            let c = require_scalar(map, "c")?;
            let up_weight = match map.take("up_weight") {
                Some(text) => scalar("up_weight", &text)?,
                None => 0.5,
            };
            let [drift_curve] = <[Curve; 1]>::try_from(drift).expect("one asset");
            let sigma_curve = sigma.entry(0, 0).clone();
            MarketModel::one_dim(rate, horizon, bound, drift_curve, sigma_curve, alpha, c, up_weight)
                .map_err(config_err)?
        }
    };
    Ok((model, regime))
}

fn reject_correlation(map: &mut KeyMap) -> Result<()> {
    map.reject("correlation", "applies only to the alpha2 regime")?;
    for key in map.keys_with_prefix("correlation.") {
        map.reject(&key, "applies only to the alpha2 regime")?;
    }
    Ok(())
}

/// Builds the objective for solve and validate runs.
fn build_objective(map: &mut KeyMap) -> Result<ObjectiveSpec> {
    let target = match require(map, "target")?.as_str() {
        "identity" => {
            map.reject("beta", "applies only to the exponential target")?;
            map.reject("gamma", "applies only to the exponential target")?;
            TargetSpec::Identity
        }
        "exponential" => {
            let beta = match map.take("beta") {
                Some(text) => scalar("beta", &text)?,
                None => 1.0,
            };
            let gamma = match map.take("gamma") {
                Some(text) => scalar("gamma", &text)?,
                None => 1.0,
            };
            TargetSpec::exponential(beta, gamma)
                .map_err(|err| CliError::Config(format!("exponential target: {err}")))?
        }
        other => {
            return Err(CliError::Config(format!(
                "key `target` must be identity or exponential, got `{other}`"
            )))
        }
    };

    let kind = match require(map, "penalty")?.as_str() {
        "zero" => PenaltyKind::Zero,
        "identity" => PenaltyKind::Identity,
        "positive-square" => PenaltyKind::PositiveSquare,
        other => {
            return Err(CliError::Config(format!(
                "key `penalty` must be zero, identity, or positive-square, got `{other}`"
            )))
        }
    };
    let lambda = match map.take("lambda") {
        // The weight is irrelevant under a zero penalty, so it may be omitted.
        None if matches!(kind, PenaltyKind::Zero) => Curve::constant(1.0),
        None => {
            return Err(CliError::Config(
                "missing required key `lambda` (the penalty weight curve)".into(),
            ))
        }
        Some(text) => parse_curve("lambda", &text)?,
    };
    let penalty =
        PenaltySpec::new(kind, lambda).map_err(|err| CliError::Config(format!("key `lambda`: {err}")))?;

    let risk = match require(map, "risk")?.as_str() {
        "var" => {
            let level = require_scalar(map, "risk_level")?;
            RiskSpec::var(level).map_err(|err| CliError::Config(format!("key `risk_level`: {err}")))?
        }
        "avar" => {
            let level = require_scalar(map, "risk_level")?;
            RiskSpec::avar(level).map_err(|err| CliError::Config(format!("key `risk_level`: {err}")))?
        }
        "sd" => {
            map.reject("risk_level", "applies only to the var and avar risks")?;
            RiskSpec::std_dev()
        }
        other => {
            return Err(CliError::Config(format!(
                "key `risk` must be var, avar, or sd, got `{other}`"
            )))
        }
    };

    Ok(ObjectiveSpec::new(target, penalty, risk))
}

/// Extracts the scalar market parameters the mean-variance closed form
/// needs, insisting on a one-asset brownian market with constant
/// coefficients.
fn build_mv_compare(map: &mut KeyMap, model: &MarketModel, regime: RegimeName) -> Result<RunSpec> {
    if regime != RegimeName::Alpha2 {
        return Err(CliError::Config("run kind mv-compare requires regime = alpha2".into()));
    }
    if model.dim() != 1 {
        return Err(CliError::Config("run kind mv-compare requires assets = 1".into()));
    }
    let mu_curve = model.drift_curve(0);
    let sigma_curve = model.sigma().entry(0, 0);
    if !mu_curve.is_constant() {
        return Err(CliError::Config("run kind mv-compare requires a constant `mu`".into()));
    }
    if !sigma_curve.is_constant() {
        return Err(CliError::Config("run kind mv-compare requires a constant `sigma`".into()));
    }
    let lambda_text = require(map, "lambda")?;
    let lambda = scalar("lambda", &lambda_text)?;
    if !(lambda > 0.0) {
        return Err(CliError::Config(format!("key `lambda` must be positive, got {lambda}")));
    }
    Ok(RunSpec::MvCompare {
        mu: mu_curve.value(0.0),
        sigma: sigma_curve.value(0.0),
        lambda,
    })
}
