//! Monte Carlo simulation of strategy gains and empirical estimators.
//!
//! Two samplers target the same distribution. [`SimMethod::ExactLaw`] draws
//! from the closed one-dimensional representation `gain = a + b Z` with `Z`
//! the standardized driver, so its only error is statistical.
//! [`SimMethod::EulerPath`] instead integrates the gain pathwise on a
//! refined grid with right-endpoint coefficients, never touching the
//! decomposition; agreement between the two validates the `a`/`b` closed
//! forms and the stability additivity they rely on.
//!
//! The empirical estimators ([`empirical_risk`], [`empirical_j`]) mirror
//! the closed-form risk and objective evaluations statistic by statistic,
//! which makes them independent cross-checks rather than reimplementations.
//!
//! Determinism: paths are partitioned into fixed chunks of
//! [`SAMPLE_CHUNK`](crate::stable::SAMPLE_CHUNK) draws; chunk `j` comes from
//! ChaCha8 stream `j` of the caller's seed, so results are bitwise
//! reproducible, independent of the worker count, and stable under
//! enlarging `n_paths` (a longer run extends a shorter one). Bootstrap
//! standard errors use their own fixed internal seed and are equally
//! deterministic.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::market::{Invariance, MarketModel, Regime, Strategy};
use crate::objective::{ObjectiveSpec, PenaltyKind};
use crate::risk::{RiskKind, RiskSpec};
use crate::stable::{substream, SAMPLE_CHUNK};
use crate::{linalg, Error, Result};

/// Resamples drawn when estimating an estimator's standard error.
const BOOTSTRAP_REPS: usize = 200;

/// Fixed seed of the internal bootstrap resampler, deliberately independent
/// of the caller's simulation seed so that repeated calls on the same
/// sample vector give identical standard errors.
const BOOTSTRAP_SEED: u64 = 0x0b0075_7261_7053;

/// How gains are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMethod {
    /// Draw `a + b Z` directly from the gain decomposition.
    ExactLaw,
    /// Integrate the gain along simulated driver paths, each grid interval
    /// split into `refine` equal Euler sub-steps with right-endpoint
    /// coefficients. Converges to the exact law as `refine` grows.
    EulerPath { refine: usize },
}

/// Simulated gains plus their first two sample moments.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub samples: Vec<f64>,
    pub method: SimMethod,
    pub seed: u64,
    pub n_paths: usize,
    pub mean: f64,
    /// Standard error of the mean, `sd / sqrt(n)`.
    pub mean_stderr: f64,
    /// Sample standard deviation. For stable drivers with alpha < 2 the
    /// population quantity is infinite; the sample value is then only a
    /// diagnostic, not an estimator.
    pub sd: f64,
}

/// Simulates `n_paths` gains of `strategy` over `(t_from, T]`.
pub fn simulate_gains(
    model: &MarketModel,
    strategy: &Strategy,
    from: usize,
    n_paths: usize,
    seed: u64,
    method: SimMethod,
) -> Result<SimResult> {
    model.check_strategy(strategy)?;
    let grid = strategy.grid();
    if from > grid.intervals() {
        return Err(Error::Invalid(format!(
            "simulation start index {from} is past the final grid point"
        )));
    }
    if n_paths == 0 {
        return Err(Error::Invalid("simulation needs at least one path".into()));
    }
    let samples = match method {
        SimMethod::ExactLaw => {
            let moments = model.gain_moments(strategy, from)?;
            if moments.b == 0.0 {
                vec![moments.a; n_paths]
            } else {
                let z = model.law().standardized().sample_1d(1.0, n_paths, seed)?;
                z.into_iter().map(|zi| moments.a + moments.b * zi).collect()
            }
        }
        SimMethod::EulerPath { refine } => euler_paths(model, strategy, from, n_paths, seed, refine)?,
    };
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = if samples.len() > 1 {
        (samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(SimResult {
        samples,
        method,
        seed,
        n_paths,
        mean,
        mean_stderr: sd / n.sqrt(),
        sd,
    })
}

/// One Euler sub-step: deterministic drift advance plus the coefficient
/// vector that contracts against the driver increment.
struct SubStep {
    drift: f64,
    coeff: Vec<f64>,
    h: f64,
}

fn euler_paths(
    model: &MarketModel,
    strategy: &Strategy,
    from: usize,
    n_paths: usize,
    seed: u64,
    refine: usize,
) -> Result<Vec<f64>> {
    if refine == 0 {
        return Err(Error::Invalid("euler refinement must be at least 1".into()));
    }
    let grid = strategy.grid();
    let dim = model.dim();
    let brownian = model.regime() == Regime::Alpha2;
    // Coefficients are path-independent; precompute them per sub-step. The
    // right endpoint fixes the convention for discontinuous curves.
    let mut steps: Vec<SubStep> = Vec::with_capacity((grid.intervals() - from) * refine);
    for j in from..grid.intervals() {
        let u = strategy.value_on(j);
        let (t0, t1) = (grid.point(j), grid.point(j + 1));
        let h = (t1 - t0) / refine as f64;
        for k in 0..refine {
            let s1 = t0 + (k as f64 + 1.0) * h;
            let drift = model.m_at(u, s1, Invariance::Cash) * h;
            let disc = (model.rate() * (model.horizon() - s1)).exp();
            let sig = model.sigma().at(s1);
            let x: Vec<f64> = (0..dim)
                .map(|col| {
                    (0..dim).map(|i| u[i] * sig[i * dim + col]).sum::<f64>() * disc
                })
                .collect();
            let coeff = if brownian {
                // Correlated increment chol(R) xi sqrt(h); contracting with x
                // is the same as contracting xi with chol(R)^T x.
                let r = model.correlation().expect("alpha2 carries a correlation").at(s1);
                let chol = linalg::cholesky(dim, &r)
                    .map_err(|e| Error::Invalid(format!("correlation at t = {s1}: {e}")))?;
                let mut v = vec![0.0; dim];
                for row in 0..dim {
                    for col in 0..dim {
                        v[col] += x[row] * chol[row * dim + col];
                    }
                }
                let root_h = h.sqrt();
                v.iter_mut().for_each(|e| *e *= root_h);
                v
            } else {
                // Stable increments are drawn at time h directly; the law
                // applies the h^{1/alpha} self-similar scaling itself.
                x
            };
            steps.push(SubStep { drift, coeff, h });
        }
    }
    let law = model.law().clone();
    let chunks: Vec<Vec<f64>> = (0..n_paths.div_ceil(SAMPLE_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * SAMPLE_CHUNK;
            let hi = ((chunk + 1) * SAMPLE_CHUNK).min(n_paths);
            let mut rng = substream(seed, chunk as u64);
            let mut buf = vec![0.0; dim];
            let mut out = Vec::with_capacity(hi - lo);
            for _ in lo..hi {
                let mut gain = 0.0;
                for st in &steps {
                    gain += st.drift;
                    if brownian {
                        for c in &st.coeff {
                            let xi: f64 = StandardNormal.sample(&mut rng);
                            gain += c * xi;
                        }
                    } else {
                        law.draw_into(&mut rng, st.h, &mut buf);
                        gain += st.coeff.iter().zip(&buf).map(|(c, z)| c * z).sum::<f64>();
                    }
                }
                out.push(gain);
            }
            out
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Empirical estimate of a risk specification on simulated gains, with a
/// bootstrap standard error (fixed internal seed, [`BOOTSTRAP_REPS`]
/// resamples).
///
/// The estimators mirror the closed forms: value-at-risk is minus the
/// lower empirical p-quantile of the gains, average value-at-risk is minus
/// the mean of the lowest `floor(p n) + 1` gains, standard deviation is the
/// sample standard deviation. Custom risk measures carry no empirical
/// counterpart and are rejected.
pub fn empirical_risk(samples: &[f64], spec: &RiskSpec) -> Result<(f64, f64)> {
    let n = samples.len();
    match spec.kind() {
        RiskKind::ValueAtRisk(p) | RiskKind::AverageValueAtRisk(p) => {
            let needed = (10.0 / p).ceil() as usize;
            if n < needed {
                return Err(Error::InsufficientSamples(format!(
                    "tail level {p} needs at least {needed} samples, got {n}"
                )));
            }
        }
        RiskKind::StdDev => {
            if n < 10 {
                return Err(Error::InsufficientSamples(format!(
                    "standard deviation needs at least 10 samples, got {n}"
                )));
            }
        }
        RiskKind::Custom { .. } => {
            return Err(Error::Unsupported(
                "custom risk measures have no empirical estimator".into(),
            ))
        }
    }
    let mut scratch = samples.to_vec();
    let point = risk_statistic(spec.kind(), &mut scratch);
    let reps: Vec<f64> = (0..BOOTSTRAP_REPS)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(BOOTSTRAP_SEED, rep as u64);
            let mut resample: Vec<f64> =
                (0..n).map(|_| samples[rng.gen_range(0..n)]).collect();
            risk_statistic(spec.kind(), &mut resample)
        })
        .collect();
    let rep_mean = reps.iter().sum::<f64>() / BOOTSTRAP_REPS as f64;
    let stderr = (reps.iter().map(|x| (x - rep_mean) * (x - rep_mean)).sum::<f64>()
        / (BOOTSTRAP_REPS as f64 - 1.0))
        .sqrt();
    Ok((point, stderr))
}

/// The point statistic behind [`empirical_risk`]; reorders `work` in place.
fn risk_statistic(kind: &RiskKind, work: &mut [f64]) -> f64 {
    let n = work.len();
    match kind {
        RiskKind::ValueAtRisk(p) => {
            let k = ((p * n as f64).floor() as usize).min(n - 1);
            let (_, pivot, _) = work.select_nth_unstable_by(k, f64::total_cmp);
            -*pivot
        }
        RiskKind::AverageValueAtRisk(p) => {
            let k = ((p * n as f64).floor() as usize).min(n - 1);
            work.select_nth_unstable_by(k, f64::total_cmp);
            let tail_mean = work[..=k].iter().sum::<f64>() / (k + 1) as f64;
            -tail_mean
        }
        RiskKind::StdDev => {
            let mean = work.iter().sum::<f64>() / n as f64;
            (work.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        }
        RiskKind::Custom { .. } => unreachable!("rejected before the statistic is reached"),
    }
}

/// Empirical estimate of the objective `E T(gain) - lambda(t) F(rho)` from
/// simulated gains, with a propagated standard error.
///
/// The target mean and the risk estimate are treated as independent; the
/// penalty contribution is linearized through `F'` at the point estimate.
pub fn empirical_j(samples: &[f64], objective: &ObjectiveSpec, t: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "objective estimation needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mut mean = 0.0;
    for &x in samples {
        mean += objective.target.value(x);
    }
    mean /= n;
    let var = samples
        .iter()
        .map(|&x| {
            let d = objective.target.value(x) - mean;
            d * d
        })
        .sum::<f64>()
        / (n - 1.0);
    let mean_se = (var / n).sqrt();
    if matches!(objective.penalty.kind(), PenaltyKind::Zero) {
        return Ok((mean, mean_se));
    }
    let (rho, rho_se) = empirical_risk(samples, &objective.risk)?;
    let lambda = objective.penalty.lambda_at(t);
    let j = mean - lambda * objective.penalty.kind().value(rho);
    let penalty_se = lambda * objective.penalty.kind().deriv(rho) * rho_se;
    Ok((j, (mean_se * mean_se + penalty_se * penalty_se).sqrt()))
}

/// Two-sample Kolmogorov-Smirnov statistic together with its 1% critical
/// value `1.6276 sqrt((n + m) / (n m))`.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Invalid("KS test needs non-empty samples".into()));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let mut stat = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        let gap = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        stat = stat.max(gap);
    }
    let crit = 1.6276 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt();
    Ok((stat, crit))
}

// =====================================================================
// tests
// =====================================================================
