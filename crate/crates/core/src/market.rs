//! Market specification, time grids, deterministic strategies, and the gain
//! decomposition.
//!
//! The market holds d risky assets with deterministic drift and volatility
//! curves driven by an alpha-stable process, plus a riskless account at rate
//! r. For a deterministic piecewise-constant strategy u the discounted
//! terminal gain decomposes in distribution as `a + b * Z` with Z the
//! standardized driver,
//!
//! ```text
//!   a = integral over (t,T] of u^T (mu_s - r) e^{r(T-s)} ds
//!   b = ( integral over (t,T] of w_s(u)^alpha ds )^{1/alpha}
//! ```
//!
//! where the scale integrand w depends on the regime:
//!
//! ```text
//!   alpha = 2:        sqrt(u^T sigma_s R_s sigma_s^T u) * e^{r(T-s)}
//!   symmetric stable: (sum_k weight_k |<sigma_s^T u, v_k>|^alpha)^{1/alpha} * e^{r(T-s)}
//!   one-dimensional:  u^1 sigma_s^{11} e^{r(T-s)}      (u >= 0 enforced)
//! ```
//!
//! All quadrature is 16-node Gauss-Legendre per panel, with panels split at
//! the curves' sample points, so constant-coefficient models are integrated
//! exactly up to round-off.

use crate::linalg;
use crate::quad;
use crate::stable::{SpectralMeasure, StableKind, StableLaw};
use crate::{Error, Result};

/// Deterministic coefficient curve: a constant or a piecewise-linear
/// interpolation of samples, extended constantly outside the sample range
/// (which keeps it continuous on any horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Curve {
    pub fn constant(v: f64) -> Self {
        Curve {
            times: vec![0.0],
            values: vec![v],
        }
    }

    /// Piecewise-linear curve through `(t, v)` samples; times must be finite
    /// and strictly increasing.
    pub fn from_samples(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("curve needs at least one sample".into()));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Invalid(format!(
                    "curve sample times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if samples.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::Invalid("curve samples must be finite".into()));
        }
        Ok(Curve {
            times: samples.iter().map(|s| s.0).collect(),
            values: samples.iter().map(|s| s.1).collect(),
        })
    }

    pub fn is_constant(&self) -> bool {
        self.times.len() == 1 || self.values.windows(2).all(|w| w[0] == w[1])
    }

    pub fn value(&self, t: f64) -> f64 {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        // partition_point returns the first index with times[i] > t; the
        // segment [i-1, i] contains t.
        let i = self.times.partition_point(|&x| x <= t);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Right-hand slope at t (left-hand at the final sample); zero for
    /// constants and outside the sample range.
    pub fn slope_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if n == 1 || t < self.times[0] || t > self.times[n - 1] {
            return 0.0;
        }
        let i = self.times.partition_point(|&x| x <= t).clamp(1, n - 1);
        (self.values[i] - self.values[i - 1]) / (self.times[i] - self.times[i - 1])
    }

    /// Sample times, the potential kink locations for quadrature splitting.
    pub fn breakpoints(&self) -> &[f64] {
        if self.times.len() == 1 {
            &[]
        } else {
            &self.times
        }
    }
}

/// Square matrix of coefficient curves, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCurve {
    dim: usize,
    entries: Vec<Curve>,
}

impl MatrixCurve {
    pub fn new(dim: usize, entries: Vec<Curve>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::Invalid(format!(
                "matrix curve needs dim^2 entries, got {} for dim {dim}",
                entries.len()
            )));
        }
        Ok(MatrixCurve { dim, entries })
    }

    /// Constant matrix from row-major values.
    pub fn constant(dim: usize, values: &[f64]) -> Result<Self> {
        MatrixCurve::new(dim, values.iter().map(|&v| Curve::constant(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> &Curve {
        &self.entries[i * self.dim + j]
    }

    /// Row-major matrix value at time t.
    pub fn at(&self, t: f64) -> Vec<f64> {
        self.entries.iter().map(|c| c.value(t)).collect()
    }

    fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().flat_map(|c| c.breakpoints().iter().copied())
    }
}

/// Driver regime; decides which branch of the scale integrand w applies and
/// which strategy constraints hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Brownian driver (alpha = 2) with a correlation matrix curve.
    Alpha2,
    /// Multivariate symmetric stable driver, alpha < 2.
    Symmetric,
    /// One-dimensional stable driver, possibly skewed; forces d = 1 and
    /// non-negative strategies.
    OneDim,
}

/// Uniform grid t_k = k T / N, k = 0..=N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    n: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(n: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("time grid needs at least one interval".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Invalid(format!(
                "time grid horizon must be positive, got {horizon}"
            )));
        }
        Ok(TimeGrid { n, horizon })
    }

    pub fn intervals(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn delta(&self) -> f64 {
        self.horizon / self.n as f64
    }

    /// Grid point t_k; exact at both ends by construction.
    pub fn point(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n, "grid point index out of range");
        if k == self.n {
            self.horizon
        } else {
            self.horizon * k as f64 / self.n as f64
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(|k| self.point(k))
    }
}

/// Piecewise-constant deterministic strategy: `values[k]` is the allocation
/// on the half-open interval (t_k, t_{k+1}], making the path left-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    grid: TimeGrid,
    values: Vec<Vec<f64>>,
}

impl Strategy {
    pub fn new(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != grid.intervals() {
            return Err(Error::Invalid(format!(
                "strategy needs one value per interval: {} values for {} intervals",
                values.len(),
                grid.intervals()
            )));
        }
        let dim = values[0].len();
        if dim == 0 {
            return Err(Error::Invalid("strategy values need dimension >= 1".into()));
        }
        for (k, v) in values.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Invalid(format!(
                    "strategy value {k} has dimension {} (expected {dim})",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invalid(format!("strategy value {k} is not finite")));
            }
        }
        Ok(Strategy { grid, values })
    }

    /// Same allocation on every interval.
    pub fn constant(grid: TimeGrid, u: Vec<f64>) -> Result<Self> {
        let n = grid.intervals();
        Strategy::new(grid, vec![u; n])
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn value_on(&self, interval: usize) -> &[f64] {
        &self.values[interval]
    }

    pub fn set_value(&mut self, interval: usize, u: Vec<f64>) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::Invalid(format!(
                "replacement value has dimension {} (expected {})",
                u.len(),
                self.dim()
            )));
        }
        self.values[interval] = u;
        Ok(())
    }

    /// Value of the left-continuous extension at time t: the interval with
    /// t in (t_k, t_{k+1}] wins; t = 0 takes the first interval's value.
    pub fn value_at(&self, t: f64) -> &[f64] {
        let delta = self.grid.delta();
        let k = ((t / delta).ceil() as usize).saturating_sub(1);
        &self.values[k.min(self.values.len() - 1)]
    }
}

/// Drift and scale of the terminal gain over (t, T]: gain ~ a + b Z.
/// The drift is always the cash-invariant integral; shift-invariant risk
/// evaluation zeroes it downstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainMoments {
    pub a: f64,
    pub b: f64,
}

/// Which drift integrand m uses: cash-invariant risk measures see the full
/// excess drift, shift-invariant ones see zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invariance {
    Cash,
    Shift,
}

/// The market: coefficient curves, driver law, horizon, strategy bound.
#[derive(Debug, Clone)]
pub struct MarketModel {
    dim: usize,
    rate: f64,
    horizon: f64,
    bound: f64,
    drift: Vec<Curve>,
    sigma: MatrixCurve,
    correlation: Option<MatrixCurve>,
    law: StableLaw,
    regime: Regime,
    breakpoints: Vec<f64>,
}

impl MarketModel {
    /// Brownian-driver market (alpha = 2) with a correlation curve.
    pub fn alpha2(
        rate: f64,
        horizon: f64,
        bound: f64,
        drift: Vec<Curve>,
        sigma: MatrixCurve,
        correlation: MatrixCurve,
    ) -> Result<Self> {
        let law = StableLaw::brownian(drift.len().max(1))?;
        MarketModel::build(Regime::Alpha2, rate, horizon, bound, drift, sigma, Some(correlation), law)
    }

    /// Multivariate symmetric stable market, alpha in (1,2), with a spectral
    /// measure for the driver.
    pub fn symmetric_stable(
        rate: f64,
        horizon: f64,
        bound: f64,
        drift: Vec<Curve>,
        sigma: MatrixCurve,
        alpha: f64,
        c: f64,
        measure: SpectralMeasure,
    ) -> Result<Self> {
        let law = StableLaw::spectral(alpha, c, measure)?;
        MarketModel::build(Regime::Symmetric, rate, horizon, bound, drift, sigma, None, law)
    }

    /// One-dimensional symmetric stable market without an explicit spectral
    /// measure (equivalent to atoms {+1, -1} with weight 1/2 each).
    pub fn symmetric_one_asset(
        rate: f64,
        horizon: f64,
        bound: f64,
        drift: Curve,
        sigma: Curve,
        alpha: f64,
        c: f64,
    ) -> Result<Self> {
        let law = StableLaw::symmetric(alpha, c)?;
        let sigma = MatrixCurve::new(1, vec![sigma])?;
        MarketModel::build(Regime::Symmetric, rate, horizon, bound, vec![drift], sigma, None, law)
    }

    /// One-dimensional regime with up-jump weight `up_weight` (skew p - q =
    /// 2 up_weight - 1); strategies must be non-negative.
    pub fn one_dim(
        rate: f64,
        horizon: f64,
        bound: f64,
        drift: Curve,
        sigma: Curve,
        alpha: f64,
        c: f64,
        up_weight: f64,
    ) -> Result<Self> {
        let law = StableLaw::skewed(alpha, c, up_weight)?;
        let sigma = MatrixCurve::new(1, vec![sigma])?;
        MarketModel::build(Regime::OneDim, rate, horizon, bound, vec![drift], sigma, None, law)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        regime: Regime,
        rate: f64,
        horizon: f64,
        bound: f64,
        drift: Vec<Curve>,
        sigma: MatrixCurve,
        correlation: Option<MatrixCurve>,
        law: StableLaw,
    ) -> Result<Self> {
        let dim = drift.len();
        if dim == 0 {
            return Err(Error::Invalid("market needs at least one asset".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        if !(bound > 0.0) {
            return Err(Error::Invalid(format!(
                "strategy bound must be positive, got {bound}"
            )));
        }
        if !rate.is_finite() {
            return Err(Error::Invalid("rate must be finite".into()));
        }
        if sigma.dim() != dim {
            return Err(Error::Invalid(format!(
                "sigma has dimension {}, drift has {dim}",
                sigma.dim()
            )));
        }
        if law.dim() != dim {
            return Err(Error::Invalid(format!(
                "driver law has dimension {}, market has {dim}",
                law.dim()
            )));
        }
        match regime {
            Regime::Alpha2 => {
                if !matches!(law.kind(), StableKind::Brownian { .. }) {
                    return Err(Error::Invalid("alpha2 regime needs a brownian driver".into()));
                }
                let corr = correlation
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("alpha2 regime needs a correlation matrix".into()))?;
                if corr.dim() != dim {
                    return Err(Error::Invalid(format!(
                        "correlation has dimension {}, market has {dim}",
                        corr.dim()
                    )));
                }
            }
            Regime::Symmetric => match law.kind() {
                StableKind::Spectral(_) => {}
                StableKind::Symmetric1d if dim == 1 => {}
                _ => {
                    return Err(Error::Invalid(
                        "symmetric regime needs a spectral or symmetric 1-d driver".into(),
                    ))
                }
            },
            Regime::OneDim => {
                if dim != 1 {
                    return Err(Error::Invalid("one-dim regime requires d = 1".into()));
                }
                if !matches!(
                    law.kind(),
                    StableKind::Symmetric1d | StableKind::Skewed1d { .. }
                ) {
                    return Err(Error::Invalid(
                        "one-dim regime needs a 1-d stable driver".into(),
                    ));
                }
            }
        }

        let mut breakpoints: Vec<f64> = drift
            .iter()
            .flat_map(|c| c.breakpoints().iter().copied())
            .chain(sigma.breakpoints())
            .chain(correlation.iter().flat_map(|m| m.breakpoints()))
            .filter(|t| *t > 0.0 && *t < horizon)
            .collect();
        breakpoints.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
        breakpoints.dedup();

        let model = MarketModel {
            dim,
            rate,
            horizon,
            bound,
            drift,
            sigma,
            correlation,
            law,
            regime,
            breakpoints,
        };
        model.audit_coefficients()?;
        Ok(model)
    }

    /// Checks symmetry, positive diagonal, and positive definiteness of
    /// sigma (and the correlation under alpha2) at the curves' breakpoints
    /// and a uniform audit grid.
    fn audit_coefficients(&self) -> Result<()> {
        let mut times: Vec<f64> = (0..=32).map(|k| self.horizon * k as f64 / 32.0).collect();
        times.extend_from_slice(&self.breakpoints);
        for &t in &times {
            let s = self.sigma.at(t);
            for i in 0..self.dim {
                if !(s[i * self.dim + i] > 0.0) {
                    return Err(Error::Invalid(format!(
                        "sigma diagonal entry ({i},{i}) is not positive at t = {t}"
                    )));
                }
                for j in 0..i {
                    if (s[i * self.dim + j] - s[j * self.dim + i]).abs() > 1e-12 {
                        return Err(Error::Invalid(format!(
                            "sigma is not symmetric at t = {t} (entries ({i},{j})/({j},{i}))"
                        )));
                    }
                }
            }
            linalg::cholesky(self.dim, &s).map_err(|_| {
                Error::Invalid(format!("sigma is not positive definite at t = {t}"))
            })?;
            if let Some(corr) = &self.correlation {
                let r = corr.at(t);
                for i in 0..self.dim {
                    for j in 0..i {
                        if (r[i * self.dim + j] - r[j * self.dim + i]).abs() > 1e-12 {
                            return Err(Error::Invalid(format!(
                                "correlation is not symmetric at t = {t}"
                            )));
                        }
                    }
                }
                linalg::cholesky(self.dim, &r).map_err(|_| {
                    Error::Invalid(format!(
                        "correlation is not positive definite at t = {t}"
                    ))
                })?;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn law(&self) -> &StableLaw {
        &self.law
    }

    /// Stability index of the driver (2 for the Brownian regime).
    pub fn alpha(&self) -> f64 {
        self.law.alpha()
    }

    pub fn drift_curve(&self, i: usize) -> &Curve {
        &self.drift[i]
    }

    pub fn sigma(&self) -> &MatrixCurve {
        &self.sigma
    }

    pub fn correlation(&self) -> Option<&MatrixCurve> {
        self.correlation.as_ref()
    }

    /// Validates a strategy against the model: dimension, the box bound M,
    /// and non-negativity in the one-dim regime.
    pub fn check_strategy(&self, strategy: &Strategy) -> Result<()> {
        if strategy.dim() != self.dim {
            return Err(Error::Invalid(format!(
                "strategy dimension {} does not match market dimension {}",
                strategy.dim(),
                self.dim
            )));
        }
        if (strategy.grid().horizon() - self.horizon).abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "strategy horizon {} does not match market horizon {}",
                strategy.grid().horizon(),
                self.horizon
            )));
        }
        for (k, v) in strategy.values().iter().enumerate() {
            for (i, &x) in v.iter().enumerate() {
                if x.abs() > self.bound + 1e-12 {
                    return Err(Error::Invalid(format!(
                        "strategy value {k} component {i} = {x} exceeds the bound {}",
                        self.bound
                    )));
                }
                if self.regime == Regime::OneDim && x < 0.0 {
                    return Err(Error::Invalid(format!(
                        "one-dim regime requires non-negative strategies, got {x} at interval {k}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Integrates f over [a, b] with 16-node Gauss-Legendre panels split at
    /// the model curves' sample points. Exact for constant coefficients up
    /// to round-off; returns 0 when a >= b.
    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        let rule = quad::panel_rule();
        let mut total = 0.0;
        let mut left = a;
        for &bp in &self.breakpoints {
            if bp > a && bp < b {
                total += rule.integrate(left, bp, &f);
                left = bp;
            }
        }
        total + rule.integrate(left, b, &f)
    }

    /// Drift integrand: cash-invariant m_s(u) = u^T (mu_s - r) e^{r(T-s)};
    /// zero under shift invariance.
    pub fn m_at(&self, u: &[f64], s: f64, invariance: Invariance) -> f64 {
        match invariance {
            Invariance::Shift => 0.0,
            Invariance::Cash => {
                let disc = (self.rate * (self.horizon - s)).exp();
                u.iter()
                    .enumerate()
                    .map(|(i, &ui)| ui * (self.drift[i].value(s) - self.rate))
                    .sum::<f64>()
                    * disc
            }
        }
    }

    /// Scale integrand w_s(u) of the gain decomposition; regime-dependent,
    /// non-negative, positively homogeneous in u.
    pub fn w_at(&self, u: &[f64], s: f64) -> f64 {
        let disc = (self.rate * (self.horizon - s)).exp();
        match self.regime {
            Regime::Alpha2 => {
                let x = self.sigma_transpose_u(u, s);
                let r = self.correlation.as_ref().expect("validated at construction").at(s);
                linalg::quad_form(self.dim, &r, &x).max(0.0).sqrt() * disc
            }
            Regime::Symmetric => {
                let x = self.sigma_transpose_u(u, s);
                match self.law.kind() {
                    StableKind::Spectral(m) => {
                        m.directional_power(&x, self.law.alpha()).powf(1.0 / self.law.alpha()) * disc
                    }
                    _ => x[0].abs() * disc,
                }
            }
            Regime::OneDim => u[0] * self.sigma.entry(0, 0).value(s) * disc,
        }
    }

    fn sigma_transpose_u(&self, u: &[f64], s: f64) -> Vec<f64> {
        let sig = self.sigma.at(s);
        (0..self.dim)
            .map(|j| (0..self.dim).map(|i| u[i] * sig[i * self.dim + j]).sum())
            .collect()
    }

    /// Gain decomposition over (t_from, T] for a piecewise-constant strategy:
    /// a from the cash drift integrand, b as the L^alpha norm of w.
    pub fn gain_moments(&self, strategy: &Strategy, from: usize) -> Result<GainMoments> {
        self.check_strategy(strategy)?;
        let grid = strategy.grid();
        if from > grid.intervals() {
            return Err(Error::Invalid(format!(
                "gain start index {from} is past the final grid point"
            )));
        }
        let alpha = self.alpha();
        let mut a = 0.0;
        let mut pow = 0.0;
        for k in from..grid.intervals() {
            let (t0, t1) = (grid.point(k), grid.point(k + 1));
            let u = strategy.value_on(k);
            a += self.integrate(t0, t1, |s| self.m_at(u, s, Invariance::Cash));
            pow += self.integrate(t0, t1, |s| self.w_at(u, s).powf(alpha));
        }
        Ok(GainMoments {
            a,
            b: pow.max(0.0).powf(1.0 / alpha),
        })
    }

    /// Componentwise integral of (mu_s - r) e^{r(T-s)} over [t0, t1]; the
    /// per-interval drift vector of the per-step objective.
    pub fn excess_drift_integral(&self, t0: f64, t1: f64) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                self.integrate(t0, t1, |s| {
                    (self.drift[i].value(s) - self.rate) * (self.rate * (self.horizon - s)).exp()
                })
            })
            .collect()
    }

    /// Integral of sigma_s R_s sigma_s^T e^{2r(T-s)} over [t0, t1] (row-major
    /// d x d); only defined in the alpha2 regime, where w(u)^2 is the
    /// quadratic form of this matrix.
    pub fn gram_integral(&self, t0: f64, t1: f64) -> Result<Vec<f64>> {
        if self.regime != Regime::Alpha2 {
            return Err(Error::Unsupported(
                "the quadratic scale matrix exists only in the alpha2 regime".into(),
            ));
        }
        let corr = self.correlation.as_ref().expect("validated at construction");
        let mut out = vec![0.0; self.dim * self.dim];
        if !(t1 > t0) {
            return Ok(out);
        }
        let rule = quad::panel_rule();
        let mut panels = vec![t0];
        for &bp in &self.breakpoints {
            if bp > t0 && bp < t1 {
                panels.push(bp);
            }
        }
        panels.push(t1);
        for w in panels.windows(2) {
            for (s, wt) in rule.mapped(w[0], w[1]) {
                let sig = self.sigma.at(s);
                let r = corr.at(s);
                let prod = linalg::mat_mul(
                    self.dim,
                    &linalg::mat_mul(self.dim, &sig, &r),
                    &linalg::transpose(self.dim, &sig),
                );
                let disc = (2.0 * self.rate * (self.horizon - s)).exp();
                for (o, p) in out.iter_mut().zip(&prod) {
                    *o += wt * disc * p;
                }
            }
        }
        Ok(out)
    }

    /// Integral of w_s(u)^alpha over [t0, t1] for a fixed allocation u.
    pub fn scale_power_integral(&self, u: &[f64], t0: f64, t1: f64) -> f64 {
        let alpha = self.alpha();
        self.integrate(t0, t1, |s| self.w_at(u, s).powf(alpha))
    }

    /// Gradient in u of [`MarketModel::scale_power_integral`]. Smooth for
    /// alpha > 1 (the integrand's |x|^{alpha-1} factors vanish at kinks).
    pub fn scale_power_gradient(&self, u: &[f64], t0: f64, t1: f64) -> Result<Vec<f64>> {
        let alpha = self.alpha();
        match self.regime {
            Regime::Alpha2 => {
                let g = self.gram_integral(t0, t1)?;
                Ok(linalg::mat_vec(self.dim, &g, u).iter().map(|x| 2.0 * x).collect())
            }
            Regime::Symmetric => match self.law.kind().clone() {
                StableKind::Spectral(m) => {
                    let mut grad = vec![0.0; self.dim];
                    for i in 0..self.dim {
                        grad[i] = self.integrate(t0, t1, |s| {
                            let x = self.sigma_transpose_u(u, s);
                            let sig = self.sigma.at(s);
                            let disc = (alpha * self.rate * (self.horizon - s)).exp();
                            m.atoms()
                                .map(|(v, wk)| {
                                    let dotv: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
                                    let dxi: f64 =
                                        (0..self.dim).map(|j| sig[i * self.dim + j] * v[j]).sum();
                                    wk * alpha * dotv.abs().powf(alpha - 1.0) * dotv.signum() * dxi
                                })
                                .sum::<f64>()
                                * disc
                        });
                    }
                    Ok(grad)
                }
                _ => {
                    let g = self.integrate(t0, t1, |s| {
                        let se = self.sigma.entry(0, 0).value(s)
                            * (self.rate * (self.horizon - s)).exp();
                        alpha * u[0].abs().powf(alpha - 1.0) * u[0].signum() * se.abs().powf(alpha)
                    });
                    Ok(vec![g])
                }
            },
            Regime::OneDim => {
                let g = self.integrate(t0, t1, |s| {
                    let se =
                        self.sigma.entry(0, 0).value(s) * (self.rate * (self.horizon - s)).exp();
                    alpha * u[0].max(0.0).powf(alpha - 1.0) * se.powf(alpha)
                });
                Ok(vec![g])
            }
        }
    }
}

// =====================================================================
// tests
// =====================================================================

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_alpha2(mu: f64, r: f64, sigma: f64, horizon: f64) -> MarketModel {
        MarketModel::alpha2(
            r,
            horizon,
            10.0,
            vec![Curve::constant(mu)],
            MatrixCurve::constant(1, &[sigma]).unwrap(),
            MatrixCurve::constant(1, &[1.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn curve_interpolates_and_extrapolates_constantly() {
        let c = Curve::from_samples(&[(1.0, 2.0), (3.0, 6.0)]).unwrap();
        assert_eq!(c.value(0.0), 2.0);
        assert_eq!(c.value(1.0), 2.0);
        assert_eq!(c.value(2.0), 4.0);
        assert_eq!(c.value(3.0), 6.0);
        assert_eq!(c.value(5.0), 6.0);
        assert_eq!(c.slope_at(2.0), 2.0);
        assert_eq!(c.slope_at(0.5), 0.0);
        assert!(Curve::from_samples(&[(1.0, 2.0), (1.0, 3.0)]).is_err());
    }

    #[test]
    fn grid_points_are_exactly_equidistant() {
        let g = TimeGrid::new(7, 10.0).unwrap();
        assert_eq!(g.point(0), 0.0);
        assert_eq!(g.point(7), 10.0);
        let deltas: Vec<f64> = (0..7).map(|k| g.point(k + 1) - g.point(k)).collect();
        for d in &deltas {
            assert!((d - g.delta()).abs() < 1e-12, "non-uniform delta {d}");
        }
    }

    #[test]
    fn strategy_lookup_uses_left_continuous_convention() {
        let g = TimeGrid::new(4, 4.0).unwrap();
        let s = Strategy::new(g, vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(s.value_at(0.0)[0], 1.0);
        assert_eq!(s.value_at(1.0)[0], 1.0, "t_1 belongs to the first interval");
        assert_eq!(s.value_at(1.5)[0], 2.0);
        assert_eq!(s.value_at(4.0)[0], 4.0);
    }

    #[test]
    fn m_at_matches_direct_formula() {
        let m = scalar_alpha2(0.08, 0.02, 0.2, 10.0);
        assert_eq!(m.m_at(&[0.0], 3.0, Invariance::Cash), 0.0);
        let at_horizon = m.m_at(&[1.0], 10.0, Invariance::Cash);
        assert!((at_horizon - 0.06).abs() < 1e-15, "{at_horizon}");
        assert_eq!(m.m_at(&[1.0], 3.0, Invariance::Shift), 0.0);
    }

    #[test]
    fn w_at_matches_direct_formula() {
        let m = scalar_alpha2(0.08, 0.0, 0.2, 1.0);
        assert_eq!(m.w_at(&[0.0], 0.3), 0.0);
        assert!((m.w_at(&[1.0], 0.3) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn w_branches_agree_for_one_asset() {
        // All three regime branches reduce to |u sigma e^{r(T-s)}| at d = 1.
        let r = 0.02;
        let a2 = scalar_alpha2(0.08, r, 0.2, 10.0);
        let measure = SpectralMeasure::new(&[(vec![1.0], 0.5), (vec![-1.0], 0.5)], true).unwrap();
        let sym = MarketModel::symmetric_stable(
            r,
            10.0,
            10.0,
            vec![Curve::constant(0.08)],
            MatrixCurve::constant(1, &[0.2]).unwrap(),
            1.5,
            1.0,
            measure,
        )
        .unwrap();
        let sym1 = MarketModel::symmetric_one_asset(
            r,
            10.0,
            10.0,
            Curve::constant(0.08),
            Curve::constant(0.2),
            1.5,
            1.0,
        )
        .unwrap();
        let one = MarketModel::one_dim(
            r,
            10.0,
            10.0,
            Curve::constant(0.08),
            Curve::constant(0.2),
            1.5,
            1.0,
            0.7,
        )
        .unwrap();
        for u in [0.0, 0.5, 2.0] {
            for s in [0.0, 4.4, 10.0] {
                let reference = a2.w_at(&[u], s);
                for (name, m) in [("spectral", &sym), ("symmetric-1d", &sym1), ("one-dim", &one)] {
                    let got = m.w_at(&[u], s);
                    assert!(
                        (got - reference).abs() < 1e-12,
                        "{name} branch disagrees at u={u}, s={s}: {got} vs {reference}"
                    );
                }
            }
        }
    }

    #[test]
    fn integrate_matches_antiderivative_oracle() {
        let m = scalar_alpha2(0.08, 0.02, 0.2, 10.0);
        let got = m.integrate(9.0, 10.0, |s| (0.04 * (10.0 - s)).exp());
        let expected = (0.04f64.exp() - 1.0) / 0.04;
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
        assert_eq!(m.integrate(3.0, 3.0, |_| 1.0), 0.0);
        assert!((m.integrate(0.0, 1.0, |_| 1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn integrate_splits_panels_at_curve_kinks() {
        // |s - 5| is the drift curve's shape; a single smooth panel would
        // misintegrate the kink, the split makes it exact.
        let m = MarketModel::alpha2(
            0.0,
            10.0,
            10.0,
            vec![Curve::from_samples(&[(0.0, 5.0), (5.0, 0.0), (10.0, 5.0)]).unwrap()],
            MatrixCurve::constant(1, &[0.2]).unwrap(),
            MatrixCurve::constant(1, &[1.0]).unwrap(),
        )
        .unwrap();
        let got = m.integrate(0.0, 10.0, |s| m.drift_curve(0).value(s));
        assert!((got - 25.0).abs() < 1e-12, "kinked integral {got}");
    }

    #[test]
    fn gain_moments_match_constant_coefficient_closed_forms() {
        let grid = TimeGrid::new(10, 10.0).unwrap();

        let m0 = scalar_alpha2(0.06, 0.0, 0.2, 1.0);
        let g1 = TimeGrid::new(1, 1.0).unwrap();
        let zero = Strategy::constant(g1, vec![0.0]).unwrap();
        let gm = m0.gain_moments(&zero, 0).unwrap();
        assert_eq!((gm.a, gm.b), (0.0, 0.0));

        let one = Strategy::constant(g1, vec![1.0]).unwrap();
        let gm = m0.gain_moments(&one, 0).unwrap();
        assert!((gm.a - 0.06).abs() < 1e-14, "a = {}", gm.a);
        assert!((gm.b - 0.2).abs() < 1e-14, "b = {}", gm.b);

        // r = 0.02, last interval of [0,10]: closed-form exponential integrals.
        let m = scalar_alpha2(0.08, 0.02, 0.2, 10.0);
        let s = Strategy::constant(grid, vec![1.0]).unwrap();
        let gm = m.gain_moments(&s, 9).unwrap();
        let a_expected = 0.06 * (0.02f64.exp() - 1.0) / 0.02;
        let b_expected = 0.2 * ((0.04f64.exp() - 1.0) / 0.04).sqrt();
        assert!(
            (gm.a - a_expected).abs() < 1e-10 * a_expected,
            "a = {} vs {a_expected}",
            gm.a
        );
        assert!(
            (gm.b - b_expected).abs() < 1e-10 * b_expected,
            "b = {} vs {b_expected}",
            gm.b
        );
    }

    #[test]
    fn gain_moments_are_positively_homogeneous() {
        let m = MarketModel::alpha2(
            0.02,
            10.0,
            100.0,
            vec![Curve::constant(0.08), Curve::constant(0.06)],
            MatrixCurve::constant(2, &[0.20, 0.10, 0.10, 0.15]).unwrap(),
            MatrixCurve::constant(2, &[1.0, 0.5, 0.5, 1.0]).unwrap(),
        )
        .unwrap();
        let grid = TimeGrid::new(5, 10.0).unwrap();
        let base = Strategy::constant(grid, vec![1.3, -0.7]).unwrap();
        let g0 = m.gain_moments(&base, 0).unwrap();
        for kappa in [0.0, 0.5, 2.5] {
            let scaled = Strategy::constant(grid, vec![1.3 * kappa, -0.7 * kappa]).unwrap();
            let g = m.gain_moments(&scaled, 0).unwrap();
            assert!(
                (g.a - kappa * g0.a).abs() < 1e-12 * (1.0 + g0.a.abs()),
                "a not homogeneous at kappa {kappa}"
            );
            assert!(
                (g.b - kappa * g0.b).abs() < 1e-12 * (1.0 + g0.b),
                "b not homogeneous at kappa {kappa}"
            );
        }
    }

    #[test]
    fn gram_integral_matches_scale_power_quadratic_form() {
        let m = MarketModel::alpha2(
            0.02,
            10.0,
            100.0,
            vec![Curve::constant(0.08), Curve::constant(0.06)],
            MatrixCurve::constant(2, &[0.20, -0.10, -0.10, 0.15]).unwrap(),
            MatrixCurve::constant(2, &[1.0, -0.5, -0.5, 1.0]).unwrap(),
        )
        .unwrap();
        let u = [1.4, 0.3];
        let g = m.gram_integral(2.0, 7.0).unwrap();
        let via_g = crate::linalg::quad_form(2, &g, &u);
        let direct = m.scale_power_integral(&u, 2.0, 7.0);
        assert!(
            (via_g - direct).abs() < 1e-12 * (1.0 + direct.abs()),
            "{via_g} vs {direct}"
        );
        // gradient consistency: grad = 2 G u
        let grad = m.scale_power_gradient(&u, 2.0, 7.0).unwrap();
        let gu = crate::linalg::mat_vec(2, &g, &u);
        for i in 0..2 {
            assert!((grad[i] - 2.0 * gu[i]).abs() < 1e-12, "component {i}");
        }
    }

    #[test]
    fn scale_power_gradient_matches_finite_differences_spectral() {
        let measure = SpectralMeasure::new(
            &[
                (vec![1.0, 0.0], 0.25),
                (vec![-1.0, 0.0], 0.25),
                (vec![0.0, 1.0], 0.25),
                (vec![0.0, -1.0], 0.25),
            ],
            true,
        )
        .unwrap();
        let m = MarketModel::symmetric_stable(
            0.02,
            5.0,
            10.0,
            vec![Curve::constant(0.08), Curve::constant(0.06)],
            MatrixCurve::constant(2, &[0.20, 0.05, 0.05, 0.15]).unwrap(),
            1.6,
            1.0,
            measure,
        )
        .unwrap();
        let u = [0.8, -1.1];
        let grad = m.scale_power_gradient(&u, 0.0, 5.0).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut up = u;
            let mut dn = u;
            up[i] += h;
            dn[i] -= h;
            let fd = (m.scale_power_integral(&up, 0.0, 5.0)
                - m.scale_power_integral(&dn, 0.0, 5.0))
                / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "component {i}: {} vs {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn model_validation_rejects_bad_inputs() {
        let asym = MarketModel::alpha2(
            0.02,
            10.0,
            10.0,
            vec![Curve::constant(0.08), Curve::constant(0.06)],
            MatrixCurve::constant(2, &[0.20, 0.10, 0.05, 0.15]).unwrap(),
            MatrixCurve::constant(2, &[1.0, 0.5, 0.5, 1.0]).unwrap(),
        );
        assert!(asym.is_err(), "asymmetric sigma accepted");

        let not_pd = MarketModel::alpha2(
            0.02,
            10.0,
            10.0,
            vec![Curve::constant(0.08), Curve::constant(0.06)],
            MatrixCurve::constant(2, &[0.10, 0.20, 0.20, 0.10]).unwrap(),
            MatrixCurve::constant(2, &[1.0, 0.5, 0.5, 1.0]).unwrap(),
        );
        assert!(not_pd.is_err(), "indefinite sigma accepted");

        // negative off-diagonals with a positive definite matrix are fine
        let neg_ok = MarketModel::alpha2(
            0.02,
            10.0,
            10.0,
            vec![Curve::constant(0.08), Curve::constant(0.06)],
            MatrixCurve::constant(2, &[0.20, -0.10, -0.10, 0.15]).unwrap(),
            MatrixCurve::constant(2, &[1.0, -0.5, -0.5, 1.0]).unwrap(),
        );
        assert!(neg_ok.is_ok(), "negative-dependency parametrization rejected");
    }

    #[test]
    fn strategy_validation_enforces_bound_and_sign() {
        let m = scalar_alpha2(0.08, 0.02, 0.2, 10.0);
        let grid = TimeGrid::new(2, 10.0).unwrap();
        let over = Strategy::constant(grid, vec![10.5]).unwrap();
        assert!(m.check_strategy(&over).is_err(), "bound violation accepted");

        let one = MarketModel::one_dim(
            0.02,
            10.0,
            10.0,
            Curve::constant(0.08),
            Curve::constant(0.2),
            1.5,
            1.0,
            0.7,
        )
        .unwrap();
        let neg = Strategy::constant(grid, vec![-0.5]).unwrap();
        assert!(one.check_strategy(&neg).is_err(), "negative u accepted in one-dim");
    }
}
