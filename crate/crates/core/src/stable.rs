//! Stable laws: the distribution family of the market drivers.
//!
//! A driver is an alpha-stable Levy process with stability index
//! `alpha ∈ (1, 2]` and Levy-measure scale `c > 0`. The supported kinds and
//! their characteristic functions at time t (frequency r) are
//!
//! ```text
//!   brownian (alpha = 2):   exp(-t |r|^2 / 2)            componentwise iid
//!   symmetric 1-d:          exp(-t c_a |r|^a)
//!   skewed 1-d:             exp(-t c_a |r|^a (1 - i (p-q) tan(pi a/2) sgn r))
//!   spectral (symmetric):   exp(-t c_a sum_k w_k |<r, v_k>|^a)
//! ```
//!
//! with `c_a = c * Gamma(1-a)/a * cos(pi a/2) > 0` and `p + q = 1` the up/down
//! jump weights. Self-similarity holds in the standardized form
//! `t^{-1/a} L_t ~ L_1`.
//!
//! Sampling uses the Chambers-Mallows-Stuck transform in the parameterization
//! that reproduces the characteristic functions above (an acceptance test
//! checks the empirical CF against `char_fn`). Quantiles for `alpha < 2` come
//! from CDF inversion (Gil-Pelaez) plus bisection; the Gaussian quantile is a
//! direct rational approximation.
//!
//! Determinism: `sample` partitions the output into fixed chunks of
//! [`SAMPLE_CHUNK`] draws; chunk `j` is generated from a ChaCha8 stream with
//! stream id `j` derived from the caller's seed. Results are bitwise
//! reproducible and independent of worker count.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::{quad, Error, Result};

/// Draws per deterministic RNG substream; see module docs.
pub const SAMPLE_CHUNK: usize = 4096;

/// Bisection bracket limit for quantile inversion.
const QUANTILE_BRACKET: f64 = 1e3;
/// Absolute tolerance for CDF values and quantile bisection.
const CDF_TOL: f64 = 1e-9;
const QUANTILE_TOL: f64 = 1e-7;

/// Scale constant of the stable semigroup,
/// `c_a = c * Gamma(1-a) / a * cos(pi a / 2)`, positive for `a ∈ (1, 2)`.
pub fn c_alpha(alpha: f64, c: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::Domain(format!(
            "c_alpha needs alpha in (1,2), got {alpha}"
        )));
    }
    if !(c > 0.0) {
        return Err(Error::Domain(format!("c_alpha needs c > 0, got {c}")));
    }
    Ok(c * statrs::function::gamma::gamma(1.0 - alpha) / alpha * (PI * alpha / 2.0).cos())
}

/// Finite atomic measure on the unit sphere: directions plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    dim: usize,
    directions: Vec<Vec<f64>>,
    weights: Vec<f64>,
    symmetric: bool,
}

impl SpectralMeasure {
    /// Builds a measure from `(direction, weight)` atoms. Directions must be
    /// unit vectors (tolerance 1e-12), weights positive and summing to one.
    /// `symmetric` asserts that atoms come in `(v, w), (-v, w)` pairs; it is
    /// verified, not trusted.
    pub fn new(atoms: &[(Vec<f64>, f64)], symmetric: bool) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Invalid("spectral measure needs atoms".into()));
        }
        let dim = atoms[0].0.len();
        if dim == 0 {
            return Err(Error::Invalid("spectral atoms need dimension >= 1".into()));
        }
        let mut wsum = 0.0;
        for (i, (v, w)) in atoms.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Invalid(format!(
                    "spectral atom {i} has dimension {} (expected {dim})",
                    v.len()
                )));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::Invalid(format!(
                    "spectral atom {i} is not a unit vector (norm {norm})"
                )));
            }
            if !(*w > 0.0) {
                return Err(Error::Invalid(format!(
                    "spectral atom {i} has non-positive weight {w}"
                )));
            }
            wsum += w;
        }
        if (wsum - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "spectral weights must sum to 1, got {wsum}"
            )));
        }
        let directions: Vec<Vec<f64>> = atoms.iter().map(|(v, _)| v.clone()).collect();
        let weights: Vec<f64> = atoms.iter().map(|&(_, w)| w).collect();
        if symmetric {
            // Every atom needs a mirrored partner with the same weight.
            for i in 0..directions.len() {
                let found = (0..directions.len()).any(|j| {
                    (weights[j] - weights[i]).abs() <= 1e-12
                        && directions[j]
                            .iter()
                            .zip(&directions[i])
                            .all(|(a, b)| (a + b).abs() <= 1e-12)
                });
                if !found {
                    return Err(Error::Invalid(format!(
                        "symmetric spectral measure lacks the mirror of atom {i}"
                    )));
                }
            }
        }
        Ok(SpectralMeasure {
            dim,
            directions,
            weights,
            symmetric,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.directions
            .iter()
            .map(|v| v.as_slice())
            .zip(self.weights.iter().copied())
    }

    /// `sum_k w_k |<x, v_k>|^alpha`, the spectral integral defining both the
    /// characteristic exponent and the directional scale.
    pub fn directional_power(&self, x: &[f64], alpha: f64) -> f64 {
        self.atoms()
            .map(|(v, w)| {
                let dot: f64 = v.iter().zip(x).map(|(a, b)| a * b).sum();
                w * dot.abs().powf(alpha)
            })
            .sum()
    }
}

/// Distribution kind of a driver.
#[derive(Debug, Clone, PartialEq)]
pub enum StableKind {
    /// alpha = 2; components are iid standard Brownian motions.
    Brownian { dim: usize },
    /// One-dimensional symmetric stable, alpha < 2.
    Symmetric1d,
    /// One-dimensional with up-jump weight `p` (down weight `1 - p`), alpha < 2.
    Skewed1d { up_weight: f64 },
    /// Multivariate symmetric stable given by a spectral measure, alpha < 2.
    Spectral(SpectralMeasure),
}

/// A stable driver law, identified by `(alpha, c, kind)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StableLaw {
    alpha: f64,
    c: f64,
    kind: StableKind,
}

impl StableLaw {
    /// Standard Brownian driver in dimension `dim` (alpha = 2, c ignored by
    /// the CF; kept at 1 for uniformity).
    pub fn brownian(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("brownian law needs dim >= 1".into()));
        }
        Ok(StableLaw {
            alpha: 2.0,
            c: 1.0,
            kind: StableKind::Brownian { dim },
        })
    }

    pub fn symmetric(alpha: f64, c: f64) -> Result<Self> {
        c_alpha(alpha, c)?;
        Ok(StableLaw {
            alpha,
            c,
            kind: StableKind::Symmetric1d,
        })
    }

    /// Skewed one-dimensional law; `up_weight` is the mass of upward jumps.
    pub fn skewed(alpha: f64, c: f64, up_weight: f64) -> Result<Self> {
        c_alpha(alpha, c)?;
        if !(0.0..=1.0).contains(&up_weight) {
            return Err(Error::Domain(format!(
                "up_weight must lie in [0,1], got {up_weight}"
            )));
        }
        Ok(StableLaw {
            alpha,
            c,
            kind: StableKind::Skewed1d { up_weight },
        })
    }

    /// Multivariate symmetric stable law. The measure must carry the verified
    /// symmetric flag: only then does the characteristic function reduce to
    /// the real exponent used here.
    pub fn spectral(alpha: f64, c: f64, measure: SpectralMeasure) -> Result<Self> {
        c_alpha(alpha, c)?;
        if !measure.is_symmetric() {
            return Err(Error::Unsupported(
                "multivariate stable laws require a symmetric spectral measure".into(),
            ));
        }
        Ok(StableLaw {
            alpha,
            c,
            kind: StableKind::Spectral(measure),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale_c(&self) -> f64 {
        self.c
    }

    pub fn kind(&self) -> &StableKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            StableKind::Brownian { dim } => *dim,
            StableKind::Symmetric1d | StableKind::Skewed1d { .. } => 1,
            StableKind::Spectral(m) => m.dim(),
        }
    }

    /// `(p - q)`, the skew parameter; zero for all symmetric kinds.
    fn skew(&self) -> f64 {
        match &self.kind {
            StableKind::Skewed1d { up_weight } => 2.0 * up_weight - 1.0,
            _ => 0.0,
        }
    }

    /// The law of the standardized one-dimensional driver `Z` appearing in
    /// the gain representation `a + b Z`: Brownian stays Brownian (dim 1), a
    /// spectral law standardizes to the symmetric 1-d law with the same
    /// `(alpha, c)`, one-dimensional laws standardize to themselves.
    pub fn standardized(&self) -> StableLaw {
        match &self.kind {
            StableKind::Brownian { .. } => StableLaw {
                alpha: 2.0,
                c: 1.0,
                kind: StableKind::Brownian { dim: 1 },
            },
            StableKind::Symmetric1d | StableKind::Skewed1d { .. } => self.clone(),
            StableKind::Spectral(_) => StableLaw {
                alpha: self.alpha,
                c: self.c,
                kind: StableKind::Symmetric1d,
            },
        }
    }

    /// Characteristic function `E exp(i <freq, L_t>)`.
    pub fn char_fn(&self, t: f64, freq: &[f64]) -> Result<Complex64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("char_fn needs t > 0, got {t}")));
        }
        if freq.len() != self.dim() {
            return Err(Error::Invalid(format!(
                "frequency has dimension {}, law has {}",
                freq.len(),
                self.dim()
            )));
        }
        match &self.kind {
            StableKind::Brownian { .. } => {
                let n2: f64 = freq.iter().map(|x| x * x).sum();
                Ok(Complex64::new((-t * n2 / 2.0).exp(), 0.0))
            }
            StableKind::Symmetric1d => {
                let ca = c_alpha(self.alpha, self.c)?;
                let r = freq[0].abs();
                Ok(Complex64::new((-t * ca * r.powf(self.alpha)).exp(), 0.0))
            }
            StableKind::Skewed1d { .. } => {
                let ca = c_alpha(self.alpha, self.c)?;
                let r = freq[0];
                let mag = -t * ca * r.abs().powf(self.alpha);
                let skew_arg = -mag * self.skew() * (PI * self.alpha / 2.0).tan() * r.signum();
                // exp(mag) * exp(i * skew_arg)
                Ok(Complex64::from_polar(mag.exp(), skew_arg))
            }
            StableKind::Spectral(m) => {
                let ca = c_alpha(self.alpha, self.c)?;
                let pow = m.directional_power(freq, self.alpha);
                Ok(Complex64::new((-t * ca * pow).exp(), 0.0))
            }
        }
    }

    /// One draw of `L_t` written into `out` (length = dim). Used by the path
    /// simulator; the public batch API is [`StableLaw::sample`].
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        match &self.kind {
            StableKind::Brownian { .. } => {
                let s = t.sqrt();
                for o in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = s * z;
                }
            }
            StableKind::Symmetric1d => {
                let ca = c_alpha(self.alpha, self.c).expect("validated at construction");
                out[0] = (t * ca).powf(1.0 / self.alpha) * cms_standard(rng, self.alpha, 0.0);
            }
            StableKind::Skewed1d { .. } => {
                let ca = c_alpha(self.alpha, self.c).expect("validated at construction");
                out[0] =
                    (t * ca).powf(1.0 / self.alpha) * cms_standard(rng, self.alpha, self.skew());
            }
            StableKind::Spectral(m) => {
                let ca = c_alpha(self.alpha, self.c).expect("validated at construction");
                out.fill(0.0);
                for (v, w) in m.atoms() {
                    let z = (t * ca * w).powf(1.0 / self.alpha) * cms_standard(rng, self.alpha, 0.0);
                    for (o, vi) in out.iter_mut().zip(v) {
                        *o += z * vi;
                    }
                }
            }
        }
    }

    /// `n` iid draws of `L_t`, deterministic in `(law, t, n, seed)` and
    /// independent of thread count (chunked ChaCha8 substreams).
    pub fn sample(&self, t: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("sample needs t > 0, got {t}")));
        }
        let dim = self.dim();
        let chunks: Vec<Vec<Vec<f64>>> = (0..n.div_ceil(SAMPLE_CHUNK))
            .into_par_iter()
            .map(|chunk| {
                let lo = chunk * SAMPLE_CHUNK;
                let hi = ((chunk + 1) * SAMPLE_CHUNK).min(n);
                let mut rng = substream(seed, chunk as u64);
                let mut out = Vec::with_capacity(hi - lo);
                let mut buf = vec![0.0; dim];
                for _ in lo..hi {
                    self.draw_into(&mut rng, t, &mut buf);
                    out.push(buf.clone());
                }
                out
            })
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Scalar variant of [`StableLaw::sample`] for one-dimensional laws.
    pub fn sample_1d(&self, t: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
        if self.dim() != 1 {
            return Err(Error::Invalid(format!(
                "sample_1d needs a one-dimensional law, dim = {}",
                self.dim()
            )));
        }
        if !(t > 0.0) {
            return Err(Error::Domain(format!("sample needs t > 0, got {t}")));
        }
        let chunks: Vec<Vec<f64>> = (0..n.div_ceil(SAMPLE_CHUNK))
            .into_par_iter()
            .map(|chunk| {
                let lo = chunk * SAMPLE_CHUNK;
                let hi = ((chunk + 1) * SAMPLE_CHUNK).min(n);
                let mut rng = substream(seed, chunk as u64);
                let mut out = Vec::with_capacity(hi - lo);
                let mut buf = [0.0];
                for _ in lo..hi {
                    self.draw_into(&mut rng, t, &mut buf);
                    out.push(buf[0]);
                }
                out
            })
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Asymptotic tail expansion of the one-dimensional law at time 1,
    /// evaluated at `z > 0` on the `right` or mirrored (left) side.
    ///
    /// Expanding `exp(psi(r))` in powers of the characteristic exponent
    /// inside the inversion integral gives, as `z -> inf`,
    ///
    /// ```text
    ///   f(z)     ~ (1/pi) sum_n (-1)^{n+1} (k rho)^n Gamma(n a + 1)/n!
    ///                sin(n (pi a/2 - chi)) z^{-n a - 1}
    ///   P(L > z) ~ the same series with Gamma(n a) and z^{-n a}
    /// ```
    ///
    /// where `k = c_a` and `rho e^{i chi} = 1 - i (p - q) tan(pi a/2)`; the
    /// left tail is the mirror `chi -> -chi`. The `n = 1` terms reduce to the
    /// Levy-measure tails `c p z^{-a-1}` and `(c p / a) z^{-a}`. The series
    /// is asymptotic, not convergent: terms are taken only while their
    /// magnitude envelope shrinks, and a value is returned only once the
    /// envelope is negligible, so callers fall back to the inversion
    /// integral whenever the expansion has not earned the accuracy.
    fn tail_series(&self, z: f64, right: bool, density: bool) -> Option<f64> {
        // Errors for brownian (alpha = 2), which has closed forms anyway.
        let k = c_alpha(self.alpha, self.c).ok()?;
        let beta = if right { self.skew() } else { -self.skew() };
        let t0 = (PI * self.alpha / 2.0).tan();
        let base = k * f64::hypot(1.0, beta * t0);
        let chi = (-beta * t0).atan();
        let angle = PI * self.alpha / 2.0 - chi;
        let mut sum = 0.0;
        let mut prev_env = f64::INFINITY;
        let mut pw = 1.0;
        let mut fact = 1.0;
        for n in 1..=8u32 {
            pw *= base;
            fact *= n as f64;
            let na = n as f64 * self.alpha;
            let gam = if density {
                statrs::function::gamma::gamma(na + 1.0)
            } else {
                statrs::function::gamma::gamma(na)
            };
            let decay = z.powf(-na - if density { 1.0 } else { 0.0 });
            let env = pw * gam / fact * decay / PI;
            if env >= prev_env {
                return None;
            }
            let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
            sum += sign * env * (n as f64 * angle).sin();
            // The remainder is bounded by the next envelope; the one just
            // added is the available proxy for it.
            if env <= 1e-12 * sum.abs() + 1e-18 {
                return Some(sum.max(0.0));
            }
            prev_env = env;
        }
        None
    }

    /// CDF of the one-dimensional law at time t = 1. Far tails use the
    /// asymptotic expansion of [`StableLaw::tail_series`]; elsewhere the
    /// value comes from characteristic function inversion (absolute
    /// tolerance ~1e-9). Supports the standardized driver laws;
    /// multivariate laws are rejected.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::Domain(
                "cdf is defined for one-dimensional laws only".into(),
            ));
        }
        if !matches!(self.kind, StableKind::Brownian { .. }) {
            if x > 0.0 {
                if let Some(tail) = self.tail_series(x, true, false) {
                    return Ok((1.0 - tail).clamp(0.0, 1.0));
                }
            } else if x < 0.0 {
                if let Some(tail) = self.tail_series(-x, false, false) {
                    return Ok(tail.clamp(0.0, 1.0));
                }
            }
        }
        self.cdf_integral(x)
    }

    /// Characteristic function inversion behind [`StableLaw::cdf`].
    fn cdf_integral(&self, x: f64) -> Result<f64> {
        // F(x) = 1/2 - (1/pi) \int_0^inf Im(e^{-irx} phi(r)) / r dr.
        // The integrand is smooth at 0 (alpha > 1) and decays like
        // exp(-k r^alpha); truncate where the envelope is < 1e-14 and split
        // into panels short enough to resolve the sin(rx) oscillation.
        let (decay_k, alpha_eff) = match &self.kind {
            StableKind::Brownian { .. } => (0.5, 2.0),
            _ => (c_alpha(self.alpha, self.c)?, self.alpha),
        };
        let skew = self.skew();
        let tan_a = (PI * self.alpha / 2.0).tan();
        let upper = (14.0 * std::f64::consts::LN_10 / decay_k).powf(1.0 / alpha_eff);
        let integrand = |r: f64| {
            if r <= 0.0 {
                // limit value: Im -> -r x + decay_k * skew * tan_a * r^alpha, /r -> -x
                return -x;
            }
            let env = (-decay_k * r.powf(alpha_eff)).exp();
            let phase = if skew == 0.0 {
                -r * x
            } else {
                decay_k * r.powf(alpha_eff) * skew * tan_a - r * x
            };
            env * phase.sin() / r
        };
        let n_panels = ((upper * (x.abs() + 1.0) / PI).ceil() as usize).clamp(8, 200_000);
        let h = upper / n_panels as f64;
        let mut total = 0.0;
        let mut err_total = 0.0;
        for i in 0..n_panels {
            let (v, e) = quad::adaptive_simpson(
                &integrand,
                i as f64 * h,
                (i + 1) as f64 * h,
                CDF_TOL / n_panels as f64,
            );
            total += v;
            err_total += e;
        }
        if err_total > 1e-7 {
            return Err(Error::Convergence(format!(
                "cdf quadrature error estimate {err_total:.2e} exceeds 1e-7 at x = {x}"
            )));
        }
        Ok((0.5 - total / PI).clamp(0.0, 1.0))
    }

    /// Quantile of the standardized (t = 1) one-dimensional law.
    ///
    /// Brownian uses the rational normal inverse; stable laws invert the CDF
    /// by bisection to absolute tolerance 1e-7 within the bracket |x| <= 1e3
    /// (a convergence error is returned if the quantile lies outside).
    /// Skewed quantiles go through the same inversion; their accuracy is
    /// limited by the CDF quadrature and they are exercised less heavily by
    /// the test suite than the symmetric ones.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!(
                "quantile needs p in (0,1), got {p}"
            )));
        }
        if self.dim() != 1 {
            return Err(Error::Domain(
                "quantile is defined for one-dimensional laws only".into(),
            ));
        }
        if matches!(self.kind, StableKind::Brownian { .. }) {
            return Ok(normal_inv_cdf(p));
        }
        // Expand a bracket [lo, hi] with F(lo) < p < F(hi).
        let (mut lo, mut hi) = (-1.0, 1.0);
        while self.cdf(lo)? > p {
            lo *= 2.0;
            if lo < -QUANTILE_BRACKET {
                return Err(Error::Convergence(format!(
                    "quantile bracket not established within |x| <= {QUANTILE_BRACKET} (p = {p})"
                )));
            }
        }
        while self.cdf(hi)? < p {
            hi *= 2.0;
            if hi > QUANTILE_BRACKET {
                return Err(Error::Convergence(format!(
                    "quantile bracket not established within |x| <= {QUANTILE_BRACKET} (p = {p})"
                )));
            }
        }
        while hi - lo > QUANTILE_TOL {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid)? < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Density of the one-dimensional law at time t = 1: the real-part
    /// inversion f(x) = (1/pi) int_0^inf Re(e^{-irx} phi(r)) dr, with the
    /// same envelope truncation and oscillation-resolving panels as the CDF.
    /// Far tails use the asymptotic expansion of [`StableLaw::tail_series`]
    /// instead (the oscillatory integral's panel count grows with |x|).
    /// Brownian laws use the closed-form normal density.
    pub fn density(&self, x: f64) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::Domain(
                "density is defined for one-dimensional laws only".into(),
            ));
        }
        if matches!(self.kind, StableKind::Brownian { .. }) {
            return Ok((-0.5 * x * x).exp() / (2.0 * PI).sqrt());
        }
        if let Some(tail) = self.tail_series(x.abs(), x > 0.0, true) {
            return Ok(tail);
        }
        self.density_integral(x)
    }

    /// Characteristic function inversion behind [`StableLaw::density`].
    fn density_integral(&self, x: f64) -> Result<f64> {
        let decay_k = c_alpha(self.alpha, self.c)?;
        let skew = self.skew();
        let tan_a = (PI * self.alpha / 2.0).tan();
        let upper = (14.0 * std::f64::consts::LN_10 / decay_k).powf(1.0 / self.alpha);
        let integrand = |r: f64| {
            let env = (-decay_k * r.abs().powf(self.alpha)).exp();
            let phase = if skew == 0.0 {
                -r * x
            } else {
                decay_k * r.abs().powf(self.alpha) * skew * tan_a - r * x
            };
            env * phase.cos()
        };
        let n_panels = ((upper * (x.abs() + 1.0) / PI).ceil() as usize).clamp(8, 200_000);
        let h = upper / n_panels as f64;
        let mut total = 0.0;
        let mut err_total = 0.0;
        for i in 0..n_panels {
            let (v, e) = quad::adaptive_simpson(
                &integrand,
                i as f64 * h,
                (i + 1) as f64 * h,
                CDF_TOL / n_panels as f64,
            );
            total += v;
            err_total += e;
        }
        if err_total > 1e-7 {
            return Err(Error::Convergence(format!(
                "density quadrature error estimate {err_total:.2e} exceeds 1e-7 at x = {x}"
            )));
        }
        Ok((total / PI).max(0.0))
    }
}

/// ChaCha8 substream `j` of a base seed; the chunked sampling scheme.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard Chambers-Mallows-Stuck draw: stability `alpha ∈ (1,2)`, skew
/// `beta ∈ [-1,1]`, unit scale, CF `exp(-|r|^a (1 - i beta tan(pi a/2) sgn r))`.
fn cms_standard<R: Rng + ?Sized>(rng: &mut R, alpha: f64, beta: f64) -> f64 {
    let v: f64 = rng.gen_range(-FRAC_PI_2..FRAC_PI_2);
    let w: f64 = Exp1.sample(rng);
    if beta == 0.0 {
        let s = (alpha * v).sin() / v.cos().powf(1.0 / alpha);
        let tail = (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha);
        s * tail
    } else {
        let ta = (PI * alpha / 2.0).tan();
        let b = (beta * ta).atan() / alpha;
        let scale = (1.0 + beta * beta * ta * ta).powf(1.0 / (2.0 * alpha));
        let s = scale * (alpha * (v + b)).sin() / v.cos().powf(1.0 / alpha);
        let tail = ((v - alpha * (v + b)).cos() / w).powf((1.0 - alpha) / alpha);
        s * tail
    }
}

/// Inverse standard-normal CDF: Wichura-style rational approximation, split
/// into a central branch (|p - 1/2| <= 0.425) and two tail branches in the
/// variable sqrt(-log(min(p, 1-p))). Absolute error < 1e-9 over (0, 1).
pub fn normal_inv_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "normal_inv_cdf needs p in (0,1)");
    const A: [f64; 8] = [
        3.3871328727963666080,
        1.3314166789178437745e2,
        1.9715909503065514427e3,
        1.3731693765509461125e4,
        4.5921953931549871457e4,
        6.7265770927008700853e4,
        3.3430575583588128105e4,
        2.5090809287301226727e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.2313330701600911252e1,
        6.8718700749205790830e2,
        5.3941960214247511077e3,
        2.1213794301586595867e4,
        3.9307895800092710610e4,
        2.8729085735721942674e4,
        5.2264952788528545610e3,
    ];
    const C: [f64; 8] = [
        1.42343711074968357734,
        4.63033784615654529590,
        5.76949722146069140550,
        3.64784832476320460504,
        1.27045825245236838258,
        2.41780725177450611770e-1,
        2.27238449892691845833e-2,
        7.74545014278341407640e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.05319162663775882187,
        1.67638483018380384940,
        6.89767334985100004550e-1,
        1.48103976427480074590e-1,
        1.51986665636164571966e-2,
        5.47593808499534494600e-4,
        1.05075007164441684324e-9,
    ];
    const E: [f64; 8] = [
        6.65790464350110377720,
        5.46378491116411436990,
        1.78482653991729133580,
        2.96560571828504891230e-1,
        2.65321895265761230930e-2,
        1.24266094738807843860e-3,
        2.71155556874348757815e-5,
        2.01033439929228813265e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.99832206555887937690e-1,
        1.36929880922735805310e-1,
        1.48753612908506148525e-2,
        7.86869131145613259100e-4,
        1.84631831751005468180e-5,
        1.42151175831644588870e-7,
        2.04426310338993978564e-15,
    ];
    fn ratio(num: &[f64; 8], den: &[f64; 8], r: f64) -> f64 {
        let mut n = num[7];
        let mut d = den[7];
        for i in (0..7).rev() {
            n = n * r + num[i];
            d = d * r + den[i];
        }
        n / d
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * ratio(&A, &B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        r -= 1.6;
        ratio(&C, &D, r)
    } else {
        r -= 5.0;
        ratio(&E, &F, r)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

// =====================================================================
// tests
// =====================================================================
