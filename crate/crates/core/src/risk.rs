//! Risk measures on the gain distribution.
//!
//! Every supported measure rho is law-invariant, positively homogeneous, and
//! either cash-invariant (rho(X + m) = rho(X) - m, like value-at-risk) or
//! shift-invariant (rho(X + m) = rho(X), like standard deviation). For a
//! gain a + b Z with standardized driver Z this gives the closed form
//!
//! ```text
//!   rho(gain) = -a * [cash] + rho(Z) * b
//! ```
//!
//! so risk evaluation reduces to the base loading rho(Z) on the driver law.

use std::fmt;
use std::sync::Arc;

use crate::market::{GainMoments, Invariance, MarketModel, Strategy};
use crate::quad;
use crate::stable::{StableKind, StableLaw};
use crate::{Error, Result};

type BaseRiskFn = Arc<dyn Fn(&StableLaw) -> Result<f64> + Send + Sync>;

#[derive(Clone)]
pub(crate) enum RiskKind {
    /// Value-at-risk at level p: the (1-p)-quantile of the loss -X.
    ValueAtRisk(f64),
    /// Average value-at-risk at level p: the mean of VaR_q over q in (0, p).
    AverageValueAtRisk(f64),
    /// Standard deviation; finite only for the Brownian driver.
    StdDev,
    /// User-supplied base loading rho(Z) with a declared invariance.
    Custom { base: BaseRiskFn, invariance: Invariance },
}

/// A risk measure specification, evaluated either on the driver law directly
/// ([`RiskSpec::rho_base`]) or on the gain of a strategy via the closed-form
/// decomposition ([`RiskSpec::rho_closed`]).
#[derive(Clone)]
pub struct RiskSpec {
    kind: RiskKind,
}

impl fmt::Debug for RiskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            RiskKind::ValueAtRisk(p) => write!(f, "RiskSpec::var({p})"),
            RiskKind::AverageValueAtRisk(p) => write!(f, "RiskSpec::avar({p})"),
            RiskKind::StdDev => write!(f, "RiskSpec::std_dev()"),
            RiskKind::Custom { invariance, .. } => {
                write!(f, "RiskSpec::custom({invariance:?})")
            }
        }
    }
}

impl RiskSpec {
    pub fn var(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Invalid(format!(
                "value-at-risk level must lie in (0,1), got {p}"
            )));
        }
        Ok(RiskSpec { kind: RiskKind::ValueAtRisk(p) })
    }

    pub fn avar(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Invalid(format!(
                "average value-at-risk level must lie in (0,1), got {p}"
            )));
        }
        Ok(RiskSpec { kind: RiskKind::AverageValueAtRisk(p) })
    }

    pub fn std_dev() -> Self {
        RiskSpec { kind: RiskKind::StdDev }
    }

    pub fn custom(base: BaseRiskFn, invariance: Invariance) -> Self {
        RiskSpec { kind: RiskKind::Custom { base, invariance } }
    }

    /// Cash for the quantile-based measures, shift for standard deviation,
    /// as declared for custom measures.
    pub fn invariance(&self) -> Invariance {
        match &self.kind {
            RiskKind::ValueAtRisk(_) | RiskKind::AverageValueAtRisk(_) => Invariance::Cash,
            RiskKind::StdDev => Invariance::Shift,
            RiskKind::Custom { invariance, .. } => *invariance,
        }
    }

    /// Base loading rho(Z) on a one-dimensional driver law.
    ///
    /// VaR(p) is the loss quantile -Q(p) (equal to Q(1-p) for symmetric
    /// laws, where that form is used so the mirrored inversion is hit).
    /// AVaR(p) integrates the loss quantile with 64-node Gauss-Legendre
    /// after the substitution q = p u^2, which makes the integrand's q^{-1/2}
    /// style endpoint steepness polynomial; heavy-tailed laws push the
    /// innermost node beyond the quantile bracket and report a convergence
    /// error rather than a truncated value. Standard deviation is 1 for the
    /// Brownian driver and infinite (a domain error) otherwise.
    pub fn rho_base(&self, law: &StableLaw) -> Result<f64> {
        match &self.kind {
            RiskKind::Custom { base, .. } => base(law),
            RiskKind::StdDev => match law.kind() {
                StableKind::Brownian { .. } => Ok(1.0),
                _ => Err(Error::Domain(
                    "standard deviation is infinite for stable drivers with alpha < 2".into(),
                )),
            },
            RiskKind::ValueAtRisk(p) => {
                if law.dim() != 1 {
                    return Err(Error::Domain(
                        "value-at-risk needs a one-dimensional law".into(),
                    ));
                }
                if law_is_symmetric(law) {
                    law.quantile(1.0 - p)
                } else {
                    Ok(-law.quantile(*p)?)
                }
            }
            RiskKind::AverageValueAtRisk(p) => {
                if law.dim() != 1 {
                    return Err(Error::Domain(
                        "average value-at-risk needs a one-dimensional law".into(),
                    ));
                }
                // AVaR = (1/p) int_0^p -Q(q) dq = 2 int_0^1 -Q(p u^2) u du.
                let rule = quad::tail_rule();
                let mut total = 0.0;
                for (u, w) in rule.mapped(0.0, 1.0) {
                    total += w * -law.quantile(p * u * u)? * u;
                }
                Ok(2.0 * total)
            }
        }
    }

    /// rho of the gain over (t_from, T]: the closed-form decomposition
    /// applied to the strategy's gain moments.
    pub fn rho_closed(
        &self,
        model: &MarketModel,
        strategy: &Strategy,
        from: usize,
    ) -> Result<f64> {
        let moments = model.gain_moments(strategy, from)?;
        let loading = self.rho_base(&model.law().standardized())?;
        Ok(self.rho_from_moments(loading, moments))
    }

    /// The statistic this specification computes; the empirical estimators
    /// mirror the closed forms case by case.
    pub(crate) fn kind(&self) -> &RiskKind {
        &self.kind
    }

    /// Assembles rho(a + b Z) = -a [cash] + rho(Z) b from precomputed parts.
    pub fn rho_from_moments(&self, loading: f64, moments: GainMoments) -> f64 {
        let cash = match self.invariance() {
            Invariance::Cash => moments.a,
            Invariance::Shift => 0.0,
        };
        -cash + loading * moments.b
    }
}

fn law_is_symmetric(law: &StableLaw) -> bool {
    match law.kind() {
        StableKind::Brownian { .. } | StableKind::Symmetric1d => true,
        StableKind::Skewed1d { up_weight } => *up_weight == 0.5,
        StableKind::Spectral(m) => m.is_symmetric(),
    }
}

// =====================================================================
// tests
// =====================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{Curve, MatrixCurve, TimeGrid};

    fn brownian() -> StableLaw {
        StableLaw::brownian(1).unwrap()
    }

    #[test]
    fn var_on_brownian_is_the_normal_quantile() {
        let spec = RiskSpec::var(0.01).unwrap();
        let got = spec.rho_base(&brownian()).unwrap();
        assert!(
            (got - 2.3263478740408408).abs() < 1e-9,
            "VaR(1%) on the normal driver: {got}"
        );
    }

    #[test]
    fn avar_on_brownian_matches_closed_form() {
        // AVaR_p(N(0,1)) = pdf(z_{1-p}) / p.
        let spec = RiskSpec::avar(0.01).unwrap();
        let got = spec.rho_base(&brownian()).unwrap();
        assert!(
            (got - 2.665214220345808).abs() < 5e-8,
            "AVaR(1%) on the normal driver: {got}"
        );
        let spec10 = RiskSpec::avar(0.10).unwrap();
        let z90 = 1.2815515655446004_f64;
        let expected = (-0.5 * z90 * z90).exp() / (2.0 * std::f64::consts::PI).sqrt() / 0.10;
        let got10 = spec10.rho_base(&brownian()).unwrap();
        assert!(
            (got10 - expected).abs() < 5e-8,
            "AVaR(10%): {got10} vs {expected}"
        );
    }

    #[test]
    fn avar_dominates_var_at_the_same_level() {
        let var = RiskSpec::var(0.05).unwrap().rho_base(&brownian()).unwrap();
        let avar = RiskSpec::avar(0.05).unwrap().rho_base(&brownian()).unwrap();
        assert!(avar > var, "AVaR {avar} should exceed VaR {var}");
    }

    #[test]
    fn std_dev_is_unit_for_brownian_and_rejected_for_stable() {
        let sd = RiskSpec::std_dev();
        assert_eq!(sd.rho_base(&brownian()).unwrap(), 1.0);
        let stable = StableLaw::symmetric(1.5, 1.0).unwrap();
        assert!(
            matches!(sd.rho_base(&stable), Err(Error::Domain(_))),
            "sd of a heavy-tailed law must be a domain error"
        );
    }

    #[test]
    fn var_on_symmetric_stable_matches_frozen_quantile() {
        let law = StableLaw::symmetric(1.5, 1.0).unwrap();
        let got = RiskSpec::var(0.01).unwrap().rho_base(&law).unwrap();
        assert!(
            (got - 10.894499757178).abs() < 1e-5,
            "stable VaR(1%): {got}"
        );
    }

    #[test]
    fn skewed_var_is_the_negated_lower_quantile() {
        let law = StableLaw::skewed(1.2, 1.0, 0.2).unwrap();
        let got = RiskSpec::var(0.1).unwrap().rho_base(&law).unwrap();
        let expected = -law.quantile(0.1).unwrap();
        assert_eq!(got, expected, "skewed VaR convention");
        assert!(got > 0.0);
    }

    #[test]
    fn avar_on_heavy_tail_reports_convergence_error() {
        // The innermost substituted node needs a quantile around 1e-9, far
        // outside the CDF inversion's reliable bracket.
        let law = StableLaw::symmetric(1.5, 1.0).unwrap();
        let res = RiskSpec::avar(0.01).unwrap().rho_base(&law);
        assert!(
            matches!(res, Err(Error::Convergence(_))),
            "expected a convergence error, got {res:?}"
        );
    }

    fn unit_market() -> MarketModel {
        // mu - r = 0.06, r = 0, sigma = 0.2, T = 1: a = 0.06, b = 0.2.
        MarketModel::alpha2(
            0.0,
            1.0,
            10.0,
            vec![Curve::constant(0.06)],
            MatrixCurve::constant(1, &[0.2]).unwrap(),
            MatrixCurve::constant(1, &[1.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn rho_closed_matches_decomposition_examples() {
        let model = unit_market();
        let grid = TimeGrid::new(1, 1.0).unwrap();
        let strat = Strategy::constant(grid, vec![1.0]).unwrap();

        // shift-invariant sd: rho = 1 * b = 0.2
        let sd = RiskSpec::std_dev().rho_closed(&model, &strat, 0).unwrap();
        assert!((sd - 0.2).abs() < 1e-12, "sd rho: {sd}");

        // cash-invariant VaR(1%): rho = -0.06 + z_{99%} * 0.2
        let var = RiskSpec::var(0.01)
            .unwrap()
            .rho_closed(&model, &strat, 0)
            .unwrap();
        let expected = -0.06 + 2.3263478740408408 * 0.2;
        assert!((var - expected).abs() < 1e-9, "VaR rho: {var} vs {expected}");
    }

    #[test]
    fn rho_closed_is_positively_homogeneous() {
        let model = unit_market();
        let grid = TimeGrid::new(4, 1.0).unwrap();
        let spec = RiskSpec::var(0.01).unwrap();
        let base = Strategy::constant(grid, vec![0.7]).unwrap();
        let rho1 = spec.rho_closed(&model, &base, 0).unwrap();
        for kappa in [0.5, 2.0, 3.5] {
            let scaled = Strategy::constant(grid, vec![0.7 * kappa]).unwrap();
            let got = spec.rho_closed(&model, &scaled, 0).unwrap();
            assert!(
                (got - kappa * rho1).abs() < 1e-12 * (1.0 + rho1.abs()),
                "homogeneity at kappa {kappa}: {got} vs {}",
                kappa * rho1
            );
        }
    }

    #[test]
    fn rho_closed_midpoint_convexity_holds() {
        // -a is linear and b is a norm of the strategy, so rho is convex.
        let model = MarketModel::alpha2(
            0.02,
            2.0,
            100.0,
            vec![Curve::constant(0.08), Curve::constant(0.06)],
            MatrixCurve::constant(2, &[0.20, 0.10, 0.10, 0.15]).unwrap(),
            MatrixCurve::constant(2, &[1.0, 0.5, 0.5, 1.0]).unwrap(),
        )
        .unwrap();
        let grid = TimeGrid::new(2, 2.0).unwrap();
        let spec = RiskSpec::var(0.05).unwrap();
        let u1 = Strategy::constant(grid, vec![1.0, -2.0]).unwrap();
        let u2 = Strategy::constant(grid, vec![-0.5, 3.0]).unwrap();
        let mid = Strategy::constant(grid, vec![0.25, 0.5]).unwrap();
        let r1 = spec.rho_closed(&model, &u1, 0).unwrap();
        let r2 = spec.rho_closed(&model, &u2, 0).unwrap();
        let rm = spec.rho_closed(&model, &mid, 0).unwrap();
        assert!(
            rm <= 0.5 * (r1 + r2) + 1e-12,
            "midpoint convexity violated: {rm} > {}",
            0.5 * (r1 + r2)
        );
    }

    #[test]
    fn custom_measure_uses_declared_invariance() {
        let model = unit_market();
        let grid = TimeGrid::new(1, 1.0).unwrap();
        let strat = Strategy::constant(grid, vec![1.0]).unwrap();
        let base: BaseRiskFn = Arc::new(|_law| Ok(2.0));
        let cash = RiskSpec::custom(base.clone(), Invariance::Cash);
        let shift = RiskSpec::custom(base, Invariance::Shift);
        let rc = cash.rho_closed(&model, &strat, 0).unwrap();
        let rs = shift.rho_closed(&model, &strat, 0).unwrap();
        assert!((rc - (-0.06 + 0.4)).abs() < 1e-12, "cash custom: {rc}");
        assert!((rs - 0.4).abs() < 1e-12, "shift custom: {rs}");
    }

    #[test]
    fn level_validation_rejects_out_of_range_p() {
        assert!(RiskSpec::var(0.0).is_err());
        assert!(RiskSpec::var(1.0).is_err());
        assert!(RiskSpec::avar(-0.1).is_err());
    }
}
