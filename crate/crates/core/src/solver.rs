//! Equilibrium solver: backward recursion over the decision grid plus the
//! closed-form special cases and the continuous-time diagnostics that
//! certify a solution.
//!
//! The gain over (t_n, T] splits into the step just being decided and a
//! tail that is already fixed by later decisions, because both moments are
//! additive over intervals: a adds linearly and b^alpha adds. The per-step
//! problem "maximize J_n(u) over the admissible box" therefore only needs
//! the two tail scalars, and the recursion walks backward accumulating
//! them. Each step is solved by the cheapest applicable route:
//!
//! 1. a corner rule when the objective is linear in u,
//! 2. an exact d x d linear solve when the first-order condition is linear
//!    (no penalty with the exponential target, or the quadratic-penalty
//!    family with a shift-invariant risk),
//! 3. a cone-lock test deciding u = 0 when the risk term has a kink there,
//! 4. bisection (d = 1) or cyclic coordinate ascent (d >= 2) on the
//!    analytic gradient,
//! 5. derivative-free golden-section search when no analytic gradient is
//!    available (custom targets outside the brownian regime).
//!
//! The per-step objective is concave whenever the target is concave
//! increasing, the penalty is convex nondecreasing, and the risk loading is
//! non-negative, so a vanishing projected gradient certifies the maximum.

use crate::linalg;
use crate::market::{GainMoments, Invariance, MarketModel, Regime, Strategy, TimeGrid};
use crate::objective::{
    dj_from_moments, expected_target, j_from_moments, ObjectiveSpec, PenaltyKind, TargetSpec,
};
use crate::stable::StableKind;
use crate::{Error, Result};

/// Tuning knobs for [`solve_equilibrium`].
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Projected-gradient residual each step must reach.
    pub foc_tol: f64,
    /// Iteration budget per step (bisection steps or ascent sweeps).
    pub max_iter: usize,
    /// Skip the closed-form step routes and always optimize numerically.
    pub force_numeric: bool,
    /// Optional interior starting point for the numeric searches; used by
    /// tests to confirm the maximizer does not depend on the start.
    pub start_hint: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            foc_tol: 1e-10,
            max_iter: 200,
            force_numeric: false,
            start_hint: None,
        }
    }
}

/// Which route produced a step's allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMethod {
    /// Linear objective, optimum at a box corner.
    CornerRule,
    /// Exact linear solve of the first-order condition.
    LinearSolve,
    /// Kink test at u = 0 locked the step to zero.
    ConeLock,
    /// Bisection or coordinate ascent on the analytic gradient.
    GradientSearch,
    /// Derivative-free golden-section search.
    ValueSearch,
}

/// Per-step record of how the optimum was found.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub method: StepMethod,
    /// Bisection iterations or ascent sweeps (0 for closed-form routes).
    pub iterations: usize,
    /// Projected-gradient residual at the returned allocation.
    pub residual: f64,
    /// Some component of the allocation sits on the box boundary.
    pub box_bound: bool,
}

/// Output of the backward recursion.
#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    /// Equilibrium allocation, values\[n\] in force on (t_n, t_{n+1}].
    pub strategy: Strategy,
    /// Equilibrium value at each grid point, values\[N\] = T(0) - lambda_T F(0).
    pub values: Vec<f64>,
    /// Projected-gradient residual per step.
    pub residuals: Vec<f64>,
    pub steps: Vec<StepDiagnostics>,
    /// Non-fatal findings (nonpositive risk loading, sampled cone
    /// certificates, box clipping).
    pub warnings: Vec<String>,
}

/// Continuous-time equilibrium curve from the backward marching scheme.
#[derive(Debug, Clone)]
pub struct ContinuousSolution {
    /// values\[j\] holds the curve sampled at the right endpoint t_{j+1}.
    pub strategy: Strategy,
    /// A first-order penalty at zero risk forces the zero curve.
    pub collapsed: bool,
}

/// Value of the running risk-penalty generator along a strategy.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorRisk {
    pub value: f64,
    /// The w = 0 limit convention was used for the tail norm.
    pub degenerate: bool,
}

/// Everything the per-step optimizer needs: the step integrals, the tail
/// moments, and the objective pieces at the decision time.
struct StepWork<'a> {
    model: &'a MarketModel,
    objective: &'a ObjectiveSpec,
    /// rho(Z) of the standardized driver (0 when the penalty is zero).
    loading: f64,
    lambda_n: f64,
    t0: f64,
    t1: f64,
    /// Excess-drift integral of the step, the gradient of a.
    c: Vec<f64>,
    /// alpha = 2 only: integral of sigma R sigma^T e^{2r(T-s)}.
    gram: Option<Vec<f64>>,
    /// d = 1 only: scale-power integral of the unit allocation.
    kpow: f64,
    a_tail: f64,
    p_tail: f64,
    alpha: f64,
    dim: usize,
}

impl StepWork<'_> {
    /// b^alpha contribution of this step alone.
    fn pow(&self, u: &[f64]) -> f64 {
        match &self.gram {
            Some(g) => linalg::quad_form(self.dim, g, u).max(0.0),
            None if self.dim == 1 => {
                // One-dimensional regimes: |u|^alpha scales the unit integral.
                u[0].abs().powf(self.alpha) * self.kpow
            }
            None => self.model.scale_power_integral(u, self.t0, self.t1),
        }
    }

    fn moments(&self, u: &[f64]) -> GainMoments {
        let a = linalg::dot(&self.c, u) + self.a_tail;
        let pow = self.pow(u) + self.p_tail;
        GainMoments {
            a,
            b: pow.max(0.0).powf(1.0 / self.alpha),
        }
    }

    fn j(&self, u: &[f64]) -> Result<f64> {
        j_from_moments(
            self.objective,
            self.model,
            self.lambda_n,
            self.loading,
            self.moments(u),
        )
    }

    /// Analytic gradient of J_n at u. Uses the b = 0 convention db = 0,
    /// which is only reached when no kink is active there.
    fn grad(&self, u: &[f64]) -> Result<Vec<f64>> {
        let moments = self.moments(u);
        let dpow = match &self.gram {
            Some(g) => linalg::mat_vec(self.dim, g, u).iter().map(|x| 2.0 * x).collect(),
            None => self.model.scale_power_gradient(u, self.t0, self.t1)?,
        };
        let denom = self.alpha * moments.b.powf(self.alpha - 1.0);
        let mut out = Vec::with_capacity(self.dim);
        for k in 0..self.dim {
            let db = if moments.b == 0.0 { 0.0 } else { dpow[k] / denom };
            out.push(dj_from_moments(
                self.objective,
                self.model,
                self.lambda_n,
                self.loading,
                moments,
                self.c[k],
                db,
            )?);
        }
        Ok(out)
    }
}

/// Infinity norm of the box-projected gradient: interior components count
/// fully, components pinned at a bound only count improvement directions
/// that point back inside.
fn projected_residual(u: &[f64], grad: &[f64], lo: f64, hi: f64) -> f64 {
    let edge = 1e-12 * hi.abs().max(1.0);
    u.iter()
        .zip(grad)
        .map(|(&ui, &gi)| {
            if ui >= hi - edge {
                (-gi).max(0.0)
            } else if ui <= lo + edge {
                gi.max(0.0)
            } else {
                gi.abs()
            }
        })
        .fold(0.0, f64::max)
}

fn on_box(u: &[f64], bound: f64) -> bool {
    let edge = 1e-12 * bound.max(1.0);
    u.iter().any(|&x| x.abs() >= bound - edge)
}

/// Target slope in a at b = 0 (the gain is then the point mass at a_tail).
fn target_slope_at_tail(target: &TargetSpec, a_tail: f64) -> f64 {
    match target {
        TargetSpec::Identity => 1.0,
        TargetSpec::Exponential { beta, gamma } => gamma / beta * (-gamma * a_tail).exp(),
        TargetSpec::Custom { .. } => target.deriv(a_tail),
    }
}

/// One-dimensional bisection on a nonincreasing gradient g with
/// g(lo) > 0 > g(hi). Returns the root location and iteration count.
fn bisect_gradient<F: FnMut(f64) -> Result<f64>>(
    mut g: F,
    mut lo: f64,
    mut hi: f64,
    width_tol: f64,
    max_iter: usize,
) -> Result<(f64, usize)> {
    let mut iters = 0;
    while hi - lo > width_tol && iters < max_iter {
        let mid = 0.5 * (lo + hi);
        if g(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
    }
    Ok((0.5 * (lo + hi), iters))
}

/// Golden-section maximization of a unimodal function on [a, b].
fn golden_max<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    width_tol: f64,
    max_iter: usize,
) -> Result<(f64, usize)> {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut iters = 0;
    while b - a > width_tol && iters < max_iter {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d)?;
        }
        iters += 1;
    }
    Ok((0.5 * (a + b), iters))
}

/// Deterministic direction samples for the cone certificate in regimes
/// without a closed dual norm: the axes, the drift direction, and a fixed
/// pseudo-random batch.
fn sample_directions(dim: usize, c: &[f64]) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for k in 0..dim {
        for sign in [1.0, -1.0] {
            let mut v = vec![0.0; dim];
            v[k] = sign;
            dirs.push(v);
        }
    }
    let norm = linalg::dot(c, c).sqrt();
    if norm > 0.0 {
        dirs.push(c.iter().map(|x| x / norm).collect());
        dirs.push(c.iter().map(|x| -x / norm).collect());
    }
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    for _ in 0..64 {
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            // Map the top bits to (-1, 1).
            v.push((state >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0);
        }
        let n = linalg::dot(&v, &v).sqrt();
        if n > 1e-9 {
            dirs.push(v.iter().map(|x| x / n).collect());
        }
    }
    dirs
}

struct StepOutcome {
    u: Vec<f64>,
    diag: StepDiagnostics,
}

fn solve_step(
    work: &StepWork,
    config: &SolverConfig,
    bound: f64,
    one_sided: bool,
    step: usize,
    warnings: &mut Vec<String>,
) -> Result<StepOutcome> {
    let dim = work.dim;
    let lo = if one_sided { 0.0 } else { -bound };
    let hi = bound;
    let penalty_zero = matches!(work.objective.penalty.kind(), PenaltyKind::Zero);
    let mut warm_start: Option<Vec<f64>> = None;

    if !config.force_numeric {
        // Route 1: zero penalty and identity target make J_n affine in u,
        // so the maximum sits at a box corner chosen by the drift sign.
        if penalty_zero && matches!(work.objective.target, TargetSpec::Identity) {
            let u: Vec<f64> = work
                .c
                .iter()
                .map(|&ck| {
                    if ck > 0.0 {
                        hi
                    } else if ck < 0.0 {
                        lo
                    } else {
                        0.0
                    }
                })
                .collect();
            let residual = projected_residual(&u, &work.c, lo, hi);
            let box_bound = on_box(&u, bound);
            return Ok(StepOutcome {
                u,
                diag: StepDiagnostics {
                    method: StepMethod::CornerRule,
                    iterations: 0,
                    residual,
                    box_bound,
                },
            });
        }

        // Routes 2 and 3: first-order conditions that are linear in u. The
        // tails drop out in both cases, so the solve is exact.
        let linear_rhs_scale = if penalty_zero {
            match work.objective.target {
                // gamma G u = c for the exponential target without penalty.
                TargetSpec::Exponential { gamma, .. } => Some(1.0 / gamma),
                _ => None,
            }
        } else if matches!(work.objective.target, TargetSpec::Identity)
            && matches!(work.objective.penalty.kind(), PenaltyKind::PositiveSquare)
            && work.objective.risk.invariance() == Invariance::Shift
            && work.loading > 0.0
        {
            // J = a - lambda (loading b)^2 is an exact quadratic:
            // 2 lambda loading^2 G u = c.
            Some(1.0 / (2.0 * work.lambda_n * work.loading * work.loading))
        } else {
            None
        };
        if let (Some(scale), Some(gram)) = (linear_rhs_scale, &work.gram) {
            let u: Vec<f64> = linalg::solve_spd(dim, gram, &work.c)
                .map_err(|e| {
                    Error::Singular(format!("step {step}: scale matrix is singular ({e})"))
                })?
                .iter()
                .map(|x| x * scale)
                .collect();
            let inside = u
                .iter()
                .all(|&x| x <= hi * (1.0 + 1e-12) + 1e-300 && x >= lo * (1.0 + 1e-12) - 1e-300);
            if inside {
                let residual = projected_residual(&u, &work.grad(&u)?, lo, hi);
                if residual <= config.foc_tol {
                    return Ok(StepOutcome {
                        u,
                        diag: StepDiagnostics {
                            method: StepMethod::LinearSolve,
                            iterations: 0,
                            residual,
                            box_bound: false,
                        },
                    });
                }
                warm_start = Some(u);
            } else {
                // The unconstrained optimum leaves the box; restart the
                // numeric search from its clipped projection.
                warm_start = Some(u.iter().map(|x| x.clamp(lo, hi)).collect());
            }
        }
    }

    // Numeric path. First decide whether the risk term has a kink at u = 0:
    // only possible when the tail norm vanishes and the penalty has positive
    // slope at the zero-tail risk level.
    let rho0 = work.objective.risk.rho_from_moments(
        work.loading,
        GainMoments {
            a: work.a_tail,
            b: work.p_tail.max(0.0).powf(1.0 / work.alpha),
        },
    );
    let fp0 = work.objective.penalty.kind().deriv(rho0);
    let k2 = work.lambda_n * fp0 * work.loading;
    let kink = work.p_tail <= 0.0 && k2 > 0.0;
    let is_cash = work.objective.risk.invariance() == Invariance::Cash;
    let k1 = target_slope_at_tail(&work.objective.target, work.a_tail)
        + if is_cash { work.lambda_n * fp0 } else { 0.0 };

    if kink {
        // Cone-lock test: u = 0 is optimal iff the one-sided directional
        // derivative k1 <c, v> - k2 s(v) is nonpositive for every feasible
        // direction v, where s(v) is this step's scale seminorm. With the
        // dual norm s* this reads k1 s*(c) <= k2.
        let locked = if let Some(gram) = &work.gram {
            let x = linalg::solve_spd(dim, gram, &work.c)
                .map_err(|e| Error::Singular(format!("step {step}: {e}")))?;
            let s_star = linalg::dot(&work.c, &x).max(0.0).sqrt();
            if one_sided {
                k1 * work.c[0] <= k2 * work.kpow.powf(1.0 / work.alpha)
            } else {
                k1.abs() * s_star <= k2
            }
        } else if dim == 1 {
            let s1 = work.kpow.powf(1.0 / work.alpha);
            if one_sided {
                k1 * work.c[0] <= k2 * s1
            } else {
                k1.abs() * work.c[0].abs() <= k2 * s1
            }
        } else {
            // No closed dual norm: certify on sampled directions only.
            let dirs = sample_directions(dim, &work.c);
            let locked = dirs.iter().all(|v| {
                let s = work.pow(v).max(0.0).powf(1.0 / work.alpha);
                k1 * linalg::dot(&work.c, v) - k2 * s <= 0.0
            });
            if locked {
                warnings.push(format!(
                    "step {step}: zero allocation certified only on sampled directions \
                     (no closed dual norm in this regime)"
                ));
            }
            locked
        };
        if locked {
            return Ok(StepOutcome {
                u: vec![0.0; dim],
                diag: StepDiagnostics {
                    method: StepMethod::ConeLock,
                    iterations: 0,
                    residual: 0.0,
                    box_bound: false,
                },
            });
        }
    }

    let grads_supported = match &work.objective.target {
        TargetSpec::Identity => true,
        TargetSpec::Exponential { .. } | TargetSpec::Custom { .. } => {
            matches!(work.model.law().kind(), StableKind::Brownian { .. })
        }
    };
    let width_tol = 1e-13 * bound.max(1.0);

    if grads_supported {
        if dim == 1 {
            let mut geval = |x: f64| -> Result<f64> { Ok(work.grad(&[x])?[0]) };
            let s1 = work.kpow.powf(1.0 / work.alpha);
            // One-sided slopes at the kink; away from it the gradient is
            // continuous and these equal the limit of geval.
            let g_zero_plus = if kink { k1 * work.c[0] - k2 * s1 } else { f64::NAN };
            let g_zero_minus = if kink { k1 * work.c[0] + k2 * s1 } else { f64::NAN };

            let (l, gl, h, gh) = if kink {
                if g_zero_plus > 0.0 {
                    (0.0, g_zero_plus, hi, geval(hi)?)
                } else {
                    // The cone test failed on the negative side, so the
                    // optimum sits left of zero.
                    (lo, geval(lo)?, 0.0, g_zero_minus)
                }
            } else {
                (lo, geval(lo)?, hi, geval(hi)?)
            };

            let (u0, iters) = if gh >= 0.0 {
                (h, 0)
            } else if gl <= 0.0 {
                (l, 0)
            } else {
                bisect_gradient(&mut geval, l, h, width_tol, config.max_iter)?
            };
            let u = vec![u0];
            let residual = projected_residual(&u, &work.grad(&u)?, lo, hi);
            if residual > config.foc_tol && !on_box(&u, bound) && u0 != 0.0 {
                return Err(Error::Convergence(format!(
                    "step {step}: projected gradient residual {residual:.3e} \
                     after {iters} bisection iterations"
                )));
            }
            return Ok(StepOutcome {
                u,
                diag: StepDiagnostics {
                    method: StepMethod::GradientSearch,
                    iterations: iters,
                    residual,
                    box_bound: on_box(&[u0], bound),
                },
            });
        }

        // d >= 2: cyclic coordinate ascent, each coordinate solved by
        // bisection of the partial derivative. J is concave and smooth off
        // u = 0, and the iterate leaves 0 immediately below.
        let mut u = config
            .start_hint
            .clone()
            .filter(|s| s.len() == dim)
            .or(warm_start)
            .map(|s| s.iter().map(|x| x.clamp(lo, hi)).collect::<Vec<f64>>())
            .unwrap_or_else(|| vec![0.0; dim]);
        if kink && u.iter().all(|&x| x == 0.0) {
            // Kick off the kink along the steepest feasible direction.
            let dir = if let Some(gram) = &work.gram {
                linalg::solve_spd(dim, gram, &work.c)
                    .map_err(|e| Error::Singular(format!("step {step}: {e}")))?
            } else {
                let dirs = sample_directions(dim, &work.c);
                dirs.into_iter()
                    .max_by(|a, b| {
                        let score = |v: &[f64]| {
                            k1 * linalg::dot(&work.c, v)
                                - k2 * work.pow(v).max(0.0).powf(1.0 / work.alpha)
                        };
                        score(a).total_cmp(&score(b))
                    })
                    .unwrap_or_else(|| vec![1.0; dim])
            };
            let scale = dir.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if scale > 0.0 {
                let kick = 1e-3 * bound.max(1.0) / scale;
                u = dir.iter().map(|x| (x * kick).clamp(lo, hi)).collect();
            }
        }

        let mut sweeps = 0;
        let mut residual = f64::INFINITY;
        // Coordinate ascent contracts slowly when the scale matrix is badly
        // conditioned, so it only has to carry the iterate near the optimum
        // (or stall); the Newton polish below supplies the precision.
        let stall_tol = 1e-7 * bound.max(1.0);
        while sweeps < config.max_iter {
            let mut max_move = 0.0f64;
            for k in 0..dim {
                let mut probe = u.clone();
                let mut geval = |x: f64| -> Result<f64> {
                    probe[k] = x;
                    Ok(work.grad(&probe)?[k])
                };
                let gh = geval(hi)?;
                let gl = geval(lo)?;
                let next = if gh >= 0.0 {
                    hi
                } else if gl <= 0.0 {
                    lo
                } else {
                    bisect_gradient(&mut geval, lo, hi, width_tol, config.max_iter)?.0
                };
                max_move = max_move.max((next - u[k]).abs());
                u[k] = next;
            }
            sweeps += 1;
            residual = projected_residual(&u, &work.grad(&u)?, lo, hi);
            if residual <= config.foc_tol || max_move <= stall_tol {
                break;
            }
        }

        // Active-set Newton polish with a finite-difference Jacobian of the
        // analytic gradient: quadratic convergence wipes out the
        // conditioning floor of the sweeps.
        let mut polish_iters = 0;
        for _ in 0..40 {
            let g = work.grad(&u)?;
            let edge = 1e-12 * bound.max(1.0);
            let free: Vec<usize> = (0..dim)
                .filter(|&k| {
                    let pinned_hi = u[k] >= hi - edge && g[k] >= 0.0;
                    let pinned_lo = u[k] <= lo + edge && g[k] <= 0.0;
                    !pinned_hi && !pinned_lo
                })
                .collect();
            if free.is_empty() {
                break;
            }
            let m = free.len();
            let mut neg_jac = vec![0.0; m * m];
            for (j_idx, &kj) in free.iter().enumerate() {
                let h = 1e-6 * u[kj].abs().max(1.0);
                let mut up = u.clone();
                let mut down = u.clone();
                up[kj] += h;
                down[kj] -= h;
                let gu = work.grad(&up)?;
                let gd = work.grad(&down)?;
                for (i_idx, &ki) in free.iter().enumerate() {
                    neg_jac[i_idx * m + j_idx] = -(gu[ki] - gd[ki]) / (2.0 * h);
                }
            }
            // Concavity makes -J positive definite on the free set; a
            // breakdown just means the polish cannot help further.
            let rhs: Vec<f64> = free.iter().map(|&k| g[k]).collect();
            let Ok(delta) = linalg::solve_spd(m, &neg_jac, &rhs) else {
                break;
            };
            let mut next = u.clone();
            for (i_idx, &k) in free.iter().enumerate() {
                next[k] = (next[k] + delta[i_idx]).clamp(lo, hi);
            }
            let next_residual = projected_residual(&next, &work.grad(&next)?, lo, hi);
            polish_iters += 1;
            if next_residual <= residual || next_residual <= config.foc_tol {
                let step_size = delta.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
                u = next;
                residual = next_residual;
                if step_size <= 1e-13 * bound.max(1.0) {
                    break;
                }
            } else {
                break;
            }
        }

        if residual > config.foc_tol {
            return Err(Error::Convergence(format!(
                "step {step}: projected gradient residual {residual:.3e} \
                 after {sweeps} ascent sweeps and {polish_iters} polish steps"
            )));
        }
        let box_bound = on_box(&u, bound);
        return Ok(StepOutcome {
            u,
            diag: StepDiagnostics {
                method: StepMethod::GradientSearch,
                iterations: sweeps + polish_iters,
                residual,
                box_bound,
            },
        });
    }

    // Derivative-free fallback: golden-section search on J itself. The
    // convergence certificate is the bracket width, and the reported
    // residual is a finite-difference estimate.
    let fd_residual = |u: &[f64]| -> Result<f64> {
        let mut grad = vec![0.0; dim];
        for k in 0..dim {
            let h = 1e-6 * u[k].abs().max(1.0);
            let mut up = u.to_vec();
            let mut down = u.to_vec();
            up[k] = (u[k] + h).min(hi);
            down[k] = (u[k] - h).max(lo);
            grad[k] = (work.j(&up)? - work.j(&down)?) / (up[k] - down[k]);
        }
        Ok(projected_residual(u, &grad, lo, hi))
    };
    // The finite-difference residual below cannot resolve past ~1e-7, so a
    // tighter bracket only burns expensive objective evaluations.
    let gold_tol = 1e-7 * bound.max(1.0);
    if dim == 1 {
        let mut best = (vec![0.0], f64::NEG_INFINITY, 0usize);
        // A kink splits the domain into two unimodal segments.
        let segments: Vec<(f64, f64)> = if kink && lo < 0.0 {
            vec![(lo, 0.0), (0.0, hi)]
        } else {
            vec![(lo, hi)]
        };
        for (a, b) in segments {
            let (x, it) = golden_max(|x| work.j(&[x]), a, b, gold_tol, config.max_iter * 4)?;
            // The segment endpoints can beat the interior probe.
            for cand in [x, a, b] {
                let val = work.j(&[cand])?;
                if val > best.1 {
                    best = (vec![cand], val, it);
                }
            }
        }
        let residual = fd_residual(&best.0)?;
        return Ok(StepOutcome {
            u: best.0.clone(),
            diag: StepDiagnostics {
                method: StepMethod::ValueSearch,
                iterations: best.2,
                residual,
                box_bound: on_box(&best.0, bound),
            },
        });
    }
    let mut u = config
        .start_hint
        .clone()
        .filter(|s| s.len() == dim)
        .map(|s| s.iter().map(|x| x.clamp(lo, hi)).collect::<Vec<f64>>())
        .unwrap_or_else(|| vec![0.0; dim]);
    let mut best_j = work.j(&u)?;
    let mut sweeps = 0;
    loop {
        let mut improved = 0.0f64;
        for k in 0..dim {
            let mut probe = u.clone();
            let (x, _) = golden_max(
                |x| {
                    probe[k] = x;
                    work.j(&probe)
                },
                lo,
                hi,
                gold_tol,
                config.max_iter * 4,
            )?;
            probe[k] = x;
            let val = work.j(&probe)?;
            if val > best_j {
                improved = improved.max(val - best_j);
                best_j = val;
                u = probe;
            }
        }
        sweeps += 1;
        if improved <= 1e-14 * (1.0 + best_j.abs()) {
            break;
        }
        if sweeps >= config.max_iter {
            return Err(Error::Convergence(format!(
                "step {step}: derivative-free search still improving after {sweeps} sweeps"
            )));
        }
    }
    // Guard the kink: zero must not beat the smooth-segment optimum.
    if kink && work.j(&vec![0.0; dim])? > best_j {
        u = vec![0.0; dim];
    }
    let residual = fd_residual(&u)?;
    let box_bound = on_box(&u, bound);
    Ok(StepOutcome {
        u,
        diag: StepDiagnostics {
            method: StepMethod::ValueSearch,
            iterations: sweeps,
            residual,
            box_bound,
        },
    })
}

/// Backward recursion for the subgame-equilibrium strategy on `grid`.
///
/// Walks from the horizon to zero, maximizing the per-step objective
/// J_n(u) over the admissible box given the already-fixed tail, and
/// records the equilibrium value V(t_n) = J_n(u_n) at every grid point
/// (V(T) is the terminal constant T(0) - lambda_T F(0)). The reported
/// per-step residuals are projected-gradient norms and satisfy the
/// configured tolerance unless the step used the derivative-free route,
/// whose residual is a finite-difference estimate.
pub fn solve_equilibrium(
    model: &MarketModel,
    objective: &ObjectiveSpec,
    grid: TimeGrid,
    config: &SolverConfig,
) -> Result<EquilibriumResult> {
    if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon().max(1.0) {
        return Err(Error::Invalid(format!(
            "grid horizon {} does not match the market horizon {}",
            grid.horizon(),
            model.horizon()
        )));
    }
    if matches!(objective.target, TargetSpec::Exponential { .. })
        && !matches!(model.law().kind(), StableKind::Brownian { .. })
    {
        return Err(Error::Domain(
            "exponential target needs the brownian regime".into(),
        ));
    }
    let penalty_zero = matches!(objective.penalty.kind(), PenaltyKind::Zero);
    let loading = if penalty_zero {
        0.0
    } else {
        objective.risk.rho_base(&model.law().standardized())?
    };
    let mut warnings = Vec::new();
    if !penalty_zero && loading <= 0.0 {
        warnings.push(format!(
            "risk loading rho(Z) = {loading} is not positive; the penalty rewards \
             scale and the per-step objective may lose concavity"
        ));
    }

    let n = grid.intervals();
    let dim = model.dim();
    let bound = model.bound();
    let one_sided = model.regime() == Regime::OneDim;
    let alpha = model.alpha();
    let is_alpha2 = model.regime() == Regime::Alpha2;

    let mut values = vec![0.0; n + 1];
    let mut residuals = vec![0.0; n];
    let mut steps: Vec<Option<StepDiagnostics>> = vec![None; n];
    let mut strategy_values = vec![vec![0.0; dim]; n];
    values[n] =
        objective.target.value(0.0) - objective.penalty.lambda_at(grid.horizon())
            * objective.penalty.kind().value(0.0);

    let mut a_tail = 0.0;
    let mut p_tail = 0.0;
    for step in (0..n).rev() {
        let t0 = grid.point(step);
        let t1 = grid.point(step + 1);
        let work = StepWork {
            model,
            objective,
            loading,
            lambda_n: objective.penalty.lambda_at(t0),
            t0,
            t1,
            c: model.excess_drift_integral(t0, t1),
            gram: if is_alpha2 {
                Some(model.gram_integral(t0, t1)?)
            } else {
                None
            },
            kpow: if dim == 1 {
                model.scale_power_integral(&[1.0], t0, t1)
            } else {
                0.0
            },
            a_tail,
            p_tail,
            alpha,
            dim,
        };
        let outcome = solve_step(&work, config, bound, one_sided, step, &mut warnings)?;
        a_tail += linalg::dot(&work.c, &outcome.u);
        p_tail += work.pow(&outcome.u);
        values[step] = j_from_moments(
            objective,
            model,
            work.lambda_n,
            loading,
            GainMoments {
                a: a_tail,
                b: p_tail.max(0.0).powf(1.0 / alpha),
            },
        )?;
        residuals[step] = outcome.diag.residual;
        strategy_values[step] = outcome.u;
        steps[step] = Some(outcome.diag);
    }

    let strategy = Strategy::new(grid, strategy_values)?;
    model.check_strategy(&strategy)?;
    Ok(EquilibriumResult {
        strategy,
        values,
        residuals,
        steps: steps.into_iter().map(|d| d.expect("every step solved")).collect(),
        warnings,
    })
}

/// The one-asset quadratic-penalty benchmark on a grid: with constant
/// coefficients, identity target, F(x) = max(0, x)^2 of the standard
/// deviation, the step allocation is
/// (mu - r) / (lambda sigma^2 (e^{r(T - t_n)} + e^{r(T - t_{n+1})})).
pub fn mean_variance_closed(
    mu: f64,
    r: f64,
    sigma: f64,
    lambda: f64,
    grid: TimeGrid,
) -> Result<Strategy> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::Invalid(format!("lambda must be positive, got {lambda}")));
    }
    let horizon = grid.horizon();
    let values = (0..grid.intervals())
        .map(|k| {
            let d0 = (r * (horizon - grid.point(k))).exp();
            let d1 = (r * (horizon - grid.point(k + 1))).exp();
            vec![(mu - r) / (lambda * sigma * sigma * (d0 + d1))]
        })
        .collect();
    Strategy::new(grid, values)
}

/// Continuous-time limit of [`mean_variance_closed`]:
/// (mu - r) / (2 lambda sigma^2) e^{-r(T - t)}.
pub fn mean_variance_continuous(
    mu: f64,
    r: f64,
    sigma: f64,
    lambda: f64,
    t: f64,
    horizon: f64,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::Invalid(format!("lambda must be positive, got {lambda}")));
    }
    Ok((mu - r) / (2.0 * lambda * sigma * sigma) * (-r * (horizon - t)).exp())
}

/// Closed-form equilibrium for the exponential target without penalty
/// (alpha = 2): each step solves the linear system gamma G_n u = c_n with
/// G_n the step's scale matrix and c_n its excess-drift integral.
pub fn no_penalty_closed(model: &MarketModel, gamma: f64, grid: TimeGrid) -> Result<Strategy> {
    if !(gamma > 0.0) {
        return Err(Error::Invalid(format!("gamma must be positive, got {gamma}")));
    }
    if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon().max(1.0) {
        return Err(Error::Invalid(
            "grid horizon does not match the market horizon".into(),
        ));
    }
    let dim = model.dim();
    let mut values = Vec::with_capacity(grid.intervals());
    for k in 0..grid.intervals() {
        let (t0, t1) = (grid.point(k), grid.point(k + 1));
        let gram = model.gram_integral(t0, t1)?;
        let c = model.excess_drift_integral(t0, t1);
        let u = linalg::solve_spd(dim, &gram, &c).map_err(|e| {
            Error::Singular(format!(
                "scale matrix on ({t0}, {t1}] is singular, the step system has no \
                 unique solution ({e})"
            ))
        })?;
        values.push(u.iter().map(|x| x / gamma).collect());
    }
    Strategy::new(grid, values)
}

/// sigma_t R_t sigma_t^T for the alpha = 2 regime at a point in time.
fn sigma_r_sigma_at(model: &MarketModel, t: f64) -> Result<Vec<f64>> {
    if model.regime() != Regime::Alpha2 {
        return Err(Error::Unsupported(
            "the pointwise scale matrix exists only in the alpha2 regime".into(),
        ));
    }
    let dim = model.dim();
    let sig = model.sigma().at(t);
    let corr = model
        .correlation()
        .expect("validated at construction")
        .at(t);
    Ok(linalg::mat_mul(
        dim,
        &linalg::mat_mul(dim, &sig, &corr),
        &linalg::transpose(dim, &sig),
    ))
}

/// Continuous-time equilibrium for the exponential target without penalty
/// (alpha = 2): u(t) = (sigma_t R_t sigma_t^T)^{-1} (mu_t - r) e^{-r(T-t)}
/// / gamma, the pointwise zero of the continuous first-order condition.
pub fn no_penalty_continuous(model: &MarketModel, gamma: f64, t: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::Invalid(format!("gamma must be positive, got {gamma}")));
    }
    if !(0.0..=model.horizon()).contains(&t) {
        return Err(Error::Invalid(format!(
            "t = {t} is outside the horizon [0, {}]",
            model.horizon()
        )));
    }
    let srs = sigma_r_sigma_at(model, t)?;
    let rhs: Vec<f64> = (0..model.dim())
        .map(|i| model.drift_curve(i).value(t) - model.rate())
        .collect();
    let u = linalg::solve_spd(model.dim(), &srs, &rhs).map_err(|e| {
        Error::Singular(format!("scale matrix at t = {t} is singular ({e})"))
    })?;
    let scale = (-model.rate() * (model.horizon() - t)).exp() / gamma;
    Ok(u.iter().map(|x| x * scale).collect())
}

/// Pieces of the continuous first-order condition shared by the march and
/// the residual diagnostic: the coefficient of the drift term and the
/// coefficient of the scale term, both scalars multiplying pointwise
/// matrices.
struct FocCoefficients {
    num: f64,
    den: f64,
}

fn foc_coefficients(
    objective: &ObjectiveSpec,
    loading: f64,
    lambda_t: f64,
    a_tail: f64,
    b_tail: f64,
    limit_curvature: f64,
) -> Result<FocCoefficients> {
    let rho = objective.risk.rho_from_moments(
        loading,
        GainMoments {
            a: a_tail,
            b: b_tail,
        },
    );
    let fp = objective.penalty.kind().deriv(rho);
    let is_cash = objective.risk.invariance() == Invariance::Cash;
    let (mut num, mut den) = match objective.target {
        TargetSpec::Identity => (1.0, 0.0),
        TargetSpec::Exponential { beta, gamma } => {
            let c1 = (-gamma * a_tail + gamma * gamma * b_tail * b_tail / 2.0).exp() / beta;
            (gamma * c1, gamma * gamma * c1)
        }
        TargetSpec::Custom { .. } => {
            return Err(Error::Unsupported(
                "the continuous first-order condition is implemented for the \
                 identity and exponential targets"
                    .into(),
            ))
        }
    };
    if is_cash {
        num += lambda_t * fp;
    }
    den += if b_tail > 0.0 {
        lambda_t * fp * loading / b_tail
    } else {
        limit_curvature
    };
    Ok(FocCoefficients { num, den })
}

/// Backward marching scheme for the continuous-time equilibrium curve
/// (alpha = 2, built-in targets and penalties).
///
/// At each grid point t the pointwise first-order condition
/// num(t) (mu_t - r) e^{r(T-t)} = den(t) sigma_t R_t sigma_t^T u e^{2r(T-t)}
/// is an explicit linear solve, because num and den depend on u only
/// through tail integrals over (t, T] that are already fixed by the
/// previously computed curve. values\[j\] samples the curve at t_{j+1};
/// a penalty with positive slope at zero risk collapses the whole curve
/// to zero (`collapsed`).
pub fn continuous_equilibrium(
    model: &MarketModel,
    objective: &ObjectiveSpec,
    grid: TimeGrid,
) -> Result<ContinuousSolution> {
    if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon().max(1.0) {
        return Err(Error::Invalid(
            "grid horizon does not match the market horizon".into(),
        ));
    }
    if model.regime() != Regime::Alpha2 {
        return Err(Error::Unsupported(
            "the continuous march needs the alpha2 regime".into(),
        ));
    }
    if matches!(objective.target, TargetSpec::Custom { .. }) {
        return Err(Error::Unsupported(
            "the continuous march supports the identity and exponential targets".into(),
        ));
    }
    if matches!(objective.penalty.kind(), PenaltyKind::Custom { .. }) {
        return Err(Error::Unsupported(
            "the continuous march supports the built-in penalty kinds".into(),
        ));
    }
    let penalty_zero = matches!(objective.penalty.kind(), PenaltyKind::Zero);
    let loading = if penalty_zero {
        0.0
    } else {
        objective.risk.rho_base(&model.law().standardized())?
    };
    if !penalty_zero && loading <= 0.0 {
        return Err(Error::Unsupported(
            "the continuous march requires a positive risk loading".into(),
        ));
    }
    let fp0 = objective.penalty.kind().deriv(0.0);
    let n = grid.intervals();
    let dim = model.dim();
    if fp0 * loading > 0.0 {
        // Near the horizon the marginal penalty of any exposure dominates
        // every marginal reward, so the terminal control is zero, and the
        // same comparison then locks every earlier point.
        let strategy = Strategy::new(grid, vec![vec![0.0; dim]; n])?;
        return Ok(ContinuousSolution {
            strategy,
            collapsed: true,
        });
    }
    // Curvature of the penalty term in the b -> 0 limit; for the quadratic
    // kind F'(rho)/b -> 2 loading near the horizon.
    let limit_curvature = |lambda_t: f64| -> f64 {
        if matches!(objective.penalty.kind(), PenaltyKind::PositiveSquare) {
            2.0 * lambda_t * loading * loading
        } else {
            0.0
        }
    };
    if matches!(objective.target, TargetSpec::Identity) {
        let lam_t = objective.penalty.lambda_at(grid.horizon());
        if limit_curvature(lam_t) <= 0.0 {
            return Err(Error::Unsupported(
                "the identity target needs the quadratic penalty for a \
                 well-posed continuous equilibrium"
                    .into(),
            ));
        }
    }

    let mut values = vec![vec![0.0; dim]; n];
    let mut a_tail = 0.0f64;
    let mut p_tail = 0.0f64;
    for j in (0..n).rev() {
        let t = grid.point(j + 1);
        let lambda_t = objective.penalty.lambda_at(t);
        let coeff = foc_coefficients(
            objective,
            loading,
            lambda_t,
            a_tail,
            p_tail.max(0.0).sqrt(),
            limit_curvature(lambda_t),
        )?;
        if !(coeff.den > 0.0) {
            return Err(Error::Convergence(format!(
                "the march lost strict concavity at t = {t} (curvature {})",
                coeff.den
            )));
        }
        let srs = sigma_r_sigma_at(model, t)?;
        let rhs: Vec<f64> = (0..dim)
            .map(|i| model.drift_curve(i).value(t) - model.rate())
            .collect();
        let x = linalg::solve_spd(dim, &srs, &rhs).map_err(|e| {
            Error::Singular(format!("scale matrix at t = {t} is singular ({e})"))
        })?;
        let scale = (-model.rate() * (model.horizon() - t)).exp() * coeff.num / coeff.den;
        values[j] = x.iter().map(|v| v * scale).collect();
        // Fold this interval into the tail integrals for the next point.
        let (t0, t1) = (grid.point(j), t);
        let c = model.excess_drift_integral(t0, t1);
        a_tail += linalg::dot(&c, &values[j]);
        p_tail += model.scale_power_integral(&values[j], t0, t1);
    }
    let strategy = Strategy::new(grid, values)?;
    model.check_strategy(&strategy).map_err(|e| {
        Error::Invalid(format!(
            "the unconstrained continuous equilibrium leaves the admissible box ({e})"
        ))
    })?;
    Ok(ContinuousSolution {
        strategy,
        collapsed: false,
    })
}

/// Continuous-time first-order condition at an interior grid point
/// t = t_from, component k, for the control in force at t (left-continuous
/// lookup) with tail integrals recomputed from the strategy:
///
/// num (mu_t^k - r) e^{r(T-t)} - den [sigma_t R_t sigma_t^T u]_k e^{2r(T-t)}
///
/// Zero at the continuous equilibrium; its sign is opposite to a
/// perturbation of the control.
pub fn foc_residual_continuous(
    model: &MarketModel,
    objective: &ObjectiveSpec,
    strategy: &Strategy,
    from: usize,
    component: usize,
) -> Result<f64> {
    let grid = strategy.grid();
    if from == 0 || from >= grid.intervals() {
        return Err(Error::Invalid(format!(
            "the residual needs an interior grid point, got index {from} of {}",
            grid.intervals()
        )));
    }
    if component >= model.dim() {
        return Err(Error::Invalid(format!(
            "component {component} is out of range for dimension {}",
            model.dim()
        )));
    }
    let penalty_zero = matches!(objective.penalty.kind(), PenaltyKind::Zero);
    let loading = if penalty_zero {
        0.0
    } else {
        objective.risk.rho_base(&model.law().standardized())?
    };
    let moments = model.gain_moments(strategy, from)?;
    let t = grid.point(from);
    let lambda_t = objective.penalty.lambda_at(t);
    let coeff = foc_coefficients(objective, loading, lambda_t, moments.a, moments.b, 0.0)?;
    let srs = sigma_r_sigma_at(model, t)?;
    let u_t = strategy.value_on(from - 1);
    let disc = (model.rate() * (model.horizon() - t)).exp();
    let drift_term = (model.drift_curve(component).value(t) - model.rate()) * disc;
    let scale_term = linalg::mat_vec(model.dim(), &srs, u_t)[component] * disc * disc;
    Ok(coeff.num * drift_term - coeff.den * scale_term)
}

/// Running generator of the risk-penalty constraint along a strategy at an
/// interior grid point t = t_from:
///
/// lambda'_t F(rho_t) + lambda_t F'(rho_t)
///   (m_t(u) - (loading / alpha) w_t(u)^alpha (int_t^T w^alpha ds)^{1/alpha - 1})
///
/// When the tail norm vanishes the scale term uses the zero limit and the
/// result is flagged `degenerate`.
pub fn generator_risk_continuous(
    model: &MarketModel,
    objective: &ObjectiveSpec,
    strategy: &Strategy,
    from: usize,
) -> Result<GeneratorRisk> {
    let grid = strategy.grid();
    if from == 0 || from >= grid.intervals() {
        return Err(Error::Invalid(format!(
            "the generator needs an interior grid point, got index {from} of {}",
            grid.intervals()
        )));
    }
    let penalty_zero = matches!(objective.penalty.kind(), PenaltyKind::Zero);
    let loading = if penalty_zero {
        0.0
    } else {
        objective.risk.rho_base(&model.law().standardized())?
    };
    let moments = model.gain_moments(strategy, from)?;
    let alpha = model.alpha();
    let pow_tail = moments.b.powf(alpha);
    let t = grid.point(from);
    let u_t = strategy.value_on(from - 1);
    let rho = objective.risk.rho_from_moments(loading, moments);
    let lambda_t = objective.penalty.lambda_at(t);
    let lambda_slope = objective.penalty.lambda_slope_at(t);
    let fv = objective.penalty.kind().value(rho);
    let fp = objective.penalty.kind().deriv(rho);
    let m_t = model.m_at(u_t, t, objective.risk.invariance());
    let w_t = model.w_at(u_t, t);
    let degenerate = pow_tail <= 0.0;
    let scale_term = if degenerate {
        0.0
    } else {
        loading / alpha * w_t.powf(alpha) * pow_tail.powf(1.0 / alpha - 1.0)
    };
    Ok(GeneratorRisk {
        value: lambda_slope * fv + lambda_t * fp * (m_t - scale_term),
        degenerate,
    })
}

/// Discrete sup-equation residual at step n for a candidate allocation on
/// (t_n, t_{n+1}], with the equilibrium in force afterwards. Assembled
/// from the one-step value difference, the telescoped expected-target
/// difference, and the split penalty difference; nonpositive for every
/// admissible candidate and zero at the equilibrium allocation.
pub fn hjb_residual_discrete(
    model: &MarketModel,
    objective: &ObjectiveSpec,
    result: &EquilibriumResult,
    step: usize,
    candidate: &[f64],
) -> Result<f64> {
    let grid = result.strategy.grid();
    if step >= grid.intervals() {
        return Err(Error::Invalid(format!(
            "step {step} is out of range for {} intervals",
            grid.intervals()
        )));
    }
    let penalty_zero = matches!(objective.penalty.kind(), PenaltyKind::Zero);
    let loading = if penalty_zero {
        0.0
    } else {
        objective.risk.rho_base(&model.law().standardized())?
    };
    let mut concat = result.strategy.clone();
    concat.set_value(step, candidate.to_vec())?;
    model.check_strategy(&concat)?;

    let tail = model.gain_moments(&result.strategy, step + 1)?;
    let whole = model.gain_moments(&concat, step)?;
    let target_tail = expected_target(&objective.target, model, tail)?;
    let target_whole = expected_target(&objective.target, model, whole)?;
    let f = |m: GainMoments| -> f64 {
        objective
            .penalty
            .kind()
            .value(objective.risk.rho_from_moments(loading, m))
    };
    let lambda_n = objective.penalty.lambda_at(grid.point(step));
    let lambda_n1 = objective.penalty.lambda_at(grid.point(step + 1));

    let value_term = result.values[step + 1] - result.values[step];
    let target_term = target_tail - target_whole;
    let penalty_term =
        lambda_n1 * (f(tail) - f(whole)) - (lambda_n - lambda_n1) * f(whole);
    Ok(value_term - target_term + penalty_term)
}
