//! Acceptance gate: eleven end-to-end criteria covering the closed forms,
//! the solver routes, the continuous-time limits, the Monte Carlo
//! cross-checks, and the stable-law machinery. Each test prints one
//! `criterion N (<name>): PASS|FAIL` line and fails the build if its
//! tolerances or runtime budget are missed.

use std::io::Write as _;
use std::time::Instant;

use rand::Rng;
use tc_alloc_core::market::{Curve, MarketModel, MatrixCurve, Strategy, TimeGrid};
use tc_alloc_core::montecarlo::{
    empirical_j, empirical_risk, ks_two_sample, simulate_gains, SimMethod,
};
use tc_alloc_core::objective::{
    evaluate_j, grad_j, ObjectiveSpec, PenaltyKind, PenaltySpec, TargetSpec,
};
use tc_alloc_core::risk::RiskSpec;
use tc_alloc_core::solver::{
    continuous_equilibrium, foc_residual_continuous, hjb_residual_discrete,
    mean_variance_closed, mean_variance_continuous, no_penalty_closed, solve_equilibrium,
    SolverConfig,
};
use tc_alloc_core::stable::{c_alpha, substream, SpectralMeasure, StableLaw};

fn conclude(number: u32, name: &str, started: Instant, budget: f64, mut failures: Vec<String>) {
    let elapsed = started.elapsed().as_secs_f64();
    if elapsed > budget {
        failures.push(format!(
            "runtime {elapsed:.2} s exceeded the {budget} s budget"
        ));
    }
    let verdict = if failures.is_empty() { "PASS" } else { "FAIL" };
    // Write to the stream directly: the harness captures the print macros,
    // and these lines must reach the terminal on passing runs too.
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {number} ({name}): {verdict} ({elapsed:.2} s)")
        .expect("stdout is writable");
    assert!(
        failures.is_empty(),
        "criterion {number} ({name}):\n{}",
        failures.join("\n")
    );
}

/// One risky asset: drift 0.08, volatility 0.20, cash rate 0.02, horizon 10.
fn one_asset_market() -> MarketModel {
    MarketModel::alpha2(
        0.02,
        10.0,
        100.0,
        vec![Curve::constant(0.08)],
        MatrixCurve::constant(1, &[0.2]).unwrap(),
        MatrixCurve::constant(1, &[1.0]).unwrap(),
    )
    .unwrap()
}

/// Two risky assets with dependency sign `dep`: drifts (0.08, 0.06),
/// volatility loadings (0.20, +-0.10; +-0.10, 0.15), correlation +-0.5.
fn two_asset_market(dep: f64) -> MarketModel {
    MarketModel::alpha2(
        0.02,
        10.0,
        100.0,
        vec![Curve::constant(0.08), Curve::constant(0.06)],
        MatrixCurve::constant(2, &[0.20, dep * 0.10, dep * 0.10, 0.15]).unwrap(),
        MatrixCurve::constant(2, &[1.0, dep * 0.5, dep * 0.5, 1.0]).unwrap(),
    )
    .unwrap()
}

/// Identity target, squared-deviation penalty: J = E[gain] - lambda sd^2.
fn mean_variance_objective(lambda: f64) -> ObjectiveSpec {
    ObjectiveSpec::new(
        TargetSpec::Identity,
        PenaltySpec::constant(PenaltyKind::PositiveSquare, lambda).unwrap(),
        RiskSpec::std_dev(),
    )
}

fn exponential_no_penalty() -> ObjectiveSpec {
    ObjectiveSpec::new(
        TargetSpec::exponential(1.0, 1.0).unwrap(),
        PenaltySpec::constant(PenaltyKind::Zero, 1.0).unwrap(),
        RiskSpec::std_dev(),
    )
}

fn exponential_var_square(lambda: f64) -> ObjectiveSpec {
    ObjectiveSpec::new(
        TargetSpec::exponential(1.0, 1.0).unwrap(),
        PenaltySpec::constant(PenaltyKind::PositiveSquare, lambda).unwrap(),
        RiskSpec::var(0.01).unwrap(),
    )
}

#[test]
fn criterion_01_mean_variance_closed_form() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let model = one_asset_market();
    let grid = TimeGrid::new(10, 10.0).unwrap();
    let objective = mean_variance_objective(0.25);
    let closed = mean_variance_closed(0.08, 0.02, 0.2, 0.25, grid).unwrap();
    for (label, config) in [
        ("closed route", SolverConfig::default()),
        (
            "numeric route",
            SolverConfig {
                force_numeric: true,
                ..SolverConfig::default()
            },
        ),
    ] {
        let result = solve_equilibrium(&model, &objective, grid, &config).unwrap();
        for n in 0..grid.intervals() {
            let got = result.strategy.value_on(n)[0];
            let want = closed.value_on(n)[0];
            if (got - want).abs() > 1e-9 {
                failures.push(format!(
                    "{label}, step {n}: solver {got} vs formula {want} (gap {:.3e})",
                    (got - want).abs()
                ));
            }
        }
    }
    let spot = closed.value_on(9)[0];
    if (spot - 2.9700009999600017).abs() > 1e-9 {
        failures.push(format!("final-step formula value {spot} off the frozen anchor"));
    }
    conclude(1, "mean-variance closed form", started, 1.0, failures);
}

#[test]
fn criterion_02_continuous_time_limit() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let model = one_asset_market();
    let grid = TimeGrid::new(1000, 10.0).unwrap();
    let objective = mean_variance_objective(0.25);
    let result = solve_equilibrium(&model, &objective, grid, &SolverConfig::default()).unwrap();
    let mut max_dev = 0.0f64;
    let mut curve_max = 0.0f64;
    for n in 0..grid.intervals() {
        let mid = 0.5 * (grid.point(n) + grid.point(n + 1));
        let cont = mean_variance_continuous(0.08, 0.02, 0.2, 0.25, mid, 10.0).unwrap();
        curve_max = curve_max.max(cont.abs());
        max_dev = max_dev.max((result.strategy.value_on(n)[0] - cont).abs());
    }
    if max_dev > 0.01 * curve_max {
        failures.push(format!(
            "max deviation {max_dev:.3e} exceeds 1% of the curve maximum {curve_max}"
        ));
    }
    let at_horizon = mean_variance_continuous(0.08, 0.02, 0.2, 0.25, 10.0, 10.0).unwrap();
    if (at_horizon - 3.0).abs() > 1e-12 {
        failures.push(format!("continuous value at the horizon {at_horizon} is not 3"));
    }
    let at_zero = mean_variance_continuous(0.08, 0.02, 0.2, 0.25, 0.0, 10.0).unwrap();
    if (at_zero - 2.4561922592339456).abs() > 1e-12 {
        failures.push(format!("continuous value at t = 0 {at_zero} off the frozen anchor"));
    }
    let first = result.strategy.value_on(0)[0];
    let last = result.strategy.value_on(999)[0];
    if (last - at_horizon).abs() > 0.01 * curve_max || (first - at_zero).abs() > 0.01 * curve_max {
        failures.push(format!(
            "discrete endpoints ({first}, {last}) stray from the continuous ones \
             ({at_zero}, {at_horizon})"
        ));
    }
    conclude(2, "continuous-time limit", started, 10.0, failures);
}

#[test]
fn criterion_03_no_penalty_closed_form() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let grid = TimeGrid::new(10, 10.0).unwrap();
    let objective = exponential_no_penalty();
    let cases = [
        ("one asset", one_asset_market()),
        ("positive dependency", two_asset_market(1.0)),
        ("negative dependency", two_asset_market(-1.0)),
    ];
    for (label, model) in &cases {
        let closed = no_penalty_closed(model, 1.0, grid).unwrap();
        for (route, config) in [
            ("closed route", SolverConfig::default()),
            (
                "numeric route",
                SolverConfig {
                    force_numeric: true,
                    ..SolverConfig::default()
                },
            ),
        ] {
            let result = solve_equilibrium(model, &objective, grid, &config).unwrap();
            for n in 0..grid.intervals() {
                for k in 0..model.dim() {
                    let got = result.strategy.value_on(n)[k];
                    let want = closed.value_on(n)[k];
                    if (got - want).abs() > 1e-9 {
                        failures.push(format!(
                            "{label}, {route}, step {n}, component {k}: {got} vs {want} \
                             (gap {:.3e})",
                            (got - want).abs()
                        ));
                    }
                }
            }
        }
    }
    conclude(3, "no-penalty closed form", started, 10.0, failures);
}

#[test]
fn criterion_04_closed_risk_vs_monte_carlo() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let brownian = MarketModel::alpha2(
        0.02,
        1.0,
        10.0,
        vec![Curve::constant(0.07)],
        MatrixCurve::constant(1, &[0.22]).unwrap(),
        MatrixCurve::constant(1, &[1.0]).unwrap(),
    )
    .unwrap();
    let stable = MarketModel::symmetric_one_asset(
        0.02,
        1.0,
        10.0,
        Curve::constant(0.05),
        Curve::constant(0.3),
        1.5,
        0.9,
    )
    .unwrap();
    let grid = TimeGrid::new(2, 1.0).unwrap();
    let var = RiskSpec::var(0.01).unwrap();
    let sd = RiskSpec::std_dev();
    let mut rng = substream(0x04c4, 0);
    let cases: [(&str, &MarketModel, Vec<&RiskSpec>); 2] = [
        ("brownian", &brownian, vec![&var, &sd]),
        ("alpha 1.5", &stable, vec![&var]),
    ];
    for (label, model, specs) in &cases {
        for k in 0..5 {
            let magnitude = rng.gen_range(0.3..2.5);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let strategy = Strategy::constant(grid, vec![sign * magnitude]).unwrap();
            let seed = rng.gen::<u64>();
            let sim =
                simulate_gains(model, &strategy, 0, 1_000_000, seed, SimMethod::ExactLaw)
                    .unwrap();
            for spec in specs {
                let closed = spec.rho_closed(model, &strategy, 0).unwrap();
                let (emp, se) = empirical_risk(&sim.samples, spec).unwrap();
                if !(se > 0.0) {
                    failures.push(format!("{label} strategy {k}: degenerate stderr"));
                    continue;
                }
                let z = (emp - closed) / se;
                if z.abs() > 3.0 {
                    failures.push(format!(
                        "{label} strategy {k} (u = {:.3}): empirical {emp} vs closed \
                         {closed}, z = {z:.2}",
                        sign * magnitude
                    ));
                }
            }
        }
    }
    conclude(4, "closed risk vs monte carlo", started, 120.0, failures);
}

#[test]
fn criterion_05_closed_objective_vs_monte_carlo() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let model = MarketModel::alpha2(
        0.02,
        1.0,
        10.0,
        vec![Curve::constant(0.07)],
        MatrixCurve::constant(1, &[0.22]).unwrap(),
        MatrixCurve::constant(1, &[1.0]).unwrap(),
    )
    .unwrap();
    let grid = TimeGrid::new(2, 1.0).unwrap();
    let strategy = Strategy::constant(grid, vec![1.2]).unwrap();
    let configs = [
        ("exponential target, quantile penalty", exponential_var_square(0.25)),
        ("identity target, deviation penalty", mean_variance_objective(0.25)),
    ];
    for (k, (label, objective)) in configs.iter().enumerate() {
        let closed = evaluate_j(objective, &model, &strategy, 0).unwrap();
        let sim = simulate_gains(
            &model,
            &strategy,
            0,
            100_000,
            0x05c4 + k as u64,
            SimMethod::ExactLaw,
        )
        .unwrap();
        let (emp, se) = empirical_j(&sim.samples, objective, 0.0).unwrap();
        if !(se > 0.0) {
            failures.push(format!("{label}: degenerate stderr"));
            continue;
        }
        let z = (emp - closed) / se;
        if z.abs() > 3.0 {
            failures.push(format!(
                "{label}: empirical {emp} vs closed {closed}, z = {z:.2}"
            ));
        }
    }
    conclude(5, "closed objective vs monte carlo", started, 60.0, failures);
}

#[test]
fn criterion_06_equilibrium_certification() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let model = one_asset_market();
    let grid = TimeGrid::new(10, 10.0).unwrap();
    let configs = [
        ("deviation penalty", mean_variance_objective(0.25)),
        ("quantile penalty", exponential_var_square(0.25)),
    ];
    let mut rng = substream(0x06c4, 0);
    for (label, objective) in &configs {
        let result =
            solve_equilibrium(&model, objective, grid, &SolverConfig::default()).unwrap();
        for step in 0..grid.intervals() {
            let at = hjb_residual_discrete(
                &model,
                objective,
                &result,
                step,
                result.strategy.value_on(step),
            )
            .unwrap();
            if at.abs() > 1e-8 {
                failures.push(format!(
                    "{label}, step {step}: residual {at:.3e} at the solution"
                ));
            }
            for _ in 0..50 {
                let candidate = rng.gen_range(-5.0..5.0);
                let r = hjb_residual_discrete(&model, objective, &result, step, &[candidate])
                    .unwrap();
                if r > 1e-8 {
                    failures.push(format!(
                        "{label}, step {step}: candidate {candidate:.3} improves the \
                         objective by {r:.3e}"
                    ));
                }
            }
        }
    }
    conclude(6, "discrete equilibrium certification", started, 60.0, failures);
}

#[test]
fn criterion_07_continuous_foc_residual() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let grid = TimeGrid::new(1000, 10.0).unwrap();
    let objective = exponential_var_square(0.25);
    for dep in [1.0, -1.0] {
        let model = two_asset_market(dep);
        let march = continuous_equilibrium(&model, &objective, grid).unwrap();
        if march.collapsed {
            failures.push(format!("dependency {dep}: the march collapsed unexpectedly"));
            continue;
        }
        let mut worst = 0.0f64;
        for from in 1..grid.intervals() {
            for k in 0..2 {
                let r = foc_residual_continuous(&model, &objective, &march.strategy, from, k)
                    .unwrap();
                worst = worst.max(r.abs());
            }
        }
        if worst > 1e-6 {
            failures.push(format!(
                "dependency {dep}: max first-order-condition residual {worst:.3e}"
            ));
        }
    }
    conclude(7, "continuous first-order condition", started, 60.0, failures);
}

#[test]
fn criterion_08_nonnegative_allocations() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut rng = substream(0x08c4, 0);
    let grid = TimeGrid::new(8, 2.0).unwrap();
    for cfg in 0..20 {
        let r = rng.gen_range(0.0..0.04);
        let mu = r + rng.gen_range(0.0..0.12);
        let sigma = rng.gen_range(0.1..0.5);
        let brownian = cfg % 2 == 0;
        let model = if brownian {
            MarketModel::alpha2(
                r,
                2.0,
                10.0,
                vec![Curve::constant(mu)],
                MatrixCurve::constant(1, &[sigma]).unwrap(),
                MatrixCurve::constant(1, &[1.0]).unwrap(),
            )
            .unwrap()
        } else {
            MarketModel::symmetric_one_asset(
                r,
                2.0,
                10.0,
                Curve::constant(mu),
                Curve::constant(sigma),
                rng.gen_range(1.15..1.9),
                rng.gen_range(0.3..1.2),
            )
            .unwrap()
        };
        let target = if brownian && cfg % 4 == 0 {
            TargetSpec::exponential(1.0, rng.gen_range(0.5..2.0)).unwrap()
        } else {
            TargetSpec::Identity
        };
        // Every penalty here has F'(0) = 0, the non-negativity hypothesis.
        let penalty = if cfg % 3 == 0 {
            PenaltySpec::constant(PenaltyKind::Zero, 1.0).unwrap()
        } else {
            PenaltySpec::constant(PenaltyKind::PositiveSquare, rng.gen_range(0.05..1.0))
                .unwrap()
        };
        let risk = if brownian && cfg % 3 == 1 {
            RiskSpec::std_dev()
        } else {
            RiskSpec::var(rng.gen_range(0.01..0.1)).unwrap()
        };
        let objective = ObjectiveSpec::new(target, penalty, risk);
        let result =
            solve_equilibrium(&model, &objective, grid, &SolverConfig::default()).unwrap();
        for n in 0..grid.intervals() {
            let u = result.strategy.value_on(n)[0];
            if u < -1e-12 {
                failures.push(format!(
                    "config {cfg} (mu = {mu:.4}, r = {r:.4}): negative allocation {u} \
                     at step {n}"
                ));
            }
        }
    }
    conclude(8, "non-negative allocations", started, f64::INFINITY, failures);
}

#[test]
fn criterion_09_stable_law_suite() {
    let started = Instant::now();
    let mut failures = Vec::new();
    // Characteristic-function round trip on sampled paths.
    let laws = [
        ("symmetric", StableLaw::symmetric(1.5, 1.0).unwrap()),
        ("skewed", StableLaw::skewed(1.5, 1.0, 0.7).unwrap()),
    ];
    let freqs = [-3.2, -2.4, -1.7, -1.1, -0.6, 0.4, 0.9, 1.5, 2.2, 3.0];
    for (label, law) in &laws {
        let samples = law.sample_1d(1.0, 100_000, 0x09c4).unwrap();
        for &r in &freqs {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for &x in &samples {
                re += (r * x).cos();
                im += (r * x).sin();
            }
            re /= samples.len() as f64;
            im /= samples.len() as f64;
            let phi = law.char_fn(1.0, &[r]).unwrap();
            let gap = ((re - phi.re).powi(2) + (im - phi.im).powi(2)).sqrt();
            if gap > 0.01 {
                failures.push(format!(
                    "{label} law, frequency {r}: empirical CF off by {gap:.4}"
                ));
            }
        }
    }
    // Self-similarity: t^{-1/alpha} L_t has the law of L_1.
    for (label, law, alpha) in [
        ("symmetric", StableLaw::symmetric(1.5, 1.0).unwrap(), 1.5),
        ("skewed", StableLaw::skewed(1.7, 1.0, 0.3).unwrap(), 1.7),
    ] {
        let at_two = law.sample_1d(2.0, 100_000, 0x09c5).unwrap();
        let scaled: Vec<f64> = at_two
            .iter()
            .map(|x| x * (2.0f64).powf(-1.0 / alpha))
            .collect();
        let at_one = law.sample_1d(1.0, 100_000, 0x09c6).unwrap();
        let (stat, crit) = ks_two_sample(&scaled, &at_one).unwrap();
        if (crit - 0.00728).abs() > 1e-4 {
            failures.push(format!("unexpected KS critical value {crit}"));
        }
        if stat > crit {
            failures.push(format!(
                "{label} law: scaling KS statistic {stat:.5} above the 1% critical \
                 value {crit:.5}"
            ));
        }
    }
    // Quantile symmetry of symmetric laws.
    for alpha in [1.3, 1.5, 1.9] {
        let law = StableLaw::symmetric(alpha, 1.0).unwrap();
        for p in [0.01, 0.1, 0.3] {
            let lo = law.quantile(p).unwrap();
            let hi = law.quantile(1.0 - p).unwrap();
            if (lo + hi).abs() > 1e-9 {
                failures.push(format!(
                    "alpha {alpha}, p {p}: quantiles {lo} and {hi} are not mirrored"
                ));
            }
        }
    }
    // Frozen scale constant.
    let k = c_alpha(1.5, 1.0).unwrap();
    if (k - 1.6710855164206668).abs() > 1e-6 {
        failures.push(format!("c_alpha(1.5, 1) = {k} off the frozen value"));
    }
    conclude(9, "stable-law suite", started, f64::INFINITY, failures);
}

#[test]
fn criterion_10_risk_ratio_curves() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let grid = TimeGrid::new(1000, 10.0).unwrap();
    let config = SolverConfig::default();
    let var = || RiskSpec::var(0.01).unwrap();
    for dep in [1.0, -1.0] {
        let model = two_asset_market(dep);
        let baseline =
            solve_equilibrium(&model, &mean_variance_objective(0.25), grid, &config).unwrap();
        // The quantile-penalty scenarios with a linear penalty are pinned to
        // zero by the kink: a one-step deviation adds risk of order
        // sqrt(delta) against a drift gain of order delta.
        let scenarios: [(&str, ObjectiveSpec, bool); 5] = [
            ("exponential, no penalty", exponential_no_penalty(), false),
            (
                "exponential, linear quantile penalty",
                ObjectiveSpec::new(
                    TargetSpec::exponential(1.0, 1.0).unwrap(),
                    PenaltySpec::constant(PenaltyKind::Identity, 0.25).unwrap(),
                    var(),
                ),
                true,
            ),
            (
                "exponential, squared quantile penalty",
                exponential_var_square(0.25),
                false,
            ),
            (
                "identity, linear quantile penalty",
                ObjectiveSpec::new(
                    TargetSpec::Identity,
                    PenaltySpec::constant(PenaltyKind::Identity, 0.25).unwrap(),
                    var(),
                ),
                true,
            ),
            (
                "identity, squared quantile penalty",
                ObjectiveSpec::new(
                    TargetSpec::Identity,
                    PenaltySpec::constant(PenaltyKind::PositiveSquare, 0.25).unwrap(),
                    var(),
                ),
                false,
            ),
        ];
        for (label, objective, expect_zero) in &scenarios {
            let result = solve_equilibrium(&model, objective, grid, &config).unwrap();
            if *expect_zero {
                let flat = (0..grid.intervals())
                    .all(|j| result.strategy.value_on(j).iter().all(|u| u.abs() <= 1e-12));
                if !flat {
                    failures.push(format!(
                        "dependency {dep}, {label}: expected the kink-locked zero strategy"
                    ));
                    continue;
                }
            }
            let ratio: Vec<f64> = (0..grid.intervals())
                .map(|j| {
                    let m = baseline.strategy.value_on(j)[0];
                    assert!(m > 0.0, "baseline first component must stay positive");
                    result.strategy.value_on(j)[0] / m
                })
                .collect();
            // Final 20% of the horizon: t_{j+1} >= 8 means j >= 799.
            let tail_start = (0..grid.intervals())
                .find(|&j| grid.point(j + 1) >= 0.8 * grid.horizon())
                .unwrap();
            for j in tail_start..grid.intervals() - 1 {
                if ratio[j + 1] > ratio[j] + 1e-9 {
                    failures.push(format!(
                        "dependency {dep}, {label}: ratio rises from {} to {} at j = {j}",
                        ratio[j],
                        ratio[j + 1]
                    ));
                    break;
                }
            }
            let last = ratio[grid.intervals() - 1];
            if !(last < 1.0) {
                failures.push(format!(
                    "dependency {dep}, {label}: ratio {last} at the horizon is not < 1"
                ));
            }
        }
    }
    conclude(10, "risk ratio curves", started, 300.0, failures);
}

#[test]
fn criterion_11_gradient_check() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut rng = substream(0x0bc4, 0);
    let cross: Vec<(Vec<f64>, f64)> = vec![
        (vec![1.0, 0.0], 0.25),
        (vec![-1.0, 0.0], 0.25),
        (vec![0.0, 1.0], 0.25),
        (vec![0.0, -1.0], 0.25),
    ];
    let h = 1e-5;
    for cfg in 0..50 {
        let kind = cfg % 5;
        let nonneg = kind == 4;
        let (model, dim) = match kind {
            0 => (
                MarketModel::alpha2(
                    0.02,
                    1.0,
                    10.0,
                    vec![Curve::constant(rng.gen_range(0.03..0.1))],
                    MatrixCurve::constant(1, &[rng.gen_range(0.15..0.4)]).unwrap(),
                    MatrixCurve::constant(1, &[1.0]).unwrap(),
                )
                .unwrap(),
                1,
            ),
            1 => {
                let rho = rng.gen_range(-0.6..0.6);
                (
                    MarketModel::alpha2(
                        0.02,
                        1.0,
                        10.0,
                        vec![
                            Curve::constant(rng.gen_range(0.03..0.1)),
                            Curve::constant(rng.gen_range(0.03..0.1)),
                        ],
                        MatrixCurve::constant(2, &[0.25, 0.05, 0.05, 0.2]).unwrap(),
                        MatrixCurve::constant(2, &[1.0, rho, rho, 1.0]).unwrap(),
                    )
                    .unwrap(),
                    2,
                )
            }
            2 => (
                MarketModel::symmetric_one_asset(
                    0.02,
                    1.0,
                    10.0,
                    Curve::constant(rng.gen_range(0.03..0.1)),
                    Curve::constant(rng.gen_range(0.15..0.4)),
                    rng.gen_range(1.2..1.9),
                    rng.gen_range(0.4..1.2),
                )
                .unwrap(),
                1,
            ),
            3 => (
                MarketModel::symmetric_stable(
                    0.02,
                    1.0,
                    10.0,
                    vec![Curve::constant(0.06), Curve::constant(0.08)],
                    MatrixCurve::constant(2, &[0.25, 0.05, 0.05, 0.2]).unwrap(),
                    rng.gen_range(1.3..1.9),
                    0.8,
                    SpectralMeasure::new(&cross, true).unwrap(),
                )
                .unwrap(),
                2,
            ),
            _ => (
                MarketModel::one_dim(
                    0.02,
                    1.0,
                    10.0,
                    Curve::constant(rng.gen_range(0.03..0.1)),
                    Curve::constant(rng.gen_range(0.15..0.4)),
                    rng.gen_range(1.2..1.9),
                    rng.gen_range(0.4..1.2),
                    rng.gen_range(0.3..0.7),
                )
                .unwrap(),
                1,
            ),
        };
        let brownian = kind <= 1;
        let target = if brownian && cfg % 2 == 0 {
            TargetSpec::exponential(1.0, rng.gen_range(0.5..1.5)).unwrap()
        } else {
            TargetSpec::Identity
        };
        let penalty = if cfg % 7 == 0 {
            PenaltySpec::constant(PenaltyKind::Zero, 1.0).unwrap()
        } else {
            PenaltySpec::constant(PenaltyKind::PositiveSquare, rng.gen_range(0.1..1.0))
                .unwrap()
        };
        let risk = if brownian && cfg % 3 == 0 {
            RiskSpec::std_dev()
        } else {
            RiskSpec::var(rng.gen_range(0.02..0.15)).unwrap()
        };
        let objective = ObjectiveSpec::new(target, penalty, risk);
        let grid = TimeGrid::new(2, 1.0).unwrap();
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
            let m = rng.gen_range(0.5..2.0);
            if nonneg || rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        };
        let values: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..dim).map(|_| draw(&mut rng)).collect())
            .collect();
        let strategy = Strategy::new(grid, values).unwrap();
        let interval = rng.gen_range(0..2usize);
        let component = rng.gen_range(0..dim);
        let g = grad_j(&objective, &model, &strategy, 0, interval, component).unwrap();
        let mut up = strategy.clone();
        let mut u_up = up.value_on(interval).to_vec();
        u_up[component] += h;
        up.set_value(interval, u_up).unwrap();
        let mut down = strategy.clone();
        let mut u_down = down.value_on(interval).to_vec();
        u_down[component] -= h;
        down.set_value(interval, u_down).unwrap();
        let fd = (evaluate_j(&objective, &model, &up, 0).unwrap()
            - evaluate_j(&objective, &model, &down, 0).unwrap())
            / (2.0 * h);
        let tol = 1e-5 * g.abs().max(1.0);
        if (g - fd).abs() > tol {
            failures.push(format!(
                "config {cfg} (market kind {kind}): gradient {g} vs finite difference \
                 {fd} (gap {:.3e})",
                (g - fd).abs()
            ));
        }
    }
    conclude(11, "gradient check", started, 30.0, failures);
}
