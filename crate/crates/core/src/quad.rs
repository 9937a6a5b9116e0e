//! Quadrature kernels.
//!
//! Two rules cover every integral in the crate:
//!
//! - fixed-order Gauss-Legendre panels for integrals of smooth coefficient
//!   expressions over grid intervals (16 nodes per panel, exact to near
//!   machine precision for the exponential-in-time integrands used here);
//! - adaptive Simpson for the oscillatory characteristic-function inversions,
//!   where the node count must follow the integrand.

/// Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `n`-point rule by Newton iteration on the Legendre
    /// polynomial roots. Nodes are accurate to ~1 ulp; weights follow from
    /// the derivative identity w_i = 2 / ((1 - x_i^2) P'_n(x_i)^2).
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "Gauss-Legendre rule needs at least 2 nodes");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Chebyshev-based initial guess for the i-th positive root.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                // Evaluate P_n(x) and P'_n(x) by the three-term recurrence.
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    /// Integrates `f` over [a, b] with one panel of this rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Node/weight pairs mapped to [a, b]; callers that evaluate several
    /// integrands on the same panel iterate these directly.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, w * half))
    }
}

/// The panel rule used for all coefficient integrals over grid intervals.
pub fn panel_rule() -> &'static GaussLegendre {
    use std::sync::OnceLock;
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(16))
}

/// The rule used for the tail-average integral of quantile-based risk
/// constants.
pub fn tail_rule() -> &'static GaussLegendre {
    use std::sync::OnceLock;
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(64))
}

/// Adaptive Simpson quadrature of `f` over [a, b] to absolute tolerance
/// `tol`. Returns an error value estimate alongside the integral; callers
/// treat a breach of `tol` as a convergence failure.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> (f64, f64) {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let err = (left + right - whole) / 15.0;
        if depth == 0 || err.abs() <= tol {
            return (left + right + err, err.abs());
        }
        let (vl, el) = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1);
        let (vr, er) = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
        (vl + vr, el + er)
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}
