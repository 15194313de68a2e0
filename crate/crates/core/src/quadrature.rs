//! Quadrature rules.
//!
//! Two workhorses: fixed-order Gauss–Jacobi rules for integrands with a known
//! algebraic endpoint factor, and an adaptive tanh–sinh rule for everything
//! with unknown (but endpoint-only) singular behaviour. The tanh–sinh
//! integrand receives the distances to both endpoints so that callers can
//! evaluate `(t - u)^p` without the cancellation in `t - (t - tiny)`.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Gauss rule on `[0, 1]` for the weight `x^a (1 - x)^b`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl GaussRule {
    /// Gauss–Jacobi rule with `n` nodes for `x^a (1-x)^b` on `[0,1]`.
    pub fn jacobi(n: usize, a: f64, b: f64) -> Result<Self> {
        if n == 0 || !(a > -1.0) || !(b > -1.0) {
            return Err(Error::domain(format!(
                "Gauss-Jacobi needs n >= 1 and exponents > -1 (n={n}, a={a}, b={b})"
            )));
        }
        // On [-1, 1] the weight (1-y)^alpha (1+y)^beta with x = (1+y)/2.
        let (alpha, beta) = (b, a);
        let (y, w) = jacobi_symmetric(n, alpha, beta);
        let scale = 0.5f64.powf(a + b + 1.0);
        Ok(Self {
            nodes: y.iter().map(|&y| 0.5 * (1.0 + y)).collect(),
            weights: w.iter().map(|&w| w * scale).collect(),
            a,
            b,
        })
    }

    /// Gauss–Legendre rule with `n` nodes on `[0, 1]`.
    pub fn legendre(n: usize) -> Self {
        Self::jacobi(n, 0.0, 0.0).expect("legendre exponents are valid")
    }

    /// `∫_lo^hi w(x) f(x) dx` where the weight is rescaled to the interval,
    /// i.e. `(x-lo)^a (hi-x)^b` is the implied weight. `f` must not include it.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, lo: f64, hi: f64, mut f: F) -> f64 {
        let len = hi - lo;
        let jac = len.powf(1.0 + self.a + self.b);
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(lo + len * x);
        }
        acc * jac
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Jacobi polynomial `P_n^{(α,β)}(x)` and `P_{n-1}`.
fn jacobi_pair(n: usize, alpha: f64, beta: f64, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = 0.5 * (alpha - beta + (alpha + beta + 2.0) * x);
    if n == 0 {
        return (p0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let s = 2.0 * k + alpha + beta;
        let a1 = 2.0 * k * (k + alpha + beta) * (s - 2.0);
        let a2 = (s - 1.0) * (alpha * alpha - beta * beta);
        let a3 = (s - 2.0) * (s - 1.0) * s;
        let a4 = 2.0 * (k + alpha - 1.0) * (k + beta - 1.0) * s;
        let p2 = ((a2 + a3 * x) * p1 - a4 * p0) / a1;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// Golub–Welsch start, Newton polish, weights from the derivative formula.
fn jacobi_symmetric(n: usize, alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let ab = alpha + beta;
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let diag = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
        jm[(k, k)] = diag;
        if k + 1 < n {
            let j = kf + 1.0;
            let off2 = if k == 0 {
                4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab).powi(2) * (3.0 + ab))
            } else {
                let s = 2.0 * j + ab;
                4.0 * j * (j + alpha) * (j + beta) * (j + ab) / (s * s * (s + 1.0) * (s - 1.0))
            };
            jm[(k, k + 1)] = off2.sqrt();
            jm[(k + 1, k)] = off2.sqrt();
        }
    }
    let eig = SymmetricEigen::new(jm);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    let nf = n as f64;
    let log_const = ln_gamma(nf + alpha + 1.0) + ln_gamma(nf + beta + 1.0)
        - ln_gamma(nf + ab + 1.0)
        - ln_gamma(nf + 1.0)
        + (ab + 1.0) * std::f64::consts::LN_2;
    let derivative = |x: f64| {
        let (p, pm1) = jacobi_pair(n, alpha, beta, x);
        let s = 2.0 * nf + ab;
        let dp = (nf * (alpha - beta - s * x) * p + 2.0 * (nf + alpha) * (nf + beta) * pm1)
            / (s * (1.0 - x * x));
        (p, dp)
    };
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = derivative(*x);
            let step = p / dp;
            if !step.is_finite() {
                break;
            }
            let next = *x - step;
            if next.abs() >= 1.0 {
                break;
            }
            *x = next;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = derivative(*x);
        weights.push((log_const - ((1.0 - *x * *x) * dp * dp).ln()).exp());
    }
    // Pin the zeroth moment exactly; removes the small drift of the formula.
    let mass = ((ab + 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
        - ln_gamma(ab + 2.0))
        .exp();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w *= mass / total);
    (nodes, weights)
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Adaptive double-exponential (tanh–sinh) integrator on a finite interval.
#[derive(Debug, Clone, Copy)]
pub struct TanhSinh {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_level: u32,
}

impl Default for TanhSinh {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_level: 12,
        }
    }
}

// Beyond this the endpoint distance drops under ~1e-300.
const TAU_MAX: f64 = 6.0;

impl TanhSinh {
    pub fn with_tol(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    /// `∫_a^b f`, where `f(x, x - a, b - x)` receives accurate endpoint gaps.
    pub fn integrate<F>(&self, a: f64, b: f64, mut f: F) -> Result<Integral>
    where
        F: FnMut(f64, f64, f64) -> f64,
    {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::domain("tanh-sinh needs finite limits"));
        }
        if a == b {
            return Ok(Integral {
                value: 0.0,
                error: 0.0,
                evaluations: 0,
            });
        }
        if a > b {
            let r = self.integrate_ordered(b, a, &mut |x, l, r| f(x, r, l))?;
            return Ok(Integral {
                value: -r.value,
                ..r
            });
        }
        self.integrate_ordered(a, b, &mut f)
    }

    fn integrate_ordered(
        &self,
        a: f64,
        b: f64,
        f: &mut dyn FnMut(f64, f64, f64) -> f64,
    ) -> Result<Integral> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut evaluations = 0usize;
        let mut sample = |tau: f64| -> f64 {
            let u = std::f64::consts::FRAC_PI_2 * tau.sinh();
            let q = (-2.0 * u.abs()).exp();
            let near = 2.0 * half * q / (1.0 + q);
            let far = 2.0 * half / (1.0 + q);
            let w = half * std::f64::consts::FRAC_PI_2 * tau.cosh() * 4.0 * q / ((1.0 + q) * (1.0 + q));
            if w == 0.0 || near < f64::MIN_POSITIVE {
                return 0.0;
            }
            evaluations += 1;
            let (x, dl, dr) = if tau < 0.0 {
                (a + near, near, far)
            } else {
                (b - near, far, near)
            };
            let x = if tau == 0.0 { mid } else { x };
            let v = f(x, dl, dr);
            w * v
        };

        let mut step = 1.0;
        let mut sum = sample(0.0);
        let mut k = 1.0;
        while k <= TAU_MAX {
            sum += sample(k) + sample(-k);
            k += 1.0;
        }
        let mut estimate = sum * step;
        let mut last_diff = f64::INFINITY;
        for _ in 1..=self.max_level {
            step *= 0.5;
            let mut tau = step;
            while tau <= TAU_MAX {
                sum += sample(tau) + sample(-tau);
                tau += 2.0 * step;
            }
            let next = sum * step;
            let diff = (next - estimate).abs();
            estimate = next;
            if !estimate.is_finite() {
                return Err(Error::Tolerance {
                    what: "tanh-sinh".into(),
                    tolerance: self.abs_tol,
                    residual: f64::INFINITY,
                });
            }
            // Convergence is quadratic: the next correction is ~ diff^2/last.
            if diff <= self.abs_tol.max(self.rel_tol * estimate.abs()) && last_diff.is_finite() {
                return Ok(Integral {
                    value: estimate,
                    error: diff,
                    evaluations,
                });
            }
            last_diff = diff;
        }
        Err(Error::Tolerance {
            what: "tanh-sinh".into(),
            tolerance: self.abs_tol.max(self.rel_tol * estimate.abs()),
            residual: last_diff,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::beta::beta;

    #[test]
    fn jacobi_reproduces_beta_moments() {
        for &(a, b) in &[(-0.8, 0.0), (-0.3, 0.4), (0.5, -0.5), (-0.95, -0.2), (0.0, 0.0)] {
            let rule = GaussRule::jacobi(64, a, b).unwrap();
            // Errors are measured against the total mass, which bounds ∫|f|w.
            let mass = beta(a + 1.0, b + 1.0);
            for k in 0..20 {
                let got = rule.integrate(0.0, 1.0, |x| x.powi(k));
                let want = beta(a + 1.0 + k as f64, b + 1.0);
                assert!(
                    (got - want).abs() < 1e-12 * mass,
                    "a={a} b={b} k={k}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn jacobi_nodes_are_sorted_and_interior() {
        let rule = GaussRule::jacobi(64, -0.9, 0.2).unwrap();
        assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(rule.nodes[0] > 0.0 && *rule.nodes.last().unwrap() < 1.0);
        assert!(rule.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn rescaled_interval_keeps_weight() {
        // ∫_2^5 (x-2)^{-1/2} dx = 2 sqrt(3)
        let rule = GaussRule::jacobi(8, -0.5, 0.0).unwrap();
        let got = rule.integrate(2.0, 5.0, |_| 1.0);
        assert!((got - 2.0 * 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn tanh_sinh_endpoint_singularities() {
        let ts = TanhSinh::with_tol(1e-13, 1e-13);
        // ∫_0^1 x^{-0.7} (1-x)^{-0.4} = B(0.3, 0.6)
        let got = ts
            .integrate(0.0, 1.0, |_, l, r| l.powf(-0.7) * r.powf(-0.4))
            .unwrap();
        let want = beta(0.3, 0.6);
        assert!((got.value - want).abs() < 1e-11 * want, "{} vs {want}", got.value);
    }

    #[test]
    fn tanh_sinh_smooth_and_reversed() {
        let ts = TanhSinh::default();
        let fwd = ts.integrate(0.0, 2.0, |x, _, _| x.exp()).unwrap().value;
        let rev = ts.integrate(2.0, 0.0, |x, _, _| x.exp()).unwrap().value;
        assert!((fwd - (2f64.exp() - 1.0)).abs() < 1e-12);
        assert!((fwd + rev).abs() < 1e-14);
    }

    #[test]
    fn tanh_sinh_reports_failure() {
        let ts = TanhSinh {
            max_level: 2,
            ..TanhSinh::with_tol(1e-15, 1e-15)
        };
        // A jump in the interior defeats the rule.
        let r = ts.integrate(0.0, 1.0, |x, _, _| if x < 0.3 { 1.0 } else { 0.0 });
        assert!(matches!(r, Err(Error::Tolerance { .. })));
    }
}
