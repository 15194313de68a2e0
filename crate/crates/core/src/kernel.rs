//! The Volterra kernel of fractional Brownian motion.
//!
//! `B_t = ∫_0^t K(t,s) dW_s`. For `H > 1/2`
//!
//! ```text
//! K(t,s) = c_H s^{1/2-H} ∫_s^t (u-s)^{H-3/2} u^{H-1/2} du
//! ```
//!
//! and for `H < 1/2`
//!
//! ```text
//! K(t,s) = c_H [ (t/s)^{H-1/2} (t-s)^{H-1/2}
//!               - (H-1/2) s^{1/2-H} ∫_s^t u^{H-3/2} (u-s)^{H-1/2} du ].
//! ```
//!
//! With `u = s + (t-s) x` and `ρ = s/(t-s)` both inner integrals become
//! `(t-s)^{2H-1} ∫_0^1 x^α (ρ+x)^p dx` with `α + p = 2H - 2`. The `x^α`
//! endpoint factor goes into a Gauss–Jacobi weight. When `ρ` is small the
//! factor `(ρ+x)^p` is nearly singular at the left end, so the interval is
//! split at `x = ρ/θ` (θ the splitting threshold): Gauss–Jacobi on the left
//! piece, and a binomial series in `ρ/x ≤ θ` with closed-form terms on the
//! right piece.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;

use crate::error::{Error, Result};
use crate::quadrature::{GaussRule, TanhSinh};

/// Hurst index, spatial dimension and time horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstParams {
    pub hurst: f64,
    pub dim: usize,
    pub horizon: f64,
}

/// Where a parameter point sits relative to the existence thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `Hd < 1`: `E(L_ε)` stays bounded as `ε → 0`.
    Subcritical,
    /// `1 ≤ Hd < 3/2` and `H < min(3/(2d), 2/(d+1))`: the renormalized
    /// local time exists and has the integral representation.
    Renormalizable,
    /// `1 ≤ Hd < 3/2` but outside the representation hypothesis.
    Critical,
    /// `Hd ≥ 3/2`: no renormalized limit.
    Supercritical,
}

impl HurstParams {
    pub fn new(hurst: f64, dim: usize, horizon: f64) -> Result<Self> {
        let p = Self {
            hurst,
            dim,
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.violations();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Domain(problems.join("; ")))
        }
    }

    /// Every violated constraint, as readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            v.push(format!("hurst must lie in (0, 1), got {}", self.hurst));
        }
        if self.dim == 0 {
            v.push("dim must be at least 1".to_string());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            v.push(format!("horizon must be positive and finite, got {}", self.horizon));
        }
        v
    }

    pub fn hd(&self) -> f64 {
        self.hurst * self.dim as f64
    }

    pub fn is_brownian(&self) -> bool {
        self.hurst == 0.5
    }

    pub fn subcritical(&self) -> bool {
        self.hd() < 1.0
    }

    /// Hypothesis of the integral representation theorem.
    pub fn representation_hypothesis(&self) -> bool {
        let d = self.dim as f64;
        self.hurst < (1.5 / d).min(2.0 / (d + 1.0))
    }

    pub fn renormalizable(&self) -> bool {
        let hd = self.hd();
        (1.0..1.5).contains(&hd) && self.representation_hypothesis()
    }

    pub fn regime(&self) -> Regime {
        let hd = self.hd();
        if hd < 1.0 {
            Regime::Subcritical
        } else if hd >= 1.5 {
            Regime::Supercritical
        } else if self.representation_hypothesis() {
            Regime::Renormalizable
        } else {
            Regime::Critical
        }
    }
}

/// Branch normalizing constants; at most one slot is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConstants {
    /// `[H(2H-1)/B(2-2H, H-1/2)]^{1/2}`, for `H > 1/2`.
    pub rough_free: Option<f64>,
    /// `[2H/((1-2H) B(1-2H, H+1/2))]^{1/2}`, for `H < 1/2`.
    pub rough: Option<f64>,
}

impl KernelConstants {
    pub fn branch(&self) -> Option<f64> {
        self.rough_free.or(self.rough)
    }
}

pub fn kernel_constants(hurst: f64) -> Result<KernelConstants> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::domain(format!("hurst must lie in (0, 1), got {hurst}")));
    }
    let mut c = KernelConstants {
        rough_free: None,
        rough: None,
    };
    if hurst > 0.5 {
        let b = beta(2.0 - 2.0 * hurst, hurst - 0.5);
        c.rough_free = Some((hurst * (2.0 * hurst - 1.0) / b).sqrt());
    } else if hurst < 0.5 {
        let b = beta(1.0 - 2.0 * hurst, hurst + 0.5);
        c.rough = Some((2.0 * hurst / ((1.0 - 2.0 * hurst) * b)).sqrt());
    }
    Ok(c)
}

/// A square-integrable Volterra kernel `K(t, s)`, zero for `s ≥ t`.
pub trait VolterraKernel: Sync {
    fn hurst(&self) -> f64;

    /// `K(t, s)` for `0 < s < t`, with `gap = t - s` supplied by the caller
    /// so that near-diagonal evaluations do not lose digits.
    fn value_with_gap(&self, t: f64, s: f64, gap: f64) -> f64;

    /// Integrator used by the integrated quantities.
    fn integrator(&self) -> TanhSinh;

    fn value(&self, t: f64, s: f64) -> f64 {
        if s >= t {
            0.0
        } else {
            self.value_with_gap(t, s, t - s)
        }
    }

    /// `∫_s^t K(t,θ)^2 dθ`.
    fn integrated_square(&self, s: f64, t: f64) -> Result<f64> {
        if !(0.0 <= s && s < t) {
            return Err(Error::domain(format!(
                "integrated_square needs 0 <= s < t (s={s}, t={t})"
            )));
        }
        let r = self.integrator().integrate(s, t, |theta, _, gap| {
            let k = self.value_with_gap(t, theta, gap);
            k * k
        })?;
        Ok(r.value)
    }

    /// `∫_lo^hi K(t,u) K(s,u) du` for `lo < hi ≤ min(s, t)`.
    fn cross_moment(&self, t: f64, s: f64, lo: f64, hi: f64) -> Result<f64> {
        if !(0.0 <= lo && lo <= hi && hi <= s.min(t)) {
            return Err(Error::domain(format!(
                "cross_moment needs 0 <= lo <= hi <= min(s,t) (lo={lo}, hi={hi}, s={s}, t={t})"
            )));
        }
        let (dt, ds) = (t - hi, s - hi);
        let r = self.integrator().integrate(lo, hi, |u, _, back| {
            self.value_with_gap(t, u, dt + back) * self.value_with_gap(s, u, ds + back)
        })?;
        Ok(r.value)
    }

    /// `E(B_t B_s) = ∫_0^{s∧t} K(t,u) K(s,u) du`.
    fn covariance(&self, t: f64, s: f64) -> Result<f64> {
        let m = s.min(t);
        if m <= 0.0 {
            return Ok(0.0);
        }
        self.cross_moment(t, s, 0.0, m)
    }
}

/// Evaluation context for the fBm kernel.
#[derive(Debug, Clone)]
pub struct KernelEval {
    params: HurstParams,
    constant: f64,
    alpha: f64,
    power: f64,
    split: f64,
    jacobi: GaussRule,
    head_constant: f64,
    quad: TanhSinh,
}

pub const DEFAULT_ORDER: usize = 64;
pub const DEFAULT_SPLIT: f64 = 0.1;
pub const DEFAULT_QUAD_TOL: f64 = 1e-8;

impl KernelEval {
    pub fn new(params: HurstParams) -> Result<Self> {
        Self::with_settings(params, DEFAULT_ORDER, DEFAULT_SPLIT, DEFAULT_QUAD_TOL)
    }

    /// `order` Gauss–Jacobi nodes; `split` is the value of `ρ = s/(t-s)`
    /// below which the inner integral is split; `quad_tol` is the absolute
    /// target of the integrated quantities.
    pub fn with_settings(params: HurstParams, order: usize, split: f64, quad_tol: f64) -> Result<Self> {
        params.validate()?;
        if !(split > 0.0 && split < 1.0) {
            return Err(Error::domain(format!("splitting threshold must lie in (0,1), got {split}")));
        }
        let h = params.hurst;
        let constant = kernel_constants(h)?.branch().unwrap_or(1.0);
        let (alpha, power) = if h > 0.5 {
            (h - 1.5, h - 0.5)
        } else {
            (h - 0.5, h - 1.5)
        };
        let jacobi = if h == 0.5 {
            GaussRule::legendre(1)
        } else {
            GaussRule::jacobi(order, alpha, 0.0)?
        };
        let head_constant = jacobi.integrate(0.0, 1.0, |y| (1.0 + y / split).powf(power));
        Ok(Self {
            params,
            constant,
            alpha,
            power,
            split,
            jacobi,
            head_constant,
            quad: TanhSinh::with_tol(quad_tol, quad_tol),
        })
    }

    pub fn params(&self) -> &HurstParams {
        &self.params
    }

    /// The branch constant, or 1 in the Brownian case.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// `gap^{2H-1} ∫_0^1 x^α (ρ + x)^p dx` with `ρ = s / gap`, arranged so
    /// that no intermediate power over- or underflows for extreme `ρ`.
    fn scaled_inner(&self, gap: f64, rho: f64) -> f64 {
        let p = self.power;
        let e = 2.0 * self.params.hurst - 1.0;
        if rho >= self.split {
            let inv = 1.0 / rho;
            let body = self.jacobi.integrate(0.0, 1.0, |x| x.mul_add(inv, 1.0).powf(p));
            return (e * gap.ln() + p * rho.ln()).exp() * body;
        }
        let cut = rho / self.split;
        // Head: ∫_0^cut x^α (ρ+x)^p dx = ρ^{2H-1} θ^{-(1+α)} ∫_0^1 y^α (1 + y/θ)^p dy.
        let head = (e * rho.ln() - (1.0 + self.alpha) * self.split.ln()).exp() * self.head_constant;
        // Tail: ∫_cut^1 x^{2H-2} (1 + ρ/x)^p dx = Σ_k binom(p,k) ρ^k ∫_cut^1 x^{2H-2-k} dx.
        let ln_cut = cut.ln();
        let mut tail = -(e * ln_cut).exp_m1() / e;
        let cut_e = (e * ln_cut).exp();
        let mut binom = 1.0;
        let mut ratio_k = 1.0;
        let mut rho_k = 1.0;
        for k in 1..64 {
            let kf = k as f64;
            binom *= (p - kf + 1.0) / kf;
            ratio_k *= self.split;
            rho_k *= rho;
            let term = binom * (cut_e * ratio_k - rho_k) / (kf - e);
            tail += term;
            if term.abs() <= 1e-17 * tail.abs() {
                break;
            }
        }
        gap.powf(e) * (head + tail)
    }

    /// `K(t, s)`; zero for `s ≥ t`, an error for `s ≤ 0`.
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        if s >= t {
            return Ok(0.0);
        }
        if s <= 0.0 {
            return Err(Error::domain(format!("kernel evaluated at s = {s} <= 0")));
        }
        Ok(self.value_with_gap(t, s, t - s))
    }

    /// `∂K/∂t (t, s) = c (t/s)^{H-1/2} (t-s)^{H-3/2}`, with `c = C_{H,1}` for
    /// `H > 1/2` and `c = (H - 1/2) C_{H,2}` for `H < 1/2`.
    pub fn dt(&self, t: f64, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Err(Error::domain(format!("kernel derivative at s = {s} <= 0")));
        }
        if t == s {
            return Err(Error::domain("kernel derivative is singular on the diagonal"));
        }
        if s > t {
            return Ok(0.0);
        }
        Ok(self.dt_with_gap(t, s, t - s))
    }

    /// `∂K/∂t (t, s)` with `gap = t - s` supplied by the caller.
    pub fn dt_with_gap(&self, t: f64, s: f64, gap: f64) -> f64 {
        let h = self.params.hurst;
        if h == 0.5 {
            return 0.0;
        }
        let c = if h > 0.5 {
            self.constant
        } else {
            self.constant * (h - 0.5)
        };
        c * (t / s).powf(h - 0.5) * gap.powf(h - 1.5)
    }

    /// `K(t,r) - K(s,r) 1{r<s}`. When `r` is below both `s` and `t` the
    /// difference is integrated from the derivative instead of subtracted.
    pub fn increment(&self, t: f64, s: f64, r: f64) -> Result<f64> {
        if r <= 0.0 {
            return Err(Error::domain(format!("kernel increment at r = {r} <= 0")));
        }
        if r >= s {
            return self.eval(t, r);
        }
        if r >= t {
            return Ok(-self.eval(s, r)?);
        }
        if self.params.is_brownian() || s == t {
            return Ok(0.0);
        }
        let (lo, hi, sign) = if s < t { (s, t, 1.0) } else { (t, s, -1.0) };
        let offset = lo - r;
        let v = self
            .quad
            .integrate(lo, hi, |theta, from_lo, _| self.dt_with_gap(theta, r, offset + from_lo))?;
        Ok(sign * v.value)
    }

    /// Infimum of `∫_s^t K(t,θ)^2 dθ / (t-s)^{2H}` over all node pairs.
    pub fn nondegeneracy_scan(&self, nodes: &[f64]) -> Result<ScanExtremum> {
        scan_pairs(nodes, true, |s, t| {
            Ok(self.integrated_square(s, t)? / (t - s).powf(2.0 * self.params.hurst))
        })
    }

    /// Supremum of `|K(t,r)| / ((t-r)^{H-1/2} r^{1/2-H})` over node pairs `r < t`.
    pub fn growth_bound_scan(&self, nodes: &[f64]) -> Result<ScanExtremum> {
        let h = self.params.hurst;
        scan_pairs(nodes, false, |r, t| {
            if r <= 0.0 {
                return Ok(f64::NAN);
            }
            Ok(self.eval(t, r)?.abs() / ((t - r).powf(h - 0.5) * r.powf(0.5 - h)))
        })
    }
}

impl VolterraKernel for KernelEval {
    fn hurst(&self) -> f64 {
        self.params.hurst
    }

    #[inline]
    fn value_with_gap(&self, t: f64, s: f64, gap: f64) -> f64 {
        let h = self.params.hurst;
        if gap <= 0.0 {
            return 0.0;
        }
        if h == 0.5 {
            return 1.0;
        }
        let integral = self.scaled_inner(gap, s / gap);
        if h > 0.5 {
            self.constant * s.powf(0.5 - h) * integral
        } else {
            self.constant
                * ((t / s).powf(h - 0.5) * gap.powf(h - 0.5) - (h - 0.5) * s.powf(0.5 - h) * integral)
        }
    }

    fn integrator(&self) -> TanhSinh {
        self.quad
    }
}

/// The kernel `(t-s)^{H-1/2}`; the simplest kernel for which the
/// nondegeneracy ratio is constant (`1/(2H)`).
#[derive(Debug, Clone, Copy)]
pub struct PowerKernel {
    pub hurst: f64,
    pub quad: TanhSinh,
}

impl PowerKernel {
    pub fn new(hurst: f64) -> Self {
        Self {
            hurst,
            quad: TanhSinh::with_tol(1e-13, 1e-13),
        }
    }
}

impl VolterraKernel for PowerKernel {
    fn hurst(&self) -> f64 {
        self.hurst
    }

    fn value_with_gap(&self, _t: f64, _s: f64, gap: f64) -> f64 {
        if gap <= 0.0 {
            0.0
        } else {
            gap.powf(self.hurst - 0.5)
        }
    }

    fn integrator(&self) -> TanhSinh {
        self.quad
    }
}

/// Location and value of the extremum of a ratio scanned over node pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanExtremum {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

fn scan_pairs<F>(nodes: &[f64], minimize: bool, f: F) -> Result<ScanExtremum>
where
    F: Fn(f64, f64) -> Result<f64> + Sync,
{
    use rayon::prelude::*;
    let pairs: Vec<(f64, f64)> = nodes
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| nodes[i + 1..].iter().map(move |&b| (a, b)))
        .filter(|(a, b)| a < b)
        .collect();
    let values = pairs
        .par_iter()
        .map(|&(a, b)| f(a, b).map(|v| (v, a, b)))
        .collect::<Result<Vec<_>>>()?;
    let best = values
        .into_iter()
        .filter(|(v, _, _)| !v.is_nan())
        .reduce(|x, y| {
            let better = if minimize { y.0 < x.0 } else { y.0 > x.0 };
            if better {
                y
            } else {
                x
            }
        })
        .ok_or_else(|| Error::domain("scan needs at least two distinct nodes"))?;
    Ok(ScanExtremum {
        value: best.0,
        first: best.1,
        second: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(h: f64) -> KernelEval {
        KernelEval::new(HurstParams::new(h, 1, 1.0).unwrap()).unwrap()
    }

    // Independent Beta by direct quadrature of x^{a-1}(1-x)^{b-1}.
    fn beta_by_quadrature(a: f64, b: f64) -> f64 {
        TanhSinh::with_tol(1e-14, 1e-14)
            .integrate(0.0, 1.0, |_, l, r| l.powf(a - 1.0) * r.powf(b - 1.0))
            .unwrap()
            .value
    }

    #[test]
    fn constants_match_quadrature_beta() {
        let c = kernel_constants(0.75).unwrap();
        let want = (0.75 * 0.5 / beta_by_quadrature(0.5, 0.25)).sqrt();
        assert!((c.rough_free.unwrap() - want).abs() < 1e-10);
        assert!(c.rough.is_none());

        let c = kernel_constants(0.25).unwrap();
        let want = (0.5 / (0.5 * beta_by_quadrature(0.5, 0.75))).sqrt();
        assert!((c.rough.unwrap() - want).abs() < 1e-10);
        assert!(c.rough_free.is_none());

        let c = kernel_constants(0.5).unwrap();
        assert!(c.branch().is_none());
        assert!(kernel_constants(1.0).is_err());
        assert!(kernel_constants(-0.1).is_err());
    }

    #[test]
    fn brownian_kernel_is_one() {
        let k = ctx(0.5);
        assert_eq!(k.eval(1.0, 0.3).unwrap(), 1.0);
        assert_eq!(k.dt(1.0, 0.3).unwrap(), 0.0);
        assert_eq!(k.increment(1.0, 0.8, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn zero_above_diagonal_and_domain_errors() {
        for h in [0.2, 0.5, 0.7] {
            let k = ctx(h);
            assert_eq!(k.eval(1.0, 1.2).unwrap(), 0.0);
            assert_eq!(k.eval(1.0, 1.0).unwrap(), 0.0);
            assert!(k.eval(1.0, 0.0).is_err());
            assert!(k.dt(1.0, 1.0).is_err());
        }
    }

    #[test]
    fn unit_variance_at_one() {
        for h in [0.1, 0.25, 0.4, 0.6, 0.7, 0.9] {
            let v = ctx(h).integrated_square(0.0, 1.0).unwrap();
            assert!((v - 1.0).abs() < 1e-7, "H={h}: {v}");
        }
    }

    #[test]
    fn split_and_unsplit_inner_integrals_agree() {
        // Around the threshold both evaluation paths must coincide.
        for h in [0.2, 0.45, 0.55, 0.8] {
            let k = ctx(h);
            let below = k.scaled_inner(1.0, DEFAULT_SPLIT * (1.0 - 1e-12));
            let above = k.scaled_inner(1.0, DEFAULT_SPLIT);
            assert!((below - above).abs() < 1e-12 * above.abs(), "H={h}: {below} {above}");
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for h in [0.25, 0.4, 0.6, 0.75] {
            let k = ctx(h);
            for &(t, s) in &[(1.0, 0.5), (0.7, 0.1), (0.9, 0.85), (0.3, 0.01)] {
                let step = 1e-5 * (t - s);
                let fd = (k.eval(t + step, s).unwrap() - k.eval(t - step, s).unwrap()) / (2.0 * step);
                let an = k.dt(t, s).unwrap();
                assert!((fd - an).abs() < 1e-4 * an.abs(), "H={h} t={t} s={s}: {fd} {an}");
                assert_eq!(an > 0.0, h > 0.5);
            }
        }
    }

    #[test]
    fn increment_routes_agree() {
        let k = ctx(0.7);
        let via_derivative = k.increment(1.0, 0.8, 0.5).unwrap();
        let direct = k.eval(1.0, 0.5).unwrap() - k.eval(0.8, 0.5).unwrap();
        assert!((via_derivative - direct).abs() < 1e-9);
        // s < r < t: the second term vanishes.
        assert_eq!(k.increment(1.0, 0.3, 0.5).unwrap(), k.eval(1.0, 0.5).unwrap());
    }

    #[test]
    fn power_kernel_is_exactly_nondegenerate() {
        for h in [0.2, 0.5, 0.8] {
            let k = PowerKernel::new(h);
            let v = k.integrated_square(0.25, 0.9).unwrap();
            let want = 0.65f64.powf(2.0 * h) / (2.0 * h);
            assert!((v - want).abs() < 1e-10);
        }
    }

    #[test]
    fn regimes() {
        let p = HurstParams::new(0.3, 2, 1.0).unwrap();
        assert_eq!(p.regime(), Regime::Subcritical);
        let p = HurstParams::new(0.4, 3, 1.0).unwrap();
        assert_eq!(p.regime(), Regime::Renormalizable);
        let p = HurstParams::new(0.8, 2, 1.0).unwrap();
        assert_eq!(p.regime(), Regime::Supercritical);
        let p = HurstParams::new(0.7, 2, 1.0).unwrap();
        assert_eq!(p.regime(), Regime::Critical);
        assert!(HurstParams::new(1.2, 0, -1.0).unwrap_err().to_string().matches(';').count() == 2);
    }
}
