//! Analytic bounds as numeric oracles.
//!
//! Four independent checks: the kernel-increment double integral and its
//! `r^{1/2-H} ∨ 1` envelope, the nested simplex integral with the `Γ`-function
//! bound, the admissible exponential-moment exponents, and an empirical
//! diagnostic for the transfer of exponential moments from `⟨M⟩` to `M`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::kernel::{HurstParams, KernelEval, VolterraKernel};
use crate::quadrature::{GaussRule, TanhSinh};
use crate::rng::{stream, Purpose};
use crate::stats::{bootstrap_interval, Accumulator};

/// Value of the kernel-increment integral at one lower limit `r`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IncrementIntegral {
    pub r: f64,
    pub integral: f64,
    pub envelope: f64,
    pub ratio: f64,
    pub error_estimate: f64,
}

/// Checks `H < 2/(d+1)` and `H < 3/(2d)`, naming every inequality that fails.
pub fn check_increment_regime(params: &HurstParams) -> Result<()> {
    let h = params.hurst;
    let d = params.dim as f64;
    let mut violated = Vec::new();
    if h >= 2.0 / (d + 1.0) {
        violated.push(format!("H < 2/(d+1) fails: H = {h}, 2/(d+1) = {}", 2.0 / (d + 1.0)));
    }
    if h >= 1.5 / d {
        violated.push(format!("H < 3/(2d) fails: H = {h}, 3/(2d) = {}", 1.5 / d));
    }
    if violated.is_empty() {
        Ok(())
    } else {
        Err(Error::domain(violated.join("; ")))
    }
}

/// `∫_r^T ∫_r^t (t-s)^{-H(d+1)} |K(t,r) - K(s,r)| ds dt` with its envelope
/// `r^{1/2-H} ∨ 1`.
const INNER_CUTOFF: f64 = 1e-60;

pub fn lemma1_integral(ctx: &KernelEval, r: f64) -> Result<IncrementIntegral> {
    let params = *ctx.params();
    check_increment_regime(&params)?;
    let horizon = params.horizon;
    if !(r > 0.0 && r < horizon) {
        return Err(Error::domain(format!("need 0 < r < T, got r = {r}, T = {horizon}")));
    }
    let envelope = r.powf(0.5 - params.hurst).max(1.0);
    if params.is_brownian() {
        return Ok(IncrementIntegral {
            r,
            integral: 0.0,
            envelope,
            ratio: 0.0,
            error_estimate: 0.0,
        });
    }
    let near_exponent = 1.0 - params.hurst * (params.dim as f64 + 1.0);
    let near_rule = GaussRule::jacobi(24, near_exponent, 0.0)?;
    let mean_slope_rule = GaussRule::legendre(10);
    let far_rule = TanhSinh::with_tol(1e-14, 1e-9);
    let outer_rule = TanhSinh::with_tol(1e-12, 1e-7);
    // (K(t,r) - K(s,r)) / (t - s) from the offsets `t - r` and `t - s`.
    let slope = |t_from_r: f64, k_tr: f64, gap: f64| {
        let s_from_r = t_from_r - gap;
        if gap < 0.25 * s_from_r {
            mean_slope_rule.integrate(0.0, 1.0, |x| {
                let theta_from_r = s_from_r + gap * x;
                ctx.dt_with_gap(r + theta_from_r, r, theta_from_r)
            })
        } else {
            (k_tr - ctx.value_with_gap(r + s_from_r, r, s_from_r)) / gap
        }
    };
    let mut inner_relative_error = 0.0f64;
    let mut failure = None;
    let mut inner = |t_from_r: f64| -> f64 {
        let t = r + t_from_r;
        let k_tr = ctx.value_with_gap(t, r, t_from_r);
        let half = 0.5 * t_from_r;
        // Near the diagonal the weight (t-s)^{-H(d+1)} (t-s) is absorbed by
        // the Jacobi rule; near s = r the kernel singularity is left to tanh-sinh.
        let near = near_rule.integrate(0.0, half, |gap| slope(t_from_r, k_tr, gap).abs());
        let far = far_rule.integrate(half, t_from_r, |gap, _, s_from_r| {
            if s_from_r <= 0.0 {
                return 0.0;
            }
            gap.powf(near_exponent - 1.0) * (k_tr - ctx.value_with_gap(r + s_from_r, r, s_from_r)).abs()
        });
        match far {
            Ok(v) => {
                let total = near + v.value;
                inner_relative_error = inner_relative_error.max(v.error / total.abs().max(f64::MIN_POSITIVE));
                total
            }
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    // Below `cutoff` the inner integral is a power of `t - r`; that piece is
    // added in closed form from the local exponent.
    let cutoff = INNER_CUTOFF * horizon;
    let (at_cutoff, at_double) = (inner(cutoff), inner(2.0 * cutoff));
    let local_exponent = (at_double / at_cutoff).log2();
    let tail = at_cutoff * cutoff / (local_exponent + 1.0);
    let outer = outer_rule.integrate(r + cutoff, horizon, |_, from_cutoff, _| inner(cutoff + from_cutoff));
    if let Some(e) = failure {
        return Err(e);
    }
    let outer = outer?;
    let outer = crate::quadrature::Integral {
        value: outer.value + tail,
        ..outer
    };
    Ok(IncrementIntegral {
        r,
        integral: outer.value,
        envelope,
        ratio: outer.value / envelope,
        error_estimate: outer.error + inner_relative_error * outer.value.abs(),
    })
}

/// The integral over a scan of lower limits and the smallest constant `C`
/// that makes the envelope bound hold on the scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncrementScan {
    pub hurst: f64,
    pub dim: usize,
    pub points: Vec<IncrementIntegral>,
    pub fitted_constant: f64,
}

pub fn lemma1_scan(ctx: &KernelEval, rs: &[f64]) -> Result<IncrementScan> {
    use rayon::prelude::*;
    let points = rs
        .par_iter()
        .map(|&r| lemma1_integral(ctx, r))
        .collect::<Result<Vec<_>>>()?;
    let fitted_constant = points.iter().map(|p| p.ratio).fold(0.0, f64::max);
    Ok(IncrementScan {
        hurst: ctx.params().hurst,
        dim: ctx.params().dim,
        points,
        fitted_constant,
    })
}

/// Nested simplex integral
/// `∫_{0<s_1<…<s_n<T} Π_j ((s_{j+1} - s_j) ∧ s_j)^{-a} ds` with `s_{n+1} = T`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimplexIntegralSpec {
    pub a: f64,
    pub n: usize,
    pub horizon: f64,
}

pub const MAX_SIMPLEX_ORDER: usize = 8;

impl SimplexIntegralSpec {
    pub fn new(a: f64, n: usize, horizon: f64) -> Result<Self> {
        let spec = Self { a, n, horizon };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a < 1.0) {
            return Err(Error::Divergent(format!(
                "simplex integral needs a < 1, got a = {}",
                self.a
            )));
        }
        if self.n == 0 || self.n > MAX_SIMPLEX_ORDER {
            return Err(Error::domain(format!(
                "simplex order must lie in 1..={MAX_SIMPLEX_ORDER}, got {}",
                self.n
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::domain(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }

    /// `max(Γ(2-a) 2^a / (1-a), 1 + Γ(1-a))`.
    pub fn constant(&self) -> f64 {
        let a = self.a;
        (gamma(2.0 - a) * 2f64.powf(a) / (1.0 - a)).max(1.0 + gamma(1.0 - a))
    }

    /// `Cⁿ T^{n(1-a)} / Γ(n(1-a) + 1)`.
    pub fn bound(&self) -> f64 {
        let e = self.n as f64 * (1.0 - self.a);
        self.constant().powi(self.n as i32) * self.horizon.powf(e) / gamma(e + 1.0)
    }

    /// `I_1 = 2/(1-a) (T/2)^{1-a}`.
    pub fn first_order(&self) -> f64 {
        2.0 / (1.0 - self.a) * (0.5 * self.horizon).powf(1.0 - self.a)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimplexIntegral {
    pub exact_recursive: f64,
    pub bound: f64,
}

const CHEBYSHEV_NODES: usize = 64;
const LEVEL_QUADRATURE: usize = 40;

/// Barycentric interpolant on Chebyshev points of the first kind.
struct Chebyshev {
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    values: Vec<f64>,
}

impl Chebyshev {
    fn nodes(lo: f64, hi: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
        (0..m)
            .map(|k| {
                let theta = (2 * k + 1) as f64 * PI / (2 * m) as f64;
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                (lo + 0.5 * (hi - lo) * (1.0 + theta.cos()), sign * theta.sin())
            })
            .unzip()
    }

    fn fit(lo: f64, hi: f64, m: usize, mut f: impl FnMut(f64) -> f64) -> Self {
        let (nodes, weights) = Self::nodes(lo, hi, m);
        let values = nodes.iter().map(|&x| f(x)).collect();
        Self {
            lo,
            hi,
            nodes,
            weights,
            values,
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(self.lo, self.hi);
        let (mut num, mut den) = (0.0, 0.0);
        for ((&xk, &wk), &fk) in self.nodes.iter().zip(&self.weights).zip(&self.values) {
            let gap = x - xk;
            if gap == 0.0 {
                return fk;
            }
            let c = wk / gap;
            num += c * fk;
            den += c;
        }
        num / den
    }
}

/// Evaluates the nested integral level by level. Level `j` is stored as
/// `I_j(u) = u^{j(1-a)} R_j(u)` with `R_j` interpolated in `u`; each level's
/// integral is split at `u/2`, where the minimum changes branch, and each half
/// is a Gauss–Jacobi rule for its algebraic endpoint factor.
pub fn simplex_integral(spec: &SimplexIntegralSpec) -> Result<SimplexIntegral> {
    spec.validate()?;
    let a = spec.a;
    let growth = 1.0 - a;
    let right_rule = GaussRule::jacobi(LEVEL_QUADRATURE, 0.0, -a)?;
    let mut reduced: Option<Chebyshev> = None;
    let mut value = 0.0;
    for level in 1..=spec.n {
        let prev_power = (level - 1) as f64 * growth;
        let left_rule = GaussRule::jacobi(LEVEL_QUADRATURE, prev_power - a, 0.0)?;
        let prev = reduced.as_ref();
        let prev_reduced = |v: f64| prev.map_or(1.0, |c| c.eval(v));
        let level_value = |u: f64| {
            let half = 0.5 * u;
            let left = left_rule.integrate(0.0, half, prev_reduced);
            let right = right_rule.integrate(half, u, |v| v.powf(prev_power) * prev_reduced(v));
            left + right
        };
        if level == spec.n {
            value = level_value(spec.horizon);
        } else {
            let power = level as f64 * growth;
            reduced = Some(Chebyshev::fit(0.0, spec.horizon, CHEBYSHEV_NODES, |u| {
                level_value(u) / u.powf(power)
            }));
        }
    }
    Ok(SimplexIntegral {
        exact_recursive: value,
        bound: spec.bound(),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of the simplex integral. Points of the simplex are
/// drawn top-down: given `s_{j+1} = u`, `s_j` has density proportional to
/// `((u - v) ∧ v)^{-a}` on `(0, u)`, and the sample weight is the product of
/// the normalizers `2/(1-a) (u/2)^{1-a}`.
pub fn simplex_monte_carlo(spec: &SimplexIntegralSpec, samples: usize, seed: u64) -> Result<MonteCarloEstimate> {
    use rayon::prelude::*;
    spec.validate()?;
    if samples < 2 {
        return Err(Error::domain("Monte Carlo needs at least two samples"));
    }
    let growth = 1.0 - spec.a;
    let chunk = 4096;
    let chunks = samples.div_ceil(chunk);
    let acc = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, Purpose::Simplex, c as u64, spec.n as u64);
            let mut acc = Accumulator::new();
            for _ in (c * chunk)..((c + 1) * chunk).min(samples) {
                let mut u = spec.horizon;
                let mut weight = 1.0;
                for _ in 0..spec.n {
                    let half = 0.5 * u;
                    weight *= 2.0 / growth * half.powf(growth);
                    let offset = half * rng.random::<f64>().powf(1.0 / growth);
                    u = if rng.random::<bool>() { offset } else { u - offset };
                }
                acc.push(weight);
            }
            acc
        })
        .reduce(Accumulator::new, |x, y| x.merge(&y));
    Ok(MonteCarloEstimate {
        mean: acc.mean(),
        std_error: acc.std_error(),
        samples,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimplexCheck {
    pub a: f64,
    pub n: usize,
    pub exact_recursive: f64,
    pub bound: f64,
    pub holds: bool,
}

/// At `n = 1` with the first constant active the bound is attained exactly.
pub const BOUND_ROUNDING: f64 = 1e-12;

/// `exact_recursive ≤ bound` over a grid of exponents and orders, up to
/// `BOUND_ROUNDING` relative.
pub fn simplex_conformance(a_grid: &[f64], orders: &[usize], horizon: f64) -> Result<Vec<SimplexCheck>> {
    let mut out = Vec::with_capacity(a_grid.len() * orders.len());
    for &a in a_grid {
        for &n in orders {
            let spec = SimplexIntegralSpec::new(a, n, horizon)?;
            let v = simplex_integral(&spec)?;
            out.push(SimplexCheck {
                a,
                n,
                exact_recursive: v.exact_recursive,
                bound: v.bound,
                holds: v.exact_recursive <= v.bound * (1.0 + BOUND_ROUNDING),
            });
        }
    }
    Ok(out)
}

/// Moment growth exponent and the admissible exponential-moment exponent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MomentExponents {
    /// `γ₀ = (1/2 + H)(d - 1/(2H))`; moments grow like `(n!)^γ` for `γ > γ₀`.
    pub gamma0: f64,
    /// `p₀ = 1/(2γ₀)`.
    pub p0: f64,
    /// The variant `½[(1/2+H)(d/2 - 1/(4H))]^{-1} = 1/γ₀`, reported alongside.
    pub p0_halved_bracket: f64,
    /// `2H/(1+2H)`, present only when `Hd = 1`.
    pub p0_boundary: Option<f64>,
}

pub fn moment_bound_exponent(params: &HurstParams) -> Result<MomentExponents> {
    let h = params.hurst;
    let d = params.dim as f64;
    let hd = h * d;
    if !(1.0..1.5).contains(&hd) {
        return Err(Error::domain(format!("moment exponent needs 1 <= Hd < 3/2, got Hd = {hd}")));
    }
    let gamma0 = (0.5 + h) * (d - 1.0 / (2.0 * h));
    let halved = (0.5 + h) * (d / 2.0 - 1.0 / (4.0 * h));
    Ok(MomentExponents {
        gamma0,
        p0: 0.5 / gamma0,
        p0_halved_bracket: 0.5 / halved,
        p0_boundary: (hd == 1.0).then(|| 2.0 * h / (1.0 + 2.0 * h)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MgfPoint {
    pub lambda: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferReport {
    pub p: f64,
    pub samples: usize,
    pub tail_samples: usize,
    pub tail_threshold: f64,
    /// Fitted tail rate of `⟨M⟩^p`; infinite when `⟨M⟩^p` is degenerate.
    pub alpha_hat: f64,
    /// Rate used for the `λ` grid: the supplied one if any, else `alpha_hat`.
    pub alpha_used: f64,
    /// `√(α/2)`, only for `p = 1` with a finite rate.
    pub lambda_star: Option<f64>,
    pub mgf: Vec<MgfPoint>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy)]
pub struct TransferConfig {
    pub p: f64,
    /// Known tail rate of `⟨M⟩^p`; fitted from the data when absent.
    pub alpha: Option<f64>,
    pub bootstrap: usize,
    pub level: f64,
    pub seed: u64,
}

impl TransferConfig {
    pub fn new(p: f64, seed: u64) -> Self {
        Self {
            p,
            alpha: None,
            bootstrap: 400,
            level: 0.05,
            seed,
        }
    }
}

const MIN_TAIL: usize = 10;
const LAMBDA_FRACTIONS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
const FIXED_LAMBDAS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

/// Empirical check that `E e^{λ|M|}` (or `E e^{λ|M|^p}` for `p < 1`) is
/// finite and stable for `λ` in the range allowed by the tail of `⟨M⟩^p`.
/// `pairs` holds `(M_T, ⟨M⟩_T)` per path.
pub fn exp_moment_transfer_check(pairs: &[(f64, f64)], cfg: &TransferConfig) -> Result<TransferReport> {
    let p = cfg.p;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::domain(format!("transfer exponent p must lie in (0, 1], got {p}")));
    }
    let qv_power: Vec<f64> = pairs.iter().map(|&(_, qv)| qv.max(0.0).powf(p)).collect();
    let magnitude: Vec<f64> = pairs.iter().map(|&(m, _)| m.abs().powf(p)).collect();
    let mut report = TransferReport {
        p,
        samples: pairs.len(),
        tail_samples: 0,
        tail_threshold: f64::NAN,
        alpha_hat: f64::NAN,
        alpha_used: f64::NAN,
        lambda_star: None,
        mgf: Vec::new(),
        verdict: Verdict::Inconclusive,
    };
    if pairs.len() < MIN_TAIL {
        return Ok(report);
    }

    let mut sorted = qv_power.clone();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let threshold = sorted[((0.9 * sorted.len() as f64).floor() as usize).min(sorted.len() - 1)];
    report.tail_threshold = threshold;
    let degenerate = hi - lo <= 1e-12 * hi.abs().max(f64::MIN_POSITIVE);
    if degenerate {
        report.alpha_hat = f64::INFINITY;
    } else {
        let excess: Vec<f64> = qv_power.iter().filter(|&&x| x > threshold).map(|&x| x - threshold).collect();
        report.tail_samples = excess.len();
        if excess.len() < MIN_TAIL {
            return Ok(report);
        }
        report.alpha_hat = excess.len() as f64 / excess.iter().sum::<f64>();
    }
    let alpha = cfg.alpha.unwrap_or(report.alpha_hat);
    report.alpha_used = alpha;

    let lambdas: Vec<f64> = if p == 1.0 && alpha.is_finite() {
        let star = (alpha / 2.0).sqrt();
        report.lambda_star = Some(star);
        LAMBDA_FRACTIONS.iter().map(|f| f * star).collect()
    } else {
        let spread = Accumulator::from_slice(&magnitude).variance().sqrt();
        let unit = if spread > 0.0 { 1.0 / spread } else { 1.0 };
        FIXED_LAMBDAS.iter().map(|f| f * unit).collect()
    };

    let mut rng = stream(cfg.seed, Purpose::Resampling, 0, 0);
    for lambda in lambdas {
        let values: Vec<f64> = magnitude.iter().map(|&x| (lambda * x).exp()).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let (lower, upper) = bootstrap_interval(
            &values,
            |xs| xs.iter().sum::<f64>() / xs.len() as f64,
            cfg.bootstrap,
            cfg.level,
            &mut rng,
        );
        let stable = mean.is_finite() && upper.is_finite() && upper <= 2.0 * mean;
        report.mgf.push(MgfPoint {
            lambda,
            mean,
            lower,
            upper,
            stable,
        });
    }
    report.verdict = if report.mgf.iter().all(|m| m.stable) {
        Verdict::Stable
    } else {
        Verdict::Unstable
    };
    Ok(report)
}
