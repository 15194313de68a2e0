//! Mollified self-intersection local time.
//!
//! `L_ε = ∫∫_{0<s<t<T} p_ε(B_t - B_s) ds dt` with the heat kernel
//! `p_ε(x) = (2πε)^{-d/2} exp(-|x|²/(2ε))`. On a path sampled at the nodes
//! `t_0..t_N` the double integral is the sum over node pairs `a < b` with
//! weight `Δ²`; the diagonal `a = b` is left out.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::fastmath::exp_nonpositive;
use crate::gaussian::{det_q_from_distances, FbmPath, KernelMatrix, MAX_DET_Q_ORDER};
use crate::kernel::HurstParams;
use crate::quadrature::TanhSinh;
use crate::rng::{stream, Purpose};
use crate::stats::Accumulator;

const TWO_PI: f64 = std::f64::consts::TAU;

/// `(2πε)^{-d/2} exp(-|x|²/(2ε))`.
pub fn heat_kernel(x: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("heat kernel needs eps > 0, got {eps}")));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok((TWO_PI * eps).powf(-(x.len() as f64) / 2.0) * (-r2 / (2.0 * eps)).exp())
}

/// Mollifier width and the schedule used for convergence studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifierConfig {
    pub epsilon: f64,
    pub schedule: Vec<f64>,
}

impl MollifierConfig {
    /// `ε_k = 2^{-k} T^{2H}`, `k = 0..=10`; `epsilon` is the last entry.
    pub fn geometric(params: &HurstParams) -> Self {
        let top = params.horizon.powf(2.0 * params.hurst);
        let schedule: Vec<f64> = (0..=10).map(|k| top * 0.5f64.powi(k)).collect();
        Self {
            epsilon: *schedule.last().unwrap(),
            schedule,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.epsilon > 0.0) {
            v.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.schedule.iter().any(|&e| !(e > 0.0)) {
            v.push("every schedule entry must be positive".into());
        }
        if self.schedule.windows(2).any(|w| w[1] >= w[0]) {
            v.push("schedule must be strictly decreasing".into());
        }
        v
    }
}

/// Pathwise `L_ε` for each `ε` in `eps`, sharing the squared distances.
pub fn l_eps_schedule(path: &FbmPath, eps: &[f64]) -> Vec<f64> {
    let n = path.grid.n;
    let dt = path.grid.step();
    let coords: Vec<&[f64]> = (0..path.dim).map(|c| path.coordinate(c)).collect();
    let scales: Vec<f64> = eps.iter().map(|&e| -0.5 / e).collect();
    let mut sums = vec![0.0; eps.len()];
    let mut r2 = vec![0.0; n + 1];
    for a in 0..n {
        let tail = &mut r2[a + 1..];
        tail.iter_mut().for_each(|x| *x = 0.0);
        for c in &coords {
            let base = c[a];
            for (x, &v) in tail.iter_mut().zip(&c[a + 1..]) {
                let diff = v - base;
                *x += diff * diff;
            }
        }
        for (sum, &scale) in sums.iter_mut().zip(&scales) {
            *sum += tail.iter().map(|&x| exp_nonpositive(scale * x)).sum::<f64>();
        }
    }
    let d = path.dim as f64;
    sums.iter()
        .zip(eps)
        .map(|(s, &e)| s * (TWO_PI * e).powf(-d / 2.0) * dt * dt)
        .collect()
}

pub fn l_eps_pathwise(path: &FbmPath, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("L_eps needs eps > 0, got {eps}")));
    }
    Ok(l_eps_schedule(path, &[eps])[0])
}

/// `E(L_ε) = (2π)^{-d/2} ∫_0^T (T-u) (ε + u^{2H})^{-d/2} du`.
pub fn mean_l_eps(params: &HurstParams, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("mean of L_eps needs eps > 0, got {eps}")));
    }
    let (h, d, horizon) = (params.hurst, params.dim as f64, params.horizon);
    let quad = TanhSinh::with_tol(1e-15, 1e-13);
    let f = |u: f64, back: f64| back * (eps + u.powf(2.0 * h)).powf(-d / 2.0);
    // Panels grow geometrically from the crossover u* = ε^{1/(2H)}.
    let mut edges = vec![0.0];
    let mut x = eps.powf(0.5 / h).min(horizon);
    while x < horizon {
        edges.push(x);
        x *= 16.0;
    }
    edges.push(horizon);
    let mut total = 0.0;
    for w in edges.windows(2) {
        let hi = w[1];
        total += quad
            .integrate(w[0], hi, |u, _, r| f(u, (horizon - hi) + r))?
            .value;
    }
    Ok(total * TWO_PI.powf(-d / 2.0))
}

/// `lim_{ε→0} E(L_ε) = (2π)^{-d/2} T^{2-Hd} / ((1-Hd)(2-Hd))`, finite only for `Hd < 1`.
pub fn mean_l_eps_limit(params: &HurstParams) -> Result<f64> {
    let hd = params.hd();
    if hd >= 1.0 {
        return Err(Error::Divergent(format!("E(L_eps) has no finite limit when Hd = {hd} >= 1")));
    }
    Ok(TWO_PI.powf(-(params.dim as f64) / 2.0) * params.horizon.powf(2.0 - hd) / ((1.0 - hd) * (2.0 - hd)))
}

/// Variances `Var(B(t_b) - B(t_a)) = Σ_j (K_bj - K_aj)² Δ` of the
/// discretized process, packed like [`KernelMatrix`] (row `b`, `a < b`).
pub fn discrete_increment_variances(km: &KernelMatrix) -> Vec<f64> {
    let n = km.grid.n;
    let dt = km.grid.step();
    if km.hurst == 0.5 {
        return (1..=n)
            .flat_map(|b| (0..b).map(move |a| (b - a) as f64 * dt))
            .collect();
    }
    let rows: Vec<Vec<f64>> = (1..=n)
        .into_par_iter()
        .map(|b| {
            let kb = km.row(b);
            let sb: f64 = kb.iter().map(|k| k * k).sum();
            (0..b)
                .map(|a| {
                    let ka = km.row(a);
                    let mut v = sb;
                    for (j, &x) in ka.iter().enumerate() {
                        v += x * x - 2.0 * x * kb[j];
                    }
                    v.max(0.0) * dt
                })
                .collect()
        })
        .collect();
    rows.concat()
}

/// `E(L_ε)` for the discretized process with the same pair sum as
/// [`l_eps_pathwise`].
pub fn mean_l_eps_discrete(variances: &[f64], dim: usize, dt: f64, eps: f64) -> f64 {
    let d = dim as f64;
    variances
        .iter()
        .map(|v| (TWO_PI * (eps + v)).powf(-d / 2.0))
        .sum::<f64>()
        * dt
        * dt
}

/// `L_ε - E(L_ε)` with the continuum mean.
pub fn renormalized_l_eps(path: &FbmPath, eps: f64, params: &HurstParams) -> Result<f64> {
    Ok(l_eps_pathwise(path, eps)? - mean_l_eps(params, eps)?)
}

/// Result of the divergence check on a schedule of means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceDiagnostic {
    pub means: Vec<f64>,
    /// Ratio of the last two successive differences.
    pub contraction: f64,
    /// Least-squares slope of the mean against `ln(1/ε)` over the last half.
    pub log_slope: f64,
    pub doubled: bool,
    pub divergent: bool,
}

/// The means diverge if they double over the last two steps, or if their
/// successive differences stop contracting (ratio at least `0.99`).
pub fn divergence_diagnostic(params: &HurstParams, schedule: &[f64]) -> Result<DivergenceDiagnostic> {
    if schedule.len() < 3 {
        return Err(Error::domain("divergence diagnostic needs at least three schedule entries"));
    }
    let means = schedule
        .iter()
        .map(|&e| mean_l_eps(params, e))
        .collect::<Result<Vec<_>>>()?;
    let m = means.len();
    let doubled = means[m - 1] >= 2.0 * means[m - 3];
    let contraction = (means[m - 1] - means[m - 2]) / (means[m - 2] - means[m - 3]);
    let half = m / 2;
    let x: Vec<f64> = schedule[half..].iter().map(|e| -e.ln()).collect();
    let log_slope = crate::stats::ols(&x, &means[half..]).slope;
    Ok(DivergenceDiagnostic {
        divergent: doubled || contraction >= 0.99,
        means,
        contraction,
        log_slope,
        doubled,
    })
}

/// A Monte Carlo estimate with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub fingerprint: String,
    pub accumulator: Accumulator,
}

impl EstimateRecord {
    pub fn from_accumulator(accumulator: Accumulator, seed: u64, fingerprint: String) -> Self {
        let std_error = if accumulator.count > 1 {
            accumulator.std_error()
        } else {
            0.0
        };
        Self {
            value: accumulator.mean(),
            std_error,
            n_samples: accumulator.count,
            seed,
            fingerprint,
            accumulator,
        }
    }
}

/// Perfect matchings of `0..2n`, each as `n` pairs `(i, j)` with `i < j`.
pub fn perfect_matchings(points: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(rest: &[usize], acc: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if rest.is_empty() {
            out.push(acc.clone());
            return;
        }
        let a = rest[0];
        for k in 1..rest.len() {
            let mut remaining: Vec<usize> = rest[1..].to_vec();
            let b = remaining.remove(k - 1);
            acc.push((a, b));
            rec(&remaining, acc, out);
            acc.pop();
        }
    }
    let idx: Vec<usize> = (0..points).collect();
    let mut out = Vec::new();
    rec(&idx, &mut Vec::new(), &mut out);
    out
}

/// Which integral over `n` pairs of times to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentIntegrand {
    /// `E(L_ε^n)`: integrand `(2π)^{-nd/2} det(Q + εI)^{-d/2}`.
    Raw,
    /// `Var(L_ε)` (n = 2): `(2π)^{-d} [det(Q+εI)^{-d/2} - ((Q11+ε)(Q22+ε))^{-d/2}]`.
    Centered,
}

pub const MAX_MOMENT_ORDER: usize = 3;
const MOMENT_BATCH: usize = 4096;

/// Dirichlet parameter of the interior gaps: makes the sampling density
/// behave like `gap^{-Hd}` near collisions, bounded away from zero.
fn interior_gap_parameter(params: &HurstParams) -> f64 {
    (1.0 - params.hd()).clamp(0.3, 1.0)
}

/// Monte Carlo estimate of `∫_{T^n} f`, with `T = {0 < s < t < T}`.
///
/// The `2n` times are drawn sorted, with Dirichlet gaps, and every perfect
/// matching into `(s_i, t_i)` pairs is summed; the `n!` relabellings give the
/// remaining factor.
pub fn moment_integral(
    params: &HurstParams,
    n: usize,
    eps: f64,
    integrand: MomentIntegrand,
    samples: u64,
    seed: u64,
) -> Result<EstimateRecord> {
    if n == 0 || n > MAX_MOMENT_ORDER {
        return Err(Error::Unsupported(format!(
            "moment order {n} (supported: 1..={MAX_MOMENT_ORDER})"
        )));
    }
    if integrand == MomentIntegrand::Centered && n != 2 {
        return Err(Error::Unsupported("the centered integrand is defined for n = 2".into()));
    }
    if eps < 0.0 {
        return Err(Error::domain(format!("eps must be non-negative, got {eps}")));
    }
    if eps == 0.0 && !params.subcritical() {
        return Err(Error::Divergent(format!(
            "the diagonal singularity (t-s)^(-Hd) is not integrable for Hd = {} >= 1",
            params.hd()
        )));
    }
    let (h, d, horizon) = (params.hurst, params.dim as f64, params.horizon);
    let points = 2 * n;
    let matchings = perfect_matchings(points);
    let a_int = interior_gap_parameter(params);
    let mut alphas = vec![a_int; points + 1];
    alphas[0] = 1.0;
    alphas[points] = 1.0;
    let log_norm = ln_gamma(alphas.iter().sum()) - alphas.iter().map(|&a| ln_gamma(a)).sum::<f64>()
        - points as f64 * horizon.ln();
    let factorial: f64 = (1..=n).map(|k| k as f64).product();
    let prefactor = factorial * TWO_PI.powf(-(n as f64) * d / 2.0);
    let gamma_int = Gamma::new(a_int, 1.0).map_err(|e| Error::Internal(e.to_string()))?;

    let batches = samples.div_ceil(MOMENT_BATCH as u64);
    let tag = (n as u64) << 8 | matches!(integrand, MomentIntegrand::Centered) as u64;
    let partials: Vec<Accumulator> = (0..batches)
        .into_par_iter()
        .map(|batch| {
            let mut rng = stream(seed, Purpose::MomentIntegral, batch, tag);
            let mut acc = Accumulator::new();
            let count = (samples - batch * MOMENT_BATCH as u64).min(MOMENT_BATCH as u64);
            let mut gaps = vec![0.0; points + 1];
            let mut dist = [[0.0f64; 2 * MAX_DET_Q_ORDER]; 2 * MAX_DET_Q_ORDER];
            for _ in 0..count {
                for (g, &a) in gaps.iter_mut().zip(&alphas) {
                    *g = if a == 1.0 {
                        -(1.0 - rng.random::<f64>()).ln()
                    } else {
                        gamma_int.sample(&mut rng)
                    };
                }
                let total: f64 = gaps.iter().sum();
                let mut log_density = log_norm;
                for (k, g) in gaps.iter_mut().enumerate() {
                    *g *= horizon / total;
                    if alphas[k] != 1.0 {
                        log_density += (alphas[k] - 1.0) * (*g / horizon).ln();
                    }
                }
                // Point p sits after gaps[0..=p]; distances are partial sums of gaps.
                for p in 0..points {
                    let mut acc_d = 0.0;
                    for q in p + 1..points {
                        acc_d += gaps[q];
                        dist[p][q] = acc_d;
                        dist[q][p] = acc_d;
                    }
                }
                let mut value = 0.0;
                for m in &matchings {
                    let det = det_q_from_distances(h, &dist, m, eps);
                    let mut v = det.powf(-d / 2.0);
                    if integrand == MomentIntegrand::Centered {
                        let (s0, t0) = m[0];
                        let (s1, t1) = m[1];
                        let q11 = dist[s0][t0].powf(2.0 * h) + eps;
                        let q22 = dist[s1][t1].powf(2.0 * h) + eps;
                        v -= (q11 * q22).powf(-d / 2.0);
                    }
                    value += v;
                }
                acc.push(prefactor * value * (-log_density).exp());
            }
            acc
        })
        .collect();
    let acc = partials.iter().fold(Accumulator::new(), |a, b| a.merge(b));
    let label = match integrand {
        MomentIntegrand::Raw => "moment",
        MomentIntegrand::Centered => "centered-second-moment",
    };
    let fp = crate::harness::fingerprint(&serde_json::json!({
        "estimator": label,
        "version": 1,
        "hurst": h,
        "dim": params.dim,
        "horizon": horizon,
        "order": n,
        "eps": eps,
        "samples": samples,
    }));
    Ok(EstimateRecord::from_accumulator(acc, seed, fp))
}

/// `α_n = E(L^n)` for `ε = 0` (requires `Hd < 1`), or `E(L_ε^n)` for `ε > 0`.
pub fn alpha_n_oracle(params: &HurstParams, n: usize, eps: f64, samples: u64, seed: u64) -> Result<EstimateRecord> {
    moment_integral(params, n, eps, MomentIntegrand::Raw, samples, seed)
}

/// `Var(L_ε)` from the exact second-moment formula.
pub fn variance_l_eps(params: &HurstParams, eps: f64, samples: u64, seed: u64) -> Result<EstimateRecord> {
    if !(eps > 0.0) {
        return Err(Error::domain(format!("variance of L_eps needs eps > 0, got {eps}")));
    }
    moment_integral(params, 2, eps, MomentIntegrand::Centered, samples, seed)
}

/// Fits of `log α_n` against `log n!`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentGrowth {
    pub orders: Vec<usize>,
    pub alphas: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// OLS slope of `ln α_n` on `ln n!`.
    pub slope: f64,
    pub slope_std_error: f64,
    /// OLS slope of `ln(α_n / α_1^n)` on `ln n!`: removes the `C^n` factor
    /// exactly only when the fit is also given a term linear in `n`, so it
    /// is reported as a diagnostic alongside the raw slope.
    pub normalized_slope: f64,
}

pub fn moment_growth(params: &HurstParams, samples: u64, seed: u64) -> Result<MomentGrowth> {
    let orders: Vec<usize> = (1..=MAX_MOMENT_ORDER).collect();
    let recs = orders
        .iter()
        .map(|&n| alpha_n_oracle(params, n, 0.0, samples, seed))
        .collect::<Result<Vec<_>>>()?;
    let alphas: Vec<f64> = recs.iter().map(|r| r.value).collect();
    let log_fact: Vec<f64> = orders
        .iter()
        .map(|&n| (1..=n).map(|k| (k as f64).ln()).sum())
        .collect();
    let logs: Vec<f64> = alphas.iter().map(|a| a.ln()).collect();
    let fit = crate::stats::ols(&log_fact, &logs);
    let normalized: Vec<f64> = logs
        .iter()
        .zip(&orders)
        .map(|(l, &n)| l - n as f64 * logs[0])
        .collect();
    Ok(MomentGrowth {
        orders,
        std_errors: recs.iter().map(|r| r.std_error).collect(),
        alphas,
        slope: fit.slope,
        slope_std_error: fit.slope_std_error,
        normalized_slope: crate::stats::ols(&log_fact, &normalized).slope,
    })
}
