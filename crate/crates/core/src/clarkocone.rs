//! The Clark–Ocone representation of the renormalized local time, discretized.
//!
//! On the grid, `L_ε = Δ² Σ_{a<b} p_ε(B_b - B_a)` is a smooth function of the
//! driving increments `ΔW_0..ΔW_{N-1}`, and `B_b - B_a = Σ_j (K_bj - K_aj) ΔW_j`.
//! Conditionally on the first `k` increments this difference is Gaussian
//! with mean `A = P_k(b) - P_k(a)`, `P_k(x) = Σ_{j<k} K_xj ΔW_j`, and
//! variance `σ² = Σ_{j≥k} (K_bj - K_aj 1{j<a})² Δ`, so
//!
//! ```text
//! E[∂L_ε/∂ΔW_k^i | F_k] = -Δ² Σ_{a<b} κ_k(a,b) A^i / (ε+σ²) p_{ε+σ²}(A),
//! κ_k(a,b) = K_bk - K_ak 1{a>k}.
//! ```
//!
//! Only pairs with `b > k` contribute. They split into the region `a ≤ k`
//! (the left time is already observed: `σ²` depends on `(k, b)` only) and
//! the region `a > k` (both times in the future).
//!
//! The engine walks `k` upwards once per batch of paths. `P_k` is updated in
//! place, which makes each integrand value a function of `ΔW_0..ΔW_{k-1}`
//! only, bit for bit. The variance table is path independent and shared by
//! the batch; it is initialized with the unconditional variances and has one
//! squared kernel difference removed per step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fastmath::inv_pow_half;
use crate::gaussian::{ConditionalLaw, DrivingPath, FbmPath, Grid, KernelMatrix, Provenance};
use crate::kernel::{HurstParams, KernelEval};
use crate::lanes::{lane_diff, Lanes, RowKernels, LANES};
use crate::localtime::{discrete_increment_variances, l_eps_pathwise, mean_l_eps_discrete};
use crate::stats::{variance_std_error, Accumulator};

const TWO_PI: f64 = std::f64::consts::TAU;

/// `Σ_ε^i = A^i/(ε+σ²) p_{ε+σ²}(A) · kernel_inc` for each coordinate.
pub fn sigma_integrand(law: &ConditionalLaw, kernel_inc: f64, eps: f64) -> Result<Vec<f64>> {
    let v = eps + law.variance;
    if !(v > 0.0) || eps < 0.0 {
        return Err(Error::domain(format!(
            "integrand needs eps >= 0 and eps + sigma^2 > 0 (eps={eps}, sigma^2={})",
            law.variance
        )));
    }
    let d = law.mean.len() as f64;
    let r2: f64 = law.mean.iter().map(|a| a * a).sum();
    let density = (TWO_PI * v).powf(-d / 2.0) * (-r2 / (2.0 * v)).exp();
    Ok(law.mean.iter().map(|a| a / v * density * kernel_inc).collect())
}

/// Per-step integrand values of one path, split by region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrandGrid {
    /// Fingerprint of the driving path the values were computed on.
    pub fingerprint: String,
    pub eps: f64,
    pub dim: usize,
    pub n: usize,
    pub step: f64,
    /// `[k * dim + i]`: pairs with `a > k` (both times after `t_k`).
    pub region_after: Vec<f64>,
    /// `[k * dim + i]`: pairs with `a ≤ k`.
    pub region_straddling: Vec<f64>,
}

impl IntegrandGrid {
    /// Total inner integral at step `k`, coordinate `i`.
    pub fn value(&self, k: usize, i: usize) -> f64 {
        self.region_after[k * self.dim + i] + self.region_straddling[k * self.dim + i]
    }
}

/// `-Σ_i Σ_k inner^i(k) ΔW_k^i`; refuses to mix paths.
pub fn ito_assemble(path: &DrivingPath, inner: &IntegrandGrid) -> Result<f64> {
    let fp = path.fingerprint();
    if fp != inner.fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: inner.fingerprint.clone(),
            found: fp,
        });
    }
    let mut acc = 0.0;
    for k in 0..inner.n {
        for i in 0..inner.dim {
            acc -= inner.value(k, i) * path.increment(k, i);
        }
    }
    Ok(acc)
}

/// `Σ_i Σ_k inner^i(k)² Δ`.
pub fn quadratic_variation(inner: &IntegrandGrid) -> f64 {
    let mut acc = 0.0;
    for k in 0..inner.n {
        for i in 0..inner.dim {
            acc += inner.value(k, i).powi(2) * inner.step;
        }
    }
    acc
}

/// Engine settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub eps: f64,
    pub schedule: Schedule,
    /// Paths sharing one sweep over the variance table.
    pub batch_size: usize,
    pub keep_integrand: bool,
    /// Certified LND constant; enables the `ε = 0` variance guard.
    pub lnd_constant: Option<f64>,
}

impl EngineConfig {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            schedule: Schedule::Incremental,
            batch_size: 64,
            keep_integrand: false,
            lnd_constant: None,
        }
    }
}

/// How the conditional laws are obtained along `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// One sequential sweep per batch: conditional means and variances are
    /// updated in place from step `k` to `k+1`. `O(N^3)` per path.
    #[default]
    Incremental,
    /// Every step from scratch and in parallel over `k`. `O(N^4)` per path;
    /// meant for small grids and as a cross-check.
    Direct,
}

/// Everything computed on one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRepresentation {
    pub index: u64,
    pub fingerprint: String,
    pub l_eps: f64,
    /// `L_ε - E(L_ε)` with the mean of the discretized process.
    pub lhs: f64,
    /// The assembled Itô sum.
    pub rhs: f64,
    pub quadratic_variation: f64,
    pub qv_by_coordinate: Vec<f64>,
    pub integrand: Option<IntegrandGrid>,
}

/// Incremental evaluator for one `(H, d, N, ε)`.
#[derive(Debug, Clone)]
pub struct RepresentationEngine {
    km: KernelMatrix,
    dim: usize,
    config: EngineConfig,
    /// Unconditional variances `Var(B_b - B_a)`, rows by `a`, `b = a+1..=N`.
    initial: Vec<f64>,
    discrete_mean: f64,
    kernels: RowKernels,
}

const MAX_DIM: usize = 8;

#[inline]
fn row_offset(n: usize, a: usize) -> usize {
    a * n - a * a.saturating_sub(1) / 2
}

impl RepresentationEngine {
    pub fn new(km: KernelMatrix, dim: usize, config: EngineConfig) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Unsupported(format!("dimension {dim} (supported: 1..={MAX_DIM})")));
        }
        if !(config.eps >= 0.0) {
            return Err(Error::domain(format!("eps must be non-negative, got {}", config.eps)));
        }
        if config.eps == 0.0 && config.lnd_constant.is_none() {
            return Err(Error::domain(
                "eps = 0 needs a certified LND constant for the variance guard",
            ));
        }
        let n = km.grid.n;
        let by_b = discrete_increment_variances(&km);
        let mut initial = vec![0.0; n * (n + 1) / 2];
        for b in 1..=n {
            let row = &by_b[b * (b - 1) / 2..b * (b - 1) / 2 + b];
            for (a, &v) in row.iter().enumerate() {
                initial[row_offset(n, a) + (b - a - 1)] = v;
            }
        }
        let discrete_mean = if config.eps > 0.0 {
            mean_l_eps_discrete(&by_b, dim, km.grid.step(), config.eps)
        } else {
            f64::NAN
        };
        let engine = Self {
            km,
            dim,
            config,
            initial,
            discrete_mean,
            kernels: RowKernels::detect(),
        };
        if config.eps == 0.0 {
            engine.variance_guard()?;
        }
        Ok(engine)
    }

    pub fn grid(&self) -> Grid {
        self.km.grid
    }

    pub fn kernel_matrix(&self) -> &KernelMatrix {
        &self.km
    }

    /// `E(L_ε)` of the discretized process.
    pub fn discrete_mean(&self) -> f64 {
        self.discrete_mean
    }

    /// Conditional variance of `B_b` given `F_k`, for `k < b`.
    pub fn straddling_variance(&self, k: usize, b: usize) -> f64 {
        let dt = self.km.grid.step();
        (k..b).map(|j| self.km.get(b, j).powi(2) * dt).sum()
    }

    /// Conditional variance of `B_b - B_a` given `F_k`, for `k < a < b`.
    pub fn after_variance(&self, k: usize, a: usize, b: usize) -> f64 {
        let dt = self.km.grid.step();
        (k..b)
            .map(|j| (self.km.get(b, j) - if j < a { self.km.get(a, j) } else { 0.0 }).powi(2) * dt)
            .sum()
    }

    /// With `ε = 0` every conditional variance must respect the LND lower
    /// bound (with a 0.9 safety factor); a violation is a bug, not a state.
    fn variance_guard(&self) -> Result<()> {
        let k2 = 0.9 * self.config.lnd_constant.unwrap_or(0.0);
        let n = self.km.grid.n;
        let dt = self.km.grid.step();
        let h = self.km.hurst;
        for b in 1..=n {
            let mut tail = 0.0;
            for k in (0..b).rev() {
                tail += self.km.get(b, k).powi(2) * dt;
                let floor = k2 * ((b - k) as f64 * dt).powf(2.0 * h);
                if tail < floor {
                    return Err(Error::Internal(format!(
                        "conditional variance {tail:e} below LND floor {floor:e} at k={k}, b={b}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Run a set of paths; batches run in parallel, paths within a batch
    /// share the variance sweep. Output order follows input order.
    pub fn run(&self, paths: &[DrivingPath]) -> Result<Vec<PathRepresentation>> {
        for p in paths {
            if p.grid != self.km.grid || p.dim != self.dim {
                return Err(Error::domain("driving path does not match the engine grid or dimension"));
            }
        }
        if self.config.schedule == Schedule::Direct {
            return paths.iter().map(|p| self.run_direct(p)).collect();
        }
        let chunks: Vec<&[DrivingPath]> = paths.chunks(self.config.batch_size.max(1)).collect();
        let out: Vec<Vec<PathRepresentation>> = chunks
            .par_iter()
            .map(|batch| self.run_batch(batch))
            .collect::<Result<_>>()?;
        Ok(out.concat())
    }

    fn run_batch(&self, paths: &[DrivingPath]) -> Result<Vec<PathRepresentation>> {
        match self.dim {
            1 => self.sweep::<1>(paths),
            2 => self.sweep::<2>(paths),
            3 => self.sweep::<3>(paths),
            4 => self.sweep::<4>(paths),
            5 => self.sweep::<5>(paths),
            6 => self.sweep::<6>(paths),
            7 => self.sweep::<7>(paths),
            8 => self.sweep::<8>(paths),
            _ => unreachable!("dimension checked at construction"),
        }
    }

    fn sweep<const D: usize>(&self, paths: &[DrivingPath]) -> Result<Vec<PathRepresentation>> {
        let n = self.km.grid.n;
        let dt = self.km.grid.step();
        let eps = self.config.eps;
        let brownian = self.km.hurst == 0.5;
        let exponent = D as u32 + 2;
        let norm = TWO_PI.powf(-(D as f64) / 2.0) * dt * dt;
        let keep = self.config.keep_integrand;
        let kernels = self.kernels;
        let mut groups: Vec<LaneGroup<D>> = paths.chunks(LANES).map(|c| LaneGroup::new(c, n, keep)).collect();

        let mut table = if brownian { Vec::new() } else { self.initial.clone() };
        let mut coef = vec![0.0f64; table.len()];
        let mut scale = vec![0.0f64; table.len()];
        let mut col = vec![0.0f64; n + 1];
        // Coefficients of the pairs (a ≤ k, b): they depend on b only.
        let mut coef_k = vec![0.0f64; n + 1];
        let mut scale_k = vec![0.0f64; n + 1];

        for k in 0..n {
            for x in 0..=n {
                col[x] = self.km.get(x, k);
            }
            // v^{-(d/2+1)} and -1/(2v) for every live pair.
            if brownian {
                for b in k + 1..=n {
                    let v = eps + (b - k) as f64 * dt;
                    coef_k[b] = inv_pow_half(v, exponent);
                    scale_k[b] = -0.5 / v;
                }
            } else {
                let live = row_offset(n, k)..table.len();
                for idx in live {
                    let v = eps + table[idx];
                    coef[idx] = inv_pow_half(v, exponent);
                    scale[idx] = -0.5 / v;
                }
                let off = row_offset(n, k);
                coef_k[k + 1..].copy_from_slice(&coef[off..off + n - k]);
                scale_k[k + 1..].copy_from_slice(&scale[off..off + n - k]);
            }

            let mut straddling = vec![[[0.0f64; LANES]; D]; groups.len()];
            let mut after = straddling.clone();
            if brownian {
                // P_k(b) = B_k for every b > k, so |A|² does not depend on b.
                for (g, acc) in groups.iter().zip(straddling.iter_mut()) {
                    let now = g.point(k, n);
                    for a in 0..k {
                        let diff = lane_diff(now, g.point(a, n));
                        let w = kernels.lag_sum(&diff, &coef_k[k + 1..], &scale_k[k + 1..]);
                        for i in 0..D {
                            for l in 0..LANES {
                                acc[i][l] += w[l] * diff[i][l];
                            }
                        }
                    }
                }
            } else {
                // Rows outermost so one row of coefficients serves every group.
                for a in 0..=k {
                    for (g, acc) in groups.iter().zip(straddling.iter_mut()) {
                        let (c, sc) = (&coef_k[k + 1..], &scale_k[k + 1..]);
                        kernels.pair_row(&g.point(a, n), g.rows(k + 1, n), 0.0, &col[k + 1..], c, sc, acc);
                    }
                }
                for a in k + 1..n {
                    let off = row_offset(n, a);
                    let len = n - a;
                    let (c, sc) = (&coef[off..off + len], &scale[off..off + len]);
                    for (g, acc) in groups.iter().zip(after.iter_mut()) {
                        kernels.pair_row(&g.point(a, n), g.rows(a + 1, n), col[a], &col[a + 1..], c, sc, acc);
                    }
                }
            }
            for (g, (s2, s1)) in groups.iter_mut().zip(straddling.iter().zip(&after)) {
                g.record(k, norm, dt, s2, s1);
                g.advance(k, n, &col);
            }

            // Remove the j = k term from the variances with a > k.
            if !brownian {
                for a in k + 1..n {
                    let off = row_offset(n, a) - (a + 1);
                    let ka = col[a];
                    for b in a + 1..=n {
                        let d = col[b] - ka;
                        table[off + b] -= d * d * dt;
                    }
                }
            }
        }

        let mut out = Vec::with_capacity(paths.len());
        for (g, chunk) in groups.into_iter().zip(paths.chunks(LANES)) {
            for (l, path) in chunk.iter().enumerate() {
                let values: Vec<f64> = (0..D)
                    .flat_map(|i| (0..=n).map(move |x| (i, x)))
                    .map(|(i, x)| g.prefix[(i * (n + 1) + x) * LANES + l])
                    .collect();
                let fbm = FbmPath {
                    grid: self.km.grid,
                    dim: D,
                    values,
                    provenance: Provenance::Volterra,
                };
                let integrand = keep.then(|| {
                    let after = (0..n * D).map(|j| g.after[j * LANES + l]).collect();
                    let straddling = (0..n * D).map(|j| g.straddling[j * LANES + l]).collect();
                    (after, straddling)
                });
                let qv = (0..D).map(|i| g.qv[i][l]).collect();
                out.push(self.finish(path, &fbm, g.rhs[l], qv, integrand)?);
            }
        }
        Ok(out)
    }

    fn finish(
        &self,
        path: &DrivingPath,
        fbm: &FbmPath,
        rhs: f64,
        qv_by_coordinate: Vec<f64>,
        integrand: Option<(Vec<f64>, Vec<f64>)>,
    ) -> Result<PathRepresentation> {
        let eps = self.config.eps;
        let (l_eps, lhs) = if eps > 0.0 {
            let v = l_eps_pathwise(fbm, eps)?;
            (v, v - self.discrete_mean)
        } else {
            (f64::NAN, f64::NAN)
        };
        let fingerprint = path.fingerprint();
        let integrand = integrand.map(|(region_after, region_straddling)| IntegrandGrid {
            fingerprint: fingerprint.clone(),
            eps,
            dim: self.dim,
            n: self.km.grid.n,
            step: self.km.grid.step(),
            region_after,
            region_straddling,
        });
        Ok(PathRepresentation {
            index: path.index,
            fingerprint,
            l_eps,
            lhs,
            rhs,
            quadratic_variation: qv_by_coordinate.iter().sum(),
            qv_by_coordinate,
            integrand,
        })
    }

    fn run_direct(&self, path: &DrivingPath) -> Result<PathRepresentation> {
        let n = self.km.grid.n;
        let dt = self.km.grid.step();
        let dim = self.dim;
        let steps: Vec<InnerIntegral> = (0..n)
            .into_par_iter()
            .map(|k| self.inner_integral(path, k))
            .collect::<Result<_>>()?;
        let mut rhs = 0.0;
        let mut qv = vec![0.0; dim];
        for (k, step) in steps.iter().enumerate() {
            for i in 0..dim {
                rhs -= step.total[i] * path.increment(k, i);
                qv[i] += step.total[i] * step.total[i] * dt;
            }
        }
        let integrand = self.config.keep_integrand.then(|| {
            let flat = |f: fn(&InnerIntegral) -> &Vec<f64>| steps.iter().flat_map(|s| f(s).iter().copied()).collect();
            (flat(|s| &s.region_after), flat(|s| &s.region_straddling))
        });
        self.finish(path, &self.km.apply(path), rhs, qv, integrand)
    }

    /// The inner integral at step `k` computed from scratch: conditional
    /// means from the prefix of `ΔW`, conditional variances by direct sums.
    /// `O(N^3)` for a single `k`; the reference for the incremental sweep.
    pub fn inner_integral(&self, path: &DrivingPath, k: usize) -> Result<InnerIntegral> {
        let n = self.km.grid.n;
        if k >= n {
            return Ok(InnerIntegral {
                total: vec![0.0; self.dim],
                region_after: vec![0.0; self.dim],
                region_straddling: vec![0.0; self.dim],
            });
        }
        let dt = self.km.grid.step();
        let eps = self.config.eps;
        let mean_at = |x: usize, i: usize| -> f64 {
            let dw = path.coordinate(i);
            (0..k.min(x)).map(|j| self.km.get(x, j) * dw[j]).sum()
        };
        let prefix: Vec<Vec<f64>> = (0..self.dim)
            .map(|i| (0..=n).map(|x| mean_at(x, i)).collect())
            .collect();
        let mut after = vec![0.0; self.dim];
        let mut straddle = vec![0.0; self.dim];
        for b in k + 1..=n {
            for a in 0..b {
                let kappa = self.km.get(b, k) - if a > k { self.km.get(a, k) } else { 0.0 };
                if kappa == 0.0 {
                    continue;
                }
                let variance = if a > k {
                    self.after_variance(k, a, b)
                } else {
                    self.straddling_variance(k, b)
                };
                let law = ConditionalLaw {
                    mean: (0..self.dim).map(|i| prefix[i][b] - prefix[i][a]).collect(),
                    variance,
                };
                let sigma = sigma_integrand(&law, kappa, eps)?;
                let target = if a > k { &mut after } else { &mut straddle };
                for i in 0..self.dim {
                    target[i] += sigma[i] * dt * dt;
                }
            }
        }
        Ok(InnerIntegral {
            total: after.iter().zip(&straddle).map(|(x, y)| x + y).collect(),
            region_after: after,
            region_straddling: straddle,
        })
    }
}

/// Up to `LANES` paths in interleaved layout `[(i * (N+1) + x) * LANES + l]`.
/// Missing lanes carry zero increments and are dropped at the end.
struct LaneGroup<const D: usize> {
    increments: Vec<f64>,
    prefix: Vec<f64>,
    rhs: Lanes,
    qv: [Lanes; D],
    straddling: Vec<f64>,
    after: Vec<f64>,
}

impl<const D: usize> LaneGroup<D> {
    fn new(paths: &[DrivingPath], n: usize, keep: bool) -> Self {
        let mut increments = vec![0.0; D * n * LANES];
        for (l, p) in paths.iter().enumerate() {
            for i in 0..D {
                for (k, &w) in p.coordinate(i).iter().enumerate() {
                    increments[(i * n + k) * LANES + l] = w;
                }
            }
        }
        let stored = if keep { D * n * LANES } else { 0 };
        Self {
            increments,
            prefix: vec![0.0; D * (n + 1) * LANES],
            rhs: [0.0; LANES],
            qv: [[0.0; LANES]; D],
            straddling: vec![0.0; stored],
            after: vec![0.0; stored],
        }
    }

    fn point(&self, x: usize, n: usize) -> [Lanes; D] {
        std::array::from_fn(|i| {
            let at = (i * (n + 1) + x) * LANES;
            self.prefix[at..at + LANES].try_into().unwrap()
        })
    }

    /// Coordinates of `P(x)` for `x ≥ from`.
    fn rows(&self, from: usize, n: usize) -> [&[f64]; D] {
        std::array::from_fn(|i| &self.prefix[(i * (n + 1) + from) * LANES..(i + 1) * (n + 1) * LANES])
    }

    fn record(&mut self, k: usize, norm: f64, dt: f64, straddling: &[Lanes; D], after: &[Lanes; D]) {
        let n = self.increments.len() / (D * LANES);
        for i in 0..D {
            let at = (i * n + k) * LANES;
            for l in 0..LANES {
                let v2 = norm * straddling[i][l];
                let v1 = norm * after[i][l];
                let total = v1 + v2;
                self.rhs[l] -= total * self.increments[at + l];
                self.qv[i][l] += total * total * dt;
                if !self.after.is_empty() {
                    self.after[(k * D + i) * LANES + l] = v1;
                    self.straddling[(k * D + i) * LANES + l] = v2;
                }
            }
        }
    }

    /// `P_{k+1}(x) = P_k(x) + K_xk ΔW_k`.
    fn advance(&mut self, k: usize, n: usize, col: &[f64]) {
        for i in 0..D {
            let at = (i * n + k) * LANES;
            let dw: Lanes = self.increments[at..at + LANES].try_into().unwrap();
            let rows = &mut self.prefix[i * (n + 1) * LANES..(i + 1) * (n + 1) * LANES];
            for x in k + 1..=n {
                let c = col[x];
                let cell = &mut rows[x * LANES..(x + 1) * LANES];
                for l in 0..LANES {
                    cell[l] += c * dw[l];
                }
            }
        }
    }
}

/// Inner integral at one step, per coordinate, with its two regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerIntegral {
    pub total: Vec<f64>,
    pub region_after: Vec<f64>,
    pub region_straddling: Vec<f64>,
}

/// The Brownian planar integrand written out directly from the path:
/// `(1/2π) Δ² Σ_{b>k} Σ_{a≤k} (B_k - B_a)/(t_b - t_k + ε)² exp(-|B_k - B_a|²/(2(t_b - t_k + ε)))`.
/// Independent of the engine; used to cross-check it for `H = 1/2`, `d = 2`.
pub fn brownian_planar_integrand(path: &FbmPath, k: usize, eps: f64) -> [f64; 2] {
    let n = path.grid.n;
    let dt = path.grid.step();
    let (x, y) = (path.coordinate(0), path.coordinate(1));
    let mut out = [0.0; 2];
    for b in k + 1..=n {
        let lag = (b - k) as f64 * dt + eps;
        for a in 0..=k {
            let (u, v) = (x[k] - x[a], y[k] - y[a]);
            let w = (-(u * u + v * v) / (2.0 * lag)).exp() / (lag * lag);
            out[0] += u * w;
            out[1] += v * w;
        }
    }
    out.map(|s| s * dt * dt / TWO_PI)
}

/// Pathwise upper bound on the quadratic variation for `H = 1/2`, `d = 2`,
/// `ε = 0`: the continuum bound `(1/π²) ∫ (∫_0^r ds/|B_r - B_s|)² dr` plus
/// the Riemann excess of the lag sum. Returns `(continuum, discrete)`.
pub fn brownian_planar_qv_bound(path: &FbmPath) -> (f64, f64) {
    let n = path.grid.n;
    let dt = path.grid.step();
    let (x, y) = (path.coordinate(0), path.coordinate(1));
    // Σ_{m≥1} Δ f(mΔ) ≤ ∫_0^∞ f + Δ max f for f(u) = u^{-2} e^{-c/u};
    // ∫ = 1/c and max f = 4 e^{-2} / c², with c = |A|²/2.
    let peak = 4.0 * (-2.0f64).exp();
    let (mut cont, mut disc) = (0.0, 0.0);
    for k in 1..=n {
        let (mut s_cont, mut s_disc) = (0.0, 0.0);
        for a in 0..k {
            let r = ((x[k] - x[a]).powi(2) + (y[k] - y[a]).powi(2)).sqrt();
            if r == 0.0 {
                continue;
            }
            let c = r * r / 2.0;
            s_cont += dt / r;
            s_disc += dt * r * (1.0 / c + dt * peak / (c * c));
        }
        cont += dt * (s_cont / std::f64::consts::PI).powi(2);
        disc += dt * (s_disc / TWO_PI).powi(2);
    }
    (cont, disc)
}

/// One row of the convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub n: usize,
    pub n_paths: usize,
    pub l2_lhs: f64,
    pub l2_residual: f64,
    pub ratio: f64,
    pub rhs_mean: f64,
    pub rhs_std_error: f64,
    pub rhs_variance: f64,
    pub rhs_variance_std_error: f64,
    pub qv_mean: f64,
    pub qv_std_error: f64,
    pub discrete_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub hurst: f64,
    pub dim: usize,
    pub horizon: f64,
    pub eps: f64,
    pub seed: u64,
    pub per_n: Vec<ResidualRow>,
    /// Least-squares slope of `ln ratio` against `ln N`.
    pub empirical_order: f64,
}

/// Summarize the per-path results of one grid size.
pub fn summarize(n: usize, engine: &RepresentationEngine, results: &[PathRepresentation]) -> ResidualRow {
    let mut lhs = Accumulator::new();
    let mut res = Accumulator::new();
    let mut rhs = Accumulator::new();
    let mut qv = Accumulator::new();
    let rhs_values: Vec<f64> = results.iter().map(|r| r.rhs).collect();
    for r in results {
        lhs.push(r.lhs);
        res.push(r.lhs - r.rhs);
        rhs.push(r.rhs);
        qv.push(r.quadratic_variation);
    }
    ResidualRow {
        n,
        n_paths: results.len(),
        l2_lhs: lhs.rms(),
        l2_residual: res.rms(),
        ratio: res.rms() / lhs.rms(),
        rhs_mean: rhs.mean(),
        rhs_std_error: rhs.std_error(),
        rhs_variance: rhs.variance(),
        rhs_variance_std_error: variance_std_error(&rhs_values),
        qv_mean: qv.mean(),
        qv_std_error: qv.std_error(),
        discrete_mean: engine.discrete_mean(),
    }
}

/// Run the representation check for each grid size in `sizes` on the same
/// seed (path `i` of every size is driven by its own keyed stream).
/// `on_size` receives each finished size with its per-path results.
pub fn representation_residual<F>(
    params: &HurstParams,
    eps: f64,
    sizes: &[usize],
    n_paths: usize,
    seed: u64,
    mut on_size: F,
) -> Result<ResidualReport>
where
    F: FnMut(&ResidualRow, &[PathRepresentation]),
{
    if !(eps > 0.0) {
        return Err(Error::domain("the residual check needs eps > 0"));
    }
    let ctx = KernelEval::new(*params)?;
    let mut per_n = Vec::new();
    for &n in sizes {
        let grid = Grid::new(n, params.horizon)?;
        let km = KernelMatrix::build(&ctx, grid);
        let engine = RepresentationEngine::new(km, params.dim, EngineConfig::new(eps))?;
        let paths: Vec<DrivingPath> = (0..n_paths as u64)
            .map(|i| DrivingPath::sample(grid, params.dim, seed, i))
            .collect();
        let results = engine.run(&paths)?;
        let row = summarize(n, &engine, &results);
        on_size(&row, &results);
        per_n.push(row);
    }
    let empirical_order = if per_n.len() >= 2 {
        let x: Vec<f64> = per_n.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = per_n.iter().map(|r| r.ratio.ln()).collect();
        crate::stats::ols(&x, &y).slope
    } else {
        f64::NAN
    };
    Ok(ResidualReport {
        hurst: params.hurst,
        dim: params.dim,
        horizon: params.horizon,
        eps,
        seed,
        per_n,
        empirical_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine(h: f64, d: usize, n: usize, eps: f64, keep: bool) -> RepresentationEngine {
        let p = HurstParams::new(h, d, 1.0).unwrap();
        let km = KernelMatrix::build(&KernelEval::new(p).unwrap(), Grid::new(n, 1.0).unwrap());
        let mut cfg = EngineConfig::new(eps);
        cfg.keep_integrand = keep;
        RepresentationEngine::new(km, d, cfg).unwrap()
    }

    #[test]
    fn integrand_vanishes_with_zero_mean_or_kernel() {
        let law = ConditionalLaw {
            mean: vec![0.0, 0.0],
            variance: 0.3,
        };
        assert_eq!(sigma_integrand(&law, 1.0, 0.1).unwrap(), vec![0.0, 0.0]);
        let law = ConditionalLaw {
            mean: vec![0.4, -0.2],
            variance: 0.3,
        };
        assert_eq!(sigma_integrand(&law, 0.0, 0.1).unwrap(), vec![0.0, 0.0]);
        let law = ConditionalLaw {
            mean: vec![0.4],
            variance: 0.0,
        };
        assert!(sigma_integrand(&law, 1.0, 0.0).is_err());
    }

    #[test]
    fn incremental_sweep_matches_direct_route() {
        for (h, d) in [(0.5, 2), (0.4, 3), (0.7, 1)] {
            let e = engine(h, d, 24, 0.05, true);
            let path = DrivingPath::sample(e.grid(), d, 9, 3);
            let inc = e.run(std::slice::from_ref(&path)).unwrap().remove(0);
            let grid = inc.integrand.unwrap();
            for k in [0, 5, 17, 23] {
                let direct = e.inner_integral(&path, k).unwrap();
                for i in 0..d {
                    let a = grid.value(k, i);
                    let b = direct.total[i];
                    assert!((a - b).abs() < 1e-11 * (1.0 + b.abs()), "H={h} k={k} i={i}: {a} {b}");
                    let c = grid.region_after[k * d + i];
                    assert!((c - direct.region_after[i]).abs() < 1e-11 * (1.0 + c.abs()));
                }
            }
        }
    }

    #[test]
    fn last_step_and_brownian_after_region_vanish() {
        let e = engine(0.5, 2, 16, 0.1, true);
        let path = DrivingPath::sample(e.grid(), 2, 1, 0);
        let r = e.run(std::slice::from_ref(&path)).unwrap().remove(0);
        let g = r.integrand.unwrap();
        assert!(g.region_after.iter().all(|&v| v == 0.0));
        let last = e.inner_integral(&path, 16).unwrap();
        assert_eq!(last.total, vec![0.0, 0.0]);
    }

    #[test]
    fn assemble_checks_fingerprint() {
        let e = engine(0.4, 2, 12, 0.1, true);
        let path = DrivingPath::sample(e.grid(), 2, 1, 0);
        let other = DrivingPath::sample(e.grid(), 2, 1, 1);
        let r = e.run(std::slice::from_ref(&path)).unwrap().remove(0);
        let g = r.integrand.as_ref().unwrap();
        assert_eq!(ito_assemble(&path, g).unwrap(), r.rhs);
        assert!((quadratic_variation(g) - r.quadratic_variation).abs() < 1e-15 * r.quadratic_variation.max(1.0));
        assert!(matches!(ito_assemble(&other, g), Err(Error::FingerprintMismatch { .. })));
    }

    #[test]
    fn batching_does_not_change_results() {
        let mut e = engine(0.4, 2, 20, 0.1, false);
        let paths: Vec<DrivingPath> = (0..5).map(|i| DrivingPath::sample(e.grid(), 2, 4, i)).collect();
        let one = e.run(&paths).unwrap();
        e.config.batch_size = 2;
        let two = e.run(&paths).unwrap();
        assert_eq!(one, two);
    }
}
