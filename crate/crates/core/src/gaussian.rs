//! Path simulation, conditional laws and Gaussian certificates.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{HurstParams, KernelEval, VolterraKernel};
use crate::rng::{fill_normal, stream, Purpose};

/// `E(B_s B_t) = (s^{2H} + t^{2H} - |t-s|^{2H}) / 2` for one coordinate.
#[inline]
pub fn fbm_covariance(hurst: f64, s: f64, t: f64) -> f64 {
    let e = 2.0 * hurst;
    0.5 * (s.abs().powf(e) + t.abs().powf(e) - (t - s).abs().powf(e))
}

/// `t_j = j T / N`, `j = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub horizon: f64,
}

impl Grid {
    pub fn new(n: usize, horizon: f64) -> Result<Self> {
        if n == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!("grid needs N >= 1 and T > 0 (N={n}, T={horizon})")));
        }
        Ok(Self { n, horizon })
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.horizon / self.n as f64
    }

    /// Midpoint of cell `[t_i, t_{i+1}]`.
    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.horizon / self.n as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n).map(|j| self.time(j)).collect()
    }

    /// Index of a grid time; anything not within rounding of a node is rejected.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t * self.n as f64 / self.horizon;
        let j = x.round();
        if !(0.0..=self.n as f64).contains(&j) || (x - j).abs() > 1e-9 {
            return Err(Error::OffGrid {
                time: t,
                n: self.n,
                horizon: self.horizon,
            });
        }
        Ok(j as usize)
    }
}

/// One realization of the driving Brownian increments.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingPath {
    pub grid: Grid,
    pub dim: usize,
    /// Coordinate-major: `increments[c * N + i] = W^c(t_{i+1}) - W^c(t_i)`.
    pub increments: Vec<f64>,
    pub seed: u64,
    pub index: u64,
}

impl DrivingPath {
    /// Path `index` of the ensemble keyed by `seed`.
    pub fn sample(grid: Grid, dim: usize, seed: u64, index: u64) -> Self {
        let n = grid.n;
        let mut increments = vec![0.0; n * dim];
        for (c, chunk) in increments.chunks_mut(n).enumerate() {
            let mut rng = stream(seed, Purpose::DrivingNoise, index, c as u64);
            fill_normal(&mut rng, chunk, grid.step());
        }
        Self {
            grid,
            dim,
            increments,
            seed,
            index,
        }
    }

    pub fn coordinate(&self, c: usize) -> &[f64] {
        &self.increments[c * self.grid.n..(c + 1) * self.grid.n]
    }

    pub fn increment(&self, i: usize, c: usize) -> f64 {
        self.increments[c * self.grid.n + i]
    }

    /// `W^c(t_j)` by left-to-right summation.
    pub fn brownian(&self) -> Vec<f64> {
        let n = self.grid.n;
        let mut out = vec![0.0; (n + 1) * self.dim];
        for c in 0..self.dim {
            let mut acc = 0.0;
            for (j, dw) in self.coordinate(c).iter().enumerate() {
                acc += dw;
                out[c * (n + 1) + j + 1] = acc;
            }
        }
        out
    }

    /// SHA-256 over the grid, the identity and the raw increments.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.grid.n as u64).to_le_bytes());
        h.update(self.grid.horizon.to_le_bytes());
        h.update((self.dim as u64).to_le_bytes());
        h.update(self.seed.to_le_bytes());
        h.update(self.index.to_le_bytes());
        for x in &self.increments {
            h.update(x.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Volterra,
    Cholesky,
}

/// Sampled fBm values on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    pub grid: Grid,
    pub dim: usize,
    /// Coordinate-major: `values[c * (N+1) + j] = B^c(t_j)`, with `B(0) = 0`.
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl FbmPath {
    pub fn coordinate(&self, c: usize) -> &[f64] {
        let m = self.grid.n + 1;
        &self.values[c * m..(c + 1) * m]
    }

    pub fn value(&self, j: usize, c: usize) -> f64 {
        self.values[c * (self.grid.n + 1) + j]
    }

    pub fn terminal(&self, c: usize) -> f64 {
        self.value(self.grid.n, c)
    }

    /// The same path with its coordinates reordered.
    pub fn permute_coordinates(&self, order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for &c in order {
            values.extend_from_slice(self.coordinate(c));
        }
        Self {
            values,
            ..self.clone()
        }
    }
}

/// `K(t_b, m_i)` for `0 ≤ i < b ≤ N`, with `m_i` the cell midpoints.
///
/// Stored as a packed lower triangle: row `b` starts at `b(b-1)/2`.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub grid: Grid,
    pub hurst: f64,
    data: Vec<f64>,
}

impl KernelMatrix {
    pub fn build<K: VolterraKernel>(kernel: &K, grid: Grid) -> Self {
        let n = grid.n;
        let h = kernel.hurst();
        let step = grid.step();
        let rows: Vec<Vec<f64>> = (1..=n)
            .into_par_iter()
            .map(|b| {
                let t = grid.time(b);
                (0..b)
                    .map(|i| {
                        if h == 0.5 {
                            1.0
                        } else {
                            let gap = (b as f64 - i as f64 - 0.5) * step;
                            kernel.value_with_gap(t, grid.midpoint(i), gap)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        rows.into_iter().for_each(|r| data.extend(r));
        Self {
            grid,
            hurst: h,
            data,
        }
    }

    #[inline]
    pub fn row(&self, b: usize) -> &[f64] {
        let off = b * (b.saturating_sub(1)) / 2;
        &self.data[off..off + b]
    }

    #[inline]
    pub fn get(&self, b: usize, i: usize) -> f64 {
        if i < b {
            self.data[b * (b - 1) / 2 + i]
        } else {
            0.0
        }
    }

    /// `B(t_b) = Σ_{i<b} K(t_b, m_i) ΔW_i` for every coordinate.
    pub fn apply(&self, path: &DrivingPath) -> FbmPath {
        let n = self.grid.n;
        let mut values = vec![0.0; (n + 1) * path.dim];
        if self.hurst == 0.5 {
            values = path.brownian();
        } else {
            for c in 0..path.dim {
                let dw = path.coordinate(c);
                let out = &mut values[c * (n + 1)..(c + 1) * (n + 1)];
                for b in 1..=n {
                    out[b] = self.row(b).iter().zip(dw).map(|(k, w)| k * w).sum();
                }
            }
        }
        FbmPath {
            grid: self.grid,
            dim: path.dim,
            values,
            provenance: Provenance::Volterra,
        }
    }
}

/// Simulate path `index` of the ensemble by the midpoint Volterra sum.
/// Returns the driving noise as well so downstream code shares `W`.
pub fn simulate_volterra(kernel: &KernelMatrix, dim: usize, seed: u64, index: u64) -> (FbmPath, DrivingPath) {
    let w = DrivingPath::sample(kernel.grid, dim, seed, index);
    (kernel.apply(&w), w)
}

/// Covariance matrix of `(B(t_1), …, B(t_N))` for one coordinate.
pub fn grid_covariance(hurst: f64, grid: &Grid) -> DMatrix<f64> {
    let n = grid.n;
    DMatrix::from_fn(n, n, |i, j| fbm_covariance(hurst, grid.time(i + 1), grid.time(j + 1)))
}

/// Cholesky factor, retrying once with `1e-12·diag` jitter.
pub fn cholesky_with_jitter(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let mut jittered = m;
    for i in 0..jittered.nrows() {
        jittered[(i, i)] *= 1.0 + 1e-12;
    }
    Cholesky::new(jittered).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Exact-law sampler from the dense covariance factor.
#[derive(Debug, Clone)]
pub struct CholeskySampler {
    pub grid: Grid,
    pub hurst: f64,
    factor: DMatrix<f64>,
}

pub const CHOLESKY_MAX_NODES: usize = 4096;

impl CholeskySampler {
    pub fn new(params: &HurstParams, grid: Grid) -> Result<Self> {
        if grid.n > CHOLESKY_MAX_NODES {
            return Err(Error::Unsupported(format!(
                "dense factorization limited to {CHOLESKY_MAX_NODES} nodes, got {}",
                grid.n
            )));
        }
        let chol = cholesky_with_jitter(grid_covariance(params.hurst, &grid), "fBm grid covariance")?;
        Ok(Self {
            grid,
            hurst: params.hurst,
            factor: chol.l(),
        })
    }

    pub fn sample(&self, dim: usize, seed: u64, index: u64) -> FbmPath {
        let n = self.grid.n;
        let mut values = vec![0.0; (n + 1) * dim];
        let mut z = vec![0.0; n];
        for c in 0..dim {
            let mut rng = stream(seed, Purpose::Cholesky, index, c as u64);
            fill_normal(&mut rng, &mut z, 1.0);
            let out = &mut values[c * (n + 1) + 1..(c + 1) * (n + 1)];
            for (i, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, zk) in z.iter().enumerate().take(i + 1) {
                    acc += self.factor[(i, k)] * zk;
                }
                *o = acc;
            }
        }
        FbmPath {
            grid: self.grid,
            dim,
            values,
            provenance: Provenance::Cholesky,
        }
    }
}

pub fn simulate_cholesky(params: &HurstParams, grid: Grid, seed: u64, index: u64) -> Result<FbmPath> {
    Ok(CholeskySampler::new(params, grid)?.sample(params.dim, seed, index))
}

/// Law of `B_t - B_s` given the driving noise up to time `r`:
/// mean vector `A` and variance `σ²` shared by all coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalLaw {
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// Continuum conditional law: the mean uses the midpoint kernel sums over
/// the cells below `r`, the variance is the exact integral
/// `∫_r^t (K(t,u) - K(s,u) 1{u<s})² du`.
pub fn conditional_law(ctx: &KernelEval, path: &DrivingPath, r: f64, s: f64, t: f64) -> Result<ConditionalLaw> {
    let grid = path.grid;
    let (ri, si, ti) = (grid.index_of(r)?, grid.index_of(s)?, grid.index_of(t)?);
    if !(ri < ti && si < ti) {
        return Err(Error::domain(format!(
            "conditional law needs r < t and s < t (r={r}, s={s}, t={t})"
        )));
    }
    let (r, s, t) = (grid.time(ri), grid.time(si), grid.time(ti));
    let mean = (0..path.dim)
        .map(|c| {
            let dw = path.coordinate(c);
            (0..ri)
                .map(|j| {
                    let m = grid.midpoint(j);
                    let k_s = if j < si { ctx.value(s, m) } else { 0.0 };
                    (ctx.value(t, m) - k_s) * dw[j]
                })
                .sum()
        })
        .collect();
    let mut variance = ctx.integrated_square(r, t)?;
    if s > r {
        variance += ctx.integrated_square(r, s)? - 2.0 * ctx.cross_moment(t, s, r, s)?;
    }
    Ok(ConditionalLaw { mean, variance })
}

/// Conditional law of the discretized process: indices `k` (filtration),
/// `a` and `b` for `B(t_b) - B(t_a)`.
pub fn conditional_law_discrete(km: &KernelMatrix, path: &DrivingPath, k: usize, a: usize, b: usize) -> ConditionalLaw {
    let dt = km.grid.step();
    let coef = |j: usize| km.get(b, j) - km.get(a, j);
    let mean = (0..path.dim)
        .map(|c| {
            let dw = path.coordinate(c);
            (0..k.min(b)).map(|j| coef(j) * dw[j]).sum()
        })
        .collect();
    let variance = (k..b.max(a)).map(|j| coef(j).powi(2) * dt).sum();
    ConditionalLaw { mean, variance }
}

/// `Var(X_target | X_given)` for a Gaussian vector with covariance `cov`.
pub fn conditional_variance(cov: &DMatrix<f64>, target: usize, given: &[usize]) -> Result<f64> {
    let base = cov[(target, target)];
    if given.is_empty() {
        return Ok(base);
    }
    let m = given.len();
    let sub = DMatrix::from_fn(m, m, |i, j| cov[(given[i], given[j])]);
    let rhs = DVector::from_fn(m, |i, _| cov[(given[i], target)]);
    let chol = cholesky_with_jitter(sub, "conditioning covariance")?;
    let l = chol.l();
    let v = l
        .solve_lower_triangular(&rhs)
        .ok_or_else(|| Error::NotPositiveDefinite("conditioning covariance".into()))?;
    Ok(base - v.norm_squared())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LndCertificate {
    pub k2_hat: f64,
    /// `(t, r)` where the infimum is attained.
    pub argmin: (f64, f64),
    pub nodes: usize,
    pub horizon: f64,
    pub hurst: f64,
    pub pairs_scanned: usize,
}

/// Scan `Var(B_t | B_u : |u - t| ≥ r) / r^{2H}` over grid nodes `t` and
/// separations `r < min(t, T - t)`.
pub fn lnd_certificate(params: &HurstParams, grid: Grid) -> Result<LndCertificate> {
    if grid.n < 64 {
        return Err(Error::domain(format!("certificate needs at least 64 nodes, got {}", grid.n)));
    }
    let h = params.hurst;
    let cov = grid_covariance(h, &grid);
    let n = grid.n;
    let step = grid.step();
    let pairs: Vec<(usize, usize)> = (1..n)
        .flat_map(|j| {
            let reach = j.min(n - j);
            (1..reach).map(move |m| (j, m))
        })
        .collect();
    let ratios = pairs
        .par_iter()
        .map(|&(j, m)| {
            // Matrix index i corresponds to time t_{i+1}.
            let given: Vec<usize> = (1..=n).filter(|&u| u.abs_diff(j) >= m).map(|u| u - 1).collect();
            let v = conditional_variance(&cov, j - 1, &given)?;
            let r = m as f64 * step;
            Ok((v / r.powf(2.0 * h), grid.time(j), r))
        })
        .collect::<Result<Vec<_>>>()?;
    let best = ratios
        .iter()
        .copied()
        .reduce(|a, b| if b.0 < a.0 { b } else { a })
        .ok_or_else(|| Error::domain("no admissible (t, r) pairs"))?;
    Ok(LndCertificate {
        k2_hat: best.0,
        argmin: (best.1, best.2),
        nodes: n,
        horizon: grid.horizon,
        hurst: h,
        pairs_scanned: pairs.len(),
    })
}

/// Worst violation of `Var(X | G_1) ≥ Var(X | G_2)` along a chain of
/// nested conditioning sets `G_1 ⊂ G_2 ⊂ …` (positive means violated).
pub fn nested_monotonicity(cov: &DMatrix<f64>, target: usize, chain: &[Vec<usize>]) -> Result<f64> {
    let vars = chain
        .iter()
        .map(|g| conditional_variance(cov, target, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(vars.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max))
}

/// `Cov(B_{t_i} - B_{s_i}, B_{t_j} - B_{s_j})`.
#[inline]
pub fn increment_covariance(hurst: f64, s_i: f64, t_i: f64, s_j: f64, t_j: f64) -> f64 {
    let e = 2.0 * hurst;
    // Expanding the four covariances, the s^{2H} + t^{2H} terms cancel.
    0.5 * ((t_i - s_j).abs().powf(e) + (s_i - t_j).abs().powf(e)
        - (t_i - t_j).abs().powf(e)
        - (s_i - s_j).abs().powf(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetQ {
    /// Determinant by LU decomposition.
    pub direct: f64,
    /// Product of sequential conditional variances.
    pub factorized: f64,
    pub condition_number: f64,
    pub ill_conditioned: bool,
}

pub const MAX_DET_Q_ORDER: usize = 6;

/// `det Q` for the increments `B_{t_i} - B_{s_i}`, computed directly and as
/// `Var(X_1) Var(X_2 | X_1) ⋯`.
pub fn det_q_factorized(hurst: f64, s: &[f64], t: &[f64]) -> Result<DetQ> {
    let n = s.len();
    if n != t.len() || n == 0 || n > MAX_DET_Q_ORDER {
        return Err(Error::domain(format!(
            "det Q needs 1..={MAX_DET_Q_ORDER} matching intervals (got {} and {})",
            s.len(),
            t.len()
        )));
    }
    if s.iter().zip(t).any(|(&a, &b)| !(0.0 <= a && a < b)) {
        return Err(Error::domain("det Q needs 0 <= s_i < t_i"));
    }
    let q = DMatrix::from_fn(n, n, |i, j| increment_covariance(hurst, s[i], t[i], s[j], t[j]));
    let direct = q.clone().lu().determinant();
    let mut factorized = 1.0;
    for k in 0..n {
        let given: Vec<usize> = (0..k).collect();
        factorized *= conditional_variance(&q, k, &given)?;
    }
    let eig = q.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    let condition_number = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let ill_conditioned = condition_number > 1e10;
    if !ill_conditioned && (direct - factorized).abs() > 1e-8 * direct.abs() {
        return Err(Error::Internal(format!(
            "det Q routes disagree: direct {direct:e}, factorized {factorized:e}"
        )));
    }
    Ok(DetQ {
        direct,
        factorized,
        condition_number,
        ill_conditioned,
    })
}

/// `det(Q + εI)` for up to six increments via an in-place Cholesky on the
/// stack; the hot path of the moment integrals. Returns 0 for a numerically
/// singular matrix.
#[inline]
pub fn det_q_regularized(hurst: f64, s: &[f64], t: &[f64], eps: f64) -> f64 {
    let n = s.len();
    let mut a = [[0.0f64; MAX_DET_Q_ORDER]; MAX_DET_Q_ORDER];
    for i in 0..n {
        for j in 0..=i {
            a[i][j] = increment_covariance(hurst, s[i], t[i], s[j], t[j]);
        }
        a[i][i] += eps;
    }
    cholesky_determinant(&mut a, n)
}

/// `det(Q + εI)` for increments between sorted points, given the pairwise
/// distances `dist[p][q] = |z_q - z_p|` and the pairs `(p, q)` of point
/// indices. Working from distances rather than positions keeps short
/// intervals exact even when they sit far from the origin.
#[inline]
pub fn det_q_from_distances(
    hurst: f64,
    dist: &[[f64; 2 * MAX_DET_Q_ORDER]; 2 * MAX_DET_Q_ORDER],
    pairs: &[(usize, usize)],
    eps: f64,
) -> f64 {
    let e = 2.0 * hurst;
    let f = |p: usize, q: usize| if p == q { 0.0 } else { dist[p][q].powf(e) };
    let n = pairs.len();
    let mut a = [[0.0f64; MAX_DET_Q_ORDER]; MAX_DET_Q_ORDER];
    for i in 0..n {
        let (si, ti) = pairs[i];
        for j in 0..=i {
            let (sj, tj) = pairs[j];
            a[i][j] = 0.5 * (f(ti, sj) + f(si, tj) - f(ti, tj) - f(si, sj));
        }
        a[i][i] += eps;
    }
    cholesky_determinant(&mut a, n)
}

#[inline]
fn cholesky_determinant(a: &mut [[f64; MAX_DET_Q_ORDER]; MAX_DET_Q_ORDER], n: usize) -> f64 {
    let mut det = 1.0;
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if d <= 0.0 {
            return 0.0;
        }
        det *= d;
        let l = d.sqrt();
        a[j][j] = l;
        for i in j + 1..n {
            let mut v = a[i][j];
            for k in 0..j {
                v -= a[i][k] * a[j][k];
            }
            a[i][j] = v / l;
        }
    }
    det
}
