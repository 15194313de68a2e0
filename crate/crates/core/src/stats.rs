//! Small statistics toolbox: compensated accumulators, two-sample tests,
//! least squares and resampling.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// `a + b` together with the exact rounding error.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// A compensated running sum. Merging is bitwise commutative because the
/// rounding error of `two_sum` is exact and therefore order independent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    pub hi: f64,
    pub lo: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        self.hi = s;
        self.lo += e;
    }

    pub fn merge(&self, other: &Self) -> Self {
        let (s, e) = two_sum(self.hi, other.hi);
        Self {
            hi: s,
            lo: (self.lo + other.lo) + e,
        }
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// Count, sum and sum of squares of a sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    pub count: u64,
    pub sum: CompensatedSum,
    pub sum_sq: CompensatedSum,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut a = Self::new();
        xs.iter().for_each(|&x| a.push(x));
        a
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum.add(x);
        self.sum_sq.add(x * x);
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            count: self.count + other.count,
            sum: self.sum.merge(&other.sum),
            sum_sq: self.sum_sq.merge(&other.sum_sq),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum.value() / self.count as f64
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        let n = self.count as f64;
        let m = self.sum.value() / n;
        ((self.sum_sq.value() - n * m * m) / (n - 1.0)).max(0.0)
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }

    /// Root mean square `sqrt(Σx²/n)`.
    pub fn rms(&self) -> f64 {
        (self.sum_sq.value() / self.count as f64).sqrt()
    }
}

/// Two-sided sample variance comparison: the standard error of the sample
/// variance for roughly Gaussian data, used in "within k SE" checks on
/// second moments. Uses the fourth central moment when available.
pub fn variance_std_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    ((m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub critical: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Asymptotic Kolmogorov survival function `P(K > λ)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut acc = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        acc += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * acc).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test at significance `level`.
pub fn ks_two_sample(a: &[f64], b: &[f64], level: f64) -> KsTest {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let c = (-(level / 2.0).ln() / 2.0).sqrt();
    let critical = c / ne.sqrt();
    KsTest {
        statistic: d,
        critical,
        p_value: kolmogorov_survival(d * ne.sqrt()),
        reject: d > critical,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
}

/// Ordinary least squares `y ≈ intercept + slope x`.
pub fn ols(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let slope_std_error = if x.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        slope_std_error,
    }
}

/// Permutation test that the columns of `rows` share a common mean.
///
/// Each row is one independent observation of `k` exchangeable quantities
/// (for example the per-coordinate contributions of one path). Labels are
/// shuffled within rows; the statistic is the spread of the column means.
pub fn within_row_permutation_test<R: Rng>(rows: &[Vec<f64>], n_perm: usize, rng: &mut R) -> f64 {
    let k = rows.first().map_or(0, Vec::len);
    if k < 2 || rows.is_empty() {
        return 1.0;
    }
    let spread = |data: &[Vec<f64>]| {
        let mut means = vec![0.0; k];
        for r in data {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        let grand = means.iter().sum::<f64>() / k as f64;
        means.iter().map(|m| (m - grand).powi(2)).sum::<f64>()
    };
    let observed = spread(rows);
    let mut work = rows.to_vec();
    let mut at_least = 0usize;
    for _ in 0..n_perm {
        for r in work.iter_mut() {
            r.shuffle(rng);
        }
        if spread(&work) >= observed {
            at_least += 1;
        }
    }
    (at_least + 1) as f64 / (n_perm + 1) as f64
}

/// Percentile bootstrap interval for `stat` at coverage `1 - level`.
pub fn bootstrap_interval<R, F>(xs: &[f64], stat: F, n_boot: usize, level: f64, rng: &mut R) -> (f64, f64)
where
    R: Rng,
    F: Fn(&[f64]) -> f64,
{
    let n = xs.len();
    let mut resample = vec![0.0; n];
    let mut values: Vec<f64> = (0..n_boot)
        .map(|_| {
            for slot in resample.iter_mut() {
                *slot = xs[rng.random_range(0..n)];
            }
            stat(&resample)
        })
        .collect();
    values.sort_by(f64::total_cmp);
    let idx = |q: f64| ((q * (n_boot as f64 - 1.0)).round() as usize).min(n_boot - 1);
    (values[idx(level / 2.0)], values[idx(1.0 - level / 2.0)])
}
