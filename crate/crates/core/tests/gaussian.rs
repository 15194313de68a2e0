use proptest::prelude::*;
use silt::gaussian::*;
use silt::kernel::{HurstParams, KernelEval};
use silt::stats::Accumulator;

fn params(h: f64, d: usize) -> HurstParams {
    HurstParams::new(h, d, 1.0).unwrap()
}

fn kernel_matrix(h: f64, n: usize) -> KernelMatrix {
    KernelMatrix::build(&KernelEval::new(params(h, 1)).unwrap(), Grid::new(n, 1.0).unwrap())
}

/// Sample covariance of two coordinates with the standard error of the
/// product mean.
fn covariance(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let products: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x * y).collect();
    let acc = Accumulator::from_slice(&products);
    (acc.mean(), acc.std_error())
}

/// Sample covariances of all node pairs of two ensembles, with the gap
/// between them, its standard error and the exact covariance of each scheme.
fn compare_samplers(h: f64, n: usize, count: u64) -> Vec<(usize, usize, f64, f64, f64, f64)> {
    let grid = Grid::new(n, 1.0).unwrap();
    let km = kernel_matrix(h, n);
    let chol = CholeskySampler::new(&params(h, 1), grid).unwrap();
    let volterra: Vec<FbmPath> = (0..count).map(|i| simulate_volterra(&km, 1, 17, i).0).collect();
    let cholesky: Vec<FbmPath> = (0..count).map(|i| chol.sample(1, 17, i)).collect();
    let column = |ps: &[FbmPath], j: usize| ps.iter().map(|p| p.value(j, 0)).collect::<Vec<_>>();
    let mut out = Vec::new();
    for i in 1..=n {
        for j in i..=n {
            let (cv, sv) = covariance(&column(&volterra, i), &column(&volterra, j));
            let (cc, sc) = covariance(&column(&cholesky, i), &column(&cholesky, j));
            let discrete: f64 = (0..i).map(|k| km.get(i, k) * km.get(j, k)).sum::<f64>() * grid.step();
            let exact = fbm_covariance(h, grid.time(i), grid.time(j));
            out.push((i, j, cv - cc, (sv * sv + sc * sc).sqrt(), discrete, exact));
        }
    }
    out
}

#[test]
fn brownian_samplers_agree_on_every_covariance() {
    for (i, j, gap, se, _, _) in compare_samplers(0.5, 8, 10_000) {
        assert!(gap.abs() <= 3.0 * se, "({i},{j}): gap {gap}, se {se}");
    }
}

#[test]
fn sampler_gap_is_the_midpoint_discretization_bias() {
    // For H != 1/2 the midpoint sum misses part of the singular last cell, so
    // the two ensembles differ by the deterministic bias `discrete - exact`.
    for h in [0.3, 0.7] {
        for (i, j, gap, se, discrete, exact) in compare_samplers(h, 8, 10_000) {
            let bias = discrete - exact;
            assert!((gap - bias).abs() <= 3.0 * se, "H={h} ({i},{j}): gap {gap}, bias {bias}, se {se}");
        }
    }
}

#[test]
fn cholesky_paths_have_exact_grid_covariance() {
    let grid = Grid::new(6, 1.0).unwrap();
    let cov = grid_covariance(0.7, &grid);
    for i in 0..6 {
        for j in 0..6 {
            let want = fbm_covariance(0.7, grid.time(i + 1), grid.time(j + 1));
            assert!((cov[(i, j)] - want).abs() <= 1e-15);
        }
    }
}

#[test]
fn ensembles_are_reproducible_in_any_order() {
    let km = kernel_matrix(0.4, 32);
    let forward: Vec<String> = (0..8).map(|i| simulate_volterra(&km, 2, 5, i).1.fingerprint()).collect();
    let backward: Vec<String> = (0..8).rev().map(|i| simulate_volterra(&km, 2, 5, i).1.fingerprint()).collect();
    assert!(forward.iter().eq(backward.iter().rev()));
    assert_ne!(forward[0], forward[1]);
}

#[test]
fn det_q_examples() {
    let one = det_q_factorized(0.3, &[0.2], &[0.7]).unwrap();
    assert!((one.direct - 0.5f64.powf(0.6)).abs() <= 1e-14);

    let far = det_q_factorized(0.5, &[0.0, 0.6], &[0.2, 0.9]).unwrap();
    assert!((far.direct - 0.2 * 0.3).abs() <= 1e-14);

    let overlapping = det_q_factorized(0.3, &[0.1, 0.3], &[0.5, 0.8]).unwrap();
    assert!((overlapping.direct - overlapping.factorized).abs() <= 1e-10);
    assert!(!overlapping.ill_conditioned);
}

#[test]
fn lnd_certificate_is_positive_and_reports_its_grid() {
    for h in [0.25, 0.4, 0.75] {
        let cert = lnd_certificate(&params(h, 1), Grid::new(64, 1.0).unwrap()).unwrap();
        assert!(cert.k2_hat > 0.0 && cert.k2_hat <= 1.0, "H={h}: {}", cert.k2_hat);
        assert_eq!(cert.nodes, 64);
    }
    assert!(lnd_certificate(&params(0.4, 1), Grid::new(32, 1.0).unwrap()).is_err());
}

#[test]
fn conditional_means_are_martingale_increments() {
    let (h, n) = (0.4, 32);
    let ctx = KernelEval::new(params(h, 1)).unwrap();
    let grid = Grid::new(n, 1.0).unwrap();
    let (r, s, t) = (grid.time(12), grid.time(8), grid.time(24));
    let mut means = Accumulator::new();
    let mut squares = Accumulator::new();
    let mut variance = f64::NAN;
    for i in 0..4000 {
        let path = DrivingPath::sample(grid, 1, 23, i);
        let law = conditional_law(&ctx, &path, r, s, t).unwrap();
        means.push(law.mean[0]);
        squares.push(law.mean[0].powi(2));
        variance = law.variance;
    }
    assert!(means.mean().abs() <= 3.0 * means.std_error());

    let floor = (t - s).powf(2.0 * h) - (t - r).powf(2.0 * h);
    assert!(squares.mean() + 3.0 * squares.std_error() >= floor, "{} < {floor}", squares.mean());

    // Total variance: the midpoint sums carry an O(Δt^{2H}) quadrature error.
    let total = variance + squares.mean();
    let tolerance = 3.0 * squares.std_error() + 0.02 * (t - s).powf(2.0 * h);
    assert!((total - (t - s).powf(2.0 * h)).abs() <= tolerance, "{total}");
}

#[test]
fn discrete_conditional_law_splits_the_discrete_variance() {
    let km = kernel_matrix(0.3, 24);
    let path = DrivingPath::sample(km.grid, 2, 4, 0);
    let full = conditional_law_discrete(&km, &path, 0, 5, 20).variance;
    let dt = km.grid.step();
    for k in [3, 5, 10, 19] {
        let law = conditional_law_discrete(&km, &path, k, 5, 20);
        let known: f64 = (0..k).map(|j| (km.get(20, j) - km.get(5, j)).powi(2) * dt).sum();
        assert!((law.variance + known - full).abs() <= 1e-13 * full);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conditioning_on_more_lowers_variance(h in 0.1f64..0.9, target in 1usize..15, cut in 1usize..6) {
        let grid = Grid::new(16, 1.0).unwrap();
        let cov = grid_covariance(h, &grid);
        let far: Vec<usize> = (0..16usize).filter(|&u| u.abs_diff(target) > cut).collect();
        let near: Vec<usize> = (0..16usize).filter(|&u| u != target && u.abs_diff(target) >= cut).collect();
        let worst = nested_monotonicity(&cov, target, &[vec![], far, near]).unwrap();
        prop_assert!(worst <= 1e-10);
    }

    #[test]
    fn off_grid_times_are_rejected(n in 2usize..64, j in 0usize..64, nudge in 1e-6f64..1e-3) {
        let grid = Grid::new(n, 1.0).unwrap();
        let j = j.min(n);
        prop_assert_eq!(grid.index_of(grid.time(j)).unwrap(), j);
        prop_assert!(grid.index_of(grid.time(j) + nudge * grid.step()).is_err() || j == n);
    }

    #[test]
    fn det_q_routes_agree(h in 0.2f64..0.8, a in 0.0f64..0.4, la in 0.05f64..0.5, b in 0.0f64..0.4, lb in 0.05f64..0.5) {
        let q = det_q_factorized(h, &[a, b], &[a + la, b + lb]).unwrap();
        if !q.ill_conditioned {
            prop_assert!((q.direct - q.factorized).abs() <= 1e-10 * q.direct.abs().max(1e-12));
        }
    }
}
