use proptest::prelude::*;
use silt::gaussian::{simulate_volterra, FbmPath, Grid, KernelMatrix};
use silt::kernel::{HurstParams, KernelEval};
use silt::localtime::*;
use silt::stats::{variance_std_error, Accumulator};

fn params(h: f64, d: usize) -> HurstParams {
    HurstParams::new(h, d, 1.0).unwrap()
}

fn kernel_matrix(h: f64, n: usize) -> KernelMatrix {
    KernelMatrix::build(&KernelEval::new(params(h, 1)).unwrap(), Grid::new(n, 1.0).unwrap())
}

fn ensemble(km: &KernelMatrix, d: usize, count: u64, seed: u64) -> Vec<FbmPath> {
    (0..count).map(|i| simulate_volterra(km, d, seed, i).0).collect()
}

#[test]
fn ensemble_mean_matches_discrete_mean() {
    let (h, d, eps) = (0.4, 2, 0.05);
    let km = kernel_matrix(h, 128);
    let values: Vec<f64> = ensemble(&km, d, 400, 3).iter().map(|p| l_eps_pathwise(p, eps).unwrap()).collect();
    let acc = Accumulator::from_slice(&values);
    let want = mean_l_eps_discrete(&discrete_increment_variances(&km), d, km.grid.step(), eps);
    assert!((acc.mean() - want).abs() <= 3.0 * acc.std_error(), "{} vs {want}", acc.mean());
}

#[test]
fn schedule_matches_single_evaluations() {
    let km = kernel_matrix(0.3, 64);
    let path = simulate_volterra(&km, 3, 1, 0).0;
    let eps = [0.5, 0.1, 0.02];
    for (v, &e) in l_eps_schedule(&path, &eps).iter().zip(&eps) {
        assert_eq!(v.to_bits(), l_eps_pathwise(&path, e).unwrap().to_bits());
    }
}

#[test]
fn means_converge_to_the_limit_below_the_critical_line() {
    for (h, d) in [(0.25, 2), (0.3, 2), (0.5, 1)] {
        let p = params(h, d);
        let limit = mean_l_eps_limit(&p).unwrap();
        let gaps: Vec<f64> = (0..40)
            .map(|k| (mean_l_eps(&p, 0.5f64.powi(k)).unwrap() / limit - 1.0).abs())
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "H={h} d={d}: {gaps:?}");
        assert!(gaps[39] < 0.01, "H={h} d={d}: {}", gaps[39]);
    }
    assert!(mean_l_eps_limit(&params(0.5, 2)).is_err());
}

#[test]
fn divergence_is_flagged_on_and_above_the_critical_line() {
    for (h, d, divergent) in [(0.3, 2, false), (0.5, 2, true), (0.7, 2, true), (0.25, 3, false)] {
        let p = params(h, d);
        let diag = divergence_diagnostic(&p, &MollifierConfig::geometric(&p).schedule).unwrap();
        assert_eq!(diag.divergent, divergent, "H={h} d={d}: {diag:?}");
    }
}

#[test]
fn first_moment_oracle_is_the_mean() {
    let p = params(0.3, 2);
    let est = alpha_n_oracle(&p, 1, 0.0, 20_000, 2).unwrap();
    let limit = mean_l_eps_limit(&p).unwrap();
    assert!((est.value - limit).abs() <= 3.0 * est.std_error + 1e-6 * limit, "{} vs {limit}", est.value);
    let eps_est = alpha_n_oracle(&p, 1, 0.1, 20_000, 2).unwrap();
    let exact = mean_l_eps(&p, 0.1).unwrap();
    assert!((eps_est.value - exact).abs() <= 3.0 * eps_est.std_error + 1e-6 * exact);
}

#[test]
fn variance_formula_matches_ensemble() {
    let (h, d, eps) = (0.5, 2, 0.2);
    let p = params(h, d);
    let km = kernel_matrix(h, 256);
    let values: Vec<f64> = ensemble(&km, d, 3000, 9).iter().map(|x| l_eps_pathwise(x, eps).unwrap()).collect();
    let sample = Accumulator::from_slice(&values).variance();
    let formula = variance_l_eps(&p, eps, 100_000, 4).unwrap();
    let spread = (variance_std_error(&values).powi(2) + formula.std_error.powi(2)).sqrt();
    // The discretized process loses about Δt of each pair sum.
    assert!((sample - formula.value).abs() <= 3.0 * spread + 0.02 * formula.value, "{sample} vs {}", formula.value);
}

#[test]
fn moment_growth_needs_the_subcritical_regime() {
    assert!(moment_growth(&params(0.5, 2), 100, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn local_time_is_positive_and_isotropic(h in 0.1f64..0.9, seed in 0u64..1000, eps in 0.001f64..1.0) {
        let km = kernel_matrix(h, 32);
        let path = simulate_volterra(&km, 3, seed, 0).0;
        let l = l_eps_pathwise(&path, eps).unwrap();
        prop_assert!(l > 0.0);
        let permuted = l_eps_pathwise(&path.permute_coordinates(&[2, 0, 1]), eps).unwrap();
        prop_assert!((l - permuted).abs() <= 1e-12 * l);
    }

    #[test]
    fn local_time_decreases_in_eps_on_average(h in 0.2f64..0.8, e1 in 0.01f64..0.5, factor in 1.5f64..4.0) {
        let p = params(h, 2);
        prop_assert!(mean_l_eps(&p, e1 * factor).unwrap() < mean_l_eps(&p, e1).unwrap());
    }
}
