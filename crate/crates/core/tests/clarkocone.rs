use proptest::prelude::*;
use rand::Rng;
use silt::clarkocone::*;
use silt::gaussian::{lnd_certificate, ConditionalLaw, DrivingPath, Grid, KernelMatrix};
use silt::kernel::{HurstParams, KernelEval};
use silt::rng::{stream, Purpose};
use silt::stats::{within_row_permutation_test, Accumulator};

fn kernel_matrix(h: f64, n: usize) -> KernelMatrix {
    let p = HurstParams::new(h, 1, 1.0).unwrap();
    KernelMatrix::build(&KernelEval::new(p).unwrap(), Grid::new(n, 1.0).unwrap())
}

fn engine_with(h: f64, d: usize, n: usize, cfg: EngineConfig) -> RepresentationEngine {
    RepresentationEngine::new(kernel_matrix(h, n), d, cfg).unwrap()
}

fn keeping(eps: f64) -> EngineConfig {
    let mut cfg = EngineConfig::new(eps);
    cfg.keep_integrand = true;
    cfg
}

fn paths(grid: Grid, d: usize, count: u64, seed: u64) -> Vec<DrivingPath> {
    (0..count).map(|i| DrivingPath::sample(grid, d, seed, i)).collect()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn direct_and_incremental_schedules_agree() {
    for (h, d) in [(0.4, 2), (0.5, 2), (0.7, 1)] {
        let incremental = engine_with(h, d, 32, keeping(0.1));
        let mut cfg = keeping(0.1);
        cfg.schedule = Schedule::Direct;
        let direct = engine_with(h, d, 32, cfg);
        let ps = paths(incremental.grid(), d, 3, 11);
        let a = incremental.run(&ps).unwrap();
        let b = direct.run(&ps).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(close(x.rhs, y.rhs, 1e-10), "H={h}: {} vs {}", x.rhs, y.rhs);
            assert!(close(x.quadratic_variation, y.quadratic_variation, 1e-10));
            assert!(close(x.l_eps, y.l_eps, 1e-12));
            let (gx, gy) = (x.integrand.as_ref().unwrap(), y.integrand.as_ref().unwrap());
            for (u, v) in gx.region_after.iter().zip(&gy.region_after) {
                assert!((u - v).abs() <= 1e-10 * (1.0 + u.abs()));
            }
        }
    }
}

#[test]
fn integrand_ignores_future_increments() {
    let d = 2;
    let engine = engine_with(0.4, d, 40, keeping(0.05));
    let original = DrivingPath::sample(engine.grid(), d, 5, 0);
    for cut in [0, 7, 23, 39] {
        let mut scrambled = original.clone();
        let mut rng = stream(5, Purpose::Scramble, cut as u64, 0);
        for c in 0..d {
            for j in cut..40 {
                scrambled.increments[c * 40 + j] = rng.random::<f64>() - 0.5;
            }
        }
        let out = engine.run(&[original.clone(), scrambled]).unwrap();
        let (x, y) = (out[0].integrand.as_ref().unwrap(), out[1].integrand.as_ref().unwrap());
        for k in 0..=cut {
            for i in 0..d {
                assert_eq!(x.value(k, i).to_bits(), y.value(k, i).to_bits(), "cut={cut} k={k}");
            }
        }
    }
}

#[test]
fn ito_sum_is_centred_and_isometric() {
    let engine = engine_with(0.5, 2, 128, EngineConfig::new(0.05));
    let out = engine.run(&paths(engine.grid(), 2, 400, 21)).unwrap();
    let rhs = Accumulator::from_slice(&out.iter().map(|r| r.rhs).collect::<Vec<_>>());
    assert!(rhs.mean().abs() <= 3.0 * rhs.std_error(), "mean {} se {}", rhs.mean(), rhs.std_error());
    let row = summarize(128, &engine, &out);
    let spread = (row.rhs_variance_std_error.powi(2) + row.qv_std_error.powi(2)).sqrt();
    assert!((row.rhs_variance - row.qv_mean).abs() <= 3.0 * spread);
}

#[test]
fn coordinate_contributions_are_exchangeable() {
    let engine = engine_with(0.4, 3, 64, EngineConfig::new(0.05));
    let out = engine.run(&paths(engine.grid(), 3, 200, 8)).unwrap();
    let rows: Vec<Vec<f64>> = out.iter().map(|r| r.qv_by_coordinate.clone()).collect();
    let p = within_row_permutation_test(&rows, 999, &mut stream(8, Purpose::Resampling, 0, 0));
    assert!(p > 0.05, "p = {p}");
}

#[test]
fn straddling_variances_lie_between_lnd_floor_and_increment_variance() {
    for h in [0.25, 0.4, 0.75] {
        let n = 128;
        let params = HurstParams::new(h, 1, 1.0).unwrap();
        let grid = Grid::new(n, 1.0).unwrap();
        let k2 = lnd_certificate(&params, grid).unwrap().k2_hat;
        let engine = engine_with(h, 1, n, EngineConfig::new(0.1));
        let dt = grid.step();
        for k in 0..n {
            for b in k + 1..=n {
                let sigma2 = engine.straddling_variance(k, b);
                let lag = ((b - k) as f64 * dt).powf(2.0 * h);
                let unconditional = engine.after_variance(0, k, b);
                assert!(sigma2 <= unconditional * (1.0 + 1e-12), "H={h} k={k} b={b}");
                assert!(sigma2 >= 0.9 * k2 * lag, "H={h} k={k} b={b}: {sigma2} < 0.9 * {k2} * {lag}");
            }
        }
    }
}

#[test]
fn brownian_planar_sweep_matches_direct_formula() {
    for eps in [0.0, 0.05] {
        let mut cfg = keeping(eps);
        cfg.lnd_constant = Some(0.5);
        let engine = engine_with(0.5, 2, 64, cfg);
        for path in paths(engine.grid(), 2, 3, 4) {
            let fbm = engine.kernel_matrix().apply(&path);
            let out = engine.run(std::slice::from_ref(&path)).unwrap();
            let grid = out[0].integrand.as_ref().unwrap();
            for k in 0..64 {
                let direct = brownian_planar_integrand(&fbm, k, eps);
                for (i, want) in direct.iter().enumerate() {
                    assert!((grid.value(k, i) - want).abs() <= 1e-11 * (1.0 + want.abs()));
                }
            }
        }
    }
}

#[test]
fn brownian_planar_quadratic_variation_is_bounded() {
    let mut cfg = EngineConfig::new(0.0);
    cfg.lnd_constant = Some(0.5);
    let engine = engine_with(0.5, 2, 128, cfg);
    for (path, rep) in paths(engine.grid(), 2, 20, 9).iter().zip(engine.run(&paths(engine.grid(), 2, 20, 9)).unwrap()) {
        let (_, discrete) = brownian_planar_qv_bound(&engine.kernel_matrix().apply(path));
        assert!(rep.quadratic_variation >= 0.0);
        assert!(rep.quadratic_variation <= discrete, "{} > {discrete}", rep.quadratic_variation);
    }
}

#[test]
fn zero_eps_integrand_is_finite() {
    let params = HurstParams::new(0.4, 2, 1.0).unwrap();
    let grid = Grid::new(64, 1.0).unwrap();
    let mut cfg = keeping(0.0);
    cfg.lnd_constant = Some(lnd_certificate(&params, grid).unwrap().k2_hat);
    let engine = engine_with(0.4, 2, 64, cfg);
    for rep in engine.run(&paths(grid, 2, 8, 2)).unwrap() {
        let g = rep.integrand.unwrap();
        assert!(g.region_after.iter().chain(&g.region_straddling).all(|v| v.is_finite()));
        assert!(rep.rhs.is_finite() && rep.quadratic_variation.is_finite());
    }
}

#[test]
fn large_eps_integrand_obeys_crude_bound() {
    let (d, n, eps) = (2usize, 48usize, 100.0f64);
    let km = kernel_matrix(0.4, n);
    let mut max_inc = 0.0f64;
    for k in 0..n {
        for b in k + 1..=n {
            for a in 0..b {
                let inc = km.get(b, k) - if a > k { km.get(a, k) } else { 0.0 };
                max_inc = max_inc.max(inc.abs());
            }
        }
    }
    let constant = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0) * (-0.5f64).exp();
    let bound = constant * eps.powf(-((d + 1) as f64) / 2.0) * max_inc;
    let engine = RepresentationEngine::new(km, d, keeping(eps)).unwrap();
    for rep in engine.run(&paths(engine.grid(), d, 4, 3)).unwrap() {
        let g = rep.integrand.unwrap();
        let sup = (0..n).flat_map(|k| (0..d).map(move |i| (k, i))).map(|(k, i)| g.value(k, i).abs()).fold(0.0, f64::max);
        assert!(sup > 0.0 && sup <= bound, "{sup} > {bound}");
    }
}

#[test]
fn after_region_envelope_constant_is_stable_in_eps() {
    let h = 0.4;
    let n = 64;
    let fitted: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&eps| {
            let engine = engine_with(h, 2, n, keeping(eps));
            let dt = engine.grid().step();
            let mut worst = 0.0f64;
            for rep in engine.run(&paths(engine.grid(), 2, 16, 6)).unwrap() {
                let g = rep.integrand.unwrap();
                for k in 0..n {
                    let envelope = (k as f64 * dt).powf(0.5 - h).max(1.0);
                    let norm = (0..2).map(|i| g.region_after[k * 2 + i].powi(2)).sum::<f64>().sqrt();
                    worst = worst.max(norm / envelope);
                }
            }
            worst
        })
        .collect();
    let (lo, hi) = fitted.iter().fold((f64::MAX, 0.0f64), |(l, u), &c| (l.min(c), u.max(c)));
    assert!(lo > 0.0 && hi / lo < 2.0, "{fitted:?}");
}

#[test]
fn assembly_rejects_a_foreign_integrand() {
    let engine = engine_with(0.4, 2, 16, keeping(0.1));
    let ps = paths(engine.grid(), 2, 2, 1);
    let out = engine.run(&ps).unwrap();
    let grid = out[0].integrand.as_ref().unwrap();
    assert!(close(ito_assemble(&ps[0], grid).unwrap(), out[0].rhs, 1e-12));
    assert!(ito_assemble(&ps[1], grid).is_err());
}

proptest! {
    #[test]
    fn integrand_magnitude_bound(
        mean in prop::collection::vec(-3.0f64..3.0, 1..4),
        gap in 0.01f64..1.0,
        k2_ratio in 1.0f64..5.0,
        kappa in -2.0f64..2.0,
        eps in 0.0f64..0.5,
        h in 0.2f64..0.8,
    ) {
        let d = mean.len() as f64;
        let k2 = 0.3;
        let variance = k2_ratio * k2 * gap.powf(2.0 * h);
        let law = ConditionalLaw { mean, variance };
        let sigma = sigma_integrand(&law, kappa, eps).unwrap();
        let c = (2.0 * std::f64::consts::PI).powf(-d / 2.0) * (-0.5f64).exp() * k2.powf(-(d + 1.0) / 2.0);
        let bound = c * gap.powf(-h * d - h) * kappa.abs();
        for s in sigma {
            prop_assert!(s.abs() <= bound * (1.0 + 1e-12));
        }
    }
}
