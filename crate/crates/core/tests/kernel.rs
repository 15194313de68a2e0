use proptest::prelude::*;
use silt::kernel::{HurstParams, KernelEval, PowerKernel, VolterraKernel};

fn fbm_kernel(h: f64) -> KernelEval {
    KernelEval::new(HurstParams::new(h, 1, 1.0).unwrap()).unwrap()
}

fn fbm_covariance(h: f64, s: f64, t: f64) -> f64 {
    0.5 * (t.powf(2.0 * h) + s.powf(2.0 * h) - (t - s).abs().powf(2.0 * h))
}

#[test]
fn kernel_covariance_matches_fbm_covariance() {
    for h in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let k = fbm_kernel(h);
        for (s, t) in [(0.2, 0.9), (0.5, 0.5), (0.999, 1.0), (0.01, 0.6)] {
            let got = k.covariance(t, s).unwrap();
            let want = fbm_covariance(h, s, t);
            assert!((got - want).abs() <= 1e-8, "H={h} s={s} t={t}: {got} vs {want}");
        }
    }
}

#[test]
fn power_kernel_integrated_square_is_closed_form() {
    for h in [0.05, 0.25, 0.5, 0.75, 0.95] {
        let k = PowerKernel::new(h);
        for (s, t) in [(0.0, 1.0), (0.3, 0.31), (0.1, 2.0)] {
            let got = k.integrated_square(s, t).unwrap();
            let want = (t - s).powf(2.0 * h) / (2.0 * h);
            assert!((got - want).abs() <= 1e-10 * want.max(1.0), "H={h}: {got} vs {want}");
        }
    }
}

#[test]
fn brownian_kernel_increment_vanishes() {
    let k = fbm_kernel(0.5);
    assert_eq!(k.increment(0.9, 0.5, 0.2).unwrap(), 0.0);
    assert_eq!(k.increment(0.9, 0.5, 0.7).unwrap(), 1.0);
}

#[test]
fn derivative_sign_follows_the_hurst_branch() {
    assert!(fbm_kernel(0.3).dt(0.8, 0.2).unwrap() < 0.0);
    assert!(fbm_kernel(0.7).dt(0.8, 0.2).unwrap() > 0.0);
    assert_eq!(fbm_kernel(0.5).dt(0.8, 0.2).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_at_t_is_t_to_two_h(h in 0.05f64..0.95, t in 0.05f64..2.0) {
        let v = fbm_kernel(h).integrated_square(0.0, t).unwrap();
        prop_assert!((v - t.powf(2.0 * h)).abs() <= 1e-9 * t.powf(2.0 * h).max(1.0));
    }

    #[test]
    fn kernel_is_self_similar(h in 0.05f64..0.95, s in 0.01f64..0.99, frac in 0.01f64..0.99, c in 0.1f64..10.0) {
        let k = fbm_kernel(h);
        let t = s + frac * (1.0 - s);
        let lhs = k.eval(c * t, c * s).unwrap();
        let rhs = c.powf(h - 0.5) * k.eval(t, s).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-300));
    }

    #[test]
    fn kernel_is_positive_below_the_diagonal_and_zero_above(h in 0.05f64..0.95, s in 0.01f64..1.0, t in 0.01f64..1.0) {
        let k = fbm_kernel(h).eval(t, s).unwrap();
        if s < t {
            prop_assert!(k > 0.0);
        } else {
            prop_assert_eq!(k, 0.0);
        }
    }

    #[test]
    fn increment_equals_difference_of_values(h in 0.05f64..0.95, r in 0.01f64..0.3, ds in 0.01f64..0.3, dt in 0.01f64..0.3) {
        let k = fbm_kernel(h);
        let (s, t) = (r + ds, r + ds + dt);
        let direct = k.eval(t, r).unwrap() - k.eval(s, r).unwrap();
        let inc = k.increment(t, s, r).unwrap();
        prop_assert!((inc - direct).abs() <= 1e-9 * k.eval(t, r).unwrap().abs().max(1.0));
    }
}
