//! Kernel-increment integral, simplex bound and moment exponents.
use silt::bounds::{lemma1_scan, moment_bound_exponent, simplex_integral, SimplexIntegralSpec};
use silt::kernel::{HurstParams, KernelEval};

fn main() -> silt::Result<()> {
    let ctx = KernelEval::new(HurstParams::new(0.4, 3, 1.0)?)?;
    let rs: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let scan = lemma1_scan(&ctx, &rs)?;
    println!("kernel increment constant for H=0.4 d=3: {:.4}", scan.fitted_constant);

    for n in 1..=4 {
        let s = simplex_integral(&SimplexIntegralSpec::new(0.5, n, 1.0)?)?;
        println!("simplex a=0.5 n={n}: exact {:.6} <= bound {:.6}", s.exact_recursive, s.bound);
    }

    let e = moment_bound_exponent(&HurstParams::new(0.6, 2, 1.0)?)?;
    println!("H=0.6 d=2: gamma0={:.4} p0={:.4}", e.gamma0, e.p0);
    Ok(())
}
