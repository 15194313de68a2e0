//! The fractional Volterra kernel reproduces the fBm covariance.
use silt::gaussian::fbm_covariance;
use silt::kernel::{HurstParams, KernelEval, VolterraKernel};

fn main() -> silt::Result<()> {
    for h in [0.25, 0.5, 0.75] {
        let k = KernelEval::new(HurstParams::new(h, 1, 1.0)?)?;
        let (s, t) = (0.3, 0.8);
        println!(
            "H={h}: K(0.8,0.3)={:.6}  cov from kernel {:.12}  closed form {:.12}",
            k.eval(t, s)?,
            k.covariance(t, s)?,
            fbm_covariance(h, s, t)
        );
    }
    Ok(())
}
