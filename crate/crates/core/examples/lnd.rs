//! Local nondeterminism constant of fBm on a grid.
use silt::gaussian::{lnd_certificate, Grid};
use silt::kernel::HurstParams;

fn main() -> silt::Result<()> {
    for h in [0.25, 0.4, 0.75] {
        let cert = lnd_certificate(&HurstParams::new(h, 1, 1.0)?, Grid::new(128, 1.0)?)?;
        println!("H={h}: k2={:.4} attained at t={:.3}, r={:.3}", cert.k2_hat, cert.argmin.0, cert.argmin.1);
    }
    Ok(())
}
