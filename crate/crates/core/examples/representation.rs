//! Clark-Ocone representation of the centred local time: the L2 residual
//! relative to the centred value shrinks as the grid is refined.
use silt::clarkocone::representation_residual;
use silt::kernel::HurstParams;

fn main() -> silt::Result<()> {
    let params = HurstParams::new(0.5, 2, 1.0)?;
    let report = representation_residual(&params, 0.05, &[64, 128, 256], 100, 1, |row, _| {
        println!(
            "N={:4}  residual/lhs={:.4}  Var(rhs)={:.4}  E(qv)={:.4}",
            row.n, row.ratio, row.rhs_variance, row.qv_mean
        );
    })?;
    println!("empirical order {:.2}", report.empirical_order);
    Ok(())
}
