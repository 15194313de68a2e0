//! Sample fBm paths through the discretized Volterra map and by Cholesky.
use silt::gaussian::{simulate_cholesky, simulate_volterra, Grid, KernelMatrix};
use silt::kernel::{HurstParams, KernelEval};

fn main() -> silt::Result<()> {
    let params = HurstParams::new(0.3, 2, 1.0)?;
    let grid = Grid::new(256, 1.0)?;
    let km = KernelMatrix::build(&KernelEval::new(HurstParams::new(0.3, 1, 1.0)?)?, grid);
    let (path, driving) = simulate_volterra(&km, 2, 7, 0);
    println!("Volterra path {}: B_T = ({:.4}, {:.4})", driving.fingerprint(), path.terminal(0), path.terminal(1));
    let exact = simulate_cholesky(&params, grid, 7, 0)?;
    println!("Cholesky path: B_T = ({:.4}, {:.4})", exact.terminal(0), exact.terminal(1));
    Ok(())
}
