//! Mollified self-intersection local time: pathwise values, exact means and
//! the divergence diagnostic on both sides of Hd = 1.
use silt::gaussian::{simulate_volterra, Grid, KernelMatrix};
use silt::kernel::{HurstParams, KernelEval};
use silt::localtime::{divergence_diagnostic, l_eps_schedule, mean_l_eps, MollifierConfig};

fn main() -> silt::Result<()> {
    for (h, d) in [(0.3, 2), (0.5, 2)] {
        let params = HurstParams::new(h, d, 1.0)?;
        let schedule = MollifierConfig::geometric(&params).schedule;
        let km = KernelMatrix::build(&KernelEval::new(HurstParams::new(h, 1, 1.0)?)?, Grid::new(256, 1.0)?);
        let path = simulate_volterra(&km, d, 3, 0).0;
        let pathwise = l_eps_schedule(&path, &schedule);
        println!("H={h} d={d}");
        for (eps, value) in schedule.iter().zip(&pathwise).step_by(2) {
            println!("  eps={eps:.5}  L_eps={value:.4}  E L_eps={:.4}", mean_l_eps(&params, *eps)?);
        }
        let diag = divergence_diagnostic(&params, &schedule)?;
        println!("  divergent: {}", diag.divergent);
    }
    Ok(())
}
