//! Growth of the local-time moments with their order.
use silt::kernel::HurstParams;
use silt::localtime::moment_growth;

fn main() -> silt::Result<()> {
    let growth = moment_growth(&HurstParams::new(0.3, 2, 1.0)?, 50_000, 1)?;
    for ((n, a), se) in growth.orders.iter().zip(&growth.alphas).zip(&growth.std_errors) {
        println!("alpha_{n} = {a:.5} +- {se:.5}");
    }
    println!("slope against ln n!: {:.3}", growth.slope);
    Ok(())
}
