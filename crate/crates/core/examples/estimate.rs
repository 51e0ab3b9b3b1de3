//! Empirical constant of the cusp a-priori estimate from seeded trials.

use dehnfill::asymptotics::{ugly_estimate, UglyEstimateConfig};

fn main() -> dehnfill::error::Result<()> {
    for n in [3, 4, 5] {
        for big_r in [16.0, 32.0, 64.0] {
            let est = ugly_estimate(&UglyEstimateConfig::new(n, big_r, 0.1, 50, 13))?;
            println!("n={n} R={big_r:>4}: C={:.4} sup|h|={:.4}", est.constant, est.sup_h);
        }
    }
    Ok(())
}
