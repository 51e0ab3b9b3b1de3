//! Closed-form curvatures of the black-hole metric and the discrete Einstein
//! residual of its sampled profile.

use dehnfill::geometry::{metric_gap, r_plus, sectional_curvatures, DiagonalMetricProfile, Dimension};
use dehnfill::operator::einstein_residual;

fn main() -> dehnfill::error::Result<()> {
    for n in 3..=6 {
        let dim = Dimension::new(n)?;
        let k = sectional_curvatures(dim, 2.0 * r_plus(dim))?;
        let gap = metric_gap(dim, 50.0)?.norm;
        println!("n={n} r₊={:.6} K12={:.4} K1i={:.4} Kij={:.4} |g−g_hyp|(50)={gap:.3e}", r_plus(dim), k.k12, k.k1i, k.kij);
        for nodes in [1024, 2048, 4096] {
            let res = einstein_residual(&DiagonalMetricProfile::black_hole(dim, 20.0, nodes)?)?;
            println!("  {nodes:>5} nodes: max E1 {:.3e}, max E2 {:.3e}", res.max_e1(), res.max_e2());
        }
    }
    Ok(())
}
