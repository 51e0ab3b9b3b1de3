//! Glue a black-hole cap into a cusp and watch the residual fall with R.

use dehnfill::geometry::Dimension;
use dehnfill::gluing::{glue, glued_residual, residual_decay_sweep};

fn main() -> dehnfill::error::Result<()> {
    let g = glue(Dimension::new(3)?, 10.0, 4.0, 1024)?;
    let row = glued_residual(&g)?;
    println!("n=3 ℓ=10: R={:.6}, collar from r={:.4}, star residual {:.3e}", g.big_r, g.collar_inner, row.star_residual);
    for n in [3, 4, 5] {
        let rep = residual_decay_sweep(Dimension::new(n)?, &[8.0, 16.0, 32.0, 64.0], 4.0, 2048)?;
        println!("n={n} slope {:.3}", rep.slope);
        for r in &rep.rows {
            println!("  R={:>4} ℓ={:>9.4} star={:.3e}", r.big_r, r.ell, r.star_residual);
        }
    }
    Ok(())
}
