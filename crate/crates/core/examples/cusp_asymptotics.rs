//! Indicial exponents of the cusp blocks and the kernel they allow.

use dehnfill::asymptotics::{cusp_block_exponents, cusp_kernel_classification, GrowthWindow};
use dehnfill::geometry::Dimension;

fn main() -> dehnfill::error::Result<()> {
    for n in [3, 4, 5, 10] {
        let dim = Dimension::new(n)?;
        let e = cusp_block_exponents(dim)?;
        let wide = cusp_kernel_classification(dim, GrowthWindow::default())?;
        let strict = cusp_kernel_classification(dim, GrowthWindow::strict(-0.1, 0.1))?;
        println!("n={n} radial {:?} mixed {:?} torus {:?}", e.radial, e.mixed, e.torus);
        println!("  kernel: {} (strict window: {})", wide.description, strict.dimension);
    }
    Ok(())
}
