//! Newton solve of the n = 3 filling; the result has curvature −1.

use dehnfill::geometry::Dimension;
use dehnfill::gluing::glue;
use dehnfill::solver::{newton_solve, verify_einstein, SolverConfig};

fn main() -> dehnfill::error::Result<()> {
    let g = glue(Dimension::new(3)?, 10.0, 4.0, 2048)?;
    let cfg = SolverConfig { weight_radius: Some(g.big_r), ..SolverConfig::default() };
    let (p, rep) = newton_solve(&g.profile, &cfg)?;
    for it in &rep.iterations {
        println!("iter {} residual {:.3e}", it.iteration, it.residual_sup);
    }
    let check = verify_einstein(&p, 1e-6)?;
    println!("{:?}; curvature deviation {:?}", rep.status, check.curvature_deviation);
    Ok(())
}
