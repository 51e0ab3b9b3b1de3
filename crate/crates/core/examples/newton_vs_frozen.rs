//! Full Newton against the frozen-Jacobian iteration on an n = 4 filling.

use dehnfill::geometry::Dimension;
use dehnfill::gluing::glue_for_radius;
use dehnfill::solver::{newton_solve, SolverConfig, SolverMode};

fn main() -> dehnfill::error::Result<()> {
    let g = glue_for_radius(Dimension::new(4)?, 8.0, 4.0, 1024)?;
    for mode in [SolverMode::Newton, SolverMode::FrozenJacobian] {
        let cfg = SolverConfig { mode, step_tolerance: Some(1e-12), weight_radius: Some(8.0), max_iterations: 60, ..SolverConfig::default() };
        let (_, rep) = newton_solve(&g.profile, &cfg)?;
        println!(
            "{mode:?}: {:?} after {} iterations, order {:?}, rate {:?}, E2 drift {:.2e}",
            rep.status,
            rep.iterations.len() - 1,
            rep.convergence_order,
            rep.contraction_rate,
            rep.constraint_drift
        );
    }
    Ok(())
}
