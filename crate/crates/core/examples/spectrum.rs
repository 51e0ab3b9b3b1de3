//! Smallest singular values of the linearization with and without weights.

use dehnfill::geometry::{Dimension, TrivialVariation};
use dehnfill::gluing::{glue_for_radius, WeightFunction};
use dehnfill::solver::{kernel_spectrum, trivial_direction_gain, weighted_kernel_spectrum};
use nalgebra::{DMatrix, DVector};

fn main() -> dehnfill::error::Result<()> {
    let dim = Dimension::new(4)?;
    let u = TrivialVariation::new(DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, -1.0])))?;
    for big_r in [100.0, 200.0, 400.0, 1000.0] {
        let g = glue_for_radius(dim, big_r, 2.0, 2048)?.profile;
        let wf = WeightFunction::new(dim, big_r);
        let plain = kernel_spectrum(&g, 2)?;
        let weighted = weighted_kernel_spectrum(&g, &wf, 2)?;
        let gain = trivial_direction_gain(&g, &wf, &u)?;
        println!("R={big_r:>6}: σ {plain:.4?}  weighted σ {weighted:.4?}  trivial gain {:.3} / {:.3}", gain.plain, gain.weighted);
    }
    Ok(())
}
