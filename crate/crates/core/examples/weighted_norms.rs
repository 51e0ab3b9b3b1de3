//! The double-star norm splits off a trivial Einstein variation.

use dehnfill::geometry::Dimension;
use dehnfill::gluing::{double_star_norm, glue_for_radius, trivial_cutoff, WeightFunction};
use dehnfill::operator::InvariantTensor;
use nalgebra::DMatrix;

fn main() -> dehnfill::error::Result<()> {
    let big_r = 400.0;
    let dim = Dimension::new(4)?;
    let g = glue_for_radius(dim, big_r, 2.0, 1500)?.profile;
    let wf = WeightFunction::new(dim, big_r);
    let s_big = g.grid.nodes[g.node_at_r(big_r)];
    let u = DMatrix::from_row_slice(3, 3, &[0.2, 0.1, 0.0, 0.1, -0.3, 0.05, 0.0, 0.05, 0.1]);
    let mut h = InvariantTensor::zeros(g.grid.clone());
    for k in 0..g.len() {
        h.hij[k] = &u * (trivial_cutoff(g.grid.nodes[k], s_big) * g.r[k] * g.r[k]);
    }
    let rep = double_star_norm(&h, &g, &wf, 0)?;
    println!("sup {:.4} star {:.4} split {:.4} double_star {:.4}", rep.sup, rep.star, rep.split, rep.double_star);
    println!("star/split {:.4}, R^0.05/2 = {:.4}", rep.star / rep.split, big_r.powf(0.05) / 2.0);
    Ok(())
}
