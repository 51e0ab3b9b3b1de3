//! Newton and frozen-Jacobian solvers for the diagonal Einstein system, and
//! singular-value probes of its linearization.
//!
//! The unknowns are `y = log fᵢ` at every node except where data is fixed:
//! the θ-fiber at a cap node (`f₂ = 0`), every direction at the outer node
//! (Dirichlet data, eliminated), and the first node of an uncapped profile.
//! The equations are the normalized (I)-rows of the residual; at a cap the
//! axis rows impose the even parity of the flat directions, and the odd
//! parity of `f₂` is built into the scheme. The cone angle is not imposed; it
//! is reported as a diagnostic.

use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DiagonalMetricProfile, TrivialVariation};
use crate::gluing::{double_star_norm, s_at_r, trivial_cutoff, weight, weighted_norms, FramedField, WeightFunction};
use crate::numerics::band::{BandLu, BandMatrix};
use crate::operator::{einstein_residual, DiagonalScheme, InvariantTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Newton,
    /// The Jacobian is factored once at the initial profile.
    FrozenJacobian,
}

impl FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(Self::Newton),
            "frozen_jacobian" | "frozen-jacobian" | "frozen" => Ok(Self::FrozenJacobian),
            _ => Err(Error::Config(format!("unknown solver mode `{s}`"))),
        }
    }
}

/// Outer Dirichlet data, the warpings `fᵢ` at the last node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterBoundary {
    pub f: Vec<f64>,
}

impl OuterBoundary {
    pub fn from_profile(g: &DiagonalMetricProfile) -> Self {
        Self { f: g.f[g.len() - 1].clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub residual_tolerance: f64,
    /// When set, convergence also needs the last correction `|δ log f|`
    /// below this.
    pub step_tolerance: Option<f64>,
    pub damping: f64,
    pub mode: SolverMode,
    /// `None` keeps the last node of the initial profile.
    pub boundary: Option<OuterBoundary>,
    /// `R` of the weight for the `*`/`**` norms in the report; no weighted
    /// norms are recorded without it.
    pub weight_radius: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            residual_tolerance: 1e-8,
            step_tolerance: None,
            damping: 1.0,
            mode: SolverMode::Newton,
            boundary: None,
            weight_radius: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::Config("residual tolerance must be positive".into()));
        }
        if self.step_tolerance.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("step tolerance must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
        if let Some(r) = self.weight_radius {
            if !(r > 1.0 && r.is_finite()) {
                return Err(Error::Config("weight radius must exceed 1".into()));
            }
        }
        Ok(())
    }
}

/// Which `(node, direction)` pairs are unknowns, in node-major order.
#[derive(Debug, Clone)]
pub struct Unknowns {
    c: usize,
    len: usize,
    index: Vec<Option<usize>>,
    slots: Vec<(usize, usize)>,
}

impl Unknowns {
    pub fn new(g: &DiagonalMetricProfile) -> Self {
        let c = g.n().torus_rank();
        let len = g.len();
        let cap = g.has_cap();
        let mut index = vec![None; len * c];
        let mut slots = Vec::new();
        for k in 0..len - 1 {
            for i in 0..c {
                let free = if k == 0 { cap && i > 0 } else { true };
                if free {
                    index[k * c + i] = Some(slots.len());
                    slots.push((k, i));
                }
            }
        }
        Self { c, len, index, slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn index(&self, k: usize, i: usize) -> Option<usize> {
        if k < self.len && i < self.c {
            self.index[k * self.c + i]
        } else {
            None
        }
    }

    /// `(node, direction)` of unknown `j`.
    pub fn slot(&self, j: usize) -> (usize, usize) {
        self.slots[j]
    }

    /// Per-node values with zeros at the fixed entries.
    pub fn expand(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.c]; self.len];
        for (j, &(k, i)) in self.slots.iter().enumerate() {
            out[k][i] = x[j];
        }
        out
    }
}

/// Jacobian of the (I)-rows in `δ log f` with the residual at which it was
/// taken.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub matrix: BandMatrix,
    pub residual: Vec<f64>,
    pub unknowns: Unknowns,
}

impl Linearization {
    pub fn residual_sup(&self) -> f64 {
        self.residual.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

pub fn assemble_linearization(g: &DiagonalMetricProfile) -> Result<Linearization> {
    let scheme = DiagonalScheme::new(g)?;
    let unknowns = Unknowns::new(g);
    let c = unknowns.c;
    let m = unknowns.len();
    let mut matrix = BandMatrix::zeros(m, 2 * c, 2 * c);
    let mut residual = vec![0.0; m];
    let mut buf = Vec::new();
    for (row, &(k, i)) in unknowns.slots.iter().enumerate() {
        residual[row] = scheme.e1(k, i);
        scheme.e1_gradient(k, i, &mut buf);
        for &(kk, j, v) in &buf {
            if let Some(col) = unknowns.index(kk, j) {
                matrix.add(row, col, v);
            }
        }
    }
    Ok(Linearization { matrix, residual, unknowns })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Diverged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Normalized sup of the (I)-rows.
    pub residual_sup: f64,
    pub residual_star: Option<f64>,
    pub e2_max: f64,
    /// Largest `|δ log f|` of the step that produced this iterate.
    pub step_sup: Option<f64>,
    /// `**`-norm of `g − g₀`.
    pub perturbation_double_star: Option<f64>,
    /// Ratio to the previous residual.
    pub rate: Option<f64>,
    /// `log(δⱼ/δⱼ₋₁)/log(δⱼ₋₁/δⱼ₋₂)` for the step sizes `δ`.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonReport {
    pub mode: SolverMode,
    pub status: SolveStatus,
    pub nodes: usize,
    pub tolerance: f64,
    pub iterations: Vec<IterationRecord>,
    pub final_max_residual: f64,
    /// Largest `|E2|` at the final iterate.
    pub constraint_drift: f64,
    /// Last order estimate from three successive step sizes.
    pub convergence_order: Option<f64>,
    /// Worst rate after the residual entered the contracting regime.
    pub contraction_rate: Option<f64>,
    /// Residual at which every later step contracted by at least ½.
    pub basin_residual: Option<f64>,
    /// Iterations whose residual rose above the previous one.
    pub increases: Vec<usize>,
    pub cone_angle_defect: Option<f64>,
}

impl NewtonReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// The failure as an error.
    pub fn check(&self) -> Result<()> {
        let iterations = self.iterations.len().saturating_sub(1);
        let residual = self.final_max_residual;
        match self.status {
            SolveStatus::Converged => Ok(()),
            SolveStatus::Diverged => Err(Error::Diverged { iterations, residual }),
            SolveStatus::MaxIterations => Err(Error::MaxIterations { iterations, residual }),
        }
    }
}

fn weighted_record(
    g: &DiagonalMetricProfile,
    g0: &DiagonalMetricProfile,
    wf: &WeightFunction,
    res: &crate::operator::EinsteinResidual,
) -> (Option<f64>, Option<f64>) {
    let star = FramedField::from_residual(res, &g.r).and_then(|f| weighted_norms(&f, wf, 0)).map(|w| w.star).ok();
    let mut h = InvariantTensor::zeros(g.grid.clone());
    for k in 0..g.len() {
        h.hij[k] = DMatrix::from_fn(g.f[k].len(), g.f[k].len(), |i, j| {
            if i == j {
                g.f[k][i] * g.f[k][i] - g0.f[k][i] * g0.f[k][i]
            } else {
                0.0
            }
        });
    }
    let ds = double_star_norm(&h, g0, wf, 0).map(|r| r.double_star).ok();
    (star, ds)
}

/// Steps below this are at the rounding level of `log f`.
const STEP_FLOOR: f64 = 1e-13;

fn estimates(records: &mut [IterationRecord]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let e: Vec<f64> = records.iter().map(|r| r.residual_sup).collect();
    // successive Newton corrections track the error without the residual's
    // O(ε/Δ²) rounding floor
    let steps: Vec<f64> = records.iter().map(|r| r.step_sup.unwrap_or(f64::NAN)).collect();
    for j in 1..e.len() {
        records[j].rate = Some(e[j] / e[j - 1]);
        if j >= 3 {
            let (a, b, c) = (steps[j - 2], steps[j - 1], steps[j]);
            if c > STEP_FLOOR && c < b && b < a {
                records[j].order = Some((c / b).ln() / (b / a).ln());
            }
        }
    }
    let order = records.iter().rev().find_map(|r| r.order);
    // contracting regime: the longest tail of rates ≤ ½, ignoring the
    // rounding floor of the residual
    let floor = 10.0 * e.iter().cloned().fold(f64::INFINITY, f64::min);
    let meaningful: Vec<usize> = (1..e.len()).filter(|&j| e[j] > floor).collect();
    let mut start = None;
    for &j in meaningful.iter().rev() {
        if e[j] / e[j - 1] <= 0.5 {
            start = Some(j - 1);
        } else {
            break;
        }
    }
    let (rate, basin) = match start {
        Some(j0) => {
            let worst = meaningful.iter().filter(|&&j| j > j0).map(|&j| e[j] / e[j - 1]).fold(0.0, f64::max);
            (Some(worst), Some(e[j0]))
        }
        None => (None, None),
    };
    (order, rate, basin)
}

/// Drives `g0` to a discrete Einstein profile. Failures to converge are
/// flagged in the report, not returned as errors.
pub fn newton_solve(g0: &DiagonalMetricProfile, cfg: &SolverConfig) -> Result<(DiagonalMetricProfile, NewtonReport)> {
    cfg.validate()?;
    let mut g = g0.clone();
    let last = g.len() - 1;
    if let Some(b) = &cfg.boundary {
        if b.f.len() != g.n().torus_rank() || b.f.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("outer boundary data must be positive with one value per torus direction".into()));
        }
        g.f[last] = b.f.clone();
    }
    let start = g.clone();
    let wf = cfg.weight_radius.map(|r| WeightFunction::new(g.n(), r));
    let mut frozen: Option<BandLu> = None;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut rises = 0;
    let mut step = None;
    for it in 0..=cfg.max_iterations {
        let lin = assemble_linearization(&g)?;
        let sup = lin.residual_sup();
        let res = einstein_residual(&g)?;
        let (star, ds) = match &wf {
            Some(wf) => weighted_record(&g, &start, wf, &res),
            None => (None, None),
        };
        if let Some(prev) = records.last() {
            rises = if sup > prev.residual_sup { rises + 1 } else { 0 };
        }
        records.push(IterationRecord {
            iteration: it,
            residual_sup: sup,
            residual_star: star,
            e2_max: res.max_e2(),
            step_sup: step,
            perturbation_double_star: ds,
            rate: None,
            order: None,
        });
        if !sup.is_finite() || rises >= 3 {
            status = SolveStatus::Diverged;
            break;
        }
        let small_step = cfg.step_tolerance.is_none_or(|t| step.is_some_and(|s| s < t));
        if sup < cfg.residual_tolerance && small_step {
            status = SolveStatus::Converged;
            break;
        }
        if it == cfg.max_iterations {
            break;
        }
        let delta = match cfg.mode {
            SolverMode::Newton => lin.matrix.factor()?.solve(&lin.residual),
            SolverMode::FrozenJacobian => {
                if frozen.is_none() {
                    frozen = Some(lin.matrix.factor()?);
                }
                frozen.as_ref().unwrap().solve(&lin.residual)
            }
        };
        let mut next = g.clone();
        let mut worst = 0.0f64;
        for (j, &(k, i)) in lin.unknowns.slots.iter().enumerate() {
            let d = -cfg.damping * delta[j];
            worst = worst.max(d.abs());
            next.f[k][i] *= d.exp();
        }
        if next.f.iter().flatten().skip(1).any(|v| !(*v > 0.0 && v.is_finite())) {
            // keep the last representable iterate
            status = SolveStatus::Diverged;
            break;
        }
        g = next;
        step = Some(worst);
    }
    let (convergence_order, contraction_rate, basin_residual) = estimates(&mut records);
    let increases = records.windows(2).filter(|w| w[1].residual_sup > w[0].residual_sup).map(|w| w[1].iteration).collect();
    let fin = records.last().unwrap();
    let report = NewtonReport {
        mode: cfg.mode,
        status,
        nodes: g.len(),
        tolerance: cfg.residual_tolerance,
        final_max_residual: fin.residual_sup,
        constraint_drift: fin.e2_max,
        iterations: records,
        convergence_order,
        contraction_rate,
        basin_residual,
        increases,
        cone_angle_defect: g.cone_angle_defect(),
    };
    Ok((g, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EinsteinCheck {
    pub tolerance: f64,
    pub max_e1: f64,
    pub max_e2: f64,
    /// Largest `|K + 1|` over interior nodes, for `n = 3` only.
    pub curvature_deviation: Option<f64>,
    pub worst_r: f64,
    /// r-range of the nodes carrying more than 1% of the largest residual.
    pub support: [f64; 2],
    pub passed: bool,
}

pub fn verify_einstein(g: &DiagonalMetricProfile, tol: f64) -> Result<EinsteinCheck> {
    let res = einstein_residual(g)?;
    let node_max: Vec<f64> = (0..g.len())
        .map(|k| {
            let e1 = if res.e1_nodes.contains(&k) { res.e1[k].amax() } else { 0.0 };
            let e2 = if res.e2_nodes.contains(&k) { res.e2[k].abs() } else { 0.0 };
            e1.max(e2)
        })
        .collect();
    let (worst, top) = node_max.iter().enumerate().fold((0, 0.0), |(wk, wv), (k, &v)| if v > wv { (k, v) } else { (wk, wv) });
    let big: Vec<usize> = (0..g.len()).filter(|&k| node_max[k] > 0.01 * top).collect();
    let support = match (big.first(), big.last()) {
        (Some(&a), Some(&b)) => [g.r[a], g.r[b]],
        _ => [g.r[0], g.r[0]],
    };
    let curvature_deviation = (g.n().get() == 3).then(|| g.curvatures().max_deviation_from_hyperbolic(1..g.len() - 1));
    let (max_e1, max_e2) = (res.max_e1(), res.max_e2());
    let passed = max_e1 <= tol && max_e2 <= tol && curvature_deviation.is_none_or(|d| d <= tol);
    Ok(EinsteinCheck { tolerance: tol, max_e1, max_e2, curvature_deviation, worst_r: g.r[worst], support, passed })
}

const SPECTRUM_ITERATIONS: usize = 2000;
const SPECTRUM_TOL: f64 = 1e-10;

fn orthonormalize(x: &mut [Vec<f64>]) {
    for j in 0..x.len() {
        for _ in 0..2 {
            for i in 0..j {
                let d: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum();
                let xi = x[i].clone();
                for (v, a) in x[j].iter_mut().zip(&xi) {
                    *v -= d * a;
                }
            }
        }
        let n = x[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in x[j].iter_mut() {
            *v /= n;
        }
    }
}

/// Smallest `count` singular values of a banded matrix by inverse subspace
/// iteration on `AᵀA` with a Rayleigh–Ritz step; the start block is seeded
/// deterministically.
pub fn smallest_singular_values(a: &BandMatrix, count: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    if count == 0 || count > n {
        return Err(Error::InvalidArgument(format!("cannot compute {count} singular values of a {n}×{n} system")));
    }
    let lu = a.factor()?;
    let block = (count + 2).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<Vec<f64>> = (0..block).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    orthonormalize(&mut x);
    let mut prev = vec![f64::INFINITY; count];
    for _ in 0..SPECTRUM_ITERATIONS {
        for v in x.iter_mut() {
            *v = lu.solve(&lu.solve_transpose(v));
        }
        orthonormalize(&mut x);
        let ax: Vec<Vec<f64>> = x.iter().map(|v| a.matvec(v)).collect();
        let gram: DMatrix<f64> = DMatrix::from_fn(block, block, |i, j| ax[i].iter().zip(&ax[j]).map(|(p, q)| p * q).sum());
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        // rotate the block onto the Ritz vectors, smallest first
        let rotated: Vec<Vec<f64>> = order
            .iter()
            .map(|&c| (0..n).map(|r| (0..block).map(|b| x[b][r] * eig.eigenvectors[(b, c)]).sum()).collect())
            .collect();
        x = rotated;
        let sigma: Vec<f64> = order.iter().take(count).map(|&c| eig.eigenvalues[c].max(0.0).sqrt()).collect();
        let done = sigma.iter().zip(&prev).all(|(s, p)| (s - p).abs() <= SPECTRUM_TOL * s.max(f64::MIN_POSITIVE));
        prev = sigma;
        if done {
            break;
        }
    }
    Ok(prev)
}

/// Smallest singular values of the assembled linearization at `g` (outer
/// data fixed, i.e. Dirichlet-zero variations).
pub fn kernel_spectrum(g: &DiagonalMetricProfile, count: usize) -> Result<Vec<f64>> {
    smallest_singular_values(&assemble_linearization(g)?.matrix, count)
}

fn node_weights(g: &DiagonalMetricProfile, lin: &Linearization, wf: &WeightFunction) -> Vec<f64> {
    (0..lin.unknowns.len()).map(|j| weight(wf, g.r[lin.unknowns.slot(j).0])).collect()
}

/// Singular values of `D⁻¹·L·D` with `D = diag W(r)`: rows measured with
/// `W⁻¹` as in the `*`-norm, variations likewise.
pub fn weighted_kernel_spectrum(g: &DiagonalMetricProfile, wf: &WeightFunction, count: usize) -> Result<Vec<f64>> {
    let mut lin = assemble_linearization(g)?;
    let w = node_weights(g, &lin, wf);
    let winv: Vec<f64> = w.iter().map(|v| 1.0 / v).collect();
    lin.matrix.scale(&winv, &w);
    smallest_singular_values(&lin.matrix, count)
}

/// The diagonal trivial variation `ρ·r²u` as a direction in `δ log f`.
pub fn trivial_direction(g: &DiagonalMetricProfile, wf: &WeightFunction, u: &TrivialVariation) -> Result<Vec<f64>> {
    if !u.is_diagonal() || u.matrix().nrows() != g.n().torus_rank() {
        return Err(Error::InvalidArgument("need a diagonal trivial variation of the torus rank".into()));
    }
    let unknowns = Unknowns::new(g);
    let s_big = s_at_r(g, wf.big_r.min(g.r[g.len() - 1]));
    Ok((0..unknowns.len())
        .map(|j| {
            let (k, i) = unknowns.slot(j);
            let rho = trivial_cutoff(g.grid.nodes[k], s_big);
            if rho == 0.0 {
                0.0
            } else {
                rho * g.r[k] * g.r[k] * u.matrix()[(i, i)] / (2.0 * g.f[k][i] * g.f[k][i])
            }
        })
        .collect())
}

/// `‖L v‖/‖v‖` along the trivial direction, unweighted and with the
/// weights of [`weighted_kernel_spectrum`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrivialGain {
    pub plain: f64,
    pub weighted: f64,
}

pub fn trivial_direction_gain(g: &DiagonalMetricProfile, wf: &WeightFunction, u: &TrivialVariation) -> Result<TrivialGain> {
    let lin = assemble_linearization(g)?;
    let v = trivial_direction(g, wf, u)?;
    let lv = lin.matrix.matvec(&v);
    let w = node_weights(g, &lin, wf);
    let norm = |x: &[f64], scale: &dyn Fn(usize) -> f64| x.iter().enumerate().map(|(j, a)| (a * scale(j)).powi(2)).sum::<f64>().sqrt();
    let vn = norm(&v, &|_| 1.0);
    if vn == 0.0 {
        return Err(Error::InvalidArgument("the trivial cutoff vanishes on this grid".into()));
    }
    Ok(TrivialGain {
        plain: norm(&lv, &|_| 1.0) / vn,
        weighted: norm(&lv, &|j| 1.0 / w[j]) / norm(&v, &|j| 1.0 / w[j]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Dimension;
    use rand::Rng;
    use crate::gluing::{glue, glue_for_radius};
    use crate::operator::linearized_residual;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dim(n: usize) -> Dimension {
        Dimension::new(n).unwrap()
    }

    fn random_direction(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn assembled_matrix_matches_linearized_residual() {
        for (g, label) in [
            (glue(dim(4), 12.0, 3.0, 300).unwrap().profile, "glued"),
            (DiagonalMetricProfile::cusp(dim(3), 0.0, 2.0, 200, 1.0).unwrap(), "cusp"),
        ] {
            let lin = assemble_linearization(&g).unwrap();
            for seed in 0..20 {
                // smooth in s so the comparison is not dominated by 1/Δ²
                let raw = random_direction(4, seed);
                let x: Vec<f64> = (0..lin.unknowns.len())
                    .map(|j| {
                        let (k, i) = lin.unknowns.slot(j);
                        let s = g.grid.nodes[k];
                        raw[i % 4] * (s * (1.0 + raw[(i + 1) % 4])).sin() + raw[(i + 2) % 4]
                    })
                    .collect();
                let jx = lin.matrix.matvec(&x);
                let dy = lin.unknowns.expand(&x);
                let dm: Vec<DMatrix<f64>> = (0..g.len())
                    .map(|k| DMatrix::from_fn(g.f[k].len(), g.f[k].len(), |i, j| if i == j { 2.0 * g.f[k][i] * g.f[k][i] * dy[k][i] } else { 0.0 }))
                    .collect();
                let lr = linearized_residual(&g, &dm).unwrap();
                let scale = jx.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                for (j, v) in jx.iter().enumerate() {
                    let (k, i) = lin.unknowns.slot(j);
                    assert!((v - lr.e1[k][(i, i)]).abs() < 1e-10 * scale, "{label} seed {seed} node {k} dir {i}");
                }
            }
        }
    }

    #[test]
    fn unknown_layout() {
        let g = glue(dim(4), 12.0, 3.0, 100).unwrap().profile;
        let u = Unknowns::new(&g);
        // θ fixed at the cap, everything fixed at the outer node
        assert_eq!(u.len(), 3 * 100 - 3 - 1);
        assert_eq!(u.index(0, 0), None);
        assert_eq!(u.index(0, 1), Some(0));
        assert_eq!(u.index(99, 2), None);
        let cusp = DiagonalMetricProfile::cusp(dim(4), 0.0, 1.0, 100, 1.0).unwrap();
        assert_eq!(Unknowns::new(&cusp).len(), 3 * 98);
    }

    #[test]
    fn black_hole_is_one_newton_step_from_the_discrete_solution() {
        let bh = DiagonalMetricProfile::black_hole(dim(3), 20.0, 768).unwrap();
        let cfg = SolverConfig { residual_tolerance: 1e-10, ..Default::default() };
        let (_, rep) = newton_solve(&bh, &cfg).unwrap();
        assert!(rep.converged(), "{:?}", rep.iterations);
        assert!(rep.iterations.len() <= 2);
        assert!(rep.final_max_residual < 1e-10);
    }

    #[test]
    fn glued_n3_becomes_hyperbolic() {
        let g = glue(dim(3), 10.0, 4.0, 1024).unwrap();
        let cfg = SolverConfig { weight_radius: Some(g.big_r), ..Default::default() };
        let (p, rep) = newton_solve(&g.profile, &cfg).unwrap();
        assert!(rep.converged() && rep.iterations.len() <= 9);
        assert!(rep.increases.is_empty());
        let dev = p.curvatures().max_deviation_from_hyperbolic(1..p.len() - 1);
        assert!(dev < 4e-6, "{dev}");
        // the weighted columns are filled in
        assert!(rep.iterations.iter().all(|r| r.residual_star.is_some() && r.perturbation_double_star.is_some()));
        assert!(rep.cone_angle_defect.is_some());
        rep.check().unwrap();
    }

    #[test]
    fn dirichlet_data_is_reproduced_exactly() {
        let g = glue(dim(4), 14.0, 3.0, 600).unwrap().profile;
        let mut target = OuterBoundary::from_profile(&g);
        target.f[1] *= 1.001;
        target.f[2] /= 1.001;
        let cfg = SolverConfig { boundary: Some(target.clone()), ..Default::default() };
        let (p, rep) = newton_solve(&g, &cfg).unwrap();
        assert!(rep.converged());
        assert_eq!(p.f[p.len() - 1], target.f);
        assert_eq!(p.f[0][0], 0.0);
    }

    #[test]
    fn newton_is_quadratic_and_frozen_is_linear() {
        let g = glue_for_radius(dim(4), 8.0, 4.0, 1024).unwrap().profile;
        let newton = SolverConfig { step_tolerance: Some(1e-12), ..Default::default() };
        let (_, rep) = newton_solve(&g, &newton).unwrap();
        assert!(rep.converged());
        assert!(rep.convergence_order.unwrap() > 1.8, "{:?}", rep.convergence_order);
        let frozen = SolverConfig { mode: SolverMode::FrozenJacobian, step_tolerance: Some(1e-12), ..Default::default() };
        let (_, rep) = newton_solve(&g, &frozen).unwrap();
        assert!(rep.converged());
        let order = rep.convergence_order.unwrap();
        assert!((order - 1.0).abs() < 0.2, "{order}");
        assert!(rep.contraction_rate.unwrap() <= 0.5);
    }

    #[test]
    fn constraint_drift_is_second_order() {
        let drift = |nodes| {
            let g = glue_for_radius(dim(4), 8.0, 4.0, nodes).unwrap().profile;
            newton_solve(&g, &SolverConfig::default()).unwrap().1.constraint_drift
        };
        let ratio = drift(512) / drift(1024);
        assert!((ratio - 4.0).abs() < 0.6, "{ratio}");
    }

    #[test]
    fn damping_slows_to_linear_rate() {
        let g = glue_for_radius(dim(4), 8.0, 4.0, 512).unwrap().profile;
        let cfg = SolverConfig { damping: 0.5, max_iterations: 60, ..Default::default() };
        let (_, rep) = newton_solve(&g, &cfg).unwrap();
        assert!(rep.converged());
        let rates: Vec<f64> = rep.iterations.iter().skip(2).filter_map(|r| r.rate).collect();
        assert!(rates.iter().all(|&q| (q - 0.5).abs() < 0.05), "{rates:?}");
    }

    #[test]
    fn failures_are_flagged_not_thrown() {
        let g = glue_for_radius(dim(4), 8.0, 4.0, 512).unwrap().profile;
        let cfg = SolverConfig { max_iterations: 1, residual_tolerance: 1e-14, ..Default::default() };
        let (_, rep) = newton_solve(&g, &cfg).unwrap();
        assert_eq!(rep.status, SolveStatus::MaxIterations);
        assert!(matches!(rep.check(), Err(Error::MaxIterations { iterations: 1, .. })));
        // a Jacobian frozen far from the solution does not contract
        let mut bad = DiagonalMetricProfile::black_hole(dim(4), 20.0, 512).unwrap();
        for row in bad.f.iter_mut().skip(200) {
            row[1] *= 50.0;
            row[2] *= 50.0;
        }
        let cfg = SolverConfig { mode: SolverMode::FrozenJacobian, max_iterations: 200, ..Default::default() };
        let (_, rep) = newton_solve(&bad, &cfg).unwrap();
        assert_ne!(rep.status, SolveStatus::Converged);
        assert!(rep.check().is_err());
        assert!(rep.iterations.iter().all(|r| !r.residual_sup.is_nan()));
    }

    #[test]
    fn config_validation() {
        let bad = [
            SolverConfig { residual_tolerance: 0.0, ..Default::default() },
            SolverConfig { damping: 1.5, ..Default::default() },
            SolverConfig { damping: 0.0, ..Default::default() },
            SolverConfig { step_tolerance: Some(-1.0), ..Default::default() },
            SolverConfig { weight_radius: Some(0.5), ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        assert_eq!("frozen_jacobian".parse::<SolverMode>().unwrap(), SolverMode::FrozenJacobian);
        assert!("picard".parse::<SolverMode>().is_err());
        let g = glue(dim(4), 12.0, 3.0, 200).unwrap().profile;
        let cfg = SolverConfig { boundary: Some(OuterBoundary { f: vec![1.0, 2.0] }), ..Default::default() };
        assert!(newton_solve(&g, &cfg).is_err());
    }

    #[test]
    fn solutions_converge_under_refinement() {
        let mut sols = Vec::new();
        for nodes in [257, 513, 1025] {
            let g = glue(dim(4), 14.0, 3.0, nodes).unwrap().profile;
            let (p, rep) = newton_solve(&g, &SolverConfig::default()).unwrap();
            assert!(rep.converged());
            sols.push(p);
        }
        let diff = |a: &DiagonalMetricProfile, b: &DiagonalMetricProfile| {
            let mut worst = 0.0f64;
            for k in 0..a.len() {
                for i in 0..a.f[k].len() {
                    worst = worst.max((a.f[k][i] - b.f[2 * k][i]).abs());
                }
            }
            worst
        };
        let (d1, d2) = (diff(&sols[0], &sols[1]), diff(&sols[1], &sols[2]));
        assert!((d1 / d2).log2() > 1.8, "{d1} {d2}");
    }

    #[test]
    fn verify_reports() {
        let bh = DiagonalMetricProfile::black_hole(dim(3), 20.0, 4096).unwrap();
        let chk = verify_einstein(&bh, 1e-6).unwrap();
        assert!(chk.passed, "{chk:?}");
        assert!(chk.curvature_deviation.unwrap() < 1e-6);
        let cusp = DiagonalMetricProfile::cusp(dim(5), 0.0, 3.0, 400, 1.0).unwrap();
        // roundoff of exp(s) is amplified by 1/Δ²
        let chk = verify_einstein(&cusp, 1e-10).unwrap();
        assert!(chk.passed && chk.curvature_deviation.is_none());
        let glued = glue(dim(4), 12.0, 3.0, 800).unwrap();
        let chk = verify_einstein(&glued.profile, 1e-6).unwrap();
        assert!(!chk.passed);
        let slack = 0.1 * glued.big_r;
        assert!(chk.support[0] >= glued.collar_inner - slack && chk.support[1] <= glued.big_r + slack, "{chk:?}");
        assert!(chk.worst_r > glued.collar_inner && chk.worst_r < glued.big_r);
    }

    #[test]
    fn black_hole_spectrum_is_stable_under_refinement() {
        let sig: Vec<f64> = [512, 1024, 2048]
            .iter()
            .map(|&n| kernel_spectrum(&DiagonalMetricProfile::black_hole(dim(4), 20.0, n).unwrap(), 2).unwrap()[0])
            .collect();
        assert!(sig[0] > 0.5);
        for s in &sig {
            assert_relative_eq!(*s, sig[0], max_relative = 0.2);
        }
    }

    #[test]
    fn singular_values_match_dense_svd() {
        let g = glue(dim(3), 10.0, 3.0, 80).unwrap().profile;
        let lin = assemble_linearization(&g).unwrap();
        let mut sv: Vec<f64> = lin.matrix.to_dense().singular_values().iter().copied().collect();
        sv.sort_by(f64::total_cmp);
        let got = smallest_singular_values(&lin.matrix, 3).unwrap();
        for (a, b) in got.iter().zip(&sv) {
            assert_relative_eq!(*a, *b, max_relative = 1e-8);
        }
        assert!(smallest_singular_values(&lin.matrix, 0).is_err());
    }

    #[test]
    fn trivial_direction_shape() {
        let g = glue_for_radius(dim(4), 200.0, 2.0, 1024).unwrap().profile;
        let wf = WeightFunction::new(dim(4), 200.0);
        let u = TrivialVariation::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 1.0, -1.0]))).unwrap();
        let v = trivial_direction(&g, &wf, &u).unwrap();
        let un = Unknowns::new(&g);
        for (j, x) in v.iter().enumerate() {
            let (k, i) = un.slot(j);
            let s = g.grid.nodes[k];
            if s < 1.0 {
                assert_eq!(*x, 0.0);
            }
            if i == 0 {
                assert_eq!(*x, 0.0);
            }
        }
        // where ρ = 1 the flat directions move by ±½ in log f (f = r there)
        let k = g.node_at_r(wf.center());
        assert_relative_eq!(v[un.index(k, 1).unwrap()], 0.5, max_relative = 1e-12);
        let off = TrivialVariation::new(DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(trivial_direction(&g, &wf, &off).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn expand_inverts_layout(n in 3usize..7, nodes in 70usize..120) {
            let g = DiagonalMetricProfile::black_hole(dim(n), 10.0, nodes).unwrap();
            let u = Unknowns::new(&g);
            let x: Vec<f64> = (0..u.len()).map(|j| j as f64 + 1.0).collect();
            let e = u.expand(&x);
            for j in 0..u.len() {
                let (k, i) = u.slot(j);
                prop_assert_eq!(u.index(k, i), Some(j));
                prop_assert_eq!(e[k][i], x[j]);
            }
            prop_assert_eq!(e[0][0], 0.0);
            prop_assert!(e[nodes - 1].iter().all(|v| *v == 0.0));
        }

        #[test]
        fn newton_step_reduces_small_perturbations(seed in 0u64..1000, amp in 1e-4f64..1e-2) {
            let mut g = DiagonalMetricProfile::black_hole(dim(4), 12.0, 300).unwrap();
            let raw = random_direction(3, seed);
            let len = g.len();
            for k in 1..len - 1 {
                let s = g.grid.nodes[k] / g.grid.nodes[len - 1];
                for i in 0..3 {
                    g.f[k][i] *= 1.0 + amp * raw[i] * (std::f64::consts::PI * s).sin();
                }
            }
            let cfg = SolverConfig { max_iterations: 1, ..Default::default() };
            let (_, rep) = newton_solve(&g, &cfg).unwrap();
            prop_assert!(rep.iterations[1].residual_sup < rep.iterations[0].residual_sup);
        }
    }
}
