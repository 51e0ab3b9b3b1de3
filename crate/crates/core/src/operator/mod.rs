//! The Einstein condition `Ric = −(n−1)g` for torus-invariant metrics
//! `ds² + M(s)`, written as the matrix system
//!
//! ```text
//! (I)  (u M′M⁻¹)′ − 2(n−1) u I = 0,      u = √det M
//! (II) σ₂(M′M⁻¹) − 2(n−1)(n−2) = 0
//! ```
//!
//! together with its analytic linearization, the component ODEs of a
//! torus-invariant variation of the cusp, and the radial gauge operators on
//! the black-hole background.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    v_from_offset, v_profile, BlackHoleProfile, Coordinate, DiagonalMetricProfile,
    Dimension, RadialGrid, TrivialVariation,
};
use crate::numerics::fd;

mod scheme;

pub use scheme::{
    einstein_residual, einstein_residual_block, linearized_residual, linearized_residual_block, perturb_block,
};
pub(crate) use scheme::DiagonalScheme;

/// A torus-invariant symmetric 2-tensor in the coordinates `(r, θ, x₃, …)`.
/// Torus index 0 is θ.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantTensor {
    pub grid: RadialGrid,
    /// Coefficient of `dr²`.
    pub h11: Vec<f64>,
    /// Coefficients of `dr dxᵢ`, one entry per torus direction.
    pub h1i: Vec<Vec<f64>>,
    /// Torus block.
    pub hij: Vec<DMatrix<f64>>,
}

impl InvariantTensor {
    pub fn zeros(grid: RadialGrid) -> Self {
        let m = grid.n.torus_rank();
        let len = grid.len();
        Self { grid, h11: vec![0.0; len], h1i: vec![vec![0.0; m]; len], hij: vec![DMatrix::zeros(m, m); len] }
    }

    pub fn validate(&self) -> Result<()> {
        let (len, m) = (self.grid.len(), self.grid.n.torus_rank());
        if self.h11.len() != len || self.h1i.len() != len || self.hij.len() != len {
            return Err(Error::Grid("tensor components do not share the grid".into()));
        }
        for (k, h) in self.hij.iter().enumerate() {
            if h.nrows() != m || h.ncols() != m || self.h1i[k].len() != m {
                return Err(Error::Grid(format!("component shape mismatch at node {k}")));
            }
            if (h - h.transpose()).amax() > 1e-12 * h.amax().max(1.0) {
                return Err(Error::InvalidArgument(format!("torus block not symmetric at node {k}")));
            }
        }
        Ok(())
    }
}

/// A radial 1-form `ξ = ξ₁(r) dr`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaugeField {
    pub grid: RadialGrid,
    pub xi1: Vec<f64>,
    /// Fitted `sup V^{1/2}|ξ₁| / (r − r₊)^{1/2}` over nodes with `r ≤ r₊ + 0.5`.
    pub edge_constant: f64,
    /// `sup V |h₁₁| r^{n−1.1}` of the input; large values flag slow decay.
    pub decay_constant: f64,
}

/// Residual of system (I)/(II) on a profile.
///
/// With `normalized` set, `e1` holds `E1/√det M` in the orthonormal torus
/// frame, `S⁻¹(E1/u)S` with `S = √M` (symmetric; equal to `E1/u` itself for
/// diagonal `M`). At a cap node it holds the limit of that quotient for the
/// flat directions; θ is excluded there. Entries outside `e1_nodes` /
/// `e2_nodes` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EinsteinResidual {
    pub grid: RadialGrid,
    pub e1: Vec<DMatrix<f64>>,
    pub e2: Vec<f64>,
    pub sqrt_det: Vec<f64>,
    pub normalized: bool,
    pub axis: bool,
    pub e1_nodes: Range<usize>,
    pub e2_nodes: Range<usize>,
}

impl EinsteinResidual {
    pub fn max_e1(&self) -> f64 {
        self.max_e1_over(self.e1_nodes.clone())
    }

    pub fn max_e1_over(&self, nodes: Range<usize>) -> f64 {
        let mut worst = 0.0f64;
        for k in nodes {
            if !self.e1_nodes.contains(&k) {
                continue;
            }
            let e = &self.e1[k];
            let skip = usize::from(self.axis && k == 0);
            for i in skip..e.nrows() {
                for j in skip..e.ncols() {
                    worst = worst.max(e[(i, j)].abs());
                }
            }
        }
        worst
    }

    pub fn max_e2(&self) -> f64 {
        self.max_e2_over(self.e2_nodes.clone())
    }

    pub fn max_e2_over(&self, nodes: Range<usize>) -> f64 {
        nodes.filter(|k| self.e2_nodes.contains(k)).map(|k| self.e2[k].abs()).fold(0.0, f64::max)
    }

    /// The same residual with `E1` multiplied back by `√det M` (zero at a cap),
    /// still in frame components.
    pub fn raw(&self) -> Self {
        if !self.normalized {
            return self.clone();
        }
        let mut out = self.clone();
        for (e, u) in out.e1.iter_mut().zip(&self.sqrt_det) {
            *e *= *u;
        }
        out.normalized = false;
        out
    }
}

/// Nodal first and second derivatives: 3-point stencils in the interior,
/// 5-point one-sided stencils at the ends.
fn first_second(xs: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let len = xs.len();
    let mut d1 = vec![0.0; len];
    let mut d2 = vec![0.0; len];
    for k in 0..len {
        let (start, pts) = if k == 0 || k == len - 1 { (if k == 0 { 0 } else { len - 5 }, 5) } else { (k - 1, 3) };
        let w = fd::fornberg_weights(xs[k], &xs[start..start + pts], 2);
        d1[k] = w[1].iter().zip(&f[start..start + pts]).map(|(a, b)| a * b).sum();
        d2[k] = w[2].iter().zip(&f[start..start + pts]).map(|(a, b)| a * b).sum();
    }
    (d1, d2)
}

fn euler_apply(xs: &[f64], f: &[f64], n: f64, c0: f64) -> Vec<f64> {
    let (d1, d2) = first_second(xs, f);
    (0..xs.len()).map(|k| xs[k] * xs[k] * d2[k] + n * xs[k] * d1[k] + c0 * f[k]).collect()
}

fn check_r_grid(grid: &RadialGrid) -> Result<()> {
    if grid.coordinate != Coordinate::R {
        return Err(Error::Grid("component ODEs need an r-grid".into()));
    }
    if grid.len() < 5 {
        return Err(Error::Grid(format!("need at least 5 nodes, got {}", grid.len())));
    }
    if !(grid.nodes[0] > 0.0) {
        return Err(Error::OutOfDomain { r: grid.nodes[0], min: 0.0 });
    }
    Ok(())
}

/// Residuals of the cusp component ODEs of `L h = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CuspOdeResidual {
    /// `r²F″ + nrF′ − 2(n−1)F` for `F = r²h₁₁`.
    pub eq1: Vec<f64>,
    /// `r²h₁ᵢ″ + nrh₁ᵢ′ − n h₁ᵢ` per torus direction.
    pub eq2: Vec<Vec<f64>>,
    /// `r²Gᵢⱼ″ + nrGᵢⱼ′ − 2δᵢⱼ Σₖ Gₖₖ` for `G = r⁻²h`.
    pub eq3: Vec<DMatrix<f64>>,
}

pub fn cusp_ode_residual(h: &InvariantTensor, n: Dimension) -> Result<CuspOdeResidual> {
    check_r_grid(&h.grid)?;
    h.validate()?;
    let xs = &h.grid.nodes;
    let len = xs.len();
    let c = n.torus_rank();
    let nf = n.as_f64();
    let big_f: Vec<f64> = (0..len).map(|k| xs[k] * xs[k] * h.h11[k]).collect();
    let eq1 = euler_apply(xs, &big_f, nf, -2.0 * (nf - 1.0));
    let mut eq2 = vec![vec![0.0; c]; len];
    for i in 0..c {
        let col: Vec<f64> = h.h1i.iter().map(|v| v[i]).collect();
        for (k, v) in euler_apply(xs, &col, nf, -nf).into_iter().enumerate() {
            eq2[k][i] = v;
        }
    }
    let g: Vec<DMatrix<f64>> = (0..len).map(|k| &h.hij[k] / (xs[k] * xs[k])).collect();
    let mut eq3 = vec![DMatrix::zeros(c, c); len];
    for i in 0..c {
        for j in 0..c {
            let col: Vec<f64> = g.iter().map(|m| m[(i, j)]).collect();
            for (k, v) in euler_apply(xs, &col, nf, 0.0).into_iter().enumerate() {
                eq3[k][(i, j)] = v;
            }
        }
    }
    for k in 0..len {
        let tr = g[k].trace();
        for i in 0..c {
            eq3[k][(i, i)] -= 2.0 * tr;
        }
    }
    Ok(CuspOdeResidual { eq1, eq2, eq3 })
}

/// `r²q″ + nrq′ − 2(n−1)q` for the trace `q = tr h`.
pub fn trace_ode_residual(q: &[f64], grid: &RadialGrid, n: Dimension) -> Result<Vec<f64>> {
    check_r_grid(grid)?;
    if q.len() != grid.len() {
        return Err(Error::Grid("trace samples do not match the grid".into()));
    }
    let nf = n.as_f64();
    Ok(euler_apply(&grid.nodes, q, nf, -2.0 * (nf - 1.0)))
}

fn check_outside_horizon(grid: &RadialGrid, profile: &BlackHoleProfile) -> Result<()> {
    if grid.coordinate != Coordinate::R {
        return Err(Error::Grid("expected an r-grid".into()));
    }
    if !(grid.nodes[0] > profile.r_plus) {
        return Err(Error::OutOfDomain { r: grid.nodes[0], min: profile.r_plus });
    }
    Ok(())
}

/// Residual of `V h₁ᵢ′ + (V′ + (n−2)V/r) h₁ᵢ = 0`.
pub fn divergence_h1i_residual(h1i: &[f64], profile: &BlackHoleProfile, grid: &RadialGrid) -> Result<Vec<f64>> {
    check_outside_horizon(grid, profile)?;
    if h1i.len() != grid.len() {
        return Err(Error::Grid("samples do not match the grid".into()));
    }
    let n = profile.n.as_f64();
    let d1 = fd::derivative(&grid.nodes, h1i, 1, 3);
    grid.nodes
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let vp = v_profile(profile.n, r)?;
            Ok(vp.v * d1[k] + (vp.dv + (n - 2.0) * vp.v / r) * h1i[k])
        })
        .collect()
}

fn sigma_of(r: f64, rp: f64) -> f64 {
    (2.0 * (r - rp).max(0.0)).sqrt()
}

/// `DIV*ξ` for `ξ = ξ₁ dr`: `(DIV*ξ)₁₁ = ξ₁′ + V′ξ₁/(2V)`,
/// `(DIV*ξ)_θθ = ½VV′ξ₁`, `(DIV*ξ)ᵢᵢ = rVξ₁`. The radial component is
/// differentiated as `V^{−1/2} σ⁻¹ d/dσ (V^{1/2} ξ₁)` with `σ = √(2(r−r₊))`
/// and 5-point stencils.
pub fn div_star_radial(xi: &GaugeField, profile: &BlackHoleProfile) -> Result<InvariantTensor> {
    check_outside_horizon(&xi.grid, profile)?;
    let n = profile.n;
    let rp = profile.r_plus;
    let xs = &xi.grid.nodes;
    let sig: Vec<f64> = xs.iter().map(|&r| sigma_of(r, rp)).collect();
    let sv: Vec<f64> = xs.iter().map(|&r| v_from_offset(n, r - rp).sqrt()).collect();
    let w: Vec<f64> = (0..xs.len()).map(|k| sv[k] * xi.xi1[k]).collect();
    let dw = fd::derivative(&sig, &w, 1, 5.min(xs.len()));
    let mut out = InvariantTensor::zeros(xi.grid.clone());
    for (k, &r) in xs.iter().enumerate() {
        let vp = v_profile(n, r)?;
        out.h11[k] = dw[k] / (sv[k] * sig[k]);
        let m = &mut out.hij[k];
        m[(0, 0)] = 0.5 * vp.v * vp.dv * xi.xi1[k];
        for i in 1..n.torus_rank() {
            m[(i, i)] = r * vp.v * xi.xi1[k];
        }
    }
    Ok(out)
}

/// Cubic Lagrange interpolant through `(xs, ys)` evaluated at `x`.
fn lagrange(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..xs.len() {
        let mut l = 1.0;
        for j in 0..xs.len() {
            if j != i {
                l *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
        total += l * ys[i];
    }
    total
}

/// Integral over `[a, b]` of the cubic through the four given points
/// (two-point Gauss rule, exact for cubics).
fn cubic_integral(xs: &[f64], ys: &[f64], a: f64, b: f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let t = half / 3f64.sqrt();
    half * (lagrange(xs, ys, mid - t) + lagrange(xs, ys, mid + t))
}

/// The gauge field `ξ₁ = −V^{−1/2} ∫_{r₊}^{r} V^{1/2} h₁₁ dr` that removes
/// the radial component, `(DIV*ξ)₁₁ = −h₁₁`.
///
/// The integral is taken in `σ = √(2(r−r₊))`, where the integrand
/// `V^{1/2} h₁₁ σ` is smooth even for `h₁₁ ~ 1/V`, by piecewise cubic
/// interpolation. A non-finite sample at `r = r₊` is replaced by cubic
/// extrapolation, as is the stretch between `r₊` and a first node above it.
pub fn gauge_fix_xi(h11: &[f64], profile: &BlackHoleProfile, grid: &RadialGrid) -> Result<GaugeField> {
    if grid.coordinate != Coordinate::R || h11.len() != grid.len() {
        return Err(Error::Grid("gauge fixing needs h₁₁ on an r-grid".into()));
    }
    let len = grid.len();
    if len < 5 {
        return Err(Error::Grid("gauge fixing needs at least 5 nodes".into()));
    }
    let n = profile.n;
    let rp = profile.r_plus;
    let xs = &grid.nodes;
    let sig: Vec<f64> = xs.iter().map(|&r| sigma_of(r, rp)).collect();
    let sv: Vec<f64> = xs.iter().map(|&r| v_from_offset(n, r - rp).sqrt()).collect();
    let mut integrand: Vec<f64> = (0..len).map(|k| sv[k] * h11[k] * sig[k]).collect();
    if !integrand[0].is_finite() {
        integrand[0] = lagrange(&sig[1..5], &integrand[1..5], sig[0]);
    }
    if let Some(k) = integrand.iter().position(|v| !v.is_finite()) {
        return Err(Error::Quadrature(format!("non-finite integrand at node {k}")));
    }
    let mut cum = vec![0.0; len];
    cum[0] = if sig[0] > 0.0 { cubic_integral(&sig[0..4], &integrand[0..4], 0.0, sig[0]) } else { 0.0 };
    for k in 0..len - 1 {
        let s = k.saturating_sub(1).min(len - 4);
        cum[k + 1] = cum[k] + cubic_integral(&sig[s..s + 4], &integrand[s..s + 4], sig[k], sig[k + 1]);
    }
    let dv_edge = (0.5 * v_profile(n, rp)?.dv).sqrt();
    let xi1: Vec<f64> = (0..len)
        .map(|k| if sig[k] > 0.0 { -cum[k] / sv[k] } else { -integrand[k] / dv_edge })
        .collect();
    if xi1.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quadrature("gauge field is not finite".into()));
    }
    let mut edge_constant = 0.0f64;
    let mut decay_constant = 0.0f64;
    for k in 0..len {
        let x = xs[k] - rp;
        if x > 0.0 && x <= 0.5 {
            edge_constant = edge_constant.max(sv[k] * xi1[k].abs() / x.sqrt());
        }
        if h11[k].is_finite() {
            decay_constant = decay_constant.max(sv[k] * sv[k] * h11[k].abs() * xs[k].powf(n.as_f64() - 1.1));
        }
    }
    Ok(GaugeField { grid: grid.clone(), xi1, edge_constant, decay_constant })
}

/// The closed-form black-hole variation
/// `h = −tr u (n−1)/(V r^{n−1}) dr² − tr u VV′/(2r) dθ² + 2 tr u r^{3−n} Σ dxᵢ² + r² uᵢⱼ dxᵢdxⱼ`
/// for `u` over the flat directions `x₃ … x_n`. At `r = r₊` the `dr²`
/// coefficient is infinite.
pub fn explicit_kernel_element(n: Dimension, u: &TrivialVariation, grid: &RadialGrid) -> Result<InvariantTensor> {
    let c = n.torus_rank();
    if u.matrix().nrows() != c - 1 {
        return Err(Error::InvalidArgument(format!("u must be {}x{}", c - 1, c - 1)));
    }
    if grid.coordinate != Coordinate::R {
        return Err(Error::Grid("expected an r-grid".into()));
    }
    let rp = crate::geometry::r_plus(n);
    let nf = n.as_f64();
    let tr = u.trace();
    let mut h = InvariantTensor::zeros(grid.clone());
    for (k, &r) in grid.nodes.iter().enumerate() {
        let v = v_from_offset(n, r - rp);
        let dv = v_profile(n, r)?.dv;
        h.h11[k] = if v > 0.0 { -tr * (nf - 1.0) / (v * r.powf(nf - 1.0)) } else { f64::NEG_INFINITY * tr.signum() };
        let m = &mut h.hij[k];
        m[(0, 0)] = -tr * v * dv / (2.0 * r);
        for i in 1..c {
            for j in 1..c {
                m[(i, j)] = u.matrix()[(i - 1, j - 1)] * r * r;
            }
            m[(i, i)] += 2.0 * tr * r.powf(3.0 - nf);
        }
    }
    Ok(h)
}

/// Torus block of the explicit kernel element after the radial gauge fix,
/// sampled on the nodes of a black-hole profile: `h + DIV*ξ` with `ξ` from
/// [`gauge_fix_xi`]. The radial component of the result vanishes up to
/// quadrature error, so the block is a variation of the form `dM`.
pub fn explicit_kernel_block(g: &DiagonalMetricProfile, u: &TrivialVariation) -> Result<Vec<DMatrix<f64>>> {
    let n = g.n();
    let bh = BlackHoleProfile::new(n);
    let grid = RadialGrid::new(Coordinate::R, g.r.clone(), n)?;
    let h = explicit_kernel_element(n, u, &grid)?;
    let xi = gauge_fix_xi(&h.h11, &bh, &grid)?;
    let mut out = h.hij;
    for (k, &r) in g.r.iter().enumerate() {
        let v = v_from_offset(n, r - bh.r_plus);
        let dv = v_profile(n, r)?.dv;
        out[k][(0, 0)] += 0.5 * v * dv * xi.xi1[k];
        for i in 1..n.torus_rank() {
            out[k][(i, i)] += r * v * xi.xi1[k];
        }
    }
    if g.has_cap() {
        out[0][(0, 0)] = 0.0;
    }
    Ok(out)
}

/// Least-squares fit `√det M ≈ A sinh((n−1)s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinhFit {
    pub amplitude: f64,
    pub max_relative_error: f64,
}

/// Certifies `g` as Einstein to `tolerance` (normalized `E1`, `E2`) and fits
/// its volume density against `sinh((n−1)s)`.
pub fn sqrtdet_sinh_check(g: &DiagonalMetricProfile, tolerance: f64) -> Result<SinhFit> {
    let res = einstein_residual(g)?;
    let worst = res.max_e1().max(res.max_e2());
    if !(worst <= tolerance) {
        return Err(Error::NotEinstein { residual: worst, tolerance });
    }
    let rate = g.n().as_f64() - 1.0;
    let (mut num, mut den) = (0.0, 0.0);
    let basis: Vec<f64> = g.grid.nodes.iter().map(|s| (rate * s).sinh()).collect();
    for (k, b) in basis.iter().enumerate() {
        num += res.sqrt_det[k] * b;
        den += b * b;
    }
    let a = num / den;
    let mut err = 0.0f64;
    for (k, b) in basis.iter().enumerate() {
        if *b > 0.0 {
            err = err.max((res.sqrt_det[k] - a * b).abs() / (a * b).abs());
        }
    }
    Ok(SinhFit { amplitude: a, max_relative_error: err })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_trivial_variation, r_plus, BlockMetricProfile, VariedProfile};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dim(n: usize) -> Dimension {
        Dimension::new(n).unwrap()
    }

    #[test]
    fn black_hole_residual_is_second_order() {
        for n in 3..=5 {
            let mut errs = Vec::new();
            for nodes in [257, 513, 1025] {
                let g = DiagonalMetricProfile::black_hole(dim(n), 20.0, nodes).unwrap();
                let r = einstein_residual(&g).unwrap();
                errs.push(r.max_e1().max(r.max_e2()));
            }
            for w in errs.windows(2) {
                let p = (w[0] / w[1]).log2();
                assert!((p - 2.0).abs() < 0.2, "n={n} order {p} errs {errs:?}");
            }
        }
    }

    #[test]
    fn scaled_cusp_constraint_value() {
        for n in 3..7 {
            let g = DiagonalMetricProfile::cusp(dim(n), 0.0, 1.0, 2001, 1.1).unwrap();
            let r = einstein_residual(&g).unwrap();
            let nf = n as f64;
            let expect = (1.1f64.powi(2) - 1.0) * 2.0 * (nf - 1.0) * (nf - 2.0);
            for k in r.e2_nodes.clone() {
                assert!((r.e2[k] - expect).abs() < 1e-9);
            }
            let cusp = einstein_residual(&DiagonalMetricProfile::cusp(dim(n), 0.0, 1.0, 2001, 1.0).unwrap()).unwrap();
            assert!(cusp.max_e1() < 1e-6 && cusp.max_e2() < 1e-9, "{} {}", cusp.max_e1(), cusp.max_e2());
        }
    }

    #[test]
    fn block_and_diagonal_forms_agree() {
        let g = DiagonalMetricProfile::black_hole(dim(5), 12.0, 300).unwrap();
        let a = einstein_residual(&g).unwrap();
        let b = einstein_residual_block(&g.to_block()).unwrap();
        for k in 0..g.len() {
            assert!((&a.e1[k] - &b.e1[k]).amax() < 1e-9, "node {k}");
            assert!((a.e2[k] - b.e2[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_nodes() {
        let g = DiagonalMetricProfile::cusp(dim(3), 0.0, 1.0, 40, 1.0).unwrap();
        assert!(einstein_residual(&g).is_err());
    }

    /// `S B(s) S` with `S = √M` and a smooth symmetric `B`, so the direction is
    /// small wherever `M` is (in particular near a cap).
    fn smooth_direction(g: &BlockMetricProfile, seed: f64) -> Vec<DMatrix<f64>> {
        let c = g.n().torus_rank();
        (0..g.len())
            .map(|k| {
                let s = g.grid.nodes[k];
                let root = super::scheme::sqrt_psd(&g.m[k]);
                let mut b = DMatrix::zeros(c, c);
                for i in 0..c {
                    for j in i..c {
                        let v = (seed * (i + 2 * j + 1) as f64 + s).sin() * 0.3;
                        b[(i, j)] = v;
                        b[(j, i)] = v;
                    }
                }
                let mut d = &root * b * &root;
                if g.has_cap() {
                    for i in 1..c {
                        d[(0, i)] = 0.0;
                        d[(i, 0)] = 0.0;
                    }
                }
                d
            })
            .collect()
    }

    fn divided_difference(g: &BlockMetricProfile, dm: &[DMatrix<f64>], t: f64) -> EinsteinResidual {
        let p = einstein_residual_block(&perturb_block(g, dm, t)).unwrap();
        let m = einstein_residual_block(&perturb_block(g, dm, -t)).unwrap();
        let mut out = p.clone();
        for k in 0..g.len() {
            out.e1[k] = (&p.e1[k] - &m.e1[k]) / (2.0 * t);
            out.e2[k] = (p.e2[k] - m.e2[k]) / (2.0 * t);
        }
        out
    }

    fn max_diff(a: &EinsteinResidual, b: &EinsteinResidual) -> f64 {
        let mut d = 0.0f64;
        for k in a.e1_nodes.clone() {
            let skip = usize::from(a.axis && k == 0);
            let m = &a.e1[k] - &b.e1[k];
            for i in skip..m.nrows() {
                for j in skip..m.ncols() {
                    d = d.max(m[(i, j)].abs());
                }
            }
        }
        for k in a.e2_nodes.clone() {
            d = d.max((a.e2[k] - b.e2[k]).abs());
        }
        d
    }

    #[test]
    fn linearization_matches_divided_differences() {
        for (n, cap) in [(3, true), (4, true), (5, false)] {
            let g = if cap {
                DiagonalMetricProfile::black_hole(dim(n), 6.0, 120).unwrap().to_block()
            } else {
                DiagonalMetricProfile::cusp(dim(n), 0.0, 2.0, 120, 1.0).unwrap().to_block()
            };
            let dm = smooth_direction(&g, 0.7);
            let lin = linearized_residual_block(&g, &dm, None).unwrap();
            let e1 = max_diff(&lin, &divided_difference(&g, &dm, 1e-3));
            let e2 = max_diff(&lin, &divided_difference(&g, &dm, 5e-4));
            let order = (e1 / e2).log2();
            let scale = lin.max_e1().max(lin.max_e2());
            assert!(e2 < 1e-4 * scale && order > 1.9, "n={n} {e1} {e2} {order}");
        }
    }

    #[test]
    fn constant_lapse_matches_stretched_grid() {
        // (1+t)²ds² + M is ds̃² + M with s̃ = (1+t)s, and the lapse form of E1/u
        // is (1+t) times the stretched one
        let g = DiagonalMetricProfile::black_hole(dim(4), 6.0, 150).unwrap().to_block();
        let nu = vec![1.0; g.len()];
        let zero = vec![DMatrix::zeros(3, 3); g.len()];
        let lin = linearized_residual_block(&g, &zero, Some(&nu)).unwrap();
        let t = 1e-5;
        let stretched = |eps: f64| {
            let mut h = g.clone();
            h.grid.nodes.iter_mut().for_each(|s| *s *= 1.0 + eps);
            einstein_residual_block(&h).unwrap()
        };
        let (p, m) = (stretched(t), stretched(-t));
        for k in lin.e1_nodes.clone() {
            for i in usize::from(k == 0)..3 {
                let expect = (p.e1[k][(i, i)] - m.e1[k][(i, i)]) / (2.0 * t);
                assert!((lin.e1[k][(i, i)] - expect).abs() < 1e-5 * (1.0 + expect.abs()), "node {k}");
            }
        }
        for k in lin.e2_nodes.clone() {
            let expect = (p.e2[k] - m.e2[k]) / (2.0 * t);
            assert!((lin.e2[k] - expect).abs() < 1e-5 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn trivial_variation_of_cusp_is_flat() {
        let g = DiagonalMetricProfile::cusp(dim(4), 0.0, 2.0, 401, 1.0).unwrap();
        let mut u = DMatrix::zeros(3, 3);
        u[(0, 1)] = 0.2;
        u[(1, 0)] = 0.2;
        u[(0, 0)] = 0.1;
        u[(2, 2)] = -0.1;
        let dm: Vec<DMatrix<f64>> = g.r.iter().map(|r| &u * (r * r)).collect();
        let lin = linearized_residual(&g, &dm).unwrap();
        assert!(lin.max_e1() < 1e-7 && lin.max_e2() < 1e-9, "{} {}", lin.max_e1(), lin.max_e2());
    }

    #[test]
    fn axis_row_requires_closed_fiber() {
        let g = DiagonalMetricProfile::black_hole(dim(3), 6.0, 100).unwrap();
        let mut dm = vec![DMatrix::zeros(2, 2); 100];
        dm[0][(0, 0)] = 1.0;
        assert!(linearized_residual(&g, &dm).is_err());
    }

    #[test]
    fn cusp_components() {
        let n = dim(4);
        let grid = RadialGrid::uniform(Coordinate::R, 1.0, 3.0, 801, n).unwrap();
        let h = 2.0 / 800.0;
        let disc = (16.0f64 + 24.0 - 7.0).sqrt();
        let g1 = 0.5 * (-3.0 + disc);
        let mut t = InvariantTensor::zeros(grid.clone());
        for (k, &r) in grid.nodes.iter().enumerate() {
            t.h11[k] = r.powf(g1 - 2.0);
            t.h1i[k] = vec![2.0 * r + 3.0 * r.powi(-4); 3];
        }
        let res = cusp_ode_residual(&t, n).unwrap();
        for (k, &r) in grid.nodes.iter().enumerate() {
            let f = r.powf(g1);
            let scale = (g1 * (g1 - 1.0)).abs() * f + 4.0 * g1.abs() * f + 6.0 * f;
            assert!(res.eq1[k].abs() / scale < 10.0 * h * h);
            let h2 = 60.0 * r.powi(-4) + 4.0 * r * (2.0 - 12.0 * r.powi(-5)).abs() + 4.0 * (2.0 * r + 3.0 * r.powi(-4));
            assert!(res.eq2[k][0].abs() / h2 < 10.0 * h * h, "k={k} {}", res.eq2[k][0].abs() / h2 / (h * h));
        }
        // traceless trivial variation
        let mut triv = InvariantTensor::zeros(grid.clone());
        for (k, &r) in grid.nodes.iter().enumerate() {
            triv.hij[k][(0, 1)] = r * r;
            triv.hij[k][(1, 0)] = r * r;
            triv.hij[k][(0, 0)] = r * r;
            triv.hij[k][(2, 2)] = -r * r;
        }
        let res = cusp_ode_residual(&triv, n).unwrap();
        let worst = res.eq3.iter().map(|m| m.amax()).fold(0.0, f64::max);
        // roundoff of the second-difference weights: ε·r²/Δ²
        assert!(worst < 100.0 * f64::EPSILON * 9.0 / (h * h), "{worst}");
        assert!(res.eq1.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn trace_equation() {
        let n = dim(5);
        let grid = RadialGrid::uniform(Coordinate::R, 1.0, 2.0, 6, n).unwrap();
        let res = trace_ode_residual(&[3.0; 6], &grid, n).unwrap();
        assert!(res.iter().all(|v| (v + 24.0).abs() < 1e-12));
        assert!(trace_ode_residual(&[0.0; 6], &grid, n).unwrap().iter().all(|v| *v == 0.0));
        let short = RadialGrid::uniform(Coordinate::R, 1.0, 2.0, 4, n).unwrap();
        assert!(trace_ode_residual(&[0.0; 4], &short, n).is_err());
    }

    #[test]
    fn trace_identity_on_cusp() {
        let n = dim(4);
        let grid = RadialGrid::geometric(1.0, 5.0, 60, n).unwrap();
        let mut t = InvariantTensor::zeros(grid.clone());
        for (k, &r) in grid.nodes.iter().enumerate() {
            t.h11[k] = (r * 0.3).sin() / r;
            for i in 0..3 {
                for j in 0..3 {
                    t.hij[k][(i, j)] = ((i + j) as f64 + r).cos() * r;
                }
            }
        }
        let res = cusp_ode_residual(&t, n).unwrap();
        let q: Vec<f64> = (0..grid.len())
            .map(|k| grid.nodes[k].powi(2) * t.h11[k] + t.hij[k].trace() / grid.nodes[k].powi(2))
            .collect();
        let tr = trace_ode_residual(&q, &grid, n).unwrap();
        for k in 0..grid.len() {
            let sum = res.eq1[k] + res.eq3[k].trace();
            assert!((sum - tr[k]).abs() < 1e-10 * (1.0 + tr[k].abs()));
        }
    }

    #[test]
    fn divergence_kernel() {
        let n = dim(4);
        let bh = BlackHoleProfile::new(n);
        let grid = RadialGrid::geometric(bh.r_plus + 0.5, 10.0, 400, n).unwrap();
        let h: Vec<f64> = grid.nodes.iter().map(|&r| 1.0 / (v_profile(n, r).unwrap().v * r * r)).collect();
        let res = divergence_h1i_residual(&h, &bh, &grid).unwrap();
        let step = grid.nodes[1] - grid.nodes[0];
        for (k, &r) in grid.nodes.iter().enumerate() {
            let vp = v_profile(n, r).unwrap();
            let scale = (vp.dv + 2.0 * vp.v / r) * h[k];
            assert!(res[k].abs() / scale < 10.0 * step, "node {k}");
        }
        assert!(divergence_h1i_residual(&vec![0.0; 400], &bh, &grid).unwrap().iter().all(|v| *v == 0.0));
        let bad = RadialGrid::uniform(Coordinate::R, bh.r_plus, 3.0, 10, n).unwrap();
        assert!(divergence_h1i_residual(&[0.0; 10], &bh, &bad).is_err());
        // blow-up constant
        for n in 3..9 {
            let d = dim(n);
            let x = 1e-7;
            let r = r_plus(d) + x;
            let val = x / (v_from_offset(d, x) * r.powf(n as f64 - 2.0));
            assert_relative_eq!(val, 1.0 / (2.0 * (n as f64 - 1.0)), max_relative = 1e-5);
        }
    }

    #[test]
    fn div_star_components() {
        let n = dim(4);
        let bh = BlackHoleProfile::new(n);
        let grid = RadialGrid::uniform(Coordinate::R, 1.5, 3.0, 31, n).unwrap();
        let xi = GaugeField { grid: grid.clone(), xi1: vec![1.0; 31], edge_constant: 0.0, decay_constant: 0.0 };
        let d = div_star_radial(&xi, &bh).unwrap();
        let k = 10; // r = 2
        assert_relative_eq!(grid.nodes[k], 2.0, epsilon = 1e-14);
        assert_relative_eq!(d.hij[k][(0, 0)], 6.75, epsilon = 1e-12);
        assert_relative_eq!(d.hij[k][(1, 1)], 6.0, epsilon = 1e-12);
        let xi = GaugeField {
            grid: grid.clone(),
            xi1: grid.nodes.iter().map(|&r| 1.0 / v_profile(n, r).unwrap().v.sqrt()).collect(),
            edge_constant: 0.0,
            decay_constant: 0.0,
        };
        let d = div_star_radial(&xi, &bh).unwrap();
        assert!(d.h11.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gauge_round_trip() {
        for n in [3, 4, 6] {
            let d = dim(n);
            let bh = BlackHoleProfile::new(d);
            let ds = 0.003;
            let nodes: Vec<f64> = (1..=700).map(|k| bh.r_plus + 0.5 * (k as f64 * ds).powi(2)).collect();
            let grid = RadialGrid::new(Coordinate::R, nodes, d).unwrap();
            let xi_hat: Vec<f64> = grid.nodes.iter().map(|&r| (r - bh.r_plus) * (-(r - bh.r_plus)).exp()).collect();
            let field = GaugeField { grid: grid.clone(), xi1: xi_hat.clone(), edge_constant: 0.0, decay_constant: 0.0 };
            let div = div_star_radial(&field, &bh).unwrap();
            let minus: Vec<f64> = div.h11.iter().map(|v| -v).collect();
            let back = gauge_fix_xi(&minus, &bh, &grid).unwrap();
            let err = back.xi1.iter().zip(&xi_hat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "n={n} err {err}");
        }
    }

    #[test]
    fn gauge_edge_and_zero() {
        let n = dim(4);
        let bh = BlackHoleProfile::new(n);
        let nodes: Vec<f64> = (0..400).map(|k| bh.r_plus + 0.5 * (k as f64 * 0.01).powi(2)).collect();
        let grid = RadialGrid::new(Coordinate::R, nodes, n).unwrap();
        let zero = gauge_fix_xi(&vec![0.0; 400], &bh, &grid).unwrap();
        assert!(zero.xi1.iter().all(|v| *v == 0.0));
        let h: Vec<f64> = grid.nodes.iter().map(|r| r.powi(-5)).collect();
        let xi = gauge_fix_xi(&h, &bh, &grid).unwrap();
        assert!(xi.edge_constant.is_finite() && xi.edge_constant < 10.0);
    }

    #[test]
    fn explicit_element_gauge_fixes_to_trivial() {
        let n = dim(4);
        let g = DiagonalMetricProfile::black_hole(n, 10.0, 600).unwrap();
        let u = TrivialVariation::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, -0.4])).unwrap();
        let dm = explicit_kernel_block(&g, &u).unwrap();
        // h + DIV*ξ is r²(u + tr u) on the flat block and zero on θ
        for k in 1..g.len() {
            let r2 = g.r[k] * g.r[k];
            assert!(dm[k][(0, 0)].abs() < 1e-8 * r2);
            assert_relative_eq!(dm[k][(1, 1)], r2 * 1.6, max_relative = 1e-8);
            assert_relative_eq!(dm[k][(1, 2)], r2 * 0.3, max_relative = 1e-8);
        }
        let zero_tr = TrivialVariation::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).unwrap();
        let grid = RadialGrid::new(Coordinate::R, g.r[1..].to_vec(), n).unwrap();
        let h = explicit_kernel_element(n, &zero_tr, &grid).unwrap();
        assert!(h.h11.iter().all(|v| *v == 0.0));
        assert!(h.hij.iter().all(|m| m[(0, 0)] == 0.0));
    }

    #[test]
    fn sinh_identity() {
        let g = DiagonalMetricProfile::black_hole(dim(3), 20.0, 2049).unwrap();
        let r = g.node_at_r(2.0);
        let fit = sqrtdet_sinh_check(&g, 1e-4).unwrap();
        assert_relative_eq!(fit.amplitude, 1.0, epsilon = 1e-9);
        assert!(fit.max_relative_error < 1e-8);
        assert_relative_eq!(g.sqrt_det(r), (2.0 * g.grid.nodes[r]).sinh(), max_relative = 1e-9);
        let cusp = DiagonalMetricProfile::cusp(dim(3), 0.0, 1.0, 200, 1.1).unwrap();
        assert!(matches!(sqrtdet_sinh_check(&cusp, 1e-4), Err(Error::NotEinstein { .. })));
    }

    #[test]
    fn trivial_variation_block_profile() {
        let g = DiagonalMetricProfile::cusp(dim(4), 0.0, 1.5, 300, 1.0).unwrap();
        let u = TrivialVariation::new(DMatrix::from_row_slice(3, 3, &[0.1, 0.2, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0, -0.1])).unwrap();
        let VariedProfile::Block(b) = apply_trivial_variation(&g, &u).unwrap() else { panic!() };
        let r = einstein_residual_block(&b).unwrap();
        let h = g.spacing();
        assert!(r.max_e1() < 10.0 * h * h && r.max_e2() < 10.0 * h * h * 10.0);
    }

    #[test]
    fn diagonal_gradient_matches_linearization() {
        for n in [3, 5] {
            let g = DiagonalMetricProfile::black_hole(dim(n), 8.0, 90).unwrap();
            let c = n - 1;
            let scheme = DiagonalScheme::new(&g).unwrap();
            let dy = |k: usize, i: usize| ((k * 7 + i * 3) as f64 * 0.37).sin();
            let dm: Vec<DMatrix<f64>> = (0..g.len())
                .map(|k| DMatrix::from_fn(c, c, |i, j| if i == j { 2.0 * g.f[k][i].powi(2) * dy(k, i) } else { 0.0 }))
                .collect();
            let lin = linearized_residual(&g, &dm).unwrap();
            let mut parts = Vec::new();
            for k in lin.e1_nodes.clone() {
                for i in usize::from(k == 0)..c {
                    scheme.e1_gradient(k, i, &mut parts);
                    let v: f64 = parts.iter().map(|&(kk, ii, w)| w * dy(kk, ii)).sum();
                    assert!((v - lin.e1[k][(i, i)]).abs() < 1e-7 * (1.0 + v.abs()), "n={n} node {k} row {i}");
                }
            }
            for k in lin.e2_nodes.clone() {
                scheme.e2_gradient(k, &mut parts);
                let v: f64 = parts.iter().map(|&(kk, ii, w)| w * dy(kk, ii)).sum();
                assert!((v - lin.e2[k]).abs() < 1e-7 * (1.0 + v.abs()), "n={n} node {k}");
            }
        }
    }

    /// Linearized residual along `s ↦ s + η(s)` for a bump `η` supported in
    /// `[a, b]`: lapse `η′` and `dM = η M′`.
    fn diffeo_residual(g: &DiagonalMetricProfile, a: f64, b: f64) -> f64 {
        let s = &g.grid.nodes;
        let bump = |x: f64| if x > a && x < b { ((x - a) * (b - x)).powi(4) } else { 0.0 };
        let dbump = |x: f64| {
            if x > a && x < b {
                4.0 * ((x - a) * (b - x)).powi(3) * (a + b - 2.0 * x)
            } else {
                0.0
            }
        };
        let c = g.n().torus_rank();
        let deriv: Vec<Vec<f64>> = (0..c)
            .map(|i| crate::numerics::fd::derivative(s, &g.f.iter().map(|f| f[i]).collect::<Vec<_>>(), 1, 5))
            .collect();
        let dm: Vec<DMatrix<f64>> = (0..g.len())
            .map(|k| DMatrix::from_fn(c, c, |i, j| if i == j { 2.0 * bump(s[k]) * g.f[k][i] * deriv[i][k] } else { 0.0 }))
            .collect();
        let nu: Vec<f64> = s.iter().map(|&x| dbump(x)).collect();
        let lin = linearized_residual_block(&g.to_block(), &dm, Some(&nu)).unwrap();
        lin.max_e1().max(lin.max_e2())
    }

    #[test]
    fn radial_diffeomorphisms_are_in_the_kernel() {
        for n in [3, 4] {
            let errs: Vec<f64> = [200, 400, 800]
                .into_iter()
                .map(|nodes| diffeo_residual(&DiagonalMetricProfile::black_hole(dim(n), 10.0, nodes).unwrap(), 0.5, 2.0))
                .collect();
            for w in errs.windows(2) {
                let p = (w[0] / w[1]).log2();
                assert!(p > 1.7, "n={n} {errs:?}");
            }
            assert!(errs[2] < 1e-3, "n={n} {errs:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn residual_is_invariant_under_constant_rescaling(scale in 0.2f64..5.0, n in 3usize..7) {
            let g = DiagonalMetricProfile::black_hole(dim(n), 8.0, 200).unwrap();
            let mut h = g.clone();
            for row in h.f.iter_mut() {
                for v in row.iter_mut().skip(1) {
                    *v *= scale;
                }
            }
            let a = einstein_residual(&g).unwrap();
            let b = einstein_residual(&h).unwrap();
            for k in 0..g.len() {
                prop_assert!((&a.e1[k] - &b.e1[k]).amax() < 1e-8 * (1.0 + a.e1[k].amax()));
                prop_assert!((a.e2[k] - b.e2[k]).abs() < 1e-8 * (1.0 + a.e2[k].abs()));
            }
        }

        #[test]
        fn linearization_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let g = DiagonalMetricProfile::cusp(dim(4), 0.0, 1.0, 80, 1.0).unwrap().to_block();
            let d1 = smooth_direction(&g, 0.3);
            let d2 = smooth_direction(&g, 1.9);
            let comb: Vec<DMatrix<f64>> = d1.iter().zip(&d2).map(|(x, y)| x * a + y * b).collect();
            let l1 = linearized_residual_block(&g, &d1, None).unwrap();
            let l2 = linearized_residual_block(&g, &d2, None).unwrap();
            let lc = linearized_residual_block(&g, &comb, None).unwrap();
            for k in 1..g.len() - 1 {
                let e = &lc.e1[k] - (&l1.e1[k] * a + &l2.e1[k] * b);
                prop_assert!(e.amax() < 1e-8 * (1.0 + lc.e1[k].amax()));
            }
        }
    }
}
