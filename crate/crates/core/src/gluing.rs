//! The glued almost-Einstein profile (black-hole cap, collar, cusp), the
//! weight function, the weighted `*` and `**` norms, and the decay sweep of
//! the glued residual.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    r_plus, radius_for_meridian, theta_period, meridian_for_radius, v_from_offset, ArclengthMap,
    DiagonalMetricProfile, Dimension, TrivialVariation,
};
use crate::numerics::fd::uniform_derivative;
use crate::numerics::jet::Jet;
use crate::operator::{einstein_residual, EinsteinResidual, InvariantTensor};
use crate::geometry::Coordinate;

/// Smooth step, `1` below `center − width` and `0` above `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub center: f64,
    pub width: f64,
    /// Highest derivative reported.
    pub order: usize,
}

impl CutoffSpec {
    pub fn new(center: f64, width: f64, order: usize) -> Result<Self> {
        if !(width > 0.0) || !center.is_finite() {
            return Err(Error::InvalidArgument(format!("cutoff width must be positive, got {width}")));
        }
        Ok(Self { center, width, order })
    }

    pub fn value(&self, x: f64) -> f64 {
        cutoff(self, x)[0]
    }
}

/// Value and derivatives up to `spec.order` of `χ(t) = ψ(t)/(ψ(t)+ψ(1−t))`,
/// `ψ(t) = e^{−1/t}`, with `t = (center − x)/width`.
pub fn cutoff(spec: &CutoffSpec, x: f64) -> Vec<f64> {
    let m = spec.order;
    let t0 = (spec.center - x) / spec.width;
    let mut out = vec![0.0; m + 1];
    if t0 >= 1.0 {
        out[0] = 1.0;
        return out;
    }
    if t0 <= 0.0 {
        return out;
    }
    let chi = Jet::variable(t0, m).smooth_step();
    // chain rule for dt/dx = −1/width
    for (k, d) in chi.derivatives().into_iter().enumerate() {
        out[k] = d * (-1.0 / spec.width).powi(k as i32);
    }
    out
}

/// Result of [`glue`]: the profile and where its pieces sit.
#[derive(Debug, Clone, Serialize)]
pub struct GluedProfile {
    pub profile: DiagonalMetricProfile,
    pub ell: f64,
    pub big_r: f64,
    /// Inner edge of the collar; the profile is the black hole below it.
    pub collar_inner: f64,
    /// Scale of the θ-circle of the cusp piece, `√V(R)/R`.
    pub theta_scale: f64,
    pub r_max: f64,
}

impl GluedProfile {
    /// Node range whose three-point stencils touch the collar.
    pub fn collar_nodes(&self) -> std::ops::Range<usize> {
        let p = &self.profile;
        let lo = p.r.partition_point(|&r| r < self.collar_inner).saturating_sub(1);
        let hi = (p.r.partition_point(|&r| r <= self.big_r) + 1).min(p.len());
        lo..hi
    }
}

/// Collar width in `log r`, i.e. geodesic width in the cusp.
pub const COLLAR_WIDTH: f64 = 1.0;

/// Black hole on `r ≤ collar_inner`, cusp `r⁻²dr² + r²(c²dθ² + dx²)` on
/// `r ≥ R` with `c = √V(R)/R`, and the convex combination of the two
/// coordinate metrics in between. The cap radius solves `V(R) = (ℓ/β)²`.
pub fn glue(n: Dimension, ell: f64, outer_factor: f64, nodes: usize) -> Result<GluedProfile> {
    let big_r = radius_for_meridian(n, ell)?;
    glue_at(n, ell, big_r, outer_factor, nodes)
}

/// [`glue`] parametrized by the cap radius.
pub fn glue_for_radius(n: Dimension, big_r: f64, outer_factor: f64, nodes: usize) -> Result<GluedProfile> {
    let ell = meridian_for_radius(n, big_r)?;
    glue_at(n, ell, big_r, outer_factor, nodes)
}

fn glue_at(n: Dimension, ell: f64, big_r: f64, outer_factor: f64, nodes: usize) -> Result<GluedProfile> {
    let rp = r_plus(n);
    if !(big_r > rp + 1.0) {
        return Err(Error::InvalidArgument(format!("cap radius {big_r} must exceed r₊ + 1 = {}", rp + 1.0)));
    }
    if !(outer_factor > 1.0) {
        return Err(Error::InvalidArgument(format!("outer factor must exceed 1, got {outer_factor}")));
    }
    let collar_inner = (big_r * (-COLLAR_WIDTH).exp()).max(rp + 0.5 * (big_r - rp));
    let spec = CutoffSpec::new(big_r.ln(), big_r.ln() - collar_inner.ln(), 0)?;
    let v_big = v_from_offset(n, big_r - rp);
    let c = v_big.sqrt() / big_r;
    let r_max = outer_factor * big_r;
    let g_rr = move |r: f64, x: f64| {
        let chi = spec.value(r.ln());
        if chi == 1.0 {
            1.0 / v_from_offset(n, x)
        } else {
            chi / v_from_offset(n, x) + (1.0 - chi) / (r * r)
        }
    };
    let map = ArclengthMap::new(rp, r_max, move |r, x| g_rr(r, x).sqrt())?;
    let profile = DiagonalMetricProfile::from_arclength(n, &map, nodes, theta_period(n), move |r, x| {
        let chi = spec.value(r.ln());
        let v = v_from_offset(n, x);
        if chi == 1.0 {
            v.sqrt()
        } else {
            (chi * v + (1.0 - chi) * c * c * r * r).sqrt()
        }
    })?;
    Ok(GluedProfile { profile, ell, big_r, collar_inner, theta_scale: c, r_max })
}

/// `W(r) = (r/R)^{a} + r^{−a}` on the cap region `r ≤ R`, `1` beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightFunction {
    pub n: Dimension,
    pub big_r: f64,
    pub exponent: f64,
}

impl WeightFunction {
    pub fn new(n: Dimension, big_r: f64) -> Self {
        Self { n, big_r, exponent: 0.1 }
    }

    pub fn value(&self, r: f64) -> f64 {
        weight(self, r)
    }

    /// Radius `R^{1/2}` where `W` is smallest.
    pub fn center(&self) -> f64 {
        self.big_r.sqrt()
    }
}

pub fn weight(wf: &WeightFunction, r: f64) -> f64 {
    if r > wf.big_r {
        1.0
    } else {
        (r / wf.big_r).powf(wf.exponent) + r.powf(-wf.exponent)
    }
}

/// Orthonormal-frame components of a tensor field along an s-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FramedField {
    pub s: Vec<f64>,
    pub r: Vec<f64>,
    pub comps: Vec<Vec<f64>>,
}

impl FramedField {
    pub fn new(s: Vec<f64>, r: Vec<f64>, comps: Vec<Vec<f64>>) -> Result<Self> {
        if s.len() != r.len() || s.len() != comps.len() {
            return Err(Error::Grid("framed field arrays do not match".into()));
        }
        Ok(Self { s, r, comps })
    }

    /// Residual components (all `E1` entries and `E2`) on the profile grid;
    /// nodes without a residual row carry zero.
    pub fn from_residual(res: &EinsteinResidual, r: &[f64]) -> Result<Self> {
        let len = res.grid.len();
        let c = res.e1[0].nrows();
        let mut comps = vec![vec![0.0; c * c + 1]; len];
        for k in res.e1_nodes.clone() {
            comps[k][..c * c].copy_from_slice(res.e1[k].as_slice());
            if res.axis && k == 0 {
                for i in 0..c {
                    comps[k][i] = 0.0;
                    comps[k][i * c] = 0.0;
                }
            }
        }
        for k in res.e2_nodes.clone() {
            comps[k][c * c] = res.e2[k];
        }
        Self::new(res.grid.nodes.clone(), r.to_vec(), comps)
    }

    /// Frame components of a tensor on the s-grid of `g` (`h₁₁` is the `ds²`
    /// coefficient, torus entries are divided by `fᵢ fⱼ`).
    pub fn from_tensor(h: &InvariantTensor, g: &DiagonalMetricProfile) -> Result<Self> {
        if h.grid.coordinate != Coordinate::S || h.grid.nodes != g.grid.nodes {
            return Err(Error::Grid("tensor must live on the profile's s-grid".into()));
        }
        let c = g.n().torus_rank();
        let mut comps = Vec::with_capacity(g.len());
        for k in 0..g.len() {
            let f = &g.f[k];
            let mut row = Vec::with_capacity(1 + 2 * c + c * c);
            row.push(h.h11[k]);
            for i in 0..c {
                let v = if f[i] > 0.0 { h.h1i[k][i] / f[i] } else { 0.0 };
                row.push(v);
                row.push(v);
            }
            for i in 0..c {
                for j in 0..c {
                    let d = f[i] * f[j];
                    row.push(if d > 0.0 { h.hij[k][(i, j)] / d } else { 0.0 });
                }
            }
            comps.push(row);
        }
        Self::new(g.grid.nodes.clone(), g.r.clone(), comps)
    }

    fn magnitude(&self, k: usize) -> f64 {
        self.comps[k].iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Discrete weighted norms of a framed field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedNorms {
    pub sup: f64,
    pub star: f64,
    /// Local norm at each node (max of `|h|` and its derivatives up to the
    /// requested order over the window).
    pub local: Vec<f64>,
}

/// Window width in `s` of the local norm.
pub const LOCAL_WINDOW: f64 = 0.5;

/// `sup |h|` and `sup W⁻¹·‖h‖_loc`, with the local norm the max of `|h|` and
/// its finite-difference derivatives up to `order` over a window of width
/// [`LOCAL_WINDOW`].
pub fn weighted_norms(h: &FramedField, wf: &WeightFunction, order: usize) -> Result<WeightedNorms> {
    let len = h.s.len();
    if order > 2 {
        return Err(Error::InvalidArgument(format!("derivative order {order} > 2")));
    }
    if len < 5 {
        return Err(Error::Grid("need at least 5 nodes".into()));
    }
    let ds = h.s[1] - h.s[0];
    if ds > 0.5 * LOCAL_WINDOW {
        return Err(Error::Grid(format!("spacing {ds} too coarse for the window {LOCAL_WINDOW}")));
    }
    let mut pointwise: Vec<f64> = (0..len).map(|k| h.magnitude(k)).collect();
    let width = h.comps[0].len();
    for d in 1..=order {
        let mut sq = vec![0.0; len];
        for c in 0..width {
            let col: Vec<f64> = h.comps.iter().map(|row| row[c]).collect();
            for (k, v) in uniform_derivative(&col, ds, d).into_iter().enumerate() {
                sq[k] += v * v;
            }
        }
        for (p, v) in pointwise.iter_mut().zip(sq) {
            *p = p.max(v.sqrt());
        }
    }
    let half = (0.5 * LOCAL_WINDOW / ds + 1e-9).floor() as usize;
    let local: Vec<f64> = (0..len)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(len - 1);
            pointwise[lo..=hi].iter().copied().fold(0.0, f64::max)
        })
        .collect();
    let sup = (0..len).map(|k| h.magnitude(k)).fold(0.0, f64::max);
    let star = local.iter().zip(&h.r).map(|(l, &r)| l / weight(wf, r)).fold(0.0, f64::max);
    Ok(WeightedNorms { sup, star, local })
}

/// Cutoff `ρ` that is `1` away from the core (`s ≥ 2`) and from the
/// boundary torus (`s ≤ s(R) − 1`), and `0` within distance 1 of either.
pub fn trivial_cutoff(s: f64, s_big_r: f64) -> f64 {
    let core = CutoffSpec { center: -1.0, width: 1.0, order: 0 }.value(-s);
    let outer = CutoffSpec { center: s_big_r, width: 1.0, order: 0 }.value(s);
    core * outer
}

/// `h = h̄ + ρ·r²u dxdx` with `u` the trace-free part of `r⁻²hᵢⱼ` at the
/// node nearest `R^{1/2}`.
#[derive(Debug, Clone)]
pub struct DoubleStarDecomposition {
    pub h_bar: InvariantTensor,
    pub u: TrivialVariation,
    pub c_k_index: usize,
    pub rho: Vec<f64>,
}

pub(crate) fn s_at_r(g: &DiagonalMetricProfile, r0: f64) -> f64 {
    let k = g.node_at_r(r0);
    if k == 0 || g.r[k] == r0 {
        return g.grid.nodes[k];
    }
    let t = (r0 - g.r[k - 1]) / (g.r[k] - g.r[k - 1]);
    g.grid.nodes[k - 1] + t * (g.grid.nodes[k] - g.grid.nodes[k - 1])
}

pub fn double_star_decompose(h: &InvariantTensor, g: &DiagonalMetricProfile, wf: &WeightFunction) -> Result<DoubleStarDecomposition> {
    h.validate()?;
    if h.grid.nodes != g.grid.nodes {
        return Err(Error::Grid("tensor must live on the profile's s-grid".into()));
    }
    let centre = wf.center();
    if !(centre >= g.r[0] && centre <= g.r[g.len() - 1]) {
        return Err(Error::Grid(format!("grid does not cover r = {centre}")));
    }
    let ck = g.node_at_r(centre);
    let ck = if ck > 0 && (g.r[ck - 1] - centre).abs() < (g.r[ck] - centre).abs() { ck - 1 } else { ck };
    let c = g.n().torus_rank();
    let r2 = g.r[ck] * g.r[ck];
    let b = (&h.hij[ck] + h.hij[ck].transpose()) * (0.5 / r2);
    let u = &b - DMatrix::identity(c, c) * (b.trace() / c as f64);
    let s_big = s_at_r(g, wf.big_r.min(g.r[g.len() - 1]));
    let rho: Vec<f64> = g.grid.nodes.iter().map(|&s| trivial_cutoff(s, s_big)).collect();
    let mut h_bar = h.clone();
    for k in 0..g.len() {
        h_bar.hij[k] -= &u * (rho[k] * g.r[k] * g.r[k]);
    }
    Ok(DoubleStarDecomposition { h_bar, u: TrivialVariation::new(u)?, c_k_index: ck, rho })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    pub sup: f64,
    pub star: f64,
    pub double_star: f64,
    /// `‖h̄‖_* + |u|` for the decomposition alone.
    pub split: f64,
    pub u_matrix: Vec<Vec<f64>>,
    pub c_k_index: usize,
}

/// `min(‖h̄‖_* + |u|, ‖h‖_*)`: the smaller of the decomposition from
/// [`double_star_decompose`] and the trivial one `u = 0`.
pub fn double_star_norm(h: &InvariantTensor, g: &DiagonalMetricProfile, wf: &WeightFunction, order: usize) -> Result<NormReport> {
    let dec = double_star_decompose(h, g, wf)?;
    let plain = weighted_norms(&FramedField::from_tensor(h, g)?, wf, order)?;
    let bar = weighted_norms(&FramedField::from_tensor(&dec.h_bar, g)?, wf, order)?;
    let split = bar.star + dec.u.norm();
    let u = dec.u.matrix();
    Ok(NormReport {
        sup: plain.sup,
        star: plain.star,
        double_star: split.min(plain.star),
        split,
        u_matrix: (0..u.nrows()).map(|i| u.row(i).iter().copied().collect()).collect(),
        c_k_index: dec.c_k_index,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub ell: f64,
    pub big_r: f64,
    pub star_residual: f64,
    pub sup_residual: f64,
    /// Largest residual outside the collar.
    pub residual_off_collar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub n: usize,
    pub nodes: usize,
    pub outer_factor: f64,
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log star_residual` against `log R`.
    pub slope: f64,
}

/// Star-weighted residual (order 0) of the glued profile over the nodes
/// whose stencils touch the collar.
pub fn glued_residual(glued: &GluedProfile) -> Result<SweepRow> {
    let p = &glued.profile;
    let n = p.n();
    let res = einstein_residual(p)?;
    let field = FramedField::from_residual(&res, &p.r)?;
    let range = glued.collar_nodes();
    let restricted = FramedField::new(
        field.s[range.clone()].to_vec(),
        field.r[range.clone()].to_vec(),
        field.comps[range.clone()].to_vec(),
    )?;
    let norms = weighted_norms(&restricted, &WeightFunction::new(n, glued.big_r), 0)?;
    let off = (0..p.len())
        .filter(|k| !range.contains(k) && field.r[*k] > glued.collar_inner)
        .map(|k| field.magnitude(k))
        .fold(0.0, f64::max);
    Ok(SweepRow { ell: glued.ell, big_r: glued.big_r, star_residual: norms.star, sup_residual: norms.sup, residual_off_collar: off })
}

fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// Glued residual for each cap radius, with the log-log slope against `R`.
pub fn residual_decay_sweep(n: Dimension, radii: &[f64], outer_factor: f64, nodes: usize) -> Result<SweepReport> {
    if radii.len() < 3 {
        return Err(Error::InvalidArgument("need at least three radii".into()));
    }
    let (lo, hi) = radii.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    // the standard sweep R ∈ {8, …, 64} spans a factor of 8
    if hi / lo < 8.0 - 1e-9 {
        return Err(Error::InvalidArgument("radii must spread over about a decade".into()));
    }
    let rows = radii
        .iter()
        .map(|&r| glue_for_radius(n, r, outer_factor, nodes).and_then(|g| glued_residual(&g)))
        .collect::<Result<Vec<_>>>()?;
    let slope = log_slope(&rows.iter().map(|r| r.big_r).collect::<Vec<_>>(), &rows.iter().map(|r| r.star_residual).collect::<Vec<_>>());
    Ok(SweepReport { n: n.get(), nodes, outer_factor, rows, slope })
}

/// [`residual_decay_sweep`] for given meridian lengths.
pub fn residual_decay_sweep_ell(n: Dimension, ells: &[f64], outer_factor: f64, nodes: usize) -> Result<SweepReport> {
    let radii = ells.iter().map(|&l| radius_for_meridian(n, l)).collect::<Result<Vec<_>>>()?;
    residual_decay_sweep(n, &radii, outer_factor, nodes)
}
