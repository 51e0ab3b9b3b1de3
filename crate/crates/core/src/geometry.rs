//! Closed-form model metrics: the black-hole cap `V⁻¹dr² + V dθ² + r² dx²`
//! with `V = r² − 2 r^{3−n}`, the hyperbolic cusp `r⁻²dr² + r² dx²`, their
//! torus-invariant profiles in the arclength coordinate, and the cap sizing
//! formulas.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::quad;

/// Manifold dimension `n ≥ 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Dimension(usize);

impl Dimension {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidDimension(n));
        }
        Ok(Self(n))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    /// Rank of the torus block, `n − 1`.
    pub fn torus_rank(self) -> usize {
        self.0 - 1
    }
}

/// Horizon radius `r₊ = 2^{1/(n−1)}`, the zero of `V`.
pub fn r_plus(n: Dimension) -> f64 {
    2f64.powf(1.0 / (n.as_f64() - 1.0))
}

/// Period `β = 4π / ((n−1) r₊)` of the angle θ that closes the cap smoothly.
pub fn theta_period(n: Dimension) -> f64 {
    4.0 * PI / ((n.as_f64() - 1.0) * r_plus(n))
}

/// `V(r)` and its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VProfile {
    pub v: f64,
    pub dv: f64,
    pub d2v: f64,
}

pub fn v_profile(n: Dimension, r: f64) -> Result<VProfile> {
    if r <= 0.0 || !r.is_finite() {
        return Err(Error::OutOfDomain { r, min: 0.0 });
    }
    let nf = n.as_f64();
    Ok(VProfile {
        v: r * r - 2.0 * r.powf(3.0 - nf),
        dv: 2.0 * r + 2.0 * (nf - 3.0) * r.powf(2.0 - nf),
        d2v: 2.0 - 2.0 * (nf - 3.0) * (nf - 2.0) * r.powf(1.0 - nf),
    })
}

/// `V(r₊ + x)` evaluated without cancellation for small offsets `x ≥ 0`.
pub fn v_from_offset(n: Dimension, x: f64) -> f64 {
    let rp = r_plus(n);
    let nf = n.as_f64();
    let r = rp + x;
    // r^{n-1} - 2 = 2 (exp((n-1) log(1 + x/r₊)) - 1)
    r.powf(3.0 - nf) * 2.0 * ((nf - 1.0) * (x / rp).ln_1p()).exp_m1()
}

/// Sectional curvatures of the black-hole metric: `K₁₂` (r–θ plane),
/// `K₁ᵢ = K₂ᵢ` (radial or θ against a flat direction) and `Kᵢⱼ` (two flat
/// directions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectionalCurvatures {
    pub k12: f64,
    pub k1i: f64,
    pub kij: f64,
}

impl SectionalCurvatures {
    /// Ricci eigenvalues `(Ric₁₁, Ric₂₂, Ricᵢᵢ)` in the orthonormal frame.
    pub fn ricci(&self, n: Dimension) -> (f64, f64, f64) {
        let m = n.as_f64() - 2.0;
        (
            self.k12 + m * self.k1i,
            self.k12 + m * self.k1i,
            2.0 * self.k1i + (m - 1.0) * self.kij,
        )
    }
}

pub fn sectional_curvatures(n: Dimension, r: f64) -> Result<SectionalCurvatures> {
    let rp = r_plus(n);
    if !(r >= rp * (1.0 - 1e-15)) {
        return Err(Error::OutOfDomain { r, min: rp });
    }
    let nf = n.as_f64();
    let q = r.powf(1.0 - nf);
    Ok(SectionalCurvatures {
        k12: -1.0 + (nf - 3.0) * (nf - 2.0) * q,
        k1i: -1.0 - (nf - 3.0) * q,
        kij: -1.0 + 2.0 * q,
    })
}

/// Components of `g_BH − g_hyp` in the unit frame of `g_hyp` (θ identified
/// with x₂) together with their tensor norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricGap {
    pub radial: f64,
    pub angular: f64,
    pub norm: f64,
}

pub fn metric_gap(n: Dimension, r: f64) -> Result<MetricGap> {
    let rp = r_plus(n);
    if r <= rp + 1.0 {
        return Err(Error::OutOfDomain { r, min: rp + 1.0 });
    }
    let v = v_profile(n, r)?.v;
    let q = 2.0 * r.powf(1.0 - n.as_f64());
    let radial = q * r * r / v;
    let angular = -q;
    Ok(MetricGap { radial, angular, norm: radial.hypot(angular) })
}

/// Volume of a cusp `[0,∞) × T` with metric `ds² + e^{−2s} g_flat` relative
/// to its boundary torus: `1/(n−1)`.
pub fn cusp_volume_ratio(n: Dimension) -> f64 {
    1.0 / (n.as_f64() - 1.0)
}

/// Volume of the unit ball in ℝᵏ via `ω_k = ω_{k−2} · 2π / k`.
pub fn unit_ball_volume(k: usize) -> f64 {
    match k {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(k - 2) * 2.0 * PI / k as f64,
    }
}

/// Upper bound `2 (V / (ω_{n−1} ι^{n−1}) + 1) ι` on the diameter of a cusp
/// torus of a hyperbolic manifold with volume `V` and injectivity radius `ι`
/// on the torus.
pub fn torus_diameter_bound(n: Dimension, volume: f64, inj: f64) -> Result<f64> {
    if volume <= 0.0 || inj <= 0.0 {
        return Err(Error::InvalidArgument("volume and injectivity radius must be positive".into()));
    }
    let k = n.torus_rank();
    Ok(2.0 * (volume / (unit_ball_volume(k) * inj.powi(k as i32)) + 1.0) * inj)
}

/// Cap radius `R ≥ r₊` with `V(R) = (ℓ/β)²`, so the θ-circle at `r = R` has
/// length ℓ.
pub fn radius_for_meridian(n: Dimension, ell: f64) -> Result<f64> {
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(Error::InvalidArgument(format!("meridian length must be positive, got {ell}")));
    }
    let beta = theta_period(n);
    let target = (ell / beta).powi(2);
    let rp = r_plus(n);
    let (mut lo, mut hi) = (0.0f64, (ell / beta + 2.0).max(2.0));
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = v_from_offset(n, x) - target;
        if f.abs() <= 1e-15 * target {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dv = v_profile(n, rp + x)?.dv;
        let mut next = x - f / dv;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * (rp + x) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(rp + x)
}

/// Meridian length `ℓ = β √V(R)` belonging to a cap radius.
pub fn meridian_for_radius(n: Dimension, big_r: f64) -> Result<f64> {
    let rp = r_plus(n);
    if big_r < rp {
        return Err(Error::OutOfDomain { r: big_r, min: rp });
    }
    Ok(theta_period(n) * v_from_offset(n, big_r - rp).sqrt())
}

/// Black-hole data for one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlackHoleProfile {
    pub n: Dimension,
    pub r_plus: f64,
    pub beta: f64,
}

impl BlackHoleProfile {
    pub fn new(n: Dimension) -> Self {
        Self { n, r_plus: r_plus(n), beta: theta_period(n) }
    }

    pub fn v(&self, r: f64) -> Result<VProfile> {
        v_profile(self.n, r)
    }
}

/// Radial coordinate a grid is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Coordinate {
    /// The area-type coordinate `r` of the model metrics.
    R,
    /// Arclength `s` from the core (or from the first node on a cusp).
    S,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialGrid {
    pub coordinate: Coordinate,
    pub nodes: Vec<f64>,
    pub n: Dimension,
}

impl RadialGrid {
    pub fn new(coordinate: Coordinate, nodes: Vec<f64>, n: Dimension) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Grid(format!("need at least 3 nodes, got {}", nodes.len())));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Grid("nodes must be strictly increasing".into()));
        }
        if coordinate == Coordinate::R && !(nodes[0] > 0.0) {
            return Err(Error::OutOfDomain { r: nodes[0], min: 0.0 });
        }
        Ok(Self { coordinate, nodes, n })
    }

    pub fn uniform(coordinate: Coordinate, a: f64, b: f64, count: usize, n: Dimension) -> Result<Self> {
        if count < 3 {
            return Err(Error::Grid(format!("need at least 3 nodes, got {count}")));
        }
        let h = (b - a) / (count - 1) as f64;
        let mut nodes: Vec<f64> = (0..count).map(|k| a + h * k as f64).collect();
        nodes[count - 1] = b;
        Self::new(coordinate, nodes, n)
    }

    /// Nodes `a·(b/a)^{k/(count−1)}`.
    pub fn geometric(a: f64, b: f64, count: usize, n: Dimension) -> Result<Self> {
        if !(a > 0.0) || count < 3 {
            return Err(Error::Grid("geometric grid needs a > 0 and ≥ 3 nodes".into()));
        }
        let q = (b / a).ln() / (count - 1) as f64;
        let mut nodes: Vec<f64> = (0..count).map(|k| a * (q * k as f64).exp()).collect();
        nodes[count - 1] = b;
        Self::new(Coordinate::R, nodes, n)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Common spacing if the grid is uniform to 1e−9 relative.
    pub fn uniform_spacing(&self) -> Option<f64> {
        let n = self.nodes.len();
        let h = (self.nodes[n - 1] - self.nodes[0]) / (n - 1) as f64;
        self.nodes
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1e-300))
            .then_some(h)
    }
}

type SqrtGrr = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

const PANEL: f64 = 0.05;
const QUAD_TOL: f64 = 1e-14;

/// Arclength `s(r) = ∫_{r₊}^{r} √g_rr` for a radial metric component that
/// may blow up like `(r − r₊)^{−1}` at the core. The integral is taken in
/// `σ` with `r = r₊ + σ²/2`, where the integrand `σ √g_rr` stays analytic.
#[derive(Clone)]
pub struct ArclengthMap {
    r_plus: f64,
    sigma: Vec<f64>,
    s: Vec<f64>,
    sqrt_grr: SqrtGrr,
}

impl std::fmt::Debug for ArclengthMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ArclengthMap")
            .field("r_plus", &self.r_plus)
            .field("sigma_max", self.sigma.last().unwrap())
            .field("s_max", self.s.last().unwrap())
            .finish()
    }
}

impl ArclengthMap {
    /// `sqrt_grr(r, x)` receives both `r` and the exact offset `x = r − r₊`.
    pub fn new<F>(r_plus: f64, r_max: f64, sqrt_grr: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        if !(r_max > r_plus) {
            return Err(Error::OutOfDomain { r: r_max, min: r_plus });
        }
        let sigma_max = (2.0 * (r_max - r_plus)).sqrt();
        let panels = (sigma_max / PANEL).ceil().max(1.0) as usize;
        let h = sigma_max / panels as f64;
        let mut sigma: Vec<f64> = (0..=panels).map(|j| h * j as f64).collect();
        sigma[panels] = sigma_max;
        let mut map = Self { r_plus, sigma, s: vec![0.0; panels + 1], sqrt_grr: Arc::new(sqrt_grr) };
        for j in 0..panels {
            let piece = map.integral(map.sigma[j], map.sigma[j + 1])?;
            if !(piece > 0.0) {
                return Err(Error::Quadrature("arclength is not increasing".into()));
            }
            map.s[j + 1] = map.s[j] + piece;
        }
        Ok(map)
    }

    /// Arclength map of the black-hole metric, `ds = V^{−1/2} dr`.
    pub fn black_hole(n: Dimension, r_max: f64) -> Result<Self> {
        Self::new(r_plus(n), r_max, move |_, x| 1.0 / v_from_offset(n, x).sqrt())
    }

    fn density(&self, sigma: f64) -> f64 {
        let x = 0.5 * sigma * sigma;
        sigma * (self.sqrt_grr)(self.r_plus + x, x)
    }

    fn integral(&self, a: f64, b: f64) -> Result<f64> {
        quad::integrate(|t| self.density(t), a, b, QUAD_TOL)
    }

    pub fn r_plus(&self) -> f64 {
        self.r_plus
    }

    pub fn r_max(&self) -> f64 {
        self.r_plus + 0.5 * self.sigma_max().powi(2)
    }

    fn sigma_max(&self) -> f64 {
        *self.sigma.last().unwrap()
    }

    pub fn s_max(&self) -> f64 {
        *self.s.last().unwrap()
    }

    fn s_of_sigma(&self, sigma: f64) -> Result<f64> {
        let last = self.sigma.len() - 1;
        let h = self.sigma[1];
        let j = ((sigma / h).floor() as usize).min(last - 1);
        Ok(self.s[j] + self.integral(self.sigma[j], sigma)?)
    }

    pub fn s_of_r(&self, r: f64) -> Result<f64> {
        if r < self.r_plus || r > self.r_max() * (1.0 + 1e-14) {
            return Err(Error::OutOfDomain { r, min: self.r_plus });
        }
        self.s_of_sigma((2.0 * (r - self.r_plus)).sqrt())
    }

    /// Offset `x = r(s) − r₊`, computed without cancellation near the core.
    pub fn offset_of_s(&self, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Ok(0.0);
        }
        let smax = self.s_max();
        if s > smax * (1.0 + 1e-14) {
            return Err(Error::InvalidArgument(format!("arclength {s} beyond table end {smax}")));
        }
        let j = match self.s.partition_point(|&v| v <= s) {
            0 => 0,
            p => (p - 1).min(self.s.len() - 2),
        };
        let (mut lo, mut hi) = (self.sigma[j], self.sigma[j + 1]);
        let frac = (s - self.s[j]) / (self.s[j + 1] - self.s[j]);
        let mut sigma = lo + frac * (hi - lo);
        for _ in 0..100 {
            let f = self.s[j] + self.integral(self.sigma[j], sigma)? - s;
            if f > 0.0 {
                hi = sigma;
            } else {
                lo = sigma;
            }
            let d = self.density(sigma);
            let mut next = if d > 0.0 { sigma - f / d } else { f64::NAN };
            if !(next >= lo && next <= hi) {
                next = 0.5 * (lo + hi);
            }
            let done = (next - sigma).abs() <= 1e-15 * sigma.max(1.0);
            sigma = next;
            if done || f == 0.0 {
                break;
            }
        }
        Ok(0.5 * sigma * sigma)
    }

    pub fn r_of_s(&self, s: f64) -> Result<f64> {
        Ok(self.r_plus + self.offset_of_s(s)?)
    }
}

/// Arclength samples `s(r)` on an r-grid, together with the map itself
/// (whose [`ArclengthMap::r_of_s`] is the inverse).
pub fn arclength_map(profile: &BlackHoleProfile, grid: &RadialGrid) -> Result<(Vec<f64>, ArclengthMap)> {
    if grid.coordinate != Coordinate::R {
        return Err(Error::Grid("arclength_map needs an r-grid".into()));
    }
    let map = ArclengthMap::black_hole(profile.n, *grid.nodes.last().unwrap())?;
    let s: Vec<f64> = grid.nodes.iter().map(|&r| map.s_of_r(r)).collect::<Result<_>>()?;
    if s.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Quadrature("arclength samples are not monotone".into()));
    }
    Ok((s, map))
}

/// A torus-invariant metric `ds² + Σᵢ fᵢ(s)² dxᵢ²` on a uniform s-grid.
///
/// `f[k][0]` is the θ-fiber radius (zero at a cap node), `f[k][1..]` the
/// warpings of the flat directions; `r[k]` is the model radius at node `k`,
/// used to place trivial variations and weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagonalMetricProfile {
    pub grid: RadialGrid,
    pub r: Vec<f64>,
    pub f: Vec<Vec<f64>>,
    pub theta_period: f64,
}

impl DiagonalMetricProfile {
    pub fn new(grid: RadialGrid, r: Vec<f64>, f: Vec<Vec<f64>>, theta_period: f64) -> Result<Self> {
        if grid.coordinate != Coordinate::S {
            return Err(Error::Grid("metric profiles live on an s-grid".into()));
        }
        if grid.uniform_spacing().is_none() {
            return Err(Error::Grid("metric profiles need a uniform s-grid".into()));
        }
        let m = grid.n.torus_rank();
        if r.len() != grid.len() || f.len() != grid.len() || f.iter().any(|row| row.len() != m) {
            return Err(Error::Grid("profile arrays do not match the grid".into()));
        }
        for (k, row) in f.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                let cap_ok = k == 0 && i == 0 && v == 0.0;
                if !(v > 0.0) && !cap_ok {
                    return Err(Error::NotPositiveDefinite { node: k });
                }
            }
        }
        Ok(Self { grid, r, f, theta_period })
    }

    /// Samples a metric `g_rr dr² + g_θθ dθ² + r² dx²` on `nodes` points
    /// uniform in its arclength; `f_theta(r, x)` returns `√g_θθ`.
    pub fn from_arclength<F>(n: Dimension, map: &ArclengthMap, nodes: usize, theta_period: f64, f_theta: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64,
    {
        let grid = RadialGrid::uniform(Coordinate::S, 0.0, map.s_max(), nodes, n)?;
        let m = n.torus_rank();
        let mut r = Vec::with_capacity(nodes);
        let mut f = Vec::with_capacity(nodes);
        for &s in &grid.nodes {
            let x = map.offset_of_s(s)?;
            let rr = map.r_plus() + x;
            let mut row = vec![rr; m];
            row[0] = if x == 0.0 { 0.0 } else { f_theta(rr, x) };
            r.push(rr);
            f.push(row);
        }
        Self::new(grid, r, f, theta_period)
    }

    /// Black-hole cap on `r ∈ [r₊, r_max]`, sampled uniformly in `s`.
    pub fn black_hole(n: Dimension, r_max: f64, nodes: usize) -> Result<Self> {
        let map = ArclengthMap::black_hole(n, r_max)?;
        Self::from_arclength(n, &map, nodes, theta_period(n), |_, x| v_from_offset(n, x).sqrt())
    }

    /// Cusp `ds² + e^{2·rate·s} Σ dxᵢ²` on `s ∈ [s0, s1]` (`rate = 1` is
    /// hyperbolic); the model radius is `r = e^s`.
    pub fn cusp(n: Dimension, s0: f64, s1: f64, nodes: usize, rate: f64) -> Result<Self> {
        let grid = RadialGrid::uniform(Coordinate::S, s0, s1, nodes, n)?;
        let m = n.torus_rank();
        let r: Vec<f64> = grid.nodes.iter().map(|s| s.exp()).collect();
        let f = grid.nodes.iter().map(|s| vec![(rate * s).exp(); m]).collect();
        Self::new(grid, r, f, theta_period(n))
    }

    pub fn n(&self) -> Dimension {
        self.grid.n
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.grid.nodes[1] - self.grid.nodes[0]
    }

    /// True when the θ-fiber closes at the first node.
    pub fn has_cap(&self) -> bool {
        self.f[0][0] == 0.0
    }

    /// `√det M = Π fᵢ` at node `k`.
    pub fn sqrt_det(&self, k: usize) -> f64 {
        self.f[k].iter().product()
    }

    /// Torus block `M = diag(fᵢ²)` at node `k`.
    pub fn torus_matrix(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.f[k].len(),
            self.f[k].iter().map(|v| v * v),
        ))
    }

    /// Sub-profile on nodes `range` (the grid is re-based but keeps its
    /// s-values).
    pub fn restrict(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let grid = RadialGrid::new(Coordinate::S, self.grid.nodes[range.clone()].to_vec(), self.n())?;
        Self::new(grid, self.r[range.clone()].to_vec(), self.f[range].to_vec(), self.theta_period)
    }

    /// First node with `r ≥ r0`.
    pub fn node_at_r(&self, r0: f64) -> usize {
        self.r.partition_point(|&r| r < r0).min(self.len() - 1)
    }

    pub fn to_block(&self) -> BlockMetricProfile {
        BlockMetricProfile {
            grid: self.grid.clone(),
            r: self.r.clone(),
            m: (0..self.len()).map(|k| self.torus_matrix(k)).collect(),
            theta_period: self.theta_period,
        }
    }

    /// Cone-angle defect `f₂′(0)·β/(2π) − 1` at a cap (zero for a smooth
    /// closure). Uses the odd-parity stencil `(8f(Δ) − f(2Δ))/(6Δ)`.
    pub fn cone_angle_defect(&self) -> Option<f64> {
        if !self.has_cap() {
            return None;
        }
        let h = self.spacing();
        let slope = (8.0 * self.f[1][0] - self.f[2][0]) / (6.0 * h);
        Some(slope * self.theta_period / (2.0 * PI) - 1.0)
    }

    /// Sectional curvatures from the warpings by finite differences (fourth
    /// order, second order next to the ends): `K_{s,i} = −fᵢ″/fᵢ`,
    /// `K_{ij} = −fᵢ′fⱼ′/(fᵢfⱼ)`, at nodes 1..N−1.
    pub fn curvatures(&self) -> ProfileCurvatures {
        let h = self.spacing();
        let m = self.n().torus_rank();
        let len = self.len();
        let mut radial = Vec::new();
        let mut planes = Vec::new();
        for k in 1..len - 1 {
            let wide = k >= 2 && k + 2 < len;
            let mut d1 = vec![0.0; m];
            let mut rad = vec![0.0; m];
            for i in 0..m {
                let f = |j: usize| self.f[j][i];
                let (first, second) = if wide {
                    (
                        (-f(k + 2) + 8.0 * f(k + 1) - 8.0 * f(k - 1) + f(k - 2)) / (12.0 * h),
                        (-f(k + 2) + 16.0 * f(k + 1) - 30.0 * f(k) + 16.0 * f(k - 1) - f(k - 2)) / (12.0 * h * h),
                    )
                } else {
                    ((f(k + 1) - f(k - 1)) / (2.0 * h), (f(k + 1) - 2.0 * f(k) + f(k - 1)) / (h * h))
                };
                d1[i] = first;
                rad[i] = -second / f(k);
            }
            let mut kp = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        kp[(i, j)] = -d1[i] * d1[j] / (self.f[k][i] * self.f[k][j]);
                    }
                }
            }
            radial.push(rad);
            planes.push(kp);
        }
        ProfileCurvatures { first_node: 1, radial, planes }
    }
}

/// Curvatures of a diagonal profile at nodes `first_node ..`.
#[derive(Debug, Clone)]
pub struct ProfileCurvatures {
    pub first_node: usize,
    /// `radial[j][i]`: plane spanned by ∂s and the i-th torus direction.
    pub radial: Vec<Vec<f64>>,
    /// `planes[j][(i, l)]`: plane of two torus directions (diagonal unused).
    pub planes: Vec<DMatrix<f64>>,
}

impl ProfileCurvatures {
    /// Largest `|K + 1|` over nodes `range` (indices into the profile).
    pub fn max_deviation_from_hyperbolic(&self, range: std::ops::Range<usize>) -> f64 {
        let mut worst = 0.0f64;
        for k in range {
            let j = k - self.first_node;
            for &v in &self.radial[j] {
                worst = worst.max((v + 1.0).abs());
            }
            let p = &self.planes[j];
            for a in 0..p.nrows() {
                for b in 0..p.ncols() {
                    if a != b {
                        worst = worst.max((p[(a, b)] + 1.0).abs());
                    }
                }
            }
        }
        worst
    }
}

/// A torus-invariant metric `ds² + M(s)` with a full symmetric torus block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMetricProfile {
    pub grid: RadialGrid,
    pub r: Vec<f64>,
    pub m: Vec<DMatrix<f64>>,
    pub theta_period: f64,
}

impl BlockMetricProfile {
    pub fn n(&self) -> Dimension {
        self.grid.n
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.grid.nodes[1] - self.grid.nodes[0]
    }

    pub fn has_cap(&self) -> bool {
        self.m[0][(0, 0)] == 0.0
    }
}

/// Symmetric `(n−1)×(n−1)` matrix `u` acting by `g ↦ g + r² uᵢⱼ dxᵢdxⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrivialVariation {
    u: DMatrix<f64>,
    trace: f64,
}

impl TrivialVariation {
    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        if !u.is_square() {
            return Err(Error::InvalidArgument("trivial variation must be square".into()));
        }
        let scale = u.amax().max(1.0);
        if (&u - u.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidArgument("trivial variation must be symmetric".into()));
        }
        let trace = u.trace();
        Ok(Self { u, trace })
    }

    pub fn zero(rank: usize) -> Self {
        Self { u: DMatrix::zeros(rank, rank), trace: 0.0 }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.u.norm()
    }

    /// Trace-free variations are Einstein variations of the cusp.
    pub fn is_einstein(&self) -> bool {
        self.trace.abs() <= 1e-12 * self.u.amax().max(1.0)
    }

    pub fn is_diagonal(&self) -> bool {
        let m = self.u.nrows();
        (0..m).all(|i| (0..m).all(|j| i == j || self.u[(i, j)] == 0.0))
    }
}

/// Result of adding a trivial variation to a diagonal profile.
#[derive(Debug, Clone)]
pub enum VariedProfile {
    Diagonal(DiagonalMetricProfile),
    Block(BlockMetricProfile),
}

pub fn apply_trivial_variation(g: &DiagonalMetricProfile, u: &TrivialVariation) -> Result<VariedProfile> {
    let m = g.n().torus_rank();
    if u.matrix().nrows() != m {
        return Err(Error::InvalidArgument(format!("variation must be {m}x{m}")));
    }
    if u.is_diagonal() {
        let mut f = g.f.clone();
        for (k, row) in f.iter_mut().enumerate() {
            let r2 = g.r[k] * g.r[k];
            for (i, v) in row.iter_mut().enumerate() {
                let sq = *v * *v + r2 * u.matrix()[(i, i)];
                if !(sq > 0.0) && !(k == 0 && i == 0 && sq == 0.0) {
                    return Err(Error::NotPositiveDefinite { node: k });
                }
                *v = sq.max(0.0).sqrt();
            }
        }
        return Ok(VariedProfile::Diagonal(DiagonalMetricProfile::new(
            g.grid.clone(),
            g.r.clone(),
            f,
            g.theta_period,
        )?));
    }
    let mut ms = Vec::with_capacity(g.len());
    for k in 0..g.len() {
        let mk = g.torus_matrix(k) + u.matrix() * (g.r[k] * g.r[k]);
        if mk.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite { node: k });
        }
        ms.push(mk);
    }
    Ok(VariedProfile::Block(BlockMetricProfile {
        grid: g.grid.clone(),
        r: g.r.clone(),
        m: ms,
        theta_period: g.theta_period,
    }))
}

/// Flat torus given by a lattice basis (columns); column 0 is the meridian.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTorusData {
    basis: DMatrix<f64>,
}

impl FlatTorusData {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        if !basis.is_square() || basis.determinant().abs() < 1e-300 {
            return Err(Error::InvalidArgument("torus basis must be square and nonsingular".into()));
        }
        Ok(Self { basis })
    }

    /// Rectangular torus with the given side lengths (meridian first).
    pub fn rectangular(sides: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(sides)))
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn meridian_length(&self) -> f64 {
        self.basis.column(0).norm()
    }

    /// Gram matrix of the basis.
    pub fn gram(&self) -> DMatrix<f64> {
        self.basis.transpose() * &self.basis
    }
}
