//! Euler equations `r²f″ + a r f′ + b f = φ`, their indicial roots, the
//! exponent bookkeeping of invariant variations of the cusp, and a seeded
//! numerical harness for the a-priori decay estimate on the black-hole end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{r_plus, Coordinate, Dimension, RadialGrid};
use crate::numerics::fd::fornberg_weights;
use crate::numerics::BandMatrix;

/// Distance below which an exponent counts as resonant or on a window edge.
pub const RESONANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerODE {
    pub a: f64,
    pub b: f64,
}

impl EulerODE {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    /// `γ(γ−1) + aγ + b`, the image of `r^γ` divided by `r^γ`.
    pub fn indicial(&self, gamma: f64) -> f64 {
        gamma * (gamma - 1.0) + self.a * gamma + self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicialRoots {
    pub gamma1: f64,
    pub gamma2: f64,
    pub discriminant: f64,
}

/// Real roots of `γ² + (a−1)γ + b = 0`, larger first.
pub fn indicial_roots(ode: EulerODE) -> Result<IndicialRoots> {
    let p = ode.a - 1.0;
    let disc = p * p - 4.0 * ode.b;
    if !disc.is_finite() || disc < 0.0 {
        return Err(Error::ComplexRoots { discriminant: disc });
    }
    let sq = disc.sqrt();
    // avoid cancellation: q carries the sign of -p, the other root is b/q
    let q = -0.5 * (p + if p >= 0.0 { sq } else { -sq });
    let (x, y) = if q == 0.0 { (0.0, 0.0) } else { (q, ode.b / q) };
    Ok(IndicialRoots { gamma1: x.max(y), gamma2: x.min(y), discriminant: disc })
}

/// Coefficient `c` such that `c·r^δ` solves the equation with right side
/// `r^δ`.
pub fn euler_particular_coefficient(ode: EulerODE, delta: f64) -> Result<f64> {
    if let Ok(roots) = indicial_roots(ode) {
        for root in [roots.gamma1, roots.gamma2] {
            if (delta - root).abs() < RESONANCE_TOL {
                return Err(Error::Resonance { delta, root });
            }
        }
    }
    let d = ode.indicial(delta);
    if d == 0.0 {
        return Err(Error::Resonance { delta, root: delta });
    }
    Ok(1.0 / d)
}

/// Equations of the invariant components of a variation of the cusp:
/// `r²h₁₁` and the trace obey (I)/(IV), `h₁ᵢ` obeys (II), and the trace-free
/// part of `r⁻²hᵢⱼ` obeys (III).
pub fn cusp_block_odes(n: Dimension) -> [(CuspBlock, EulerODE); 3] {
    let nf = n.as_f64();
    [
        (CuspBlock::Radial, EulerODE::new(nf, -2.0 * (nf - 1.0))),
        (CuspBlock::Mixed, EulerODE::new(nf, -nf)),
        (CuspBlock::Torus, EulerODE::new(nf, 0.0)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CuspBlock {
    /// `r²h₁₁` and `tr h`.
    Radial,
    /// `h₁ᵢ`.
    Mixed,
    /// Trace-free part of the torus block.
    Torus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuspBlockExponents {
    /// Exponents of `r²h₁₁` and of the trace.
    pub radial: (f64, f64),
    /// Exponents of `h₁ᵢ`.
    pub mixed: (f64, f64),
    /// Exponents of `hᵢⱼ` itself (trace-free part).
    pub torus: (f64, f64),
}

pub fn cusp_block_exponents(n: Dimension) -> Result<CuspBlockExponents> {
    let [(_, one), (_, two), (_, three)] = cusp_block_odes(n);
    let one = indicial_roots(one)?;
    let two = indicial_roots(two)?;
    let three = indicial_roots(three)?;
    let nf = n.as_f64();
    if !(one.gamma1 > 0.1 && one.gamma2 < -nf + 1.0) {
        return Err(Error::InvalidArgument(format!(
            "radial exponents ({}, {}) leave the expected range",
            one.gamma1, one.gamma2
        )));
    }
    // r⁻²hᵢⱼ has exponents (0, 1−n), so hᵢⱼ has (2, 3−n)
    Ok(CuspBlockExponents {
        radial: (one.gamma1, one.gamma2),
        mixed: (two.gamma1, two.gamma2),
        torus: (three.gamma1 + 2.0, three.gamma2 + 2.0),
    })
}

/// Growth window for `|h|` on the cusp `r ∈ (0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthWindow {
    pub floor: f64,
    pub ceil: f64,
    /// `|h| < C·min(r^ceil, r^floor)` instead of `C·(r^ceil + r^floor)`.
    pub strict: bool,
}

impl Default for GrowthWindow {
    fn default() -> Self {
        Self { floor: -0.1, ceil: 0.1, strict: false }
    }
}

impl GrowthWindow {
    pub fn strict(floor: f64, ceil: f64) -> Self {
        Self { floor, ceil, strict: true }
    }

    /// Whether `r^γ` obeys the bound on all of `(0, ∞)`.
    pub fn admits(&self, gamma: f64) -> bool {
        let (lo, hi) = if self.strict { (self.ceil, self.floor) } else { (self.floor, self.ceil) };
        gamma >= lo && gamma <= hi
    }
}

/// One fundamental mode of a block, measured in the norm of the cusp metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMode {
    pub block: CuspBlock,
    /// Exponent of `|h|` along the mode.
    pub exponent: f64,
    /// Independent components carrying the mode.
    pub multiplicity: usize,
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelClassification {
    pub n: usize,
    pub window: GrowthWindow,
    pub modes: Vec<KernelMode>,
    pub dimension: usize,
    pub description: String,
}

/// Invariant solutions of the linearized equation on the cusp whose norm
/// stays inside the growth window.
pub fn cusp_kernel_classification(n: Dimension, window: GrowthWindow) -> Result<KernelClassification> {
    if !(window.floor < window.ceil) {
        return Err(Error::InvalidArgument("growth window needs floor < ceil".into()));
    }
    let ex = cusp_block_exponents(n)?;
    if !(window.floor > ex.radial.1 && window.ceil < ex.radial.0) {
        return Err(Error::InvalidArgument(format!(
            "growth window must lie inside ({}, {})",
            ex.radial.1, ex.radial.0
        )));
    }
    let c = n.torus_rank();
    let sym = c * (c + 1) / 2;
    // norms: |h| sees r²h₁₁, h₁ᵢ and r⁻²hᵢⱼ; the torus block loses 2
    let modes_raw = [
        (CuspBlock::Radial, ex.radial.0, 2),
        (CuspBlock::Radial, ex.radial.1, 2),
        (CuspBlock::Mixed, ex.mixed.0, c),
        (CuspBlock::Mixed, ex.mixed.1, c),
        (CuspBlock::Torus, ex.torus.0 - 2.0, sym - 1),
        (CuspBlock::Torus, ex.torus.1 - 2.0, sym - 1),
    ];
    let mut modes = Vec::with_capacity(modes_raw.len());
    for (block, exponent, multiplicity) in modes_raw {
        for bound in [window.floor, window.ceil] {
            if (exponent - bound).abs() < RESONANCE_TOL {
                return Err(Error::DegenerateWindow { bound, exponent });
            }
        }
        modes.push(KernelMode { block, exponent, multiplicity, admissible: window.admits(exponent) });
    }
    let dimension = modes.iter().filter(|m| m.admissible).map(|m| m.multiplicity).sum();
    let description = if dimension == 0 {
        "no admissible invariant variations".to_string()
    } else if modes.iter().all(|m| !m.admissible || (m.block == CuspBlock::Torus && m.exponent == 0.0)) {
        format!("trace-free trivial variations r²u dx dx, dimension {dimension}")
    } else {
        let kinds: Vec<String> = modes
            .iter()
            .filter(|m| m.admissible)
            .map(|m| format!("{:?} r^{:.6}", m.block, m.exponent))
            .collect();
        kinds.join(", ")
    };
    Ok(KernelClassification { n: n.get(), window, modes, dimension, description })
}

/// Second-order finite-difference solve of the two-point problem on an
/// r-grid (uniform or not) with Dirichlet data at both ends.
pub fn solve_euler_bvp(ode: EulerODE, phi: &[f64], boundary: (f64, f64), grid: &RadialGrid) -> Result<Vec<f64>> {
    if grid.coordinate != Coordinate::R {
        return Err(Error::Grid("Euler problems live on an r-grid".into()));
    }
    let r = &grid.nodes;
    let len = r.len();
    if phi.len() != len {
        return Err(Error::Grid("right side does not match the grid".into()));
    }
    let mut a = BandMatrix::zeros(len, 1, 1);
    let mut rhs = phi.to_vec();
    a.set(0, 0, 1.0);
    rhs[0] = boundary.0;
    a.set(len - 1, len - 1, 1.0);
    rhs[len - 1] = boundary.1;
    for k in 1..len - 1 {
        let w = fornberg_weights(r[k], &r[k - 1..=k + 1], 2);
        for j in 0..3 {
            let mut v = r[k] * r[k] * w[2][j] + ode.a * r[k] * w[1][j];
            if j == 1 {
                v += ode.b;
            }
            a.set(k, k - 1 + j, v);
        }
    }
    Ok(a.factor()?.solve(&rhs))
}

/// Discrete residual `r²f″ + a r f′ + b f − φ` at interior nodes.
pub fn euler_residual(ode: EulerODE, f: &[f64], phi: &[f64], grid: &RadialGrid) -> Vec<f64> {
    let r = &grid.nodes;
    (1..r.len() - 1)
        .map(|k| {
            let w = fornberg_weights(r[k], &r[k - 1..=k + 1], 2);
            let d1: f64 = (0..3).map(|j| w[1][j] * f[k - 1 + j]).sum();
            let d2: f64 = (0..3).map(|j| w[2][j] * f[k - 1 + j]).sum();
            r[k] * r[k] * d2 + ode.a * r[k] * d1 + ode.b * f[k] - phi[k]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UglyEstimateConfig {
    pub n: usize,
    pub big_r: f64,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
    /// Nodes of the geometric r-grid on `[r₊ + 1, R]`.
    pub nodes: usize,
    /// Bound on the boundary values `|h|` at both ends.
    pub boundary: f64,
    /// Amplitude of the `r^{1−n}` forcing standing in for `L_BH − L_hyp`.
    pub mismatch: f64,
}

impl UglyEstimateConfig {
    pub fn new(n: usize, big_r: f64, alpha: f64, trials: usize, seed: u64) -> Self {
        Self { n, big_r, alpha, trials, seed, nodes: 1024, boundary: 1.0, mismatch: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UglyEstimate {
    pub config: UglyEstimateConfig,
    /// Max over trials and nodes of `|h|(r) / (|h|(R) + α + r^{−n+1.1})`.
    pub constant: f64,
    /// Max over trials and nodes of `|h|`.
    pub sup_h: f64,
    /// Per-trial maximal ratio.
    pub per_trial: Vec<f64>,
}

/// Random right side with `|φ| ≤ α[(r/R)^{0.1} + r^{−0.1}]` plus a
/// mismatch term `e·r^{1−n}`.
fn draw_forcing(rng: &mut ChaCha8Rng, r: &[f64], cfg: &UglyEstimateConfig) -> Vec<f64> {
    let c1: f64 = rng.gen_range(-0.5..=0.5);
    let c3: f64 = rng.gen_range(-0.5..=0.5);
    let c2: f64 = rng.gen_range(-1.0..=1.0);
    let e: f64 = rng.gen_range(-1.0..=1.0) * cfg.mismatch;
    let (lo, hi) = (r[0].ln(), r[r.len() - 1].ln());
    let centre = rng.gen_range(lo..=hi);
    let width = rng.gen_range(0.2..=1.0) * (hi - lo).max(1e-3);
    let nf = cfg.n as f64;
    r.iter()
        .map(|&x| {
            let t = (x.ln() - centre) / width;
            let bump = if t.abs() < 1.0 { (-1.0 / (1.0 - t * t)).exp() * std::f64::consts::E } else { 0.0 };
            cfg.alpha * ((c1 + c3 * bump) * (x / cfg.big_r).powf(0.1) + c2 * x.powf(-0.1)) + e * x.powf(1.0 - nf)
        })
        .collect()
}

/// Empirical constant of the a-priori estimate
/// `|h|(r) < C(|h|(R) + α + r^{−n+1.1})` on `r ∈ [r₊+1, R]`, from seeded
/// random forcings of the component equations of the cusp model.
pub fn ugly_estimate(cfg: &UglyEstimateConfig) -> Result<UglyEstimate> {
    let n = Dimension::new(cfg.n)?;
    let r0 = r_plus(n) + 1.0;
    if !(cfg.big_r > r_plus(n) + 2.0) {
        return Err(Error::InvalidArgument(format!("R = {} must exceed r₊ + 2", cfg.big_r)));
    }
    if !(cfg.alpha >= 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {} must lie in [0, 1)", cfg.alpha)));
    }
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let grid = RadialGrid::geometric(r0, cfg.big_r, cfg.nodes, n)?;
    let r = &grid.nodes;
    let len = r.len();
    let odes = cusp_block_odes(n);
    let nf = n.as_f64();
    let mut per_trial = Vec::with_capacity(cfg.trials);
    let mut sup_h = 0.0f64;
    for trial in 0..cfg.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(trial as u64);
        let mut sq = vec![0.0; len];
        for (_, ode) in odes {
            let phi = draw_forcing(&mut rng, r, cfg);
            let ends = (rng.gen_range(-1.0..=1.0) * cfg.boundary, rng.gen_range(-1.0..=1.0) * cfg.boundary);
            let f = solve_euler_bvp(ode, &phi, ends, &grid)?;
            for (s, v) in sq.iter_mut().zip(&f) {
                *s += v * v;
            }
        }
        let h: Vec<f64> = sq.iter().map(|v| v.sqrt()).collect();
        let at_r = h[len - 1];
        let ratio = r
            .iter()
            .zip(&h)
            .map(|(&x, &v)| v / (at_r + cfg.alpha + x.powf(-nf + 1.1)))
            .fold(0.0f64, f64::max);
        sup_h = h.iter().copied().fold(sup_h, f64::max);
        per_trial.push(ratio);
    }
    let constant = per_trial.iter().copied().fold(0.0f64, f64::max);
    Ok(UglyEstimate { config: cfg.clone(), constant, sup_h, per_trial })
}

/// [`ugly_estimate`] with unit boundary and mismatch bounds on 1024 nodes.
pub fn ugly_estimate_harness(n: Dimension, big_r: f64, alpha: f64, trials: usize, seed: u64) -> Result<UglyEstimate> {
    ugly_estimate(&UglyEstimateConfig::new(n.get(), big_r, alpha, trials, seed))
}
