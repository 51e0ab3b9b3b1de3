//! Second-order discretization of system (I)/(II) in logarithmic variables.
//!
//! At an interior node `k`, with `S = √M̃ₖ` and `Y± = log(S⁻¹ M̃ₖ±₁ S⁻¹)`,
//!
//! ```text
//! P = (Y₊ − Y₋)/(2Δ)   ≈ S⁻¹M′S⁻¹        (frame form of M′M⁻¹)
//! Q = (Y₊ + Y₋)/Δ²     ≈ S⁻¹(M′M⁻¹)′S    (frame form of its derivative)
//! E1/u = Q + ½ tr P · P + (P + tr P · E)/s − 2(n−1) I
//! E2   = σ₂(P) + (2/s)(tr P − P_θθ) − 2(n−1)(n−2)
//! ```
//!
//! Near a cap the θθ entry is regularized, `M̃_θθ = M_θθ/w²` with `w = s`
//! the distance to the cap, and the parts of `M′M⁻¹` coming from `w` are
//! added exactly: with `c = w′/w` and `E = e_θ e_θᵀ`, E1 gains
//! `c(P + tr P·E) + 2(w″/w)E` (the last term vanishes for `w = s`). Without a
//! cap these terms are absent. Uncapped cusps are exact; on a capped profile
//! the regularization leaves an `O(Δ²/s⁴)` truncation error everywhere. The
//! scheme is exact on constant linear changes of the torus coordinates, and
//! reduces to central differences of `log fᵢ` for diagonal profiles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::EinsteinResidual;
use crate::error::{Error, Result};
use crate::geometry::{BlockMetricProfile, DiagonalMetricProfile, Dimension};

pub(crate) const MIN_NODES: usize = 66;

fn constants(n: Dimension) -> (f64, f64) {
    let nf = n.as_f64();
    (2.0 * (nf - 1.0), 2.0 * (nf - 1.0) * (nf - 2.0))
}

fn check_len(len: usize) -> Result<()> {
    if len < MIN_NODES {
        return Err(Error::Grid(format!("need at least 64 interior nodes, got {}", len.saturating_sub(2))));
    }
    Ok(())
}

fn sigma2(a: &DMatrix<f64>) -> f64 {
    let t = a.trace();
    0.5 * (t * t - (a * a).trace())
}

/// `(log w, w′/w, w″/w)` for the cap regularization `w = s`.
#[derive(Debug, Clone, Copy, Default)]
struct CapWeight {
    log_w: f64,
    c: f64,
    w2: f64,
}

impl CapWeight {
    fn at(s: f64) -> Self {
        Self { log_w: s.ln(), c: 1.0 / s, w2: 0.0 }
    }

    fn table(cap: bool, len: usize, h: f64) -> Vec<Self> {
        (0..len)
            .map(|k| if cap && k > 0 { Self::at(k as f64 * h) } else { Self::default() })
            .collect()
    }
}

/// Symmetric eigen-decomposition kept for functional calculus.
struct Spectral {
    q: DMatrix<f64>,
    vals: DVector<f64>,
}

impl Spectral {
    fn new(m: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
        Self { q: eig.eigenvectors, vals: eig.eigenvalues }
    }

    fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = DVector::from_iterator(self.vals.len(), self.vals.iter().map(|&v| f(v)));
        &self.q * DMatrix::from_diagonal(&d) * self.q.transpose()
    }

    /// Fréchet derivative of the spectral function with divided differences
    /// `div(λᵢ, λⱼ)`.
    fn derivative(&self, h: &DMatrix<f64>, div: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
        let mut t = self.q.transpose() * h * &self.q;
        let m = t.nrows();
        for i in 0..m {
            for j in 0..m {
                t[(i, j)] *= div(self.vals[i], self.vals[j]);
            }
        }
        &self.q * t * self.q.transpose()
    }
}

/// `(log a − log b)/(a − b)`, stable for `a ≈ b`.
fn log_divided(a: f64, b: f64) -> f64 {
    let x = (a - b) / b;
    if x.abs() < 1e-6 {
        (1.0 - x / 2.0 + x * x / 3.0) / b
    } else {
        (a / b).ln() / (a - b)
    }
}

/// Symmetric square root of a positive semidefinite matrix.
#[cfg(test)]
pub(crate) fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    Spectral::new(m).apply(|v| v.max(0.0).sqrt())
}

/// Log-variable scheme for diagonal profiles, in the unknowns `y = log f`.
pub(crate) struct DiagonalScheme {
    n: Dimension,
    c: usize,
    h: f64,
    cap: bool,
    len: usize,
    /// `d[k][i] = ψ_{k+1,i} − ψ_{k,i}`.
    d: Vec<Vec<f64>>,
    reg: Vec<CapWeight>,
}

/// Contribution `(node, component, ∂/∂y)` of one unknown `y = log f`.
pub(crate) type Partial = (usize, usize, f64);

impl DiagonalScheme {
    pub(crate) fn new(g: &DiagonalMetricProfile) -> Result<Self> {
        let len = g.len();
        check_len(len)?;
        let n = g.n();
        let c = n.torus_rank();
        let h = g.spacing();
        let cap = g.has_cap();
        let reg = CapWeight::table(cap, len, h);
        for k in 0..len {
            for i in 0..c {
                if !(g.f[k][i] > 0.0) && !(cap && k == 0 && i == 0) {
                    return Err(Error::NotPositiveDefinite { node: k });
                }
            }
        }
        // increments of ψ = log f (minus log s for θ at a cap), taken from
        // ratios so that rounding stays relative to the increment
        let mut d = vec![vec![0.0; c]; len - 1];
        for k in 0..len - 1 {
            for i in 0..c {
                if cap && i == 0 {
                    if k > 0 {
                        let (a, b) = (g.f[k][0], g.f[k + 1][0]);
                        d[k][0] = ((b - a) / a).ln_1p() - (1.0 / k as f64).ln_1p();
                    }
                } else {
                    let (a, b) = (g.f[k][i], g.f[k + 1][i]);
                    d[k][i] = ((b - a) / a).ln_1p();
                }
            }
        }
        if cap {
            // ψ₀ = (4ψ₁ − ψ₂)/3
            d[0][0] = d[1][0] / 3.0;
        }
        Ok(Self { n, c, h, cap, len, d, reg })
    }

    fn p(&self, k: usize) -> Vec<f64> {
        (0..self.c).map(|i| (self.d[k][i] + self.d[k - 1][i]) / self.h).collect()
    }

    /// Normalized `E1ᵢᵢ` at node `k` (an axis row when `k = 0` at a cap).
    pub(crate) fn e1(&self, k: usize, i: usize) -> f64 {
        let (lam, _) = constants(self.n);
        let h = self.h;
        if k == 0 {
            debug_assert!(self.cap && i > 0);
            return 8.0 * self.d[0][i] / (h * h) - lam;
        }
        let p = self.p(k);
        let t: f64 = p.iter().sum();
        let q = 2.0 * (self.d[k][i] - self.d[k - 1][i]) / (h * h);
        let CapWeight { c, w2, .. } = self.reg[k];
        let mut e = q + 0.5 * t * p[i] + c * p[i] - lam;
        if i == 0 {
            e += c * t + 2.0 * w2;
        }
        e
    }

    pub(crate) fn e2(&self, k: usize) -> f64 {
        let (_, chi) = constants(self.n);
        let p = self.p(k);
        let t: f64 = p.iter().sum();
        let sq: f64 = p.iter().map(|v| v * v).sum();
        0.5 * (t * t - sq) + 2.0 * self.reg[k].c * (t - p[0]) - chi
    }

    fn push(&self, out: &mut Vec<Partial>, k: usize, i: usize, v: f64) {
        if self.cap && k == 0 && i == 0 {
            out.push((1, 0, v * 4.0 / 3.0));
            out.push((2, 0, -v / 3.0));
        } else {
            out.push((k, i, v));
        }
    }

    /// Partial derivatives of [`Self::e1`] with respect to `log f`.
    pub(crate) fn e1_gradient(&self, k: usize, i: usize, out: &mut Vec<Partial>) {
        out.clear();
        let h = self.h;
        if k == 0 {
            self.push(out, 1, i, 8.0 / (h * h));
            self.push(out, 0, i, -8.0 / (h * h));
            return;
        }
        let p = self.p(k);
        let t: f64 = p.iter().sum();
        let c = self.reg[k].c;
        for j in 0..self.c {
            let mut d = 0.5 * p[i];
            if j == i {
                d += 0.5 * t + c;
            }
            if i == 0 {
                d += c;
            }
            self.push(out, k + 1, j, d / h);
            self.push(out, k - 1, j, -d / h);
        }
        self.push(out, k + 1, i, 2.0 / (h * h));
        self.push(out, k, i, -4.0 / (h * h));
        self.push(out, k - 1, i, 2.0 / (h * h));
    }

    /// Partial derivatives of [`Self::e2`] with respect to `log f`.
    #[cfg(test)]
    pub(crate) fn e2_gradient(&self, k: usize, out: &mut Vec<Partial>) {
        out.clear();
        let p = self.p(k);
        let t: f64 = p.iter().sum();
        let c = self.reg[k].c;
        for j in 0..self.c {
            let mut d = t - p[j];
            if j > 0 {
                d += 2.0 * c;
            }
            self.push(out, k + 1, j, d / self.h);
            self.push(out, k - 1, j, -d / self.h);
        }
    }

    pub(crate) fn residual(&self, g: &DiagonalMetricProfile) -> EinsteinResidual {
        let c = self.c;
        let len = self.len;
        let mut e1 = vec![DMatrix::zeros(c, c); len];
        let mut e2 = vec![0.0; len];
        for k in 1..len - 1 {
            for i in 0..c {
                e1[k][(i, i)] = self.e1(k, i);
            }
            e2[k] = self.e2(k);
        }
        if self.cap {
            for i in 1..c {
                e1[0][(i, i)] = self.e1(0, i);
            }
        }
        EinsteinResidual {
            grid: g.grid.clone(),
            e1,
            e2,
            sqrt_det: (0..len).map(|k| g.sqrt_det(k)).collect(),
            normalized: true,
            axis: self.cap,
            e1_nodes: usize::from(!self.cap)..len - 1,
            e2_nodes: 1..len - 1,
        }
    }
}

/// Normalized residual of a diagonal profile.
pub fn einstein_residual(g: &DiagonalMetricProfile) -> Result<EinsteinResidual> {
    Ok(DiagonalScheme::new(g)?.residual(g))
}

/// Normalized residual of a block profile. Near a cap the θ direction must
/// decouple from the flat block (`M_θj = 0`).
pub fn einstein_residual_block(g: &BlockMetricProfile) -> Result<EinsteinResidual> {
    Ok(BlockScheme::new(g)?.residual())
}

struct LogData {
    spec: Spectral,
    y: DMatrix<f64>,
}

impl LogData {
    fn new(x: DMatrix<f64>, node: usize) -> Result<Self> {
        let spec = Spectral::new(&x);
        if spec.vals.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::NotPositiveDefinite { node });
        }
        let y = spec.apply(f64::ln);
        Ok(Self { spec, y })
    }
}

struct BlockScheme<'a> {
    g: &'a BlockMetricProfile,
    h: f64,
    c: usize,
    cap: bool,
    reg: Vec<CapWeight>,
    mt: Vec<DMatrix<f64>>,
    root: Vec<Spectral>,
    sinv: Vec<DMatrix<f64>>,
    plus: Vec<Option<LogData>>,
    minus: Vec<Option<LogData>>,
}

fn theta_decoupled(m: &DMatrix<f64>) -> bool {
    (1..m.nrows()).all(|i| m[(0, i)] == 0.0 && m[(i, 0)] == 0.0)
}

impl<'a> BlockScheme<'a> {
    fn new(g: &'a BlockMetricProfile) -> Result<Self> {
        let len = g.len();
        check_len(len)?;
        let h = g.spacing();
        let c = g.n().torus_rank();
        let cap = g.has_cap();
        let reg = CapWeight::table(cap, len, h);
        let mut mt = g.m.clone();
        if cap {
            if let Some(k) = g.m.iter().position(|m| !theta_decoupled(m)) {
                return Err(Error::InvalidArgument(format!(
                    "θ must decouple from the flat directions on a capped profile (node {k})"
                )));
            }
            for k in 1..len {
                mt[k][(0, 0)] *= (-2.0 * reg[k].log_w).exp();
            }
            let (a, b) = (mt[1][(0, 0)], mt[2][(0, 0)]);
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::NotPositiveDefinite { node: 1 });
            }
            mt[0][(0, 0)] = a.powf(4.0 / 3.0) * b.powf(-1.0 / 3.0);
        }
        let root: Vec<Spectral> = mt.iter().map(Spectral::new).collect();
        for (k, r) in root.iter().enumerate() {
            if r.vals.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::NotPositiveDefinite { node: k });
            }
        }
        let sinv: Vec<DMatrix<f64>> = root.iter().map(|r| r.apply(|v| 1.0 / v.sqrt())).collect();
        let mut plus = Vec::with_capacity(len);
        let mut minus = Vec::with_capacity(len);
        for k in 0..len {
            let wants_plus = k + 1 < len && (k > 0 || cap);
            let wants_minus = k > 0 && k + 1 < len;
            plus.push(if wants_plus { Some(LogData::new(&sinv[k] * &mt[k + 1] * &sinv[k], k)?) } else { None });
            minus.push(if wants_minus { Some(LogData::new(&sinv[k] * &mt[k - 1] * &sinv[k], k)?) } else { None });
        }
        Ok(Self { g, h, c, cap, reg, mt, root, sinv, plus, minus })
    }

    fn pq(&self, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let yp = &self.plus[k].as_ref().unwrap().y;
        let ym = &self.minus[k].as_ref().unwrap().y;
        ((yp - ym) / (2.0 * self.h), (yp + ym) / (self.h * self.h))
    }

    fn theta(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.c, self.c);
        e[(0, 0)] = 1.0;
        e
    }

    fn e1_at(&self, k: usize, p: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
        let (lam, _) = constants(self.g.n());
        let t = p.trace();
        let CapWeight { c, w2, .. } = self.reg[k];
        q + p * (0.5 * t) + (p + self.theta() * t) * c + self.theta() * (2.0 * w2) - DMatrix::identity(self.c, self.c) * lam
    }

    fn axis_e1(&self) -> DMatrix<f64> {
        let (lam, _) = constants(self.g.n());
        let y = &self.plus[0].as_ref().unwrap().y;
        let mut e = y * (4.0 / (self.h * self.h)) - DMatrix::identity(self.c, self.c) * lam;
        for i in 0..self.c {
            e[(0, i)] = 0.0;
            e[(i, 0)] = 0.0;
        }
        e
    }

    fn residual(&self) -> EinsteinResidual {
        let len = self.g.len();
        let (_, chi) = constants(self.g.n());
        let mut e1 = vec![DMatrix::zeros(self.c, self.c); len];
        let mut e2 = vec![0.0; len];
        for k in 1..len - 1 {
            let (p, q) = self.pq(k);
            e1[k] = self.e1_at(k, &p, &q);
            e2[k] = sigma2(&p) + 2.0 * self.reg[k].c * (p.trace() - p[(0, 0)]) - chi;
        }
        if self.cap {
            e1[0] = self.axis_e1();
        }
        EinsteinResidual {
            grid: self.g.grid.clone(),
            e1,
            e2,
            sqrt_det: self.g.m.iter().map(|m| m.determinant().max(0.0).sqrt()).collect(),
            normalized: true,
            axis: self.cap,
            e1_nodes: usize::from(!self.cap)..len - 1,
            e2_nodes: 1..len - 1,
        }
    }

    fn regularized_direction(&self, dm: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let mut out = dm.to_vec();
        if self.cap {
            for (k, d) in out.iter_mut().enumerate().skip(1) {
                d[(0, 0)] *= (-2.0 * self.reg[k].log_w).exp();
            }
            let rel = 4.0 / 3.0 * out[1][(0, 0)] / self.mt[1][(0, 0)] - out[2][(0, 0)] / (3.0 * self.mt[2][(0, 0)]);
            out[0][(0, 0)] = self.mt[0][(0, 0)] * rel;
        }
        out
    }

    fn dlog(&self, data: &LogData, sinv: &DMatrix<f64>, dsinv: &DMatrix<f64>, m: &DMatrix<f64>, dm: &DMatrix<f64>) -> DMatrix<f64> {
        let dx = sinv * dm * sinv + dsinv * m * sinv + sinv * m * dsinv;
        data.spec.derivative(&dx, log_divided)
    }

    fn linearize(&self, dm: &[DMatrix<f64>], lapse: Option<&[f64]>) -> EinsteinResidual {
        let len = self.g.len();
        let h = self.h;
        let (lam, chi) = constants(self.g.n());
        let dmt = self.regularized_direction(dm);
        let nu = |k: usize| lapse.map_or(0.0, |l| l[k]);
        // d(M̃^{-1/2}) via the derivative of v ↦ v^{-1/2}
        let dsinv: Vec<DMatrix<f64>> = (0..len)
            .map(|k| {
                self.root[k].derivative(&dmt[k], |a, b| {
                    let (ra, rb) = (a.sqrt(), b.sqrt());
                    -1.0 / (ra * rb * (ra + rb))
                })
            })
            .collect();
        let mut e1 = vec![DMatrix::zeros(self.c, self.c); len];
        let mut e2 = vec![0.0; len];
        let base = self.residual();
        for k in 1..len - 1 {
            let (p, _) = self.pq(k);
            let dyp = self.dlog(self.plus[k].as_ref().unwrap(), &self.sinv[k], &dsinv[k], &self.mt[k + 1], &dmt[k + 1]);
            let dym = self.dlog(self.minus[k].as_ref().unwrap(), &self.sinv[k], &dsinv[k], &self.mt[k - 1], &dmt[k - 1]);
            let dp = (&dyp - &dym) / (2.0 * h);
            let dq = (&dyp + &dym) / (h * h);
            let (t, dt) = (p.trace(), dp.trace());
            let c = self.reg[k].c;
            let mut d = &dq + &p * (0.5 * dt) + &dp * (0.5 * t) + (&dp + self.theta() * dt) * c;
            let mut d2 = t * dt - (&p * &dp).trace() + 2.0 * c * (dt - dp[(0, 0)]);
            if lapse.is_some() {
                let w = &base.e1[k] + DMatrix::identity(self.c, self.c) * lam;
                let a = &p + self.theta() * (2.0 * c);
                let dnu = (nu(k + 1) - nu(k - 1)) / (2.0 * h);
                d -= w * (2.0 * nu(k)) + a * dnu;
                d2 -= 2.0 * nu(k) * (base.e2[k] + chi);
            }
            e1[k] = d;
            e2[k] = d2;
        }
        if self.cap {
            let dy = self.dlog(self.plus[0].as_ref().unwrap(), &self.sinv[0], &dsinv[0], &self.mt[1], &dmt[1]);
            let mut d = dy * (4.0 / (h * h)) - (&base.e1[0] + DMatrix::identity(self.c, self.c) * lam) * (2.0 * nu(0));
            for i in 0..self.c {
                d[(0, i)] = 0.0;
                d[(i, 0)] = 0.0;
            }
            e1[0] = d;
        }
        EinsteinResidual { e1, e2, normalized: true, ..base }
    }
}

fn check_direction(len: usize, c: usize, dm: &[DMatrix<f64>]) -> Result<()> {
    if dm.len() != len || dm.iter().any(|d| d.nrows() != c || d.ncols() != c) {
        return Err(Error::Grid("variation does not match the profile grid".into()));
    }
    Ok(())
}

/// Directional derivative of [`einstein_residual`] at `g` in direction `dM`,
/// by analytic differentiation of the discrete stencil.
pub fn linearized_residual(g: &DiagonalMetricProfile, dm: &[DMatrix<f64>]) -> Result<EinsteinResidual> {
    linearized_residual_block(&g.to_block(), dm, None)
}

/// Block version with an optional lapse variation `ν`, i.e. the metric
/// `(1 + ν)² ds² + M + dM` to first order.
pub fn linearized_residual_block(
    g: &BlockMetricProfile,
    dm: &[DMatrix<f64>],
    lapse: Option<&[f64]>,
) -> Result<EinsteinResidual> {
    check_direction(g.len(), g.n().torus_rank(), dm)?;
    if let Some(l) = lapse {
        if l.len() != g.len() {
            return Err(Error::Grid("lapse variation does not match the profile grid".into()));
        }
    }
    if g.has_cap() {
        if dm[0][(0, 0)] != 0.0 {
            return Err(Error::InvalidArgument("variation must keep the θ-fiber closed at the cap".into()));
        }
        if let Some(k) = dm.iter().position(|d| !theta_decoupled(d)) {
            return Err(Error::InvalidArgument(format!(
                "θ must decouple from the flat directions on a capped profile (node {k})"
            )));
        }
    }
    Ok(BlockScheme::new(g)?.linearize(dm, lapse))
}

/// `g + t·dM` as a block profile.
pub fn perturb_block(g: &BlockMetricProfile, dm: &[DMatrix<f64>], t: f64) -> BlockMetricProfile {
    let mut out = g.clone();
    for (m, d) in out.m.iter_mut().zip(dm) {
        *m += d * t;
    }
    out
}
