//! Banded matrices with partial-pivoting LU, in the layout used by LAPACK's
//! `gbtrf`: row `i` stores columns `i - kl ..= i + ku + kl`, the extra `kl`
//! superdiagonals holding fill-in from row interchanges.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> usize {
        self.kl
    }

    pub fn upper(&self) -> usize {
        self.ku
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    /// Sets entry (i, j). Panics if (i, j) lies outside the declared band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band ({}, {})", self.kl, self.ku);
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band ({}, {})", self.kl, self.ku);
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// Column range stored for row `i` (band part only).
    pub fn row_columns(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row_columns(i).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            for j in self.row_columns(i) {
                y[j] += self.get(i, j) * x[i];
            }
        }
        y
    }

    /// Scales entry (i, j) by `left[i] * right[j]`.
    pub fn scale(&mut self, left: &[f64], right: &[f64]) {
        for i in 0..self.n {
            for j in self.row_columns(i) {
                let s = self.slot(i, j);
                self.data[s] *= left[i] * right[j];
            }
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// LU factorization with partial pivoting. Pivot ties resolve to the
    /// lowest row index.
    pub fn factor(&self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut a = self.clone();
        let mut piv = vec![0usize; n];
        let reach = kl + ku;
        for p in 0..n {
            let last = (p + kl).min(n - 1);
            let mut best = p;
            let mut best_abs = a.data[a.slot(p, p)].abs();
            for r in p + 1..=last {
                let v = a.data[a.slot(r, p)].abs();
                if v > best_abs {
                    best = r;
                    best_abs = v;
                }
            }
            if best_abs == 0.0 || !best_abs.is_finite() {
                return Err(Error::Singular { row: p });
            }
            piv[p] = best;
            let jmax = (p + reach).min(n - 1);
            if best != p {
                for j in p..=jmax {
                    let s1 = a.slot(p, j);
                    let s2 = a.slot(best, j);
                    a.data.swap(s1, s2);
                }
            }
            let d = a.data[a.slot(p, p)];
            for r in p + 1..=last {
                let sr = a.slot(r, p);
                let l = a.data[sr] / d;
                a.data[sr] = l;
                if l == 0.0 {
                    continue;
                }
                for j in p + 1..=jmax {
                    let sp = a.slot(p, j);
                    let sj = a.slot(r, j);
                    a.data[sj] -= l * a.data[sp];
                }
            }
        }
        Ok(BandLu { a, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.a.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let a = &self.a;
        let (n, kl) = (a.n, a.kl);
        let reach = a.kl + a.ku;
        let mut x = b.to_vec();
        for p in 0..n {
            x.swap(p, self.piv[p]);
            let xp = x[p];
            for r in p + 1..=(p + kl).min(n - 1) {
                x[r] -= a.data[a.slot(r, p)] * xp;
            }
        }
        for p in (0..n).rev() {
            let mut s = x[p];
            for j in p + 1..=(p + reach).min(n - 1) {
                s -= a.data[a.slot(p, j)] * x[j];
            }
            x[p] = s / a.data[a.slot(p, p)];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let a = &self.a;
        let (n, kl) = (a.n, a.kl);
        let reach = a.kl + a.ku;
        let mut y = b.to_vec();
        // Uᵀ y = b, forward
        for p in 0..n {
            let mut s = y[p];
            for i in p.saturating_sub(reach)..p {
                s -= a.data[a.slot(i, p)] * y[i];
            }
            y[p] = s / a.data[a.slot(p, p)];
        }
        // undo the elimination steps in reverse
        for p in (0..n).rev() {
            let mut s = 0.0;
            for r in p + 1..=(p + kl).min(n - 1) {
                s += a.data[a.slot(r, p)] * y[r];
            }
            y[p] -= s;
            y.swap(p, self.piv[p]);
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> BandMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in m.row_columns(i) {
                m.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        m
    }

    #[test]
    fn solves_match_dense() {
        for (seed, (n, kl, ku)) in [(30, 2, 3), (17, 4, 1), (40, 5, 5), (6, 1, 1)].into_iter().enumerate() {
            let m = random_band(n, kl, ku, seed as u64);
            let dense = m.to_dense();
            let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let lu = m.factor().unwrap();
            let x = lu.solve(&b);
            let r = &dense * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(b.clone());
            assert!(r.amax() < 1e-10, "residual {}", r.amax());
            let xt = lu.solve_transpose(&b);
            let rt = dense.transpose() * nalgebra::DVector::from_vec(xt) - nalgebra::DVector::from_vec(b);
            assert!(rt.amax() < 1e-10, "transpose residual {}", rt.amax());
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let mut m = BandMatrix::zeros(3, 1, 1);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0);
        m.set(1, 2, 2.0);
        m.set(2, 1, 3.0);
        m.set(2, 2, 1.0);
        let x = m.factor().unwrap().solve(&[1.0, 5.0, 5.0]);
        let back = m.matvec(&x);
        for (u, v) in back.iter().zip([1.0, 5.0, 5.0]) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = BandMatrix::zeros(4, 1, 1);
        assert!(matches!(m.factor(), Err(Error::Singular { row: 0 })));
    }
}
