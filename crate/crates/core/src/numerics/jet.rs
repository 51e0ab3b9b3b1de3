//! Truncated Taylor series ("jets") for exact derivatives of smooth
//! closed-form functions such as the cutoff.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Taylor coefficients `c[k] = f^(k)(x0) / k!` up to a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet(pub Vec<f64>);

impl Jet {
    pub fn constant(v: f64, order: usize) -> Self {
        let mut c = vec![0.0; order + 1];
        c[0] = v;
        Jet(c)
    }

    /// The independent variable at `x0`.
    pub fn variable(x0: f64, order: usize) -> Self {
        let mut c = vec![0.0; order + 1];
        c[0] = x0;
        if order > 0 {
            c[1] = 1.0;
        }
        Jet(c)
    }

    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    /// Derivatives `f^(k)(x0)` for k = 0..=order.
    pub fn derivatives(&self) -> Vec<f64> {
        let mut fact = 1.0;
        self.0
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k > 0 {
                    fact *= k as f64;
                }
                c * fact
            })
            .collect()
    }

    pub fn exp(&self) -> Self {
        let n = self.0.len();
        let mut e = vec![0.0; n];
        e[0] = self.0[0].exp();
        // e' = a' e  =>  k e_k = Σ_{j=1..k} j a_j e_{k-j}
        for k in 1..n {
            let s: f64 = (1..=k).map(|j| j as f64 * self.0[j] * e[k - j]).sum();
            e[k] = s / k as f64;
        }
        Jet(e)
    }

    pub fn recip(&self) -> Self {
        let n = self.0.len();
        let mut r = vec![0.0; n];
        r[0] = 1.0 / self.0[0];
        for k in 1..n {
            let s: f64 = (1..=k).map(|j| self.0[j] * r[k - j]).sum();
            r[k] = -s * r[0];
        }
        Jet(r)
    }

    pub fn scale(&self, a: f64) -> Self {
        Jet(self.0.iter().map(|c| c * a).collect())
    }

    /// `ψ(t)/(ψ(t)+ψ(1−t))` with `ψ(t) = e^{−1/t}`: 0 for `t ≤ 0`, 1 for `t ≥ 1`.
    pub fn smooth_step(&self) -> Self {
        let m = self.order();
        let t0 = self.value();
        if t0 <= 0.0 {
            return Jet::constant(0.0, m);
        }
        if t0 >= 1.0 {
            return Jet::constant(1.0, m);
        }
        let psi = |t: &Jet| (-&t.recip()).exp();
        let one = Jet::constant(1.0, m);
        let a = psi(self);
        let b = psi(&(&one - self));
        &a / &(&a + &b)
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a - b).collect())
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, o: &Jet) -> Jet {
        let n = self.0.len();
        Jet((0..n).map(|k| (0..=k).map(|j| self.0[j] * o.0[k - j]).sum()).collect())
    }
}

impl Div for &Jet {
    type Output = Jet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: &Jet) -> Jet {
        self * &o.recip()
    }
}
