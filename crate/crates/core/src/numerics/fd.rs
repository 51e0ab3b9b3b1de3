//! Finite-difference weights on arbitrary (nonuniform) grids.

/// Fornberg's recursion: weights `w[d][j]` such that
/// `f^(d)(x0) ≈ Σ_j w[d][j] f(xs[j])` for d = 0..=max_deriv.
pub fn fornberg_weights(x0: f64, xs: &[f64], max_deriv: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_deriv + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(max_deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Start index of a `points`-wide stencil centred on node `k`, shifted inward
/// at the ends.
pub fn stencil_start(k: usize, len: usize, points: usize) -> usize {
    let half = points / 2;
    k.saturating_sub(half).min(len - points)
}

/// `deriv`-th derivative of samples `f` on nodes `xs` using `points`-point
/// stencils (centred in the interior, one-sided at the ends).
pub fn derivative(xs: &[f64], f: &[f64], deriv: usize, points: usize) -> Vec<f64> {
    assert_eq!(xs.len(), f.len());
    assert!(points > deriv && xs.len() >= points);
    (0..xs.len())
        .map(|k| {
            let s = stencil_start(k, xs.len(), points);
            let w = fornberg_weights(xs[k], &xs[s..s + points], deriv);
            w[deriv].iter().zip(&f[s..s + points]).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Uniform-spacing derivative of order `deriv` (0, 1 or 2) with second-order
/// central stencils in the interior and second-order one-sided stencils at
/// the ends.
pub fn uniform_derivative(f: &[f64], h: f64, deriv: usize) -> Vec<f64> {
    let n = f.len();
    match deriv {
        0 => f.to_vec(),
        1 => (0..n)
            .map(|k| {
                if k == 0 {
                    (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
                } else if k == n - 1 {
                    (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h)
                } else {
                    (f[k + 1] - f[k - 1]) / (2.0 * h)
                }
            })
            .collect(),
        2 => (0..n)
            .map(|k| {
                if k == 0 {
                    (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / (h * h)
                } else if k == n - 1 {
                    (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) / (h * h)
                } else {
                    (f[k + 1] - 2.0 * f[k] + f[k - 1]) / (h * h)
                }
            })
            .collect(),
        _ => panic!("uniform_derivative supports orders 0..=2"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_weights_on_uniform_grid() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(w[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(w[2], vec![1.0, -2.0, 1.0]);
    }

    #[test]
    fn nonuniform_second_derivative_is_exact_on_quadratics() {
        let xs = [0.1, 0.35, 0.5, 0.9];
        let f: Vec<f64> = xs.iter().map(|x| 3.0 * x * x - x + 2.0).collect();
        let d2 = derivative(&xs, &f, 2, 3);
        for v in d2 {
            assert!((v - 6.0).abs() < 1e-10);
        }
    }

    #[test]
    fn five_point_first_derivative_is_fourth_order() {
        let err = |n: usize| {
            let xs: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 / (n - 1) as f64).powi(2)).collect();
            let f: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
            let d = derivative(&xs, &f, 1, 5);
            xs.iter().zip(d).map(|(x, v)| (v - x.cos()).abs()).fold(0.0, f64::max)
        };
        let ratio = err(101) / err(201);
        assert!(ratio > 12.0, "ratio {ratio}");
    }
}
