use crate::error::{arg, Result};
use crate::scalar::Real;

/// Natural cubic spline through fixed knots, evaluated at fixed points.
///
/// The tridiagonal factorisation and the evaluation brackets depend only on
/// the knots and points, so they are computed once and reused for every
/// frame. Points beyond the last knot use the last cubic piece.
#[derive(Debug, Clone)]
pub struct CubicSpline<T> {
    h: Vec<T>,
    // Thomas-algorithm factors for the interior second derivatives
    diag: Vec<T>,
    lower: Vec<T>,
    eval: Vec<(usize, T, T)>,
}

impl<T: Real> CubicSpline<T> {
    pub fn new(knots: &[f64], points: &[f64]) -> Result<Self> {
        let n = knots.len();
        if n < 3 {
            return Err(arg("spline needs at least three knots"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(arg("spline knots must be strictly increasing"));
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        // interior system: h[i-1] M[i-1] + 2(h[i-1]+h[i]) M[i] + h[i] M[i+1]
        let m = n - 2;
        let mut diag = vec![0.0; m];
        let mut lower = vec![0.0; m];
        for i in 0..m {
            let b = 2.0 * (h[i] + h[i + 1]);
            if i == 0 {
                diag[i] = b;
            } else {
                lower[i] = h[i] / diag[i - 1];
                diag[i] = b - lower[i] * h[i];
            }
        }
        let eval = points
            .iter()
            .map(|&x| {
                let j = knots.partition_point(|&k| k <= x).clamp(1, n - 1) - 1;
                let a = (knots[j + 1] - x) / h[j];
                let b = (x - knots[j]) / h[j];
                (j, T::lit(a), T::lit(b))
            })
            .collect();
        Ok(Self {
            h: h.into_iter().map(T::lit).collect(),
            diag: diag.into_iter().map(T::lit).collect(),
            lower: lower.into_iter().map(T::lit).collect(),
            eval,
        })
    }

    pub fn knots(&self) -> usize {
        self.h.len() + 1
    }

    pub fn points(&self) -> usize {
        self.eval.len()
    }

    /// Interpolates `y` (one value per knot) into `out` (one per point).
    pub fn apply(&self, y: &[T], out: &mut [T]) {
        let n = self.knots();
        debug_assert_eq!(y.len(), n);
        let six = T::lit(6.0);
        let m = n - 2;
        let mut second = vec![T::zero(); n];
        let mut rhs: Vec<T> = (1..=m)
            .map(|i| six * ((y[i + 1] - y[i]) / self.h[i] - (y[i] - y[i - 1]) / self.h[i - 1]))
            .collect();
        for i in 1..m {
            let prev = rhs[i - 1];
            rhs[i] -= self.lower[i] * prev;
        }
        for i in (0..m).rev() {
            let next = if i + 1 < m { second[i + 2] } else { T::zero() };
            second[i + 1] = (rhs[i] - self.h[i + 1] * next) / self.diag[i];
        }
        let sixth = T::lit(1.0 / 6.0);
        for (o, &(j, a, b)) in out.iter_mut().zip(&self.eval) {
            let h2 = self.h[j] * self.h[j];
            *o = a * y[j]
                + b * y[j + 1]
                + ((a * a * a - a) * second[j] + (b * b * b - b) * second[j + 1]) * h2 * sixth;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense Gaussian-elimination oracle for the natural spline.
    fn oracle(x: &[f64], y: &[f64], t: f64) -> f64 {
        let n = x.len();
        let mut a = vec![vec![0.0; n + 1]; n];
        a[0][0] = 1.0;
        a[n - 1][n - 1] = 1.0;
        for i in 1..n - 1 {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            a[i][i - 1] = h0;
            a[i][i] = 2.0 * (h0 + h1);
            a[i][i + 1] = h1;
            a[i][n] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        }
        for c in 0..n {
            let p = (c..n).max_by(|&r, &s| a[r][c].abs().total_cmp(&a[s][c].abs())).unwrap();
            a.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=n {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        let m: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
        let j = (0..n - 1).rev().find(|&j| x[j] <= t).unwrap_or(0);
        let h = x[j + 1] - x[j];
        let (p, q) = ((x[j + 1] - t) / h, (t - x[j]) / h);
        p * y[j] + q * y[j + 1] + ((p.powi(3) - p) * m[j] + (q.powi(3) - q) * m[j + 1]) * h * h / 6.0
    }

    #[test]
    fn matches_dense_oracle_on_geometric_knots() {
        let x: Vec<f64> = (0..40).map(|k| 10.0 * 2f64.powf(k as f64 / 6.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| (v / 50.0).sin() + 0.01 * v).collect();
        let pts: Vec<f64> = (0..200).map(|j| 10.0 + j as f64 * (x[39] + 20.0 - 10.0) / 199.0).collect();
        let s = CubicSpline::<f64>::new(&x, &pts).unwrap();
        let mut out = vec![0.0; pts.len()];
        s.apply(&y, &mut out);
        for (o, &p) in out.iter().zip(&pts) {
            assert!((o - oracle(&x, &y, p)).abs() < 1e-9, "{p}");
        }
    }

    #[test]
    fn reproduces_lines_and_knot_values() {
        let x = [0.0, 1.0, 3.0, 3.5, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let pts = [0.0, 0.5, 2.0, 3.5, 6.9, 8.0];
        let s = CubicSpline::<f64>::new(&x, &pts).unwrap();
        let mut out = [0.0; 6];
        s.apply(&y, &mut out);
        for (o, p) in out.iter().zip(pts) {
            assert!((o - (2.0 * p - 1.0)).abs() < 1e-12);
        }
        assert!(CubicSpline::<f64>::new(&[0.0, 1.0], &pts).is_err());
        assert!(CubicSpline::<f64>::new(&[0.0, 1.0, 1.0], &pts).is_err());
    }
}
