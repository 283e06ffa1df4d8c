//! Small dense least-squares kernels: Householder QR, Lawson–Hanson NNLS and
//! singular values by one-sided Jacobi. Generic so that extraction can run in
//! quad precision.

use crate::scalar::{lit, Real};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.rows)
            .map(|i| (0..self.cols).fold(T::zero(), |s, j| s + self.get(i, j) * x[j]))
            .collect()
    }

    fn select_columns(&self, cols: &[usize]) -> Self {
        Self::from_fn(self.rows, cols.len(), |i, j| self.get(i, cols[j]))
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols);
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self { rows: self.rows + other.rows, cols: self.cols, data }
    }
}

fn norm<T: Real>(v: &[T]) -> T {
    let scale = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    scale * v.iter().fold(T::zero(), |s, x| s + (*x / scale) * (*x / scale)).sqrt()
}

/// Minimum-norm-residual solution of `A x ≈ b` (full column rank assumed;
/// rank-deficient columns get zero).
pub fn lstsq<T: Real>(a: &Mat<T>, b: &[T]) -> Vec<T> {
    let (m, n) = (a.rows, a.cols);
    let mut r = a.clone();
    let mut y = b.to_vec();
    let mut diag_ok = vec![true; n];
    let tiny = T::epsilon() * lit(32.0);
    let col_scale: Vec<T> = (0..n)
        .map(|j| norm(&(0..m).map(|i| a.get(i, j)).collect::<Vec<_>>()))
        .collect();
    for k in 0..n.min(m) {
        let col: Vec<T> = (k..m).map(|i| r.get(i, k)).collect();
        let alpha = norm(&col);
        if alpha <= tiny * col_scale[k] || alpha == T::zero() {
            diag_ok[k] = false;
            continue;
        }
        let alpha = if col[0] > T::zero() { -alpha } else { alpha };
        let mut v = col;
        v[0] = v[0] - alpha;
        let vnorm2 = v.iter().fold(T::zero(), |s, x| s + *x * *x);
        if vnorm2 == T::zero() {
            continue;
        }
        for j in k..n {
            let dot = (k..m).fold(T::zero(), |s, i| s + v[i - k] * r.get(i, j));
            let f = lit::<T>(2.0) * dot / vnorm2;
            for i in k..m {
                let val = r.get(i, j) - f * v[i - k];
                r.set(i, j, val);
            }
        }
        let dot = (k..m).fold(T::zero(), |s, i| s + v[i - k] * y[i]);
        let f = lit::<T>(2.0) * dot / vnorm2;
        for i in k..m {
            y[i] = y[i] - f * v[i - k];
        }
    }
    let mut x = vec![T::zero(); n];
    for k in (0..n.min(m)).rev() {
        if !diag_ok[k] {
            continue;
        }
        let s = ((k + 1)..n).fold(y[k], |s, j| s - r.get(k, j) * x[j]);
        x[k] = s / r.get(k, k);
    }
    x
}

/// Lawson–Hanson non-negative least squares: min ‖Ax − b‖ subject to x ≥ 0.
pub fn nnls<T: Real>(a: &Mat<T>, b: &[T], max_iter: usize) -> Vec<T> {
    let n = a.cols;
    let mut x = vec![T::zero(); n];
    let mut passive = vec![false; n];
    let tol = T::epsilon() * lit(10.0) * lit::<T>(n as f64) * max_abs(&a.data).max(T::one());
    let residual = |x: &[T]| -> Vec<T> { a.mul_vec(x).iter().zip(b).map(|(ax, bi)| *bi - *ax).collect() };
    for _ in 0..max_iter {
        let r = residual(&x);
        // gradient w = Aᵀ r
        let w: Vec<T> = (0..n).map(|j| (0..a.rows).fold(T::zero(), |s, i| s + a.get(i, j) * r[i])).collect();
        let pick = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap_or(std::cmp::Ordering::Equal));
        match pick {
            Some(j) if w[j] > tol => passive[j] = true,
            _ => break,
        }
        loop {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let z_p = lstsq(&a.select_columns(&idx), b);
            if z_p.iter().all(|&z| z > T::zero()) {
                for (k, &j) in idx.iter().enumerate() {
                    x[j] = z_p[k];
                }
                break;
            }
            // step toward z until a passive variable hits zero
            let mut alpha = T::one();
            for (k, &j) in idx.iter().enumerate() {
                if z_p[k] <= T::zero() {
                    let denom = x[j] - z_p[k];
                    if denom > T::zero() {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            for (k, &j) in idx.iter().enumerate() {
                x[j] = x[j] + alpha * (z_p[k] - x[j]);
            }
            let floor = T::epsilon() * lit(100.0) * max_abs(&x).max(T::min_positive_value());
            for &j in &idx {
                if x[j] <= floor {
                    x[j] = T::zero();
                    passive[j] = false;
                }
            }
            if idx.iter().all(|&j| !passive[j]) {
                break;
            }
        }
    }
    x
}

fn max_abs<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Singular values (descending) by one-sided Jacobi rotations.
pub fn singular_values<T: Real>(a: &Mat<T>) -> Vec<T> {
    let (m, n) = (a.rows, a.cols);
    let mut u = a.clone();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                for i in 0..m {
                    let (up, uq) = (u.get(i, p), u.get(i, q));
                    alpha = alpha + up * up;
                    beta = beta + uq * uq;
                    gamma = gamma + up * uq;
                }
                if gamma.abs() <= T::epsilon() * (alpha * beta).sqrt() || gamma == T::zero() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (lit::<T>(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (up, uq) = (u.get(i, p), u.get(i, q));
                    u.set(i, p, c * up - s * uq);
                    u.set(i, q, s * up + c * uq);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<T> = (0..n).map(|j| norm(&(0..m).map(|i| u.get(i, j)).collect::<Vec<_>>())).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// 2-norm condition number.
pub fn condition_number<T: Real>(a: &Mat<T>) -> T {
    let sv = singular_values(a);
    let smin = *sv.last().unwrap_or(&T::zero());
    if smin == T::zero() {
        T::infinity()
    } else {
        sv[0] / smin
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_recovers_polynomial() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let a = Mat::from_fn(10, 3, |i, j| xs[i].powi(j as i32));
        let b: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x).collect();
        let c = lstsq(&a, &b);
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] + 2.0).abs() < 1e-12 && (c[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nnls_clamps_negative_component() {
        let a = Mat::from_fn(3, 2, |i, j| [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]][i][j]);
        let x: Vec<f64> = nnls(&a, &[2.0, -1.0, 1.0], 50);
        assert!(x[1] == 0.0);
        assert!((x[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn condition_of_diagonal() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { [1.0, 10.0, 100.0][i] } else { 0.0 });
        assert!((condition_number::<f64>(&a) - 100.0).abs() < 1e-10);
    }
}
