//! Special functions: σ-derivatives of cos(t√σ), spherical and integer-order
//! Bessel functions, and the entire functions built from them.

use crate::scalar::{factorial, int, lit, Real};

/// Below this argument the power series is used for c⁽ᵏ⁾(w).
const SERIES_CUTOFF: f64 = 4.0;

/// c⁽ᵏ⁾(w) for k = 0..=kmax, where c(w) = cos(√w). Entire in w.
pub fn cos_sqrt_derivatives<T: Real>(w: T, kmax: usize) -> Vec<T> {
    if w < lit(SERIES_CUTOFF) {
        return (0..=kmax).map(|k| cos_sqrt_series(w, k)).collect();
    }
    cos_sqrt_closed(w, kmax)
}

fn cos_sqrt_closed<T: Real>(w: T, kmax: usize) -> Vec<T> {
    let z = w.sqrt();
    let mut out = Vec::with_capacity(kmax + 1);
    out.push(z.cos());
    if kmax == 0 {
        return out;
    }
    let j = spherical_bessel_j(kmax - 1, z);
    // c⁽ᵏ⁾(w) = (−1)ᵏ 2⁻ᵏ z^{1−k} j_{k−1}(z)
    let mut zpow = T::one(); // z^{1-k}
    let mut two = T::one();
    for k in 1..=kmax {
        two = two * lit(2.0);
        if k > 1 {
            zpow = zpow / z;
        }
        let sign = if k % 2 == 0 { T::one() } else { -T::one() };
        out.push(sign * zpow * j[k - 1] / two);
    }
    out
}

/// Σ_{m≥k} (−1)^m w^{m−k} m! / ((m−k)! (2m)!)
fn cos_sqrt_series<T: Real>(w: T, k: usize) -> T {
    let mut m = k;
    // first term (−1)^k k!/(2k)!
    let mut term = factorial::<T>(k) / factorial::<T>(2 * k);
    if k % 2 == 1 {
        term = -term;
    }
    let mut sum = term;
    loop {
        // ratio term(m+1)/term(m) = −w (m+1) / ((m+1−k) (2m+1)(2m+2))
        let mp1 = int::<T>(m as i64 + 1);
        term = -term * w * mp1
            / (int::<T>((m + 1 - k) as i64) * int::<T>(2 * m as i64 + 1) * int::<T>(2 * m as i64 + 2));
        sum = sum + term;
        m += 1;
        if term.abs() <= T::epsilon() * sum.abs().max(T::min_positive_value()) && m > k + 2 {
            break;
        }
        if m > k + 500 {
            break;
        }
    }
    sum
}

/// Spherical Bessel functions j_0..=j_nmax at z > 0.
pub fn spherical_bessel_j<T: Real>(nmax: usize, z: T) -> Vec<T> {
    let mut out = vec![T::zero(); nmax + 1];
    let j0 = z.sin() / z;
    if z > int::<T>(nmax as i64) {
        out[0] = j0;
        if nmax >= 1 {
            out[1] = z.sin() / (z * z) - z.cos() / z;
        }
        for n in 1..nmax {
            out[n + 1] = int::<T>(2 * n as i64 + 1) / z * out[n] - out[n - 1];
        }
        return out;
    }
    // Miller downward recurrence, normalized against j0 or j1.
    let len = nmax.max(1) + 1;
    let start = len + 20 + to_usize(z) + precision_digits::<T>();
    let mut next = T::zero();
    let mut cur = lit::<T>(1e-30);
    let mut store = vec![T::zero(); len];
    for n in (0..=start).rev() {
        if n < len {
            store[n] = cur;
        }
        if n == 0 {
            break;
        }
        let prev = int::<T>(2 * n as i64 + 1) / z * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > lit(1e100) {
            cur = cur * lit(1e-100);
            next = next * lit(1e-100);
            for s in store.iter_mut() {
                *s = *s * lit(1e-100);
            }
        }
    }
    let j1 = z.sin() / (z * z) - z.cos() / z;
    let scale = if j0.abs() >= j1.abs() { j0 / store[0] } else { j1 / store[1] };
    for n in 0..=nmax {
        out[n] = store[n] * scale;
    }
    out
}

fn to_usize<T: Real>(x: T) -> usize {
    x.to_f64().unwrap_or(0.0).max(0.0) as usize
}

fn precision_digits<T: Real>() -> usize {
    (-T::epsilon().log10()).to_f64().unwrap_or(16.0).ceil() as usize
}

/// Λ_ν(w) = Σ_m (−w/4)^m / (m! (m+ν)!), so that J_ν(z) = (z/2)^ν Λ_ν(z²).
pub fn bessel_lambda<T: Real>(nu: usize, w: T) -> T {
    if w < lit(16.0) {
        let mut term = T::one() / factorial::<T>(nu);
        let mut sum = term;
        let q = -w / lit(4.0);
        for m in 1..400 {
            term = term * q / (int::<T>(m as i64) * int::<T>((m + nu) as i64));
            sum = sum + term;
            if term.abs() <= T::epsilon() * sum.abs() {
                break;
            }
        }
        return sum;
    }
    let z = w.sqrt();
    let j = bessel_j_integer(nu, z);
    j[nu] / (z / lit(2.0)).powi(nu as i32)
}

/// J_0..=J_nmax(z) for z > 0 by Miller's downward recurrence.
pub fn bessel_j_integer<T: Real>(nmax: usize, z: T) -> Vec<T> {
    let start = {
        let base = nmax.max(to_usize(z)) + 20 + precision_digits::<T>();
        base + base % 2
    };
    let mut next = T::zero();
    let mut cur = lit::<T>(1e-30);
    let mut norm = T::zero();
    let mut store = vec![T::zero(); nmax + 1];
    for n in (0..=start).rev() {
        if n <= nmax {
            store[n] = cur;
        }
        if n == 0 {
            norm = norm + cur;
            break;
        }
        if n % 2 == 0 {
            norm = norm + lit::<T>(2.0) * cur;
        }
        let prev = lit::<T>(2.0) * int::<T>(n as i64) / z * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > lit(1e100) {
            cur = cur * lit(1e-100);
            next = next * lit(1e-100);
            norm = norm * lit(1e-100);
            for s in store.iter_mut() {
                *s = *s * lit(1e-100);
            }
        }
    }
    store.iter().map(|s| *s / norm).collect()
}

/// Φ_μ(w) = z^μ J_μ(z) with z = √w, for any integer μ, as an entire function of w.
/// Uses z^μ J_μ = 2^{−μ} w^μ Λ_μ(w) for μ ≥ 0 and J_{−p} = (−1)^p J_p.
pub fn z_pow_bessel<T: Real>(mu: i64, w: T) -> T {
    if mu >= 0 {
        let p = mu as usize;
        (w / lit(2.0)).powi(p as i32) * bessel_lambda(p, w)
    } else {
        let p = (-mu) as usize;
        let sign = if p % 2 == 0 { T::one() } else { -T::one() };
        sign * bessel_lambda(p, w) / lit::<T>(2.0).powi(p as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_and_closed_form_agree_at_cutoff() {
        for w in [SERIES_CUTOFF, 1.5, 9.0] {
            let closed = cos_sqrt_closed::<f64>(w, 12);
            for k in 0..=12 {
                let series = cos_sqrt_series(w, k);
                assert!((series - closed[k]).abs() <= 1e-12 * series.abs(), "w={w} k={k}");
            }
        }
    }

    #[test]
    fn first_derivative_of_cos_sqrt() {
        let w = 7.3f64;
        let d = cos_sqrt_derivatives(w, 1);
        assert!((d[1] + w.sqrt().sin() / (2.0 * w.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn spherical_bessel_small_and_large() {
        let z = 0.7f64;
        let j = spherical_bessel_j(3, z);
        let j2 = (3.0 / (z * z) - 1.0) * z.sin() / z - 3.0 * z.cos() / (z * z);
        assert!((j[2] - j2).abs() < 1e-15);
        let z = 30.0f64;
        let j = spherical_bessel_j(3, z);
        let j2 = (3.0 / (z * z) - 1.0) * z.sin() / z - 3.0 * z.cos() / (z * z);
        assert!((j[2] - j2).abs() < 1e-15);
    }

    #[test]
    fn bessel_j_against_reference() {
        // J_1(2.5) and J_2(20)
        let j = bessel_j_integer::<f64>(2, 2.5);
        assert!((j[1] - 0.497_094_102_464_274_4).abs() < 1e-14);
        let j = bessel_j_integer::<f64>(2, 20.0);
        assert!((j[2] + 0.160_341_351_922_998_23).abs() < 1e-14);
        let l = bessel_lambda::<f64>(1, 2.5 * 2.5);
        assert!((l * 1.25 - 0.497_094_102_464_274_4).abs() < 1e-14);
    }
}
