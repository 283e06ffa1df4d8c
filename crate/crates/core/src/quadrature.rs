//! Adaptive Gauss–Legendre quadrature over real or complex valued integrands.
//!
//! Each panel is integrated with an n-point rule and compared against the
//! same rule on its two halves; panels are split until the difference meets
//! the tolerance. Nodes are computed by Newton iteration in the working
//! precision, so quad-precision integrals are not limited by f64 tables.

use num_complex::Complex;

use crate::scalar::{int, lit, Real};

/// A value that can be accumulated by the integrator.
pub trait QuadValue<T: Real>: Clone + Send + Sync {
    fn zero_like(&self) -> Self;
    /// `self += a * x`
    fn axpy(&mut self, a: T, x: &Self);
    /// Max-norm distance, used for error control.
    fn dist(&self, other: &Self) -> T;
    fn magnitude(&self) -> T;
}

impl<T: Real> QuadValue<T> for T {
    fn zero_like(&self) -> Self {
        T::zero()
    }
    fn axpy(&mut self, a: T, x: &Self) {
        *self = *self + a * *x;
    }
    fn dist(&self, other: &Self) -> T {
        (*self - *other).abs()
    }
    fn magnitude(&self) -> T {
        self.abs()
    }
}

impl<T: Real> QuadValue<T> for Complex<T> {
    fn zero_like(&self) -> Self {
        Complex::new(T::zero(), T::zero())
    }
    fn axpy(&mut self, a: T, x: &Self) {
        *self = *self + x.scale(a);
    }
    fn dist(&self, other: &Self) -> T {
        let d = *self - *other;
        d.re.abs().max(d.im.abs())
    }
    fn magnitude(&self) -> T {
        self.re.abs().max(self.im.abs())
    }
}

impl<T: Real> QuadValue<T> for Vec<T> {
    fn zero_like(&self) -> Self {
        vec![T::zero(); self.len()]
    }
    fn axpy(&mut self, a: T, x: &Self) {
        for (s, v) in self.iter_mut().zip(x) {
            *s = *s + a * *v;
        }
    }
    fn dist(&self, other: &Self) -> T {
        self.iter()
            .zip(other)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }
    fn magnitude(&self) -> T {
        self.iter().fold(T::zero(), |m, a| m.max(a.abs()))
    }
}

impl<T: Real> QuadValue<T> for Vec<Complex<T>> {
    fn zero_like(&self) -> Self {
        vec![Complex::new(T::zero(), T::zero()); self.len()]
    }
    fn axpy(&mut self, a: T, x: &Self) {
        for (s, v) in self.iter_mut().zip(x) {
            *s = *s + v.scale(a);
        }
    }
    fn dist(&self, other: &Self) -> T {
        self.iter().zip(other).fold(T::zero(), |m, (a, b)| m.max((*a - *b).norm()))
    }
    fn magnitude(&self) -> T {
        self.iter().fold(T::zero(), |m, a| m.max(a.norm()))
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> GaussLegendre<T> {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![T::zero(); n];
        let mut weights = vec![T::zero(); n];
        let nt = int::<T>(n as i64);
        let eps = T::epsilon() * lit(4.0);
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let theta = T::PI() * (int::<T>(i as i64) + lit(0.75)) / (nt + lit(0.5));
            let mut x = theta.cos();
            let mut dp = T::one();
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x = x - dx;
                if dx.abs() <= eps {
                    let (_, d) = legendre_with_derivative(n, x);
                    dp = d;
                    break;
                }
            }
            let w = lit::<T>(2.0) / ((T::one() - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = T::zero();
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Fixed rule on [a, b].
    pub fn integrate<V, F>(&self, a: T, b: T, f: &mut F) -> V
    where
        V: QuadValue<T>,
        F: FnMut(T) -> V,
    {
        let half = (b - a) / lit(2.0);
        let mid = (a + b) / lit(2.0);
        let mut acc: Option<V> = None;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(mid + half * *x);
            match acc.as_mut() {
                None => {
                    let mut z = v.zero_like();
                    z.axpy(*w * half, &v);
                    acc = Some(z);
                }
                Some(s) => s.axpy(*w * half, &v),
            }
        }
        acc.expect("rule has at least one node")
    }
}

fn legendre_with_derivative<T: Real>(n: usize, x: T) -> (T, T) {
    let mut p0 = T::one();
    let mut p1 = x;
    for k in 2..=n {
        let kt = int::<T>(k as i64);
        let p2 = ((lit::<T>(2.0) * kt - T::one()) * x * p1 - (kt - T::one()) * p0) / kt;
        p0 = p1;
        p1 = p2;
    }
    let nt = int::<T>(n as i64);
    let d = nt * (x * p1 - p0) / (x * x - T::one());
    (p1, d)
}

/// Why an adaptive integration stopped short of its tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadFailure {
    /// Midpoint of the worst unresolved panel.
    pub at: f64,
    pub error_estimate: f64,
}

/// Result of an adaptive integration.
#[derive(Clone, Debug)]
pub struct Integral<V> {
    pub value: V,
    pub error: f64,
    pub evaluations: usize,
}

/// Adaptive panel integrator.
#[derive(Clone, Debug)]
pub struct Adaptive<T> {
    rule: GaussLegendre<T>,
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_depth: usize,
}

impl<T: Real> Adaptive<T> {
    pub fn new(order: usize, abs_tol: T, rel_tol: T) -> Self {
        Self { rule: GaussLegendre::new(order), abs_tol, rel_tol, max_depth: 40 }
    }

    /// 20-point rule with the given absolute tolerance.
    pub fn with_abs(abs_tol: f64) -> Self {
        Self::new(20, lit(abs_tol), T::zero())
    }

    pub fn rule(&self) -> &GaussLegendre<T> {
        &self.rule
    }

    /// Integrates over `[a, b]` starting from `panels` equal sub-panels.
    pub fn integrate<V, F>(&self, a: T, b: T, panels: usize, mut f: F) -> Result<Integral<V>, QuadFailure>
    where
        V: QuadValue<T>,
        F: FnMut(T) -> V,
    {
        let breaks: Vec<T> = (0..=panels.max(1))
            .map(|i| a + (b - a) * int::<T>(i as i64) / int::<T>(panels.max(1) as i64))
            .collect();
        self.integrate_breaks(&breaks, &mut f)
    }

    /// Integrates across consecutive break points (kinks, discontinuities).
    pub fn integrate_breaks<V, F>(&self, breaks: &[T], f: &mut F) -> Result<Integral<V>, QuadFailure>
    where
        V: QuadValue<T>,
        F: FnMut(T) -> V,
    {
        assert!(breaks.len() >= 2);
        let n = self.rule.order();
        let mut evals = 0usize;
        // Stack of (a, b, whole-panel estimate, depth).
        let mut stack: Vec<(T, T, V, usize)> = Vec::new();
        for w in breaks.windows(2).rev() {
            let est = self.rule.integrate(w[0], w[1], f);
            evals += n;
            stack.push((w[0], w[1], est, 0));
        }
        // Rough magnitude for the relative test; refined as panels converge.
        let mut scale = stack.iter().fold(T::zero(), |m, p| m + p.2.magnitude());
        let mut total: Option<V> = None;
        let mut err = T::zero();
        let mut worst: Option<QuadFailure> = None;
        let total_len = (breaks[breaks.len() - 1] - breaks[0]).abs();
        while let Some((a, b, whole, depth)) = stack.pop() {
            let m = (a + b) / lit(2.0);
            let left: V = self.rule.integrate(a, m, f);
            let right: V = self.rule.integrate(m, b, f);
            evals += 2 * n;
            let mut halves = left.clone();
            halves.axpy(T::one(), &right);
            let diff = halves.dist(&whole);
            let frac = if total_len > T::zero() { (b - a).abs() / total_len } else { T::one() };
            let tol = self.abs_tol.max(self.rel_tol * scale) * frac.max(lit(1e-3)).sqrt().min(T::one());
            if diff <= tol || diff <= T::epsilon() * lit(64.0) * halves.magnitude() {
                err = err + diff;
                match total.as_mut() {
                    None => total = Some(halves),
                    Some(t) => t.axpy(T::one(), &halves),
                }
            } else if depth >= self.max_depth {
                err = err + diff;
                let fail = QuadFailure {
                    at: crate::scalar::to_f64(m),
                    error_estimate: crate::scalar::to_f64(diff),
                };
                if worst.as_ref().is_none_or(|w| w.error_estimate < fail.error_estimate) {
                    worst = Some(fail);
                }
                match total.as_mut() {
                    None => total = Some(halves),
                    Some(t) => t.axpy(T::one(), &halves),
                }
            } else {
                scale = scale.max(halves.magnitude());
                stack.push((m, b, right, depth + 1));
                stack.push((a, m, left, depth + 1));
            }
        }
        if let Some(w) = worst {
            return Err(w);
        }
        Ok(Integral {
            value: total.expect("at least one panel"),
            error: crate::scalar::to_f64(err),
            evaluations: evals,
        })
    }
}

/// Integral over `[a, ∞)` of a function decaying at infinity, by mapping
/// successive panels of doubling width until the contribution is negligible.
pub fn integrate_to_infinity<T, V, F>(
    quad: &Adaptive<T>,
    a: T,
    first_width: T,
    mut f: F,
) -> Result<Integral<V>, QuadFailure>
where
    T: Real,
    V: QuadValue<T>,
    F: FnMut(T) -> V,
{
    let mut lo = a;
    let mut width = first_width;
    let mut total: Option<Integral<V>> = None;
    let mut quiet = 0;
    for _ in 0..200 {
        let hi = lo + width;
        let piece = quad.integrate(lo, hi, 1, &mut f)?;
        let small = piece.value.magnitude() <= quad.abs_tol.max(T::epsilon())
            || total
                .as_ref()
                .is_some_and(|t| piece.value.magnitude() <= T::epsilon() * t.value.magnitude());
        match total.as_mut() {
            None => total = Some(piece),
            Some(t) => {
                t.value.axpy(T::one(), &piece.value);
                t.error += piece.error;
                t.evaluations += piece.evaluations;
            }
        }
        quiet = if small { quiet + 1 } else { 0 };
        if quiet >= 3 {
            break;
        }
        lo = hi;
        width = width * lit(1.5);
    }
    Ok(total.expect("at least one panel"))
}
