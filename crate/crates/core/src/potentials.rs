//! Potential models: radial profiles, fields on ℝⁿ, decay certificates and
//! level-set oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{int, lit, to_f64, unit_sphere_area, Real};

/// Bound |V(x)| ≤ A·exp(−B|x|^{1+ε}) plus sampled derivative bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayCertificate<T> {
    pub epsilon: T,
    pub a: T,
    pub b: T,
    /// Sampled sup bounds on |∂^α V| for |α| = 0, 1, 2.
    pub derivative_bounds: Vec<T>,
}

impl<T: Real> DecayCertificate<T> {
    pub fn bound(&self, r: T) -> T {
        self.a * (-self.b * r.powf(T::one() + self.epsilon)).exp()
    }

    /// Smallest L with A·exp(−B·L^{1+ε}) ≤ tol.
    pub fn radius(&self, tol: T) -> T {
        if self.a <= tol || self.a == T::zero() {
            return T::zero();
        }
        ((self.a / tol).ln() / self.b).powf(T::one() / (T::one() + self.epsilon))
    }
}

/// Monotone interpolation of r(ρ), ρ = √ln(max/s), used for recovered profiles.
#[derive(Clone, Debug, PartialEq)]
pub struct Tabulated<T> {
    pub max: T,
    pub rho: Vec<T>,
    pub r: Vec<T>,
    slopes: Vec<T>,
}

impl<T: Real> Tabulated<T> {
    pub fn new(max: T, rho: Vec<T>, r: Vec<T>) -> Result<Self> {
        if rho.len() < 2 || rho.len() != r.len() {
            return Err(Error::invalid("profile table", "need at least two matching nodes"));
        }
        for w in rho.windows(2).zip(r.windows(2)) {
            if !(w.0[1] > w.0[0]) || !(w.1[1] > w.1[0]) {
                return Err(Error::Monotonicity("profile table must be strictly increasing in ρ and r".into()));
            }
        }
        let slopes = pchip_slopes(&rho, &r);
        Ok(Self { max, rho, r, slopes })
    }

    fn r_of_rho(&self, p: T) -> (T, T) {
        let n = self.rho.len();
        if p >= self.rho[n - 1] {
            let d = self.slopes[n - 1];
            return (self.r[n - 1] + d * (p - self.rho[n - 1]), d);
        }
        let i = match self.rho.iter().position(|&x| x > p) {
            Some(0) | None => 0,
            Some(j) => j - 1,
        };
        hermite(self.rho[i], self.rho[i + 1], self.r[i], self.r[i + 1], self.slopes[i], self.slopes[i + 1], p)
    }

    fn rho_of_r(&self, r: T) -> T {
        let n = self.r.len();
        if r <= self.r[0] {
            return self.rho[0];
        }
        if r >= self.r[n - 1] {
            return self.rho[n - 1] + (r - self.r[n - 1]) / self.slopes[n - 1];
        }
        let i = self.r.iter().position(|&x| x > r).map_or(n - 2, |j| j - 1);
        let (mut lo, mut hi) = (self.rho[i], self.rho[i + 1]);
        for _ in 0..200 {
            let mid = (lo + hi) / lit(2.0);
            if self.r_of_rho(mid).0 < r {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= T::epsilon() * hi.max(T::one()) {
                break;
            }
        }
        (lo + hi) / lit(2.0)
    }

    fn max_slope(&self) -> T {
        self.slopes.iter().fold(T::zero(), |m, s| m.max(*s))
    }
}

fn pchip_slopes<T: Real>(x: &[T], y: &[T]) -> Vec<T> {
    let n = x.len();
    let h: Vec<T> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
    let del: Vec<T> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut d = vec![T::zero(); n];
    if n == 2 {
        d[0] = del[0];
        d[1] = del[0];
        return d;
    }
    for i in 1..n - 1 {
        if del[i - 1] * del[i] > T::zero() {
            let w1 = lit::<T>(2.0) * h[i] + h[i - 1];
            let w2 = h[i] + lit::<T>(2.0) * h[i - 1];
            d[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
        }
    }
    let end = |h0: T, h1: T, d0: T, d1: T| {
        let v = ((lit::<T>(2.0) * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if v * d0 <= T::zero() {
            T::zero()
        } else if d0 * d1 <= T::zero() && v.abs() > lit::<T>(3.0) * d0.abs() {
            lit::<T>(3.0) * d0
        } else {
            v
        }
    };
    d[0] = end(h[0], h[1], del[0], del[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    d
}

fn hermite<T: Real>(x0: T, x1: T, y0: T, y1: T, d0: T, d1: T, x: T) -> (T, T) {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let two = lit::<T>(2.0);
    let three = lit::<T>(3.0);
    let h00 = two * t3 - three * t2 + T::one();
    let h10 = t3 - two * t2 + t;
    let h01 = -two * t3 + three * t2;
    let h11 = t3 - t2;
    let y = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let dy = ((lit::<T>(6.0) * t2 - lit::<T>(6.0) * t) * (y0 - y1)) / h
        + (three * t2 - lit::<T>(4.0) * t + T::one()) * d0
        + (three * t2 - two * t) * d1;
    (y, dy)
}

#[derive(Clone, Debug, PartialEq)]
enum ProfileRepr<T> {
    /// Σ aᵢ exp(−r²/wᵢ²)
    Gaussians(Vec<(T, T)>),
    Tabulated(Tabulated<T>),
}

/// A radial profile R(r), decreasing on r > 0.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialProfile<T> {
    repr: ProfileRepr<T>,
}

/// R(r) = amplitude·exp(−r²/width²).
pub fn make_gaussian_profile<T: Real>(amplitude: T, width: T) -> Result<RadialProfile<T>> {
    make_gaussian_sum_profile(&[(amplitude, width)])
}

/// R(r) = Σ aᵢ exp(−r²/wᵢ²); still strictly decreasing on r > 0.
pub fn make_gaussian_sum_profile<T: Real>(terms: &[(T, T)]) -> Result<RadialProfile<T>> {
    if terms.is_empty() {
        return Err(Error::invalid("profile", "at least one Gaussian term required"));
    }
    for (a, w) in terms {
        if !(*a > T::zero()) {
            return Err(Error::invalid("amplitude", format!("must be positive, got {a}")));
        }
        if !(*w > T::zero()) {
            return Err(Error::invalid("width", format!("must be positive, got {w}")));
        }
    }
    Ok(RadialProfile { repr: ProfileRepr::Gaussians(terms.to_vec()) })
}

impl<T: Real> RadialProfile<T> {
    pub fn from_table(table: Tabulated<T>) -> Self {
        Self { repr: ProfileRepr::Tabulated(table) }
    }

    pub fn eval(&self, r: T) -> T {
        match &self.repr {
            ProfileRepr::Gaussians(t) => t.iter().fold(T::zero(), |s, (a, w)| s + *a * (-(r * r) / (*w * *w)).exp()),
            ProfileRepr::Tabulated(tab) => {
                let p = tab.rho_of_r(r.abs());
                tab.max * (-(p * p)).exp()
            }
        }
    }

    pub fn deriv(&self, r: T) -> T {
        match &self.repr {
            ProfileRepr::Gaussians(t) => t.iter().fold(T::zero(), |s, (a, w)| {
                s - lit::<T>(2.0) * r * *a / (*w * *w) * (-(r * r) / (*w * *w)).exp()
            }),
            ProfileRepr::Tabulated(tab) => {
                let p = tab.rho_of_r(r.abs());
                let (_, drdp) = tab.r_of_rho(p);
                -lit::<T>(2.0) * p * tab.max * (-(p * p)).exp() / drdp
            }
        }
    }

    pub fn max_value(&self) -> T {
        self.eval(T::zero())
    }

    /// R⁻¹(s) on the decreasing branch, for s ∈ (0, max].
    pub fn inverse(&self, s: T) -> T {
        let max = self.max_value();
        if s >= max {
            return T::zero();
        }
        match &self.repr {
            ProfileRepr::Gaussians(t) if t.len() == 1 => t[0].1 * (t[0].0 / s).ln().sqrt(),
            ProfileRepr::Gaussians(t) => {
                let wmax = t.iter().fold(T::zero(), |m, (_, w)| m.max(*w));
                let mut lo = T::zero();
                let mut hi = wmax * (max / s).ln().sqrt() + T::epsilon();
                for _ in 0..300 {
                    let mid = (lo + hi) / lit(2.0);
                    if self.eval(mid) > s {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= T::epsilon() * hi {
                        break;
                    }
                }
                // one Newton polish
                let x = (lo + hi) / lit(2.0);
                let d = self.deriv(x);
                if d != T::zero() {
                    let xn = x - (self.eval(x) - s) / d;
                    if xn >= lo && xn <= hi {
                        return xn;
                    }
                }
                x
            }
            ProfileRepr::Tabulated(tab) => {
                let p = (tab.max / s).ln().sqrt();
                tab.r_of_rho(p).0
            }
        }
    }

    pub fn effective_radius(&self, tol: T) -> T {
        if tol >= self.max_value() {
            T::zero()
        } else {
            self.inverse(tol)
        }
    }

    /// Certificate with ε = 1.
    pub fn certificate(&self) -> DecayCertificate<T> {
        match &self.repr {
            ProfileRepr::Gaussians(t) => {
                let wmax = t.iter().fold(T::zero(), |m, (_, w)| m.max(*w));
                DecayCertificate {
                    epsilon: T::one(),
                    a: self.max_value(),
                    b: T::one() / (wmax * wmax),
                    derivative_bounds: Vec::new(),
                }
            }
            ProfileRepr::Tabulated(tab) => {
                let s = tab.max_slope();
                DecayCertificate { epsilon: T::one(), a: tab.max, b: T::one() / (s * s), derivative_bounds: Vec::new() }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FieldKind<T> {
    Free,
    Radial { profile: RadialProfile<T>, center: Vec<T> },
    /// One-dimensional Σ aᵢ exp(−(x−cᵢ)²/wᵢ²); radial only by accident.
    GaussianSum { terms: Vec<(T, T, T)> },
    /// height on the open interval (left, right), zero elsewhere.
    SquareBarrier { height: T, left: T, right: T },
}

/// A nonnegative potential on ℝⁿ with gradient and decay certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField<T> {
    n: usize,
    kind: FieldKind<T>,
    coupling: T,
    certificate: DecayCertificate<T>,
}

fn check_dimension(n: usize) -> Result<()> {
    if n == 0 || n % 2 == 0 {
        return Err(Error::invalid("n", format!("dimension must be odd and positive, got {n}")));
    }
    Ok(())
}

/// V(x) = R(|x − center|).
pub fn radialize<T: Real>(profile: RadialProfile<T>, n: usize, center: &[T]) -> Result<PotentialField<T>> {
    check_dimension(n)?;
    if center.len() != n {
        return Err(Error::invalid("center", format!("expected {n} coordinates, got {}", center.len())));
    }
    let base = profile.certificate();
    let c2 = center.iter().fold(T::zero(), |s, c| s + *c * *c);
    // |x−c|² ≥ |x|²/2 − |c|² turns the centred bound into one about the origin.
    let certificate = if c2 == T::zero() {
        base
    } else {
        DecayCertificate { epsilon: T::one(), a: base.a * (base.b * c2).exp(), b: base.b / lit(2.0), derivative_bounds: vec![] }
    };
    PotentialField::assemble(n, FieldKind::Radial { profile, center: center.to_vec() }, certificate)
}

/// A smooth, nonnegative, non-radial 1-D field: Σ aᵢ exp(−(x−cᵢ)²/wᵢ²).
pub fn make_asymmetric_field<T: Real>(terms: &[(T, T, T)]) -> Result<PotentialField<T>> {
    if terms.len() < 2 {
        return Err(Error::invalid("components", "need at least two components"));
    }
    for (a, w, _) in terms {
        if !(*a > T::zero()) || !(*w > T::zero()) {
            return Err(Error::invalid("components", "amplitudes and widths must be positive"));
        }
    }
    let distinct = terms.iter().any(|t| t.1 != terms[0].1 || t.0 != terms[0].0);
    if !distinct {
        return Err(Error::invalid("components", "identical components give a symmetric field"));
    }
    let mut a = T::zero();
    let mut b = T::infinity();
    for (amp, w, c) in terms {
        a = a + *amp * (*c * *c / (*w * *w)).exp();
        b = b.min(T::one() / (lit::<T>(2.0) * *w * *w));
    }
    let cert = DecayCertificate { epsilon: T::one(), a, b, derivative_bounds: vec![] };
    PotentialField::assemble(1, FieldKind::GaussianSum { terms: terms.to_vec() }, cert)
}

/// Height on (left, right), zero elsewhere. Not smooth; used to validate the resonance solver.
pub fn make_square_barrier<T: Real>(height: T, left: T, right: T) -> Result<PotentialField<T>> {
    if !(height > T::zero()) {
        return Err(Error::invalid("height", "must be positive"));
    }
    if !(right > left) {
        return Err(Error::invalid("right", "must exceed left"));
    }
    let r = left.abs().max(right.abs());
    let cert = DecayCertificate { epsilon: T::one(), a: height * (r * r).exp(), b: T::one(), derivative_bounds: vec![] };
    PotentialField::assemble(1, FieldKind::SquareBarrier { height, left, right }, cert)
}

pub fn make_free_field<T: Real>(n: usize) -> Result<PotentialField<T>> {
    check_dimension(n)?;
    let cert = DecayCertificate { epsilon: T::one(), a: T::zero(), b: T::one(), derivative_bounds: vec![] };
    PotentialField::assemble(n, FieldKind::Free, cert)
}

impl<T: Real> PotentialField<T> {
    fn assemble(n: usize, kind: FieldKind<T>, certificate: DecayCertificate<T>) -> Result<Self> {
        let mut f = Self { n, kind, coupling: T::one(), certificate };
        f.certificate.derivative_bounds = f.sample_derivative_bounds();
        Ok(f)
    }

    fn sample_derivative_bounds(&self) -> Vec<T> {
        if matches!(self.kind, FieldKind::Free) {
            return vec![T::zero(); 3];
        }
        let l = self.support_radius(lit(1e-14)).max(T::one());
        let steps = 2000;
        let mut b = vec![T::zero(); 3];
        let h = lit::<T>(1e-4);
        for i in 0..=steps {
            let x = -l + lit::<T>(2.0) * l * int::<T>(i) / int::<T>(steps);
            let mut p = vec![T::zero(); self.n];
            p[0] = x;
            b[0] = b[0].max(self.eval(&p));
            let g = self.grad(&p);
            b[1] = b[1].max(g.iter().fold(T::zero(), |m, v| m.max(v.abs())));
            let mut pp = p.clone();
            pp[0] = x + h;
            let mut pm = p.clone();
            pm[0] = x - h;
            let d2 = (self.grad(&pp)[0] - self.grad(&pm)[0]) / (lit::<T>(2.0) * h);
            if d2.is_finite() {
                b[2] = b[2].max(d2.abs());
            }
        }
        b
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &FieldKind<T> {
        &self.kind
    }

    pub fn coupling(&self) -> T {
        self.coupling
    }

    pub fn certificate(&self) -> &DecayCertificate<T> {
        &self.certificate
    }

    pub fn is_free(&self) -> bool {
        matches!(self.kind, FieldKind::Free) || self.coupling == T::zero()
    }

    /// Multiplies the field by `factor` (V → factor·V).
    pub fn scaled(&self, factor: T) -> Self {
        let mut f = self.clone();
        f.coupling = f.coupling * factor;
        f.certificate.a = f.certificate.a * factor.abs();
        for b in f.certificate.derivative_bounds.iter_mut() {
            *b = *b * factor.abs();
        }
        f
    }

    /// V(· − shift).
    pub fn translated(&self, shift: &[T]) -> Result<Self> {
        if shift.len() != self.n {
            return Err(Error::invalid("shift", "dimension mismatch"));
        }
        let kind = match &self.kind {
            FieldKind::Free => FieldKind::Free,
            FieldKind::Radial { profile, center } => FieldKind::Radial {
                profile: profile.clone(),
                center: center.iter().zip(shift).map(|(c, s)| *c + *s).collect(),
            },
            FieldKind::GaussianSum { terms } => FieldKind::GaussianSum {
                terms: terms.iter().map(|(a, w, c)| (*a, *w, *c + shift[0])).collect(),
            },
            FieldKind::SquareBarrier { height, left, right } => FieldKind::SquareBarrier {
                height: *height,
                left: *left + shift[0],
                right: *right + shift[0],
            },
        };
        // Shift the certificate's anchor as in `radialize`.
        let s2 = shift.iter().fold(T::zero(), |s, c| s + *c * *c);
        let mut cert = self.certificate.clone();
        if s2 > T::zero() && cert.a > T::zero() {
            cert.a = cert.a * (cert.b * s2).exp();
            cert.b = cert.b / lit(2.0);
        }
        Ok(Self { n: self.n, kind, coupling: self.coupling, certificate: cert })
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.coupling * self.eval_unit(x)
    }

    fn eval_unit(&self, x: &[T]) -> T {
        match &self.kind {
            FieldKind::Free => T::zero(),
            FieldKind::Radial { profile, center } => profile.eval(distance(x, center)),
            FieldKind::GaussianSum { terms } => terms.iter().fold(T::zero(), |s, (a, w, c)| {
                let d = x[0] - *c;
                s + *a * (-(d * d) / (*w * *w)).exp()
            }),
            FieldKind::SquareBarrier { height, left, right } => {
                if x[0] > *left && x[0] < *right {
                    *height
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn grad(&self, x: &[T]) -> Vec<T> {
        let g = match &self.kind {
            FieldKind::Free | FieldKind::SquareBarrier { .. } => vec![T::zero(); self.n],
            FieldKind::Radial { profile, center } => {
                let r = distance(x, center);
                if r == T::zero() {
                    vec![T::zero(); self.n]
                } else {
                    let d = profile.deriv(r);
                    x.iter().zip(center).map(|(xi, ci)| d * (*xi - *ci) / r).collect()
                }
            }
            FieldKind::GaussianSum { terms } => vec![terms.iter().fold(T::zero(), |s, (a, w, c)| {
                let d = x[0] - *c;
                s - lit::<T>(2.0) * d * *a / (*w * *w) * (-(d * d) / (*w * *w)).exp()
            })],
        };
        g.into_iter().map(|v| v * self.coupling).collect()
    }

    /// V on the real line (n = 1).
    pub fn eval1(&self, x: T) -> T {
        self.eval(&[x])
    }

    /// V′ on the real line (n = 1).
    pub fn deriv1(&self, x: T) -> T {
        self.grad(&[x])[0]
    }

    /// |∇V|² at x.
    pub fn grad_norm_sq(&self, x: &[T]) -> T {
        self.grad(x).iter().fold(T::zero(), |s, g| s + *g * *g)
    }

    /// Points where V is not smooth (n = 1).
    pub fn breakpoints(&self) -> Vec<T> {
        match &self.kind {
            FieldKind::SquareBarrier { left, right, .. } => vec![*left, *right],
            _ => Vec::new(),
        }
    }

    /// Radius beyond which |V| ≤ tol, from the certificate (and exact support if compact).
    pub fn support_radius(&self, tol: T) -> T {
        if self.is_free() {
            return T::zero();
        }
        let r = self.certificate.radius(tol);
        match &self.kind {
            FieldKind::SquareBarrier { left, right, .. } => r.min(left.abs().max(right.abs())),
            _ => r,
        }
    }

    pub fn radial_profile(&self) -> Option<(&RadialProfile<T>, &[T])> {
        match &self.kind {
            FieldKind::Radial { profile, center } => Some((profile, center)),
            _ => None,
        }
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.kind, FieldKind::Radial { .. } | FieldKind::Free)
    }

    /// Maximum of V and a maximizer along the first axis.
    pub fn max_value(&self) -> (T, T) {
        match &self.kind {
            FieldKind::Free => (T::zero(), T::zero()),
            FieldKind::Radial { profile, center } => (self.coupling * profile.max_value(), center[0]),
            FieldKind::SquareBarrier { height, left, right } => {
                (self.coupling * *height, (*left + *right) / lit(2.0))
            }
            FieldKind::GaussianSum { .. } => {
                let l = self.support_radius(lit(1e-14));
                let x = argmax_1d(|x| self.eval1(x), -l, l, 20000);
                (self.eval1(x), x)
            }
        }
    }
}

fn distance<T: Real>(x: &[T], c: &[T]) -> T {
    x.iter().zip(c).fold(T::zero(), |s, (a, b)| s + (*a - *b) * (*a - *b)).sqrt()
}

/// Sampled maximum refined by golden-section search.
pub fn argmax_1d<T: Real>(f: impl Fn(T) -> T, lo: T, hi: T, samples: usize) -> T {
    let mut best = lo;
    let mut best_v = f(lo);
    let step = (hi - lo) / int::<T>(samples as i64);
    for i in 1..=samples {
        let x = lo + step * int::<T>(i as i64);
        let v = f(x);
        if v > best_v {
            best_v = v;
            best = x;
        }
    }
    golden_max(&f, best - step, best + step, lit(1e-12))
}

pub fn golden_max<T: Real>(f: &impl Fn(T) -> T, mut a: T, mut b: T, tol: T) -> T {
    let g = (lit::<T>(5.0).sqrt() - T::one()) / lit(2.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..400 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / lit(2.0)
}

/// The level set {V = s}: preimages (n = 1) or sphere radius (radial).
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetOracle<T> {
    pub level: T,
    pub dimension: usize,
    pub preimages: Vec<T>,
    pub sphere_radius: Option<T>,
    /// |∇V| at each preimage (one value for a sphere).
    pub grad_norms: Vec<T>,
}

impl<T: Real> LevelSetOracle<T> {
    pub fn count(&self) -> usize {
        if self.sphere_radius.is_some() {
            1
        } else {
            self.preimages.len()
        }
    }

    /// Perimeter proxy P(s): number of points (n = 1) or sphere area.
    pub fn perimeter(&self) -> T {
        match self.sphere_radius {
            Some(r) if self.dimension > 1 => {
                unit_sphere_area::<T>(self.dimension) * r.powi(self.dimension as i32 - 1)
            }
            _ => int(self.preimages.len() as i64),
        }
    }

    /// a(s) = ∫_{V=s} |∇V|⁻¹ dS.
    pub fn inverse_grad_sum(&self) -> T {
        match self.sphere_radius {
            Some(_) if self.dimension > 1 => self.perimeter() / self.grad_norms[0],
            _ => self.grad_norms.iter().fold(T::zero(), |s, g| s + T::one() / *g),
        }
    }

    /// b(s) = ∫_{V=s} |∇V| dS.
    pub fn grad_sum(&self) -> T {
        match self.sphere_radius {
            Some(_) if self.dimension > 1 => self.perimeter() * self.grad_norms[0],
            _ => self.grad_norms.iter().fold(T::zero(), |s, g| s + *g),
        }
    }

    /// a·b/P² − 1, zero exactly when |∇V| is constant on the level.
    pub fn cs_defect(&self) -> T {
        let p = self.perimeter();
        self.inverse_grad_sum() * self.grad_sum() / (p * p) - T::one()
    }
}

const DEGENERATE_GRAD: f64 = 1e-8;
/// Relative distance of a critical value from s that counts as tangency.
const TANGENT_LEVEL: f64 = 1e-9;

/// Locates {V = s} for n = 1 fields, or the sphere for radial fields.
pub fn level_set_oracle<T: Real>(field: &PotentialField<T>, s: T) -> Result<LevelSetOracle<T>> {
    let (vmax, _) = field.max_value();
    if !(s > T::zero() && s < vmax) {
        return Err(Error::invalid("s", format!("level must lie in (0, max V = {vmax}), got {s}")));
    }
    if field.dimension() > 1 {
        let (profile, _) = field
            .radial_profile()
            .ok_or_else(|| Error::invalid("field", "level sets for n > 1 need a radial field"))?;
        let r = profile.inverse(s / field.coupling());
        let g = (profile.deriv(r) * field.coupling()).abs();
        if g < lit(DEGENERATE_GRAD) {
            return Err(Error::DegenerateLevel { level: to_f64(s), at: to_f64(r), grad: to_f64(g) });
        }
        return Ok(LevelSetOracle {
            level: s,
            dimension: field.dimension(),
            preimages: vec![],
            sphere_radius: Some(r),
            grad_norms: vec![g],
        });
    }
    let l = field.support_radius(s * lit(1e-3)) + T::one();
    let samples = 40_000usize;
    let step = lit::<T>(2.0) * l / int::<T>(samples as i64);
    let f = |x: T| field.eval1(x) - s;
    let mut roots = Vec::new();
    let mut x_prev = -l;
    let mut f_prev = f(x_prev);
    let d = |x: T| field.deriv1(x);
    let mut d_prev = d(x_prev);
    for i in 1..=samples {
        let x = -l + step * int::<T>(i as i64);
        let fx = f(x);
        if (f_prev < T::zero()) != (fx < T::zero()) {
            roots.push(bisect(&f, x_prev, x));
        }
        // a tangency would slip through the sign scan
        let dx = d(x);
        if (d_prev < T::zero()) != (dx < T::zero()) {
            let c = bisect(&d, x_prev, x);
            if f(c).abs() <= s * lit(TANGENT_LEVEL) {
                return Err(Error::DegenerateLevel { level: to_f64(s), at: to_f64(c), grad: to_f64(d(c).abs()) });
            }
        }
        x_prev = x;
        f_prev = fx;
        d_prev = dx;
    }
    let mut grads = Vec::with_capacity(roots.len());
    for &x in &roots {
        let g = field.deriv1(x).abs();
        if g < lit(DEGENERATE_GRAD) {
            return Err(Error::DegenerateLevel { level: to_f64(s), at: to_f64(x), grad: to_f64(g) });
        }
        grads.push(g);
    }
    Ok(LevelSetOracle { level: s, dimension: 1, preimages: roots, sphere_radius: None, grad_norms: grads })
}

fn bisect<T: Real>(f: &impl Fn(T) -> T, mut a: T, mut b: T) -> T {
    let fa_neg = f(a) < T::zero();
    for _ in 0..200 {
        let m = (a + b) / lit(2.0);
        if (f(m) < T::zero()) == fa_neg {
            a = m;
        } else {
            b = m;
        }
        if (b - a).abs() <= T::epsilon() * lit::<T>(4.0) * (T::one() + m.abs()) {
            break;
        }
    }
    (a + b) / lit(2.0)
}

/// Declarative potential description, as read from config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Vec<f64>,
        #[serde(default = "one")]
        n: usize,
    },
    /// Radial sum of centred Gaussians, all sharing `center`.
    RadialSum {
        components: Vec<Component>,
        #[serde(default)]
        center: Vec<f64>,
        #[serde(default = "one")]
        n: usize,
    },
    /// 1-D sum of Gaussians with individual centres (generally not radial).
    GaussianSum { components: Vec<Component> },
    SquareBarrier { height: f64, left: f64, right: f64 },
    Free {
        #[serde(default = "one")]
        n: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub amplitude: f64,
    pub width: f64,
    #[serde(default)]
    pub center: f64,
}

impl FieldSpec {
    pub fn dimension(&self) -> usize {
        match self {
            FieldSpec::Gaussian { n, .. } | FieldSpec::RadialSum { n, .. } | FieldSpec::Free { n } => *n,
            _ => 1,
        }
    }

    pub fn build<T: Real>(&self) -> Result<PotentialField<T>> {
        let center_of = |c: &[f64], n: usize| -> Result<Vec<T>> {
            match c.len() {
                0 => Ok(vec![T::zero(); n]),
                l if l == n => Ok(c.iter().map(|v| lit(*v)).collect()),
                l => Err(Error::invalid("center", format!("expected {n} coordinates, got {l}"))),
            }
        };
        match self {
            FieldSpec::Gaussian { amplitude, width, center, n } => {
                radialize(make_gaussian_profile(lit(*amplitude), lit(*width))?, *n, &center_of(center, *n)?)
            }
            FieldSpec::RadialSum { components, center, n } => {
                let terms: Vec<(T, T)> = components.iter().map(|c| (lit(c.amplitude), lit(c.width))).collect();
                radialize(make_gaussian_sum_profile(&terms)?, *n, &center_of(center, *n)?)
            }
            FieldSpec::GaussianSum { components } => {
                let terms: Vec<(T, T, T)> =
                    components.iter().map(|c| (lit(c.amplitude), lit(c.width), lit(c.center))).collect();
                make_asymmetric_field(&terms)
            }
            FieldSpec::SquareBarrier { height, left, right } => make_square_barrier(lit(*height), lit(*left), lit(*right)),
            FieldSpec::Free { n } => make_free_field(*n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_profile_examples() {
        let p = make_gaussian_profile(1.0f64, 1.0).unwrap();
        assert_eq!(p.eval(0.0), 1.0);
        assert!((p.inverse((-1.0f64).exp()) - 1.0).abs() < 1e-14);
        let p2 = make_gaussian_profile(2.0f64, 1.0).unwrap();
        let r = p2.effective_radius(1e-14);
        assert!((2.0 * (-r * r).exp() - 1e-14).abs() < 1e-24);
        assert!((r - 5.74).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_gaussian_profile(0.0f64, 1.0).is_err());
        assert!(make_gaussian_profile(1.0f64, -1.0).is_err());
        let p = make_gaussian_profile(1.0f64, 1.0).unwrap();
        assert!(radialize(p, 2, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn tabulated_matches_gaussian() {
        let rho: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let r = rho.clone();
        let tab = Tabulated::new(1.0, rho, r).unwrap();
        let p = RadialProfile::from_table(tab);
        for x in [0.0, 0.3, 1.0, 2.2, 6.0] {
            assert!((p.eval(x) - (-x * x).exp()).abs() < 1e-13);
            assert!((p.deriv(x) + 2.0 * x * (-x * x).exp()).abs() < 1e-12);
        }
        assert!((p.inverse(0.5) - (2f64.ln()).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn level_sets_of_two_bump_field() {
        let f = make_asymmetric_field(&[(1.0f64, 1.0, 0.0), (0.5, 0.5, 3.0)]).unwrap();
        let o = level_set_oracle(&f, 0.4).unwrap();
        assert_eq!(o.count(), 4);
        assert!(o.cs_defect() > 0.0);
    }
}
