//! Admissible test-function pairs (g, f) with f(τ²) = g(τ).
//!
//! Everything is driven by the Fourier side ĝ: g(τ) = (1/π)∫₀^∞ ĝ(t)cos(tτ)dt and
//! f(σ) = (1/π)∫₀^∞ ĝ(t)cos(t√σ)dt, so σ-derivatives of f stay smooth through σ = 0.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_to_infinity, Adaptive, QuadFailure};
use crate::scalar::{factorial, gamma_half, int, lit, rel_diff, to_f64, unit_sphere_area, Real};
use crate::special::cos_sqrt_derivatives;

/// Smooth bump ĝ supported on t₀ < |t| < T.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub t0: f64,
    #[serde(rename = "t1")]
    pub t1: f64,
}

impl Default for BumpSpec {
    fn default() -> Self {
        Self { t0: 1.0, t1: 3.0 }
    }
}

impl BumpSpec {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        if !(t0 > 0.0) {
            return Err(Error::invalid("t0", format!("inner radius must be positive, got {t0}")));
        }
        if !(t1 > t0) {
            return Err(Error::invalid("t1", format!("outer radius must exceed t0, got {t1}")));
        }
        Ok(Self { t0, t1 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairKind {
    Bump(BumpSpec),
    /// f(τ) = e^{−τ}, g(τ) = e^{−τ²}: not admissible, used to calibrate constants.
    Gaussian,
}

/// Tolerance for the Fourier-side integrals.
const FOURIER_TOL: f64 = 1e-13;
/// Relative agreement demanded of the two momentum-integral routes.
const ROUTE_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct TestFunctionPair<T> {
    kind: PairKind,
    lambda: T,
    k_max: usize,
    quad: Adaptive<T>,
    /// Shared by every rescaling of the same base pair.
    table: Arc<OnceLock<Arc<RadialTable<T>>>>,
}

/// Builds the pair for a bump.
pub fn build_pair<T: Real>(spec: BumpSpec, k_max: usize) -> Result<TestFunctionPair<T>> {
    BumpSpec::new(spec.t0, spec.t1)?;
    if k_max < 3 {
        return Err(Error::invalid("k_max", "must be at least 3"));
    }
    Ok(TestFunctionPair::new(PairKind::Bump(spec), k_max))
}

/// The calibration pair f(τ) = e^{−τ}.
pub fn gaussian_pair<T: Real>(k_max: usize) -> TestFunctionPair<T> {
    TestFunctionPair::new(PairKind::Gaussian, k_max)
}

impl<T: Real> TestFunctionPair<T> {
    fn new(kind: PairKind, k_max: usize) -> Self {
        let tol = lit::<T>(FOURIER_TOL).max(T::epsilon() * lit(100.0));
        Self {
            kind,
            lambda: T::one(),
            k_max,
            quad: Adaptive::new(20, tol, T::epsilon() * lit(100.0)),
            table: Arc::new(OnceLock::new()),
        }
    }

    pub fn kind(&self) -> PairKind {
        self.kind
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Sets the absolute tolerance of the Fourier-side quadratures.
    pub fn with_tolerance(mut self, tol: T) -> Self {
        self.quad.abs_tol = tol;
        self
    }

    /// f_λ(σ) = f(σ/λ).
    pub fn scale(&self, lambda: T) -> Self {
        assert!(lambda >= T::one(), "scaling parameter must be ≥ 1");
        let mut p = self.clone();
        p.lambda = self.lambda * lambda;
        p
    }

    /// Support of ĝ on t > 0 (None for the Gaussian pair).
    pub fn support(&self) -> Option<(T, T)> {
        match self.kind {
            PairKind::Bump(b) => {
                let s = self.lambda.sqrt();
                Some((lit::<T>(b.t0) / s, lit::<T>(b.t1) / s))
            }
            PairKind::Gaussian => None,
        }
    }

    /// ĝ_λ(t) = √λ ĝ(√λ t).
    pub fn ghat(&self, t: T) -> T {
        let s = self.lambda.sqrt();
        s * self.ghat_unit(s * t)
    }

    fn ghat_unit(&self, t: T) -> T {
        match self.kind {
            PairKind::Bump(b) => {
                let c = lit::<T>((b.t0 + b.t1) / 2.0);
                let hw = lit::<T>((b.t1 - b.t0) / 2.0);
                let u = (t.abs() - c) / hw;
                if u.abs() >= T::one() {
                    T::zero()
                } else {
                    (-T::one() / (T::one() - u * u)).exp()
                }
            }
            PairKind::Gaussian => T::PI().sqrt() * (-(t * t) / lit(4.0)).exp(),
        }
    }

    /// Distance beyond which g and its derivatives are below 10⁻¹⁸·g(0). The
    /// bump's transform decays like τ^{-3/4}exp(−√(2wτ)) with w the half-width
    /// of its support; this sets the trapezoid step used for tables.
    fn alias_margin(&self) -> T {
        match self.kind {
            PairKind::Gaussian => lit(20.0),
            PairKind::Bump(b) => lit::<T>(1200.0 / ((b.t1 - b.t0) / 2.0)),
        }
    }

    /// ∫₀^∞ t^m ĝ(t) dt.
    pub fn ghat_moment(&self, m: usize) -> Result<T> {
        self.fourier_integral(T::zero(), |t| t.powi(m as i32))
            .map_err(|f| Error::quad(format!("∫ t^{m} ĝ"), f))
    }

    /// ∫ ĝ(t)·w(t) dt over the positive support, resolving oscillation at `freq`.
    fn fourier_integral(&self, freq: T, w: impl Fn(T) -> T) -> std::result::Result<T, QuadFailure> {
        match self.support() {
            Some((a, b)) => {
                let panels = 4 + to_f64(freq * (b - a) / T::PI()).ceil().max(0.0) as usize;
                Ok(self.quad.integrate(a, b, panels, |t| self.ghat(t) * w(t))?.value)
            }
            None => {
                let width = lit::<T>(2.0) / self.lambda.sqrt();
                let width = if freq > T::one() { width.min(T::PI() / freq) } else { width };
                Ok(integrate_to_infinity(&self.quad, T::zero(), width, |t| self.ghat(t) * w(t))?.value)
            }
        }
    }

    /// g^{(j)}(τ) for j = 0..=jmax.
    pub fn g_derivs(&self, tau: T, jmax: usize) -> Result<Vec<T>> {
        if let PairKind::Gaussian = self.kind {
            // g_λ(τ) = exp(−τ²/λ); derivatives via Hermite polynomials.
            let s = self.lambda.sqrt();
            let x = tau / s;
            let e = (-(x * x)).exp();
            let mut h = vec![T::one(), lit::<T>(2.0) * x];
            for j in 1..jmax {
                let next = lit::<T>(2.0) * x * h[j] - lit::<T>(2.0) * int::<T>(j as i64) * h[j - 1];
                h.push(next);
            }
            return Ok((0..=jmax)
                .map(|j| {
                    let sign = if j % 2 == 0 { T::one() } else { -T::one() };
                    sign * h[j] * e / s.powi(j as i32)
                })
                .collect());
        }
        let (a, b) = self.support().expect("bump support");
        let panels = 4 + to_f64(tau.abs() * (b - a) / T::PI()).ceil() as usize;
        let zero = vec![T::zero(); jmax + 1];
        let r = self
            .quad
            .integrate(a, b, panels, |t| {
                let gh = self.ghat(t);
                let x = t * tau;
                let (sn, cs) = (x.sin(), x.cos());
                let mut out = zero.clone();
                let mut tp = T::one();
                for (j, o) in out.iter_mut().enumerate() {
                    // cos^{(j)} cycles through cos, −sin, −cos, sin
                    let d = match j % 4 {
                        0 => cs,
                        1 => -sn,
                        2 => -cs,
                        _ => sn,
                    };
                    *o = gh * tp * d;
                    tp = tp * t;
                }
                out
            })
            .map_err(|f| Error::Quadrature { context: format!("g derivatives at τ = {tau}"), at: f.at, estimate: f.error_estimate })?;
        Ok(r.value.into_iter().map(|v| v / T::PI()).collect())
    }

    pub fn g(&self, tau: T) -> Result<T> {
        Ok(self.g_derivs(tau, 0)?[0])
    }

    /// f^{(k)}(σ) for k = 0..=kmax.
    pub fn f_derivs(&self, sigma: T, kmax: usize) -> Result<Vec<T>> {
        if let PairKind::Gaussian = self.kind {
            let e = (-sigma / self.lambda).exp();
            return Ok((0..=kmax)
                .map(|k| {
                    let sign = if k % 2 == 0 { T::one() } else { -T::one() };
                    sign * e / self.lambda.powi(k as i32)
                })
                .collect());
        }
        let (a, b) = self.support().expect("bump support");
        let root = sigma.abs().sqrt();
        let panels = 4 + to_f64(root * (b - a) / T::PI()).ceil() as usize;
        let r = self
            .quad
            .integrate(a, b, panels, |t| {
                let gh = self.ghat(t);
                let c = cos_sqrt_derivatives(t * t * sigma, kmax);
                let t2 = t * t;
                let mut tp = T::one();
                c.into_iter()
                    .map(|ck| {
                        let v = gh * tp * ck;
                        tp = tp * t2;
                        v
                    })
                    .collect::<Vec<T>>()
            })
            .map_err(|f| Error::Quadrature {
                context: format!("f^(k) for k ≤ {kmax} at σ = {sigma}"),
                at: f.at,
                estimate: f.error_estimate,
            })?;
        Ok(r.value.into_iter().map(|v| v / T::PI()).collect())
    }

    pub fn f(&self, sigma: T) -> Result<T> {
        Ok(self.f_derivs(sigma, 0)?[0])
    }

    /// f^{(k)}(σ) alone.
    pub fn f_deriv(&self, sigma: T, k: usize) -> Result<T> {
        Ok(self.f_derivs(sigma, k)?[k])
    }

    /// f_λ^{(k)}(σ) for k = 0..=3 from the cached table (σ ≥ 0).
    pub fn f_fast(&self, sigma: T) -> [T; TABLE_ORDER + 1] {
        let table = self.radial_table();
        let rho = (sigma.max(T::zero()) / self.lambda).sqrt();
        let mut v = table.eval(rho);
        let mut scale = T::one();
        for x in v.iter_mut() {
            *x = *x * scale;
            scale = scale / self.lambda;
        }
        v
    }

    /// g_λ'(τ) = 2τ f_λ'(τ²) from the table.
    pub fn g_prime_fast(&self, tau: T) -> T {
        lit::<T>(2.0) * tau * self.f_fast(tau * tau)[1]
    }

    /// Largest momentum |ξ| at which the scaled pair's table is nonzero.
    pub fn rho_max(&self) -> T {
        self.radial_table().rho_max * self.lambda.sqrt()
    }

    /// Table of ρ ↦ f^{(k)}(ρ²) for the unscaled pair, built on first use.
    pub fn radial_table(&self) -> Arc<RadialTable<T>> {
        self.table.get_or_init(|| Arc::new(RadialTable::build(&self.base()))).clone()
    }

    fn base(&self) -> Self {
        let mut b = self.clone();
        b.lambda = T::one();
        b
    }

    /// Trapezoid sums of ĝ(t)t^{2k}c^{(k)}(t²ρ²) with step `dt`. The bump vanishes
    /// to all orders at its ends, so by Poisson summation the error is the
    /// transform of ĝ·t^{2k} at 2π/dt − ρ.
    fn trapezoid_f_derivs(&self, rho: T, dt: T, kt: usize) -> Vec<T> {
        let (a, b) = match self.kind {
            PairKind::Bump(spec) => (lit::<T>(spec.t0), lit::<T>(spec.t1)),
            PairKind::Gaussian => (T::zero(), lit::<T>(40.0)),
        };
        let n = to_f64((b - a) / dt).ceil().max(2.0) as usize;
        let dt = (b - a) / int::<T>(n as i64);
        let sigma = rho * rho;
        let mut out = vec![T::zero(); kt + 1];
        // ĝ vanishes at both ends for a bump but not at t = 0 for the Gaussian
        for i in 0..n {
            let t = a + dt * int::<T>(i as i64);
            let gh = if i == 0 { self.ghat_unit(t) / lit(2.0) } else { self.ghat_unit(t) };
            if gh == T::zero() {
                continue;
            }
            let t2 = t * t;
            let c = cos_sqrt_derivatives(t2 * sigma, kt);
            let mut tp = gh;
            for (o, ck) in out.iter_mut().zip(c) {
                *o = *o + tp * ck;
                tp = tp * t2;
            }
        }
        let scale = dt / T::PI();
        out.into_iter().map(|v| v * scale).collect()
    }

    /// C_{k,n} = ∫_{ℝⁿ} f^{(k)}(|ξ|²) dξ, by radial quadrature and by the
    /// Fourier-side formula; the two must agree.
    pub fn momentum_integral(&self, k: usize, n: usize) -> Result<T> {
        if k < n {
            return Err(Error::invalid("k", format!("momentum integral needs k ≥ n, got k = {k}, n = {n}")));
        }
        let fourier = self.momentum_integral_fourier(k, n)?;
        let radial = self.momentum_integral_radial(k, n)?;
        if rel_diff(radial, fourier, T::min_positive_value()) > lit(ROUTE_TOL) {
            return Err(Error::RouteMismatch { k, n, radial: to_f64(radial), fourier: to_f64(fourier) });
        }
        Ok(fourier)
    }

    /// Route (ii): A·∫₀^∞ g^{(m)}(τ)τ⁻¹dτ with m = 2k − n, the τ-integral taken on
    /// the Fourier side as (i^{m+1}/2)∫₀^∞ t^m ĝ(t)dt and A calibrated once on the
    /// Gaussian pair, for which the left side is (−1)^k π^{n/2}.
    pub fn momentum_integral_fourier(&self, k: usize, n: usize) -> Result<T> {
        let m = 2 * k - n;
        let j = odd_power_of_i::<T>(m + 1) / lit(2.0) * self.ghat_moment(m)?;
        Ok(calibration_constant::<T>(k, n)? * j)
    }

    /// Route (i): |S^{n−1}| ∫₀^∞ f^{(k)}(ρ²) ρ^{n−1} dρ.
    pub fn momentum_integral_radial(&self, k: usize, n: usize) -> Result<T> {
        let area = unit_sphere_area::<T>(n);
        let quad = Adaptive::new(20, self.quad.abs_tol, self.quad.rel_tol);
        let first = match self.support() {
            Some((_, b)) => T::PI() / b,
            None => self.lambda.sqrt(),
        };
        let mut err = None;
        let r = integrate_to_infinity(&quad, T::zero(), first, |rho| {
            match self.f_deriv(rho * rho, k) {
                Ok(v) => v * rho.powi(n as i32 - 1),
                Err(e) => {
                    err.get_or_insert(e);
                    T::zero()
                }
            }
        })
        .map_err(|f| Error::quad(format!("radial momentum integral k = {k}, n = {n}"), f))?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(area * r.value)
    }
}

/// Highest derivative order held in [`RadialTable`].
pub const TABLE_ORDER: usize = 3;
const TABLE_WIDTH: f64 = 4.0;
const TABLE_DEGREE: usize = 44;
/// Derivative entries below this fraction of f(0) are treated as zero.
const TABLE_FLOOR: f64 = 2e-14;

/// Piecewise Chebyshev interpolant of ρ ↦ f^{(k)}(ρ²), k ≤ 3, on [0, ρ_max].
/// These are even entire functions of exponential type T, so degree-44
/// pieces of width 4 sit at rounding level.
#[derive(Debug)]
pub struct RadialTable<T> {
    pub rho_max: T,
    nodes: Vec<T>,
    weights: Vec<T>,
    /// values[panel][node][k]
    values: Vec<Vec<[T; TABLE_ORDER + 1]>>,
}

impl<T: Real> RadialTable<T> {
    fn build(pair: &TestFunctionPair<T>) -> Self {
        let deg = TABLE_DEGREE;
        let nodes: Vec<T> = (0..=deg)
            .map(|j| -(T::PI() * int::<T>(j as i64) / int::<T>(deg as i64)).cos())
            .collect();
        let weights: Vec<T> = (0..=deg)
            .map(|j| {
                let w = if j % 2 == 0 { T::one() } else { -T::one() };
                if j == 0 || j == deg { w / lit(2.0) } else { w }
            })
            .collect();
        let width = lit::<T>(TABLE_WIDTH);
        let alias = pair.alias_margin();
        let f0 = pair.trapezoid_f_derivs(T::zero(), lit(0.01), TABLE_ORDER)[0].abs();
        let mut values = Vec::new();
        let mut quiet = 0;
        let mut panel = 0usize;
        while quiet < 4 && panel < 1000 {
            let lo = width * int::<T>(panel as i64);
            let hi = lo + width;
            let dt = lit::<T>(2.0) * T::PI() / (hi + alias);
            let vals: Vec<[T; TABLE_ORDER + 1]> = nodes
                .iter()
                .map(|x| {
                    let rho = lo + (*x + T::one()) * width / lit(2.0);
                    let v = pair.trapezoid_f_derivs(rho, dt, TABLE_ORDER);
                    [v[0], v[1], v[2], v[3]]
                })
                .collect();
            // only differences of f enter the phase-space integrals, so the
            // cut-off is set by the derivatives
            let env = vals.iter().zip(&nodes).fold(T::zero(), |m, (v, x)| {
                let rho = lo + (*x + T::one()) * width / lit(2.0);
                v[1..].iter().fold(m, |m, y| m.max(y.abs() * (T::one() + rho)))
            });
            values.push(vals);
            quiet = if env < lit::<T>(TABLE_FLOOR) * f0 { quiet + 1 } else { 0 };
            panel += 1;
        }
        let rho_max = width * int::<T>(values.len() as i64);
        Self { rho_max, nodes, weights, values }
    }

    /// f^{(k)}(ρ²) for k = 0..=3; zero beyond ρ_max.
    pub fn eval(&self, rho: T) -> [T; TABLE_ORDER + 1] {
        let rho = rho.abs();
        let zero = [T::zero(); TABLE_ORDER + 1];
        if rho >= self.rho_max {
            return zero;
        }
        let width = lit::<T>(TABLE_WIDTH);
        let p = to_f64(rho / width).floor() as usize;
        let p = p.min(self.values.len() - 1);
        let lo = width * int::<T>(p as i64);
        let x = (rho - lo) * lit(2.0) / width - T::one();
        let vals = &self.values[p];
        let mut num = zero;
        let mut den = T::zero();
        for (j, (node, w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let d = x - *node;
            if d == T::zero() {
                return vals[j];
            }
            let c = *w / d;
            den = den + c;
            for k in 0..=TABLE_ORDER {
                num[k] = num[k] + c * vals[j][k];
            }
        }
        num.map(|v| v / den)
    }
}

/// i^p for even p, as ±1.
fn odd_power_of_i<T: Real>(p: usize) -> T {
    debug_assert!(p % 2 == 0);
    if (p / 2) % 2 == 0 {
        T::one()
    } else {
        -T::one()
    }
}

/// The constant A in ∫ f^{(k)}(|ξ|²)dξ = A ∫₀^∞ g^{(2k−n)}(τ)τ⁻¹dτ, fixed by the
/// Gaussian pair: A = (−1)^k π^{n/2} / J_gauss, J_gauss evaluated by quadrature.
pub fn calibration_constant<T: Real>(k: usize, n: usize) -> Result<T> {
    if k < n || n % 2 == 0 {
        return Err(Error::invalid("k", "calibration needs odd n and k ≥ n"));
    }
    let m = 2 * k - n;
    let gauss = gaussian_pair::<T>(k.max(3));
    let j = odd_power_of_i::<T>(m + 1) / lit(2.0) * gauss.ghat_moment(m)?;
    let sign = if k % 2 == 0 { T::one() } else { -T::one() };
    Ok(sign * T::PI().powf(int::<T>(n as i64) / lit(2.0)) / j)
}

/// Closed form of the same constant, for cross-checking the calibration:
/// J_gauss = (i^{m+1}/2)·√π·2^m·Γ((m+1)/2).
pub fn calibration_constant_closed<T: Real>(k: usize, n: usize) -> T {
    let m = 2 * k - n;
    let j = odd_power_of_i::<T>(m + 1) / lit(2.0) * T::PI().sqrt() * lit::<T>(2.0).powi(m as i32) * gamma_half::<T>(m + 1);
    let sign = if k % 2 == 0 { T::one() } else { -T::one() };
    sign * T::PI().powf(int::<T>(n as i64) / lit(2.0)) / j
}

/// C_{k,n} via the closed-form constant; cheap, used inside extraction loops.
pub fn momentum_constant<T: Real>(pair: &TestFunctionPair<T>, k: usize, n: usize) -> Result<T> {
    let m = 2 * k - n;
    let j = odd_power_of_i::<T>(m + 1) / lit(2.0) * pair.ghat_moment(m)?;
    Ok(calibration_constant_closed::<T>(k, n) * j)
}

/// 1/k! as a scalar.
pub fn inv_factorial<T: Real>(k: usize) -> T {
    T::one() / factorial::<T>(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_center_value() {
        let p = build_pair::<f64>(BumpSpec::default(), 3).unwrap();
        assert!((p.ghat(2.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(p.ghat(1.0), 0.0);
        assert_eq!(p.ghat(0.5), 0.0);
    }

    #[test]
    fn f_at_zero_is_g_at_zero() {
        let p = build_pair::<f64>(BumpSpec::default(), 3).unwrap();
        let g0 = p.g(0.0).unwrap();
        let f0 = p.f(0.0).unwrap();
        let m0 = p.ghat_moment(0).unwrap() / std::f64::consts::PI;
        assert!((g0 - f0).abs() < 1e-14 && (g0 - m0).abs() < 1e-14);
    }

    #[test]
    fn calibration_matches_closed_form() {
        for (k, n) in [(1, 1), (4, 3), (7, 1)] {
            let a = calibration_constant::<f64>(k, n).unwrap();
            let b = calibration_constant_closed::<f64>(k, n);
            assert!(rel_diff(a, b, 1e-300) < 1e-12, "k={k} n={n}");
        }
    }
}
