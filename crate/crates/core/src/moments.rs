//! Moment invariants M_k = ∫Vᵏ dx and N_k = ∫Vᵏ|∇V|² dx.
//!
//! Two sources: direct quadrature, and extraction from the large-λ behaviour
//! of the trace invariants I(f_λ) = ∫∫ f_λ(|ξ|²+V) − f_λ(|ξ|²) and
//! J(f_λ) = ∫∫ |∇V|² f_λ'''(|ξ|²+V). Taylor expanding in V gives
//!
//!   I(f_λ) = Σ_{k≥1} λ^{n/2−k} C_{k,n} M_k / k!,
//!   J(f_λ) = Σ_{j≥0} λ^{n/2−3−j} C_{3+j,n} N_j / j!,
//!
//! with C_{k,n} = ∫ f^{(k)}(|ξ|²) dξ, and the coefficients are peeled off a
//! geometric λ-sequence one power at a time.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, Mat};
use crate::potentials::{FieldKind, PotentialField};
use crate::quadrature::Adaptive;
use crate::resonances::fmt17;
use crate::scalar::{factorial, int, lit, to_f64, unit_sphere_area, Real};
use crate::special::z_pow_bessel;
use crate::testfns::{momentum_constant, BumpSpec, PairKind, TestFunctionPair};
use crate::trace::{direct_leading, direct_subleading};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentSource {
    Fitted,
    DirectOracle,
}

/// M_k and N_k for k = k_min..=k_max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub n: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub m: Vec<f64>,
    pub nk: Vec<f64>,
    pub m_residuals: Vec<f64>,
    pub n_residuals: Vec<f64>,
    /// k values whose extraction residual exceeded 1e-3 of the value.
    pub unreliable: Vec<usize>,
    pub source: MomentSource,
}

#[derive(Serialize, Deserialize)]
struct MomentRow {
    k: usize,
    m: String,
    n: String,
    m_residual: String,
    n_residual: String,
    reliable: bool,
    source: MomentSource,
}

impl MomentTable {
    pub fn ks(&self) -> impl Iterator<Item = usize> {
        self.k_min..=self.k_max
    }

    pub fn m_at(&self, k: usize) -> f64 {
        self.m[k - self.k_min]
    }

    pub fn n_at(&self, k: usize) -> f64 {
        self.nk[k - self.k_min]
    }

    pub fn is_reliable(&self, k: usize) -> bool {
        !self.unreliable.contains(&k)
    }

    /// Positivity of both families and strict decrease of M_k when max V ≤ 1, over reliable orders.
    pub fn check_invariants(&self, max_v: f64) -> Result<()> {
        for k in self.ks().filter(|&k| self.is_reliable(k)) {
            if !(self.m_at(k) > 0.0 && self.n_at(k) > 0.0) {
                return Err(Error::Monotonicity(format!("moment at k = {k} is not positive")));
            }
        }
        if max_v <= 1.0 {
            for k in self.k_min..self.k_max {
                if !(self.is_reliable(k) && self.is_reliable(k + 1)) {
                    continue;
                }
                if self.m_at(k + 1) >= self.m_at(k) {
                    return Err(Error::Monotonicity(format!("M_{} ≥ M_{k} with max V ≤ 1", k + 1)));
                }
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for k in self.ks() {
            let i = k - self.k_min;
            w.serialize(MomentRow {
                k,
                m: fmt17(self.m[i]),
                n: fmt17(self.nk[i]),
                m_residual: fmt17(self.m_residuals[i]),
                n_residual: fmt17(self.n_residuals[i]),
                reliable: self.is_reliable(k),
                source: self.source,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`write_csv`](Self::write_csv); `n` is not stored per row.
    pub fn read_csv(path: &Path, n: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for row in r.deserialize() {
            let row: MomentRow = row?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::invalid("moments", "empty table"));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::invalid("moments", e.to_string()));
        let mut t = MomentTable {
            n,
            k_min: rows[0].k,
            k_max: rows[rows.len() - 1].k,
            m: vec![],
            nk: vec![],
            m_residuals: vec![],
            n_residuals: vec![],
            unreliable: vec![],
            source: rows[0].source,
        };
        for row in rows {
            if !row.reliable {
                t.unreliable.push(row.k);
            }
            t.m.push(parse(&row.m)?);
            t.nk.push(parse(&row.n)?);
            t.m_residuals.push(parse(&row.m_residual)?);
            t.n_residuals.push(parse(&row.n_residual)?);
        }
        Ok(t)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// ∫ w(x)·F(V(x), |∇V(x)|²) dx over the support box, for n = 1 or radial fields.
pub(crate) fn integrate_over_field<T: Real, V, F>(field: &PotentialField<T>, quad: &Adaptive<T>, tol: T, f: F) -> Result<V>
where
    V: crate::quadrature::QuadValue<T>,
    F: Fn(T, T) -> V,
{
    let radius = field.support_radius(tol);
    if field.dimension() == 1 {
        let mut breaks: Vec<T> = field.breakpoints().into_iter().filter(|b| b.abs() < radius).collect();
        breaks.push(-radius);
        breaks.push(radius);
        if let Some((_, center)) = field.radial_profile() {
            if center[0].abs() < radius {
                breaks.push(center[0]);
            }
        }
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();
        let mut fine = Vec::new();
        for w in breaks.windows(2) {
            for i in 0..8 {
                fine.push(w[0] + (w[1] - w[0]) * int::<T>(i) / int::<T>(8));
            }
        }
        fine.push(*breaks.last().unwrap());
        Ok(quad
            .integrate_breaks(&fine, &mut |x: T| {
                let d = field.deriv1(x);
                f(field.eval1(x), d * d)
            })
            .map_err(|e| Error::quad("integral over x", e))?
            .value)
    } else {
        let (profile, _) = match field.kind() {
            FieldKind::Radial { .. } => field.radial_profile().expect("radial"),
            _ => return Err(Error::invalid("field", "integrals in n ≥ 3 need a radial field")),
        };
        let n = field.dimension();
        let c = field.coupling();
        let area = unit_sphere_area::<T>(n);
        let out: V = quad
            .integrate(T::zero(), radius, 16, |r: T| {
                let d = c * profile.deriv(r);
                let v = f(c * profile.eval(r), d * d);
                let mut s = v.zero_like();
                s.axpy(r.powi(n as i32 - 1), &v);
                s
            })
            .map_err(|e| Error::quad("integral over r", e))?
            .value;
        let mut scaled = out.zero_like();
        scaled.axpy(area, &out);
        Ok(scaled)
    }
}

/// Quadrature of Vᵏ and Vᵏ|∇V|² for k = k_min..=k_max, relative tolerance 1e-11.
pub fn direct_moments<T: Real>(field: &PotentialField<T>, k_min: usize, k_max: usize) -> Result<MomentTable> {
    if k_min < 1 || k_max < k_min {
        return Err(Error::invalid("k", format!("need 1 ≤ k_min ≤ k_max, got [{k_min}, {k_max}]")));
    }
    let count = k_max - k_min + 1;
    let (m, nk) = if field.is_free() {
        (vec![0.0; count], vec![0.0; count])
    } else {
        let quad = Adaptive::new(20, lit::<T>(1e-300), lit::<T>(1e-12));
        let max = field.max_value().0;
        let tol = max.powi(k_min as i32) * lit(1e-16);
        let v = integrate_over_field(field, &quad, tol, |v, g2| {
            let mut out = Vec::with_capacity(2 * count);
            let mut p = v.powi(k_min as i32);
            for _ in 0..count {
                out.push(p);
                out.push(p * g2);
                p = p * v;
            }
            out
        })?;
        (v.iter().step_by(2).map(|x| to_f64(*x)).collect(), v.iter().skip(1).step_by(2).map(|x| to_f64(*x)).collect())
    };
    Ok(MomentTable {
        n: field.dimension(),
        k_min,
        k_max,
        m,
        nk,
        m_residuals: vec![0.0; count],
        n_residuals: vec![0.0; count],
        unreliable: vec![],
        source: MomentSource::DirectOracle,
    })
}

/// Which trace invariant an evaluator returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invariant {
    /// I(f_λ) = ∫∫ f_λ(|ξ|²+V) − f_λ(|ξ|²)
    Leading,
    /// J(f_λ) = ∫∫ |∇V|² f_λ'''(|ξ|²+V)
    Subleading,
}

/// Supplies I(f_λ) and J(f_λ) for the scaled test function.
pub trait InvariantEvaluator<T>: Sync {
    fn dimension(&self) -> usize;
    fn evaluate(&self, which: Invariant, lambda: T) -> Result<T>;
}

/// Nested phase-space quadrature in f64 (the `trace` module's direct integrals).
pub struct PhaseSpaceEvaluator<'a> {
    pub field: &'a PotentialField<f64>,
    pub pair: &'a TestFunctionPair<f64>,
}

impl InvariantEvaluator<f64> for PhaseSpaceEvaluator<'_> {
    fn dimension(&self) -> usize {
        self.field.dimension()
    }

    fn evaluate(&self, which: Invariant, lambda: f64) -> Result<f64> {
        let p = self.pair.scale(lambda);
        match which {
            Invariant::Leading => direct_leading(self.field, &p),
            Invariant::Subleading => direct_subleading(self.field, &p),
        }
    }
}

/// Evaluates the invariants with the momentum integral done in closed form.
///
/// For f(σ) = (1/π)∫ĝ(t)cos(t√σ)dt the ξ-integral of cos(t√(|ξ|²+v)) − cos(t|ξ|)
/// over ℝⁿ is K_n(t, v) = a_n t^{−n} Φ_ν(t²v), ν = (n+1)/2, Φ_μ(z²) = z^μ J_μ(z),
/// a_n = π^{(n+1)/2}(−1)^ν 2^{n−ν}; and ∂_v^m K_n = a_n t^{−n}(t²/2)^m Φ_{ν−m}.
/// What remains is a t-integral over the bump and the spatial integral. The
/// t-integral uses the trapezoid rule, which for an integrand vanishing to all
/// orders at both ends of [t₀, T] is accurate to the transform of ĝ at 2π/dt.
pub struct MomentumReducedEvaluator<T> {
    field: PotentialField<T>,
    nodes: Vec<(T, T)>,
    quad: Adaptive<T>,
    support_tol: T,
}

/// Trapezoid nodes across the bump; 2π/dt ≈ 6000 puts aliasing far below 1e-30.
const REDUCED_T_NODES: usize = 2000;

impl<T: Real> MomentumReducedEvaluator<T> {
    pub fn new(field: PotentialField<T>, spec: BumpSpec) -> Result<Self> {
        let n = field.dimension();
        if n % 2 == 0 {
            return Err(Error::invalid("n", "odd dimension required"));
        }
        let (a, b) = (lit::<T>(spec.t0), lit::<T>(spec.t1));
        let dt = (b - a) / int::<T>(REDUCED_T_NODES as i64);
        let c = (a + b) / lit(2.0);
        let hw = (b - a) / lit(2.0);
        let nodes = (1..REDUCED_T_NODES)
            .map(|i| {
                let t = a + dt * int::<T>(i as i64);
                let u = (t - c) / hw;
                let gh = if u.abs() >= T::one() { T::zero() } else { (-T::one() / (T::one() - u * u)).exp() };
                (t, gh * dt / T::PI())
            })
            .filter(|(_, w)| *w > T::zero())
            .collect();
        let eps = T::epsilon();
        let quad = Adaptive::new(30, eps * lit(1e-4), eps * lit(64.0));
        let max = field.max_value().0;
        let support_tol = max * eps * lit(1e-3);
        Ok(Self { field, nodes, quad, support_tol })
    }

    /// (1/π)∫ĝ(t) ∂_v^m K_n(t/√λ, v) dt.
    fn kernel(&self, v: T, lambda: T, m: usize) -> T {
        let n = self.field.dimension();
        let nu = n.div_ceil(2);
        let sign = if nu % 2 == 0 { T::one() } else { -T::one() };
        let a_n = sign * T::PI().powi(nu as i32) * lit::<T>(2.0).powi((n - nu) as i32);
        let inv = T::one() / lambda.sqrt();
        let mut sum = T::zero();
        for &(t, w) in &self.nodes {
            let s = t * inv;
            let s2 = s * s;
            let term = (s2 / lit(2.0)).powi(m as i32) * z_pow_bessel(nu as i64 - m as i64, s2 * v) / s.powi(n as i32);
            sum = sum + w * term;
        }
        a_n * sum
    }
}

impl<T: Real> InvariantEvaluator<T> for MomentumReducedEvaluator<T> {
    fn dimension(&self) -> usize {
        self.field.dimension()
    }

    fn evaluate(&self, which: Invariant, lambda: T) -> Result<T> {
        if self.field.is_free() {
            return Ok(T::zero());
        }
        let vmax = self.field.max_value().0;
        match which {
            Invariant::Leading => {
                let g = Chebyshev::fit(vmax, |v| self.kernel(v, lambda, 0));
                integrate_over_field(&self.field, &self.quad, self.support_tol, |v, _| g.eval(v))
            }
            Invariant::Subleading => {
                let g = Chebyshev::fit(vmax, |v| self.kernel(v, lambda, 3));
                integrate_over_field(&self.field, &self.quad, self.support_tol, |v, g2| g2 * g.eval(v))
            }
        }
    }
}

/// Chebyshev series on [0, top]. The kernels are entire in v with rapidly
/// decaying Taylor coefficients, so a modest degree reaches working precision;
/// this saves re-running the t-quadrature at every spatial node.
struct Chebyshev<T> {
    top: T,
    coeffs: Vec<T>,
}

impl<T: Real> Chebyshev<T> {
    fn fit(top: T, f: impl Fn(T) -> T) -> Self {
        let mut degree = 24;
        loop {
            let n = degree + 1;
            let nodes: Vec<T> = (0..n)
                .map(|j| (T::PI() * (int::<T>(j as i64) + lit(0.5)) / int::<T>(n as i64)).cos())
                .collect();
            let vals: Vec<T> = nodes.iter().map(|x| f((*x + T::one()) * top / lit(2.0))).collect();
            let coeffs: Vec<T> = (0..n)
                .map(|k| {
                    let s = (0..n).fold(T::zero(), |acc, j| {
                        let angle = T::PI() * int::<T>(k as i64) * (int::<T>(j as i64) + lit(0.5)) / int::<T>(n as i64);
                        acc + vals[j] * angle.cos()
                    });
                    let w = if k == 0 { T::one() } else { lit(2.0) };
                    w * s / int::<T>(n as i64)
                })
                .collect();
            let scale = coeffs.iter().fold(T::zero(), |m, c| m.max(c.abs()));
            let tail = coeffs[n - 3..].iter().fold(T::zero(), |m, c| m.max(c.abs()));
            if tail <= T::epsilon() * lit(64.0) * scale || degree >= 192 {
                return Self { top, coeffs };
            }
            degree *= 2;
        }
    }

    fn eval(&self, v: T) -> T {
        let x = lit::<T>(2.0) * v / self.top - T::one();
        let (mut b1, mut b2) = (T::zero(), T::zero());
        for c in self.coeffs.iter().skip(1).rev() {
            let b0 = lit::<T>(2.0) * x * b1 - b2 + *c;
            b2 = b1;
            b1 = b0;
        }
        x * b1 - b2 + self.coeffs[0]
    }
}

/// Geometric λ-sequence from `lo` to `hi` with `count` points.
pub fn geometric_lambdas(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && hi > lo && lo >= 1.0);
    (0..count).map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).collect()
}

/// Default expansion depth K = n + 12.
pub fn default_k_max(n: usize) -> usize {
    n + 12
}

/// Peels y(λ) = Σ_{i<count} c_i λ^{−i} one coefficient at a time. At step i the
/// remainder (y − Σ_{j<i} c_j λ^{−j})·λ^i is fitted by a polynomial in 1/λ of
/// the remaining degree; its constant term is c_i.
fn peel<T: Real>(lams: &[T], y: &[T], count: usize, trim: usize) -> Vec<T> {
    let mut coeffs = Vec::with_capacity(count);
    let mut rem: Vec<T> = y.to_vec();
    for i in 0..count {
        let target: Vec<T> = rem.iter().zip(lams).map(|(r, l)| *r * l.powi(i as i32)).collect();
        let deg = (count - 1 - i).min(lams.len() - 1).saturating_sub(trim);
        let a = Mat::from_fn(lams.len(), deg + 1, |r, c| lams[r].powi(-(c as i32)));
        let c = lstsq(&a, &target)[0];
        coeffs.push(c);
        for (r, l) in rem.iter_mut().zip(lams) {
            *r = *r - c * l.powi(-(i as i32));
        }
    }
    coeffs
}

/// Coefficients with a residual per coefficient: the larger of the shift when
/// every fit drops one degree, and the response to a ±`noise` relative
/// perturbation of alternating sign across the samples.
fn deflate<T: Real>(lams: &[T], y: &[T], count: usize, noise: T) -> (Vec<T>, Vec<T>) {
    let coeffs = peel(lams, y, count, 0);
    let lower = peel(lams, y, count, 1);
    let shaken: Vec<T> = y
        .iter()
        .enumerate()
        .map(|(i, v)| *v * (T::one() + if i % 2 == 0 { noise } else { -noise }))
        .collect();
    let perturbed = peel(lams, &shaken, count, 0);
    let resid = (0..count)
        .map(|i| (coeffs[i] - lower[i]).abs().max((coeffs[i] - perturbed[i]).abs()))
        .collect();
    (coeffs, resid)
}

/// Extraction report: the table plus the raw invariant samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Extraction {
    pub table: MomentTable,
    pub lambdas: Vec<f64>,
    pub leading: Vec<f64>,
    pub subleading: Vec<f64>,
}

/// Residual fraction above which an extracted moment is flagged.
pub const EXTRACTION_FLAG: f64 = 1e-3;

/// Extracts M_k, N_k for k ∈ [n, k_max] from invariant samples on `lambdas`.
pub fn extract_moments<T: Real, E: InvariantEvaluator<T>>(
    evaluator: &E,
    pair: &TestFunctionPair<T>,
    k_max: usize,
    lambdas: &[T],
) -> Result<Extraction> {
    let n = evaluator.dimension();
    if k_max < n {
        return Err(Error::invalid("k_max", format!("must be at least n = {n}")));
    }
    if lambdas.len() < 4 {
        return Err(Error::invalid("lambdas", "need at least four scaling values"));
    }
    if !matches!(pair.kind(), PairKind::Bump(_)) {
        return Err(Error::invalid("pair", "extraction needs a compactly supported ĝ"));
    }
    use rayon::prelude::*;
    let samples: Vec<(T, T)> = lambdas
        .par_iter()
        .map(|&l| Ok((evaluator.evaluate(Invariant::Leading, l)?, evaluator.evaluate(Invariant::Subleading, l)?)))
        .collect::<Result<_>>()?;
    let half_n = int::<T>(n as i64) / lit(2.0);
    // y_I = I·λ^{1−n/2} = Σ_{k≥1} a_k λ^{−(k−1)},  y_J = J·λ^{3−n/2} = Σ_{j≥0} b_j λ^{−j}
    let y_i: Vec<T> = samples.iter().zip(lambdas).map(|((i, _), l)| *i * l.powf(T::one() - half_n)).collect();
    let y_j: Vec<T> = samples.iter().zip(lambdas).map(|((_, j), l)| *j * l.powf(lit::<T>(3.0) - half_n)).collect();
    let count = (k_max + 2).min(lambdas.len() - 1);
    if count < k_max {
        return Err(Error::invalid("lambdas", format!("{} values cannot resolve {k_max} terms", lambdas.len())));
    }
    // evaluators hold their kernels to a few hundred ulps
    let noise = T::epsilon() * lit(256.0);
    let (a, ra) = deflate(lambdas, &y_i, count, noise);
    let (b, rb) = deflate(lambdas, &y_j, count, noise);
    let mut table = MomentTable {
        n,
        k_min: n,
        k_max,
        m: vec![],
        nk: vec![],
        m_residuals: vec![],
        n_residuals: vec![],
        unreliable: vec![],
        source: MomentSource::Fitted,
    };
    let free = samples.iter().all(|(i, j)| *i == T::zero() && *j == T::zero());
    for k in n..=k_max {
        let ck = momentum_constant(pair, k, n)? / factorial::<T>(k);
        let cn = momentum_constant(pair, k + 3, n)? / factorial::<T>(k);
        let (m, mr) = (a[k - 1] / ck, ra[k - 1] / ck.abs());
        let (nv, nr) = if k < b.len() { (b[k] / cn, rb[k] / cn.abs()) } else { (T::nan(), T::infinity()) };
        let (m, nv) = (to_f64(m), to_f64(nv));
        let (mr, nr) = (to_f64(mr), to_f64(nr));
        let bad = !free && (mr > EXTRACTION_FLAG * m.abs() || !(nr <= EXTRACTION_FLAG * nv.abs()));
        if bad {
            table.unreliable.push(k);
        }
        table.m.push(m);
        table.nk.push(nv);
        table.m_residuals.push(mr);
        table.n_residuals.push(nr);
    }
    Ok(Extraction {
        table,
        lambdas: lambdas.iter().map(|l| to_f64(*l)).collect(),
        leading: samples.iter().map(|s| to_f64(s.0)).collect(),
        subleading: samples.iter().map(|s| to_f64(s.1)).collect(),
    })
}

/// Quad-precision extraction with the momentum-reduced evaluator; in double
/// precision the peeled coefficients lose about three digits per order.
pub fn extract_quad(field: PotentialField<f128::f128>, spec: BumpSpec, k_max: usize, lambdas: &[f64]) -> Result<Extraction> {
    let pair = crate::testfns::build_pair::<f128::f128>(spec, 3)?.with_tolerance(lit(1e-33));
    let evaluator = MomentumReducedEvaluator::new(field, spec)?;
    let lams: Vec<f128::f128> = lambdas.iter().map(|l| lit(*l)).collect();
    extract_moments(&evaluator, &pair, k_max, &lams)
}
