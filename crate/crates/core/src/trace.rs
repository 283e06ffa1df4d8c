//! Both sides of the semiclassical trace identity.
//!
//! Direct side: the phase-space integrals ∫∫ f(|ξ|²+V) − f(|ξ|²) and
//! ∫∫ |∇V|² f'''(|ξ|²+V). Spectral side: the resonance sum (module
//! `resonances`) and an independent Birman–Krein pairing of the scattering
//! phase, computed by plane-wave transfer matrices through piecewise-constant
//! slabs.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, lstsq, Mat};
use crate::potentials::{FieldKind, PotentialField};
use crate::quadrature::{Adaptive, GaussLegendre};
use crate::resonances::{fmt17, SpectralProblem};
use crate::scalar::{int, lit, to_f64, unit_sphere_area, Real};
use crate::testfns::TestFunctionPair;

/// Momentum panel width for the inner radial integrals.
const RHO_PANEL: f64 = 2.0;

/// Which function of the level enters the inner momentum integral.
#[derive(Clone, Copy)]
enum Inner {
    /// f(ρ²+v) − f(ρ²)
    Leading,
    /// f'''(ρ²+v)
    Subleading,
}

/// |S^{n−1}| ∫₀^∞ ρ^{n−1} F(ρ, v) dρ on fixed Gauss–Legendre panels. The
/// integrand is entire of exponential type T in ρ, so 20-point panels of
/// width 2 are exact to rounding; refinement is checked in tests.
fn momentum_integral_at<T: Real>(pair: &TestFunctionPair<T>, n: usize, v: T, which: Inner, rule: &GaussLegendre<T>) -> T {
    let top = pair.rho_max() + lit(1.0);
    let panels = to_f64(top / lit(RHO_PANEL)).ceil() as usize;
    let width = top / int::<T>(panels as i64);
    let mut total = T::zero();
    for p in 0..panels {
        let a = width * int::<T>(p as i64);
        let b = a + width;
        let mut f = |rho: T| {
            let w = rho.powi(n as i32 - 1);
            match which {
                Inner::Leading => (pair.f_fast(rho * rho + v)[0] - pair.f_fast(rho * rho)[0]) * w,
                Inner::Subleading => pair.f_fast(rho * rho + v)[3] * w,
            }
        };
        let piece: T = rule.integrate(a, b, &mut f);
        total = total + piece;
    }
    total * unit_sphere_area::<T>(n)
}

/// Spatial integral ∫ w(x)·G(V(x)) dx with G the momentum integral above.
fn phase_space<T: Real>(field: &PotentialField<T>, pair: &TestFunctionPair<T>, which: Inner) -> Result<T> {
    let n = field.dimension();
    if field.is_free() {
        return Ok(T::zero());
    }
    let rule = GaussLegendre::<T>::new(20);
    let radius = field.support_radius(lit(1e-14));
    let quad = Adaptive::new(20, lit::<T>(1e-11), lit::<T>(1e-12));
    let weight = |_x: T, grad2: T| match which {
        Inner::Leading => T::one(),
        Inner::Subleading => grad2,
    };
    let value = if n == 1 {
        let mut breaks: Vec<T> = field.breakpoints().into_iter().filter(|b| b.abs() < radius).collect();
        breaks.push(-radius);
        breaks.push(radius);
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();
        // split the box so the adaptive rule sees the bulk of V
        let mut fine = Vec::new();
        for w in breaks.windows(2) {
            for i in 0..8 {
                fine.push(w[0] + (w[1] - w[0]) * int::<T>(i) / int::<T>(8));
            }
        }
        fine.push(*breaks.last().unwrap());
        quad.integrate_breaks(&fine, &mut |x: T| {
            let v = field.eval1(x);
            let d = field.deriv1(x);
            weight(x, d * d) * momentum_integral_at(pair, 1, v, which, &rule)
        })
        .map_err(|f| Error::quad("phase-space integral over x", f))?
        .value
    } else {
        let (profile, _) = match field.kind() {
            FieldKind::Radial { .. } => field.radial_profile().expect("radial"),
            _ => return Err(Error::invalid("field", "phase-space integrals in n ≥ 3 need a radial field")),
        };
        let c = field.coupling();
        let area = unit_sphere_area::<T>(n);
        quad.integrate(T::zero(), radius, 16, |r: T| {
            let v = c * profile.eval(r);
            let d = c * profile.deriv(r);
            area * r.powi(n as i32 - 1) * weight(r, d * d) * momentum_integral_at(pair, n, v, which, &rule)
        })
        .map_err(|f| Error::quad("phase-space integral over r", f))?
        .value
    };
    Ok(value)
}

/// I₁ = ∫∫ f(|ξ|²+V) − f(|ξ|²) dx dξ.
pub fn direct_leading<T: Real>(field: &PotentialField<T>, pair: &TestFunctionPair<T>) -> Result<T> {
    phase_space(field, pair, Inner::Leading)
}

/// I₂ = ∫∫ |∇V|² f'''(|ξ|²+V) dx dξ.
pub fn direct_subleading<T: Real>(field: &PotentialField<T>, pair: &TestFunctionPair<T>) -> Result<T> {
    phase_space(field, pair, Inner::Subleading)
}

/// Sign and normalization in Tr = s·(1/2π)∫₀^∞ g'(λ)δ(λ)dλ, with δ = arg det S.
/// Frozen after calibration against the resonance sum on a square barrier.
pub const BK_SIGN: f64 = -1.0;
pub const BK_NORM: f64 = 1.0 / (2.0 * std::f64::consts::PI);

/// Midpoint slab discretization of V/h² on [−L, L], aligned with breakpoints.
struct Slabs {
    widths: Vec<f64>,
    levels: Vec<f64>,
}

impl Slabs {
    fn new(problem: &SpectralProblem<f64>, per_unit: f64) -> Self {
        let l = problem.truncation();
        let mut cuts: Vec<f64> = problem.field().breakpoints().into_iter().filter(|b| b.abs() < l).collect();
        cuts.push(-l);
        cuts.push(l);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let h2 = problem.h() * problem.h();
        let mut widths = Vec::new();
        let mut levels = Vec::new();
        for w in cuts.windows(2) {
            let m = ((w[1] - w[0]) * per_unit).ceil().max(1.0) as usize;
            let d = (w[1] - w[0]) / m as f64;
            for i in 0..m {
                let x = w[0] + (i as f64 + 0.5) * d;
                widths.push(d);
                levels.push(problem.field().eval1(x) / h2);
            }
        }
        Self { widths, levels }
    }

    /// (arg W̃, ln|W̃|) at real k > 0: propagate u₋ = e^{−ikx} from −L to L.
    fn wronskian(&self, k: f64, l: f64) -> (f64, f64) {
        let ik = Complex64::new(0.0, k);
        let mut u = Complex64::new(1.0, 0.0);
        let mut du = -ik;
        let mut log = 0.0;
        let k2 = k * k;
        for (d, v) in self.widths.iter().zip(&self.levels) {
            let q = v - k2;
            let (c, s_over, s_times) = if q > 0.0 {
                let kap = q.sqrt();
                let (sh, ch) = ((kap * d).sinh(), (kap * d).cosh());
                (ch, sh / kap, kap * sh)
            } else if q < 0.0 {
                let p = (-q).sqrt();
                let (sn, cs) = (p * d).sin_cos();
                (cs, sn / p, -p * sn)
            } else {
                (1.0, *d, 0.0)
            };
            let nu = u * c + du * s_over;
            let ndu = u * s_times + du * c;
            let scale = nu.norm().max(ndu.norm() / k.max(1.0));
            u = nu / scale;
            du = ndu / scale;
            log += scale.ln();
        }
        // W = e^{ikL}(u₋' − ik u₋) and u₋ carries e^{ikL} from the start
        let w = (du - ik * u) / (-2.0 * ik);
        let phase = w.arg() + 2.0 * k * l;
        (phase, log + w.norm().ln())
    }
}

/// Scattering phase δ(λ) = −2 arg W̃(λ) by slab transfer matrices, with
/// Richardson extrapolation across a doubling of the slab count.
pub struct ScatteringPhase<'a> {
    problem: &'a SpectralProblem<f64>,
    coarse: Slabs,
    fine: Slabs,
    exact: bool,
}

impl<'a> ScatteringPhase<'a> {
    pub fn new(problem: &'a SpectralProblem<f64>, per_unit: f64) -> Self {
        let exact = matches!(problem.field().kind(), FieldKind::SquareBarrier { .. } | FieldKind::Free);
        let per_unit = if exact { 1.0 } else { per_unit };
        Self { problem, coarse: Slabs::new(problem, per_unit), fine: Slabs::new(problem, 2.0 * per_unit), exact }
    }

    /// Principal-branch arg W̃ at frequency λ > 0.
    pub fn arg_wronskian(&self, lambda: f64) -> f64 {
        let k = lambda / self.problem.h();
        let l = self.problem.truncation();
        let (p2, m2) = self.fine.wronskian(k, l);
        if self.exact {
            return wrap(p2);
        }
        let (p1, m1) = self.coarse.wronskian(k, l);
        // W̃_R = W̃_2N (4 − W̃_N/W̃_2N)/3, midpoint error being O(N⁻²)
        let ratio = Complex64::from_polar((m1 - m2).exp(), p1 - p2);
        let corr = (Complex64::new(4.0, 0.0) - ratio) / 3.0;
        wrap(p2 + corr.arg())
    }

    /// |W̃_2N/W̃_R − 1| as a discretization error estimate.
    pub fn error_estimate(&self, lambda: f64) -> f64 {
        if self.exact {
            return 0.0;
        }
        let k = lambda / self.problem.h();
        let l = self.problem.truncation();
        let (p2, m2) = self.fine.wronskian(k, l);
        let (p1, m1) = self.coarse.wronskian(k, l);
        let ratio = Complex64::from_polar((m1 - m2).exp(), p1 - p2);
        ((Complex64::new(1.0, 0.0) - ratio) / 3.0).norm()
    }
}

fn wrap(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let y = (x + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if y <= -std::f64::consts::PI { y + two_pi } else { y }
}

/// Birman–Krein pairing s·(1/2π)∫₀^∞ g'(λ)δ(λ)dλ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralShiftValue {
    pub value: f64,
    pub quadrature_error: f64,
    pub lambda_max: f64,
    pub evaluations: usize,
}

/// Slabs per unit length for smooth potentials before Richardson.
pub const SLABS_PER_UNIT: f64 = 200.0;

pub fn spectral_shift_trace(problem: &SpectralProblem<f64>, pair: &TestFunctionPair<f64>) -> Result<SpectralShiftValue> {
    spectral_shift_with(problem, pair, SLABS_PER_UNIT, 1e-11)
}

pub fn spectral_shift_with(problem: &SpectralProblem<f64>, pair: &TestFunctionPair<f64>, slabs_per_unit: f64, tol: f64) -> Result<SpectralShiftValue> {
    if problem.field().is_free() {
        return Ok(SpectralShiftValue { value: 0.0, quadrature_error: 0.0, lambda_max: 0.0, evaluations: 0 });
    }
    let phase = ScatteringPhase::new(problem, slabs_per_unit);
    let lambda_max = g_prime_cutoff(pair);
    let rule = GaussLegendre::<f64>::new(20);
    let first = 64.min((lambda_max / 4.0).ceil() as usize).max(1);
    let step = lambda_max / first as f64;
    // panels processed from high λ down, so each starts from an unwrapped δ
    let mut stack: Vec<(f64, f64, usize)> = (0..first).map(|i| (i as f64 * step, (i + 1) as f64 * step, 0)).collect();
    let mut delta_right = -2.0 * phase.arg_wronskian(lambda_max);
    let mut total = 0.0;
    let mut err = 0.0;
    let mut evals = 1usize;
    let (nodes, weights) = (&rule.nodes, &rule.weights);
    let q = nodes.len();
    while let Some((a, b, depth)) = stack.pop() {
        let width = b - a;
        // whole-panel nodes, then both halves, then the left endpoint
        let mut pts: Vec<f64> = nodes.iter().map(|x| a + (x + 1.0) * width / 2.0).collect();
        pts.extend(nodes.iter().map(|x| a + (x + 1.0) * width / 4.0));
        pts.extend(nodes.iter().map(|x| a + width / 2.0 + (x + 1.0) * width / 4.0));
        pts.push(a);
        let raw: Vec<f64> = pts.iter().map(|&l| -2.0 * phase.arg_wronskian(l)).collect();
        evals += pts.len();
        // unwrap by nearest continuation walking down from b
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.sort_by(|&i, &j| pts[j].partial_cmp(&pts[i]).unwrap());
        let mut delta = vec![0.0; pts.len()];
        let mut prev = delta_right;
        let mut worst_jump: f64 = 0.0;
        for &i in &order {
            let d = prev + wrap_four_pi(raw[i] - prev);
            worst_jump = worst_jump.max((d - prev).abs());
            delta[i] = d;
            prev = d;
        }
        let term = |i: usize| pair.g_prime_fast(pts[i]) * delta[i];
        let whole: f64 = (0..q).map(|i| weights[i] * term(i)).sum::<f64>() * width / 2.0;
        let split: f64 = (0..q).map(|i| weights[i] * (term(q + i) + term(2 * q + i))).sum::<f64>() * width / 4.0;
        let diff = (split - whole).abs();
        let jump_ok = worst_jump <= std::f64::consts::FRAC_PI_2;
        let panel_tol = tol * (width / lambda_max).sqrt();
        if (diff <= panel_tol && jump_ok) || depth >= 30 {
            if !jump_ok {
                return Err(Error::PhaseUnwrap { at: a, jump: worst_jump });
            }
            total += split;
            err += diff;
            delta_right = delta[pts.len() - 1];
        } else {
            let m = a + width / 2.0;
            stack.push((a, m, depth + 1));
            stack.push((m, b, depth + 1));
        }
    }
    Ok(SpectralShiftValue { value: BK_SIGN * BK_NORM * total, quadrature_error: BK_NORM * err, lambda_max, evaluations: evals })
}

/// First λ after which |g'| sits below 5e-12·|g(0)| over a run of samples.
/// Table noise for narrow far-out bumps floats around 1e-12, so the scan runs upward.
fn g_prime_cutoff(pair: &TestFunctionPair<f64>) -> f64 {
    let top = pair.rho_max();
    let floor = 5e-12 * pair.f_fast(0.0)[0].abs();
    let steps = 8192;
    let run = 256;
    let dl = top / steps as f64;
    let mut quiet = 0;
    for i in 0..=steps {
        if pair.g_prime_fast(i as f64 * dl).abs() > floor {
            quiet = 0;
        } else {
            quiet += 1;
            if quiet == run {
                return (i + 1 - run) as f64 * dl;
            }
        }
    }
    top
}

/// Reduces to (−2π, 2π]: δ = −2 arg W̃ is defined modulo 4π.
fn wrap_four_pi(x: f64) -> f64 {
    let p = 4.0 * std::f64::consts::PI;
    (x + p / 2.0).rem_euclid(p) - p / 2.0
}

/// Least-squares fit (2πh)ⁿ·Tr(h) ≈ c₀ + c₂h² + c₄h⁴.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalFit {
    pub c0: f64,
    pub c2: f64,
    pub c4: f64,
    pub residuals: Vec<f64>,
    pub condition: f64,
}

/// Condition numbers above this are rejected.
pub const FIT_CONDITION_LIMIT: f64 = 1e8;

pub fn semiclassical_fit(n: usize, hs: &[f64], traces: &[f64]) -> Result<SemiclassicalFit> {
    if hs.len() < 4 || hs.len() != traces.len() {
        return Err(Error::invalid("h-list", "need at least four h values with matching traces"));
    }
    let a = Mat::from_fn(hs.len(), 3, |i, j| hs[i].powi(2 * j as i32));
    let y: Vec<f64> = hs.iter().zip(traces).map(|(h, t)| (2.0 * std::f64::consts::PI * h).powi(n as i32) * t).collect();
    let cond = condition_number(&a);
    if !(cond <= FIT_CONDITION_LIMIT) {
        return Err(Error::IllConditioned(cond));
    }
    let c = lstsq(&a, &y);
    let fitted = a.mul_vec(&c);
    let residuals = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    Ok(SemiclassicalFit { c0: c[0], c2: c[1], c4: c[2], residuals, condition: cond })
}

/// Source of a per-h trace value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    ResonanceSum,
    SpectralShift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub h: f64,
    pub resonance_value: Option<f64>,
    pub resonance_bound: Option<f64>,
    pub spectral_shift: f64,
    pub used: f64,
    pub source: TraceSource,
}

/// Resonance-side values are used only when their truncation bound is below this.
pub const RESONANCE_BOUND_GATE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub rows: Vec<TraceRow>,
    pub direct_leading: f64,
    pub direct_subleading: f64,
    pub fit: SemiclassicalFit,
    /// Fit with the smallest h dropped, for the stability check.
    pub fit_without_smallest: Option<SemiclassicalFit>,
}

impl TraceRow {
    pub fn choose(h: f64, resonance: Option<(f64, f64)>, spectral_shift: f64) -> Self {
        let (used, source) = match resonance {
            Some((v, b)) if b < RESONANCE_BOUND_GATE => (v, TraceSource::ResonanceSum),
            _ => (spectral_shift, TraceSource::SpectralShift),
        };
        Self { h, resonance_value: resonance.map(|r| r.0), resonance_bound: resonance.map(|r| r.1), spectral_shift, used, source }
    }
}

impl TraceReport {
    pub fn assemble(rows: Vec<TraceRow>, direct_leading: f64, direct_subleading: f64) -> Result<Self> {
        let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let tr: Vec<f64> = rows.iter().map(|r| r.used).collect();
        let fit = semiclassical_fit(1, &hs, &tr)?;
        let fit_without_smallest = if rows.len() > 4 {
            let (i, _) = hs.iter().enumerate().fold((0, f64::INFINITY), |m, (i, h)| if *h < m.1 { (i, *h) } else { m });
            let hs2: Vec<f64> = hs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, h)| *h).collect();
            let tr2: Vec<f64> = tr.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, t)| *t).collect();
            Some(semiclassical_fit(1, &hs2, &tr2)?)
        } else {
            None
        };
        Ok(Self { rows, direct_leading, direct_subleading, fit, fit_without_smallest })
    }

    pub fn write_sweep_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["h", "resonance_value", "resonance_bound", "spectral_shift", "used", "source"])?;
        for r in &self.rows {
            let opt = |x: Option<f64>| x.map(fmt17).unwrap_or_default();
            let src = match r.source {
                TraceSource::ResonanceSum => "resonance_sum",
                TraceSource::SpectralShift => "spectral_shift",
            };
            w.write_record([fmt17(r.h), opt(r.resonance_value), opt(r.resonance_bound), fmt17(r.spectral_shift), fmt17(r.used), src.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads rows written by [`write_sweep_csv`](Self::write_sweep_csv).
    pub fn read_sweep_csv(path: &Path) -> Result<Vec<TraceRow>> {
        let mut r = csv::Reader::from_path(path)?;
        let rows: std::result::Result<Vec<TraceRow>, _> = r.deserialize().collect();
        Ok(rows?)
    }
}

