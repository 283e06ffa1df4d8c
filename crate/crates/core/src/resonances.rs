//! Resonances of −h²d²/dx² + V on the line as zeros of the Jost–Wronskian.
//!
//! With k = λ/h the outgoing Jost solutions are u₊ ~ e^{ikx} (x → +∞) and
//! u₋ ~ e^{−ikx} (x → −∞). Each is integrated from its truncation point toward
//! a matching point x_m in Riccati form, so only logarithms of the solutions
//! are ever stored. The reported W̃ = W(u₊, u₋)/(−2ik) equals 1 for V ≡ 0 and
//! 1/T(k) on the real axis.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Control, Dopri5, OdeError};
use crate::potentials::PotentialField;
use crate::quadrature::Adaptive;
use crate::scalar::{lit, to_f64, Real};
use crate::testfns::TestFunctionPair;

/// A complex number stored as `mantissa · e^{log_scale}` with |mantissa| = 1
/// (or 0), so Wronskians far beyond the exponent range stay usable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledComplex<T> {
    pub mantissa: Complex<T>,
    pub log_scale: T,
}

impl<T: Real> ScaledComplex<T> {
    pub fn new(z: Complex<T>, log_scale: T) -> Self {
        let r = z.norm();
        if r == T::zero() || !r.is_finite() {
            return Self { mantissa: z, log_scale };
        }
        Self { mantissa: z / r, log_scale: log_scale + r.ln() }
    }

    pub fn value(&self) -> Complex<T> {
        self.mantissa * self.log_scale.exp()
    }

    pub fn norm(&self) -> T {
        self.mantissa.norm() * self.log_scale.exp()
    }

    pub fn arg(&self) -> T {
        self.mantissa.arg()
    }

    /// self / other as a plain complex number.
    pub fn ratio(&self, other: &Self) -> Complex<T> {
        self.mantissa / other.mantissa * (self.log_scale - other.log_scale).exp()
    }
}

/// The 1-D scattering problem for a potential field at a given h.
#[derive(Clone, Debug)]
pub struct SpectralProblem<T> {
    field: PotentialField<T>,
    h: T,
    truncation: T,
    tolerance: T,
    matching_point: T,
}

/// Relative tolerance of the Riccati integration. Errors at depth Γ grow like
/// e^{2Γℓ/h}, so deep resonances need it near rounding level.
pub const ODE_TOLERANCE: f64 = 1e-14;

/// Relative size of V at the truncation points.
pub const TRUNCATION_LEVEL: f64 = 1e-14;

impl<T: Real> SpectralProblem<T> {
    pub fn new(field: PotentialField<T>, h: T) -> Result<Self> {
        if field.dimension() != 1 {
            return Err(Error::invalid("field", "resonances are computed for n = 1 only"));
        }
        if !(h > T::zero()) {
            return Err(Error::invalid("h", "must be positive"));
        }
        let (max, argmax) = field.max_value();
        let truncation = if field.is_free() {
            T::one()
        } else {
            let l = field.support_radius(max * lit(TRUNCATION_LEVEL));
            let bp = field.breakpoints().into_iter().fold(T::zero(), |m, b| m.max(b.abs()));
            l.max(bp).max(argmax.abs() + lit(1e-3))
        };
        Ok(Self { field, h, truncation, tolerance: lit(ODE_TOLERANCE), matching_point: argmax })
    }

    pub fn with_truncation(mut self, l: T) -> Result<Self> {
        let bp = self.field.breakpoints().into_iter().fold(T::zero(), |m, b| m.max(b.abs()));
        if !(l > bp) || !(l > self.matching_point.abs()) {
            return Err(Error::invalid("truncation", "must enclose the matching point and all breakpoints"));
        }
        self.truncation = l;
        Ok(self)
    }

    /// The problem with L widened until V(L)·e^{2ΓL/h} ≤ 10⁻¹⁴·max V. Outgoing
    /// solutions at depth Γ amplify the cut-off tail by e^{2ΓL/h}, so a
    /// truncation adequate near the real axis adds spurious deep resonances.
    pub fn for_depth(&self, depth: T) -> Self {
        let mut p = self.clone();
        if p.field.is_free() {
            return p;
        }
        let (max, _) = p.field.max_value();
        let rate = lit::<T>(2.0) * depth / p.h;
        for _ in 0..200 {
            let level = max * lit(TRUNCATION_LEVEL) * (-rate * p.truncation).exp();
            let l = p.field.support_radius(level).max(p.truncation);
            let done = l - p.truncation <= lit::<T>(1e-12) * l;
            p.truncation = l;
            if done {
                break;
            }
        }
        p
    }

    pub fn with_tolerance(mut self, tol: T) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn field(&self) -> &PotentialField<T> {
        &self.field
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn truncation(&self) -> T {
        self.truncation
    }

    pub fn matching_point(&self) -> T {
        self.matching_point
    }

    /// Renormalized Wronskian W̃(λ) = W(u₊, u₋)/(−2iλ/h).
    pub fn wronskian(&self, lambda: Complex<T>) -> Result<ScaledComplex<T>> {
        if lambda.norm() == T::zero() {
            return Err(Error::invalid("lambda", "the renormalized Wronskian is undefined at λ = 0"));
        }
        let k = lambda / self.h;
        let plus = self.integrate_side(k, true, lambda)?;
        let minus = self.integrate_side(k, false, lambda)?;
        let combo = match (plus.mode, minus.mode) {
            (Mode::Y, Mode::Y) => minus.w - plus.w,
            (Mode::Z, Mode::Z) => plus.w - minus.w,
            (Mode::Y, Mode::Z) => Complex::new(T::one(), T::zero()) - plus.w * minus.w,
            (Mode::Z, Mode::Y) => plus.w * minus.w - Complex::new(T::one(), T::zero()),
        };
        let s = plus.ell + minus.ell;
        let c = combo / (Complex::new(T::zero(), lit(-2.0)) * k);
        let phase = Complex::new(T::zero(), s.im).exp();
        Ok(ScaledComplex::new(c * phase, s.re))
    }

    /// Un-renormalized Wronskian W(u₊, u₋).
    pub fn wronskian_raw(&self, lambda: Complex<T>) -> Result<Complex<T>> {
        let k = lambda / self.h;
        Ok(self.wronskian(lambda)?.value() * Complex::new(T::zero(), lit(-2.0)) * k)
    }

    fn integrate_side(&self, k: Complex<T>, plus: bool, lambda: Complex<T>) -> Result<SideState<T>> {
        let l = self.truncation;
        let sign = if plus { T::one() } else { -T::one() };
        let ik = Complex::new(T::zero(), T::one()) * k;
        let sik = ik * sign;
        let start = l * sign;
        let xm = self.matching_point;
        // segment ends, walking from the truncation point to x_m
        let mut nodes: Vec<T> = self
            .field
            .breakpoints()
            .into_iter()
            .filter(|b| if plus { *b < l && *b > xm } else { *b > -l && *b < xm })
            .collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if plus {
            nodes.reverse();
        }
        nodes.insert(0, start);
        nodes.push(xm);

        let h2 = self.h * self.h;
        let k2 = k * k;
        let kscale = k.norm().max(T::one());
        let y_limit = lit::<T>(4.0) * kscale;
        let z_limit = lit::<T>(4.0) / kscale;
        let mode = std::cell::Cell::new(Mode::Y);
        let ode = Dopri5 { rtol: self.tolerance, atol: self.tolerance, max_steps: 500_000 };
        let mut state = vec![sik, Complex::new(T::zero(), T::zero())];
        for seg in nodes.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            if a == b {
                continue;
            }
            let mid = (a + b) / lit(2.0);
            let rhs = |x: T, s: &Vec<Complex<T>>| {
                // evaluate V inside the open segment so jumps are taken from the correct side
                let xe = if x == a || x == b { x + (mid - x) * T::epsilon() * lit(64.0) } else { x };
                let q = Complex::new(self.field.eval1(xe) / h2, T::zero()) - k2;
                match mode.get() {
                    Mode::Y => vec![q - s[0] * s[0], s[0] - sik],
                    Mode::Z => vec![Complex::new(T::one(), T::zero()) - q * s[0] * s[0], q * s[0] - sik],
                }
            };
            let after = |_x: T, s: &Vec<Complex<T>>| match mode.get() {
                Mode::Y if s[0].norm() > y_limit => {
                    mode.set(Mode::Z);
                    Control::Replace(vec![s[0].inv(), s[1] + s[0].ln()])
                }
                Mode::Z if s[0].norm() > z_limit => {
                    mode.set(Mode::Y);
                    Control::Replace(vec![s[0].inv(), s[1] + s[0].ln()])
                }
                _ => Control::Continue,
            };
            let h0 = (b - a).abs().min(lit::<T>(0.5) / kscale);
            let (_, s) = ode.solve(rhs, a, b, state, Some(h0), after).map_err(|e| {
                let (at, reason) = match e {
                    OdeError::StepUnderflow { at } => (at, "step size underflow"),
                    OdeError::NonFinite { at } => (at, "non-finite state"),
                    OdeError::TooManySteps { at } => (at, "step budget exhausted"),
                };
                Error::Ode { lambda: format!("{lambda}"), at, reason: reason.into() }
            })?;
            state = s;
        }
        Ok(SideState { mode: mode.get(), w: state[0], ell: state[1] })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Mode {
    /// w = u'/u, ℓ tracks ln u
    Y,
    /// w = u/u', ℓ tracks ln u'
    Z,
}

struct SideState<T> {
    mode: Mode,
    w: Complex<T>,
    /// log amplitude with the free phase ±ikx removed
    ell: Complex<T>,
}

/// Axis-aligned rectangle in the λ-plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Rect {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Self {
        Self { re_min, re_max, im_min, im_max }
    }

    fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.re_min, self.im_min),
            (self.re_max, self.im_min),
            (self.re_max, self.im_max),
            (self.re_min, self.im_max),
        ]
    }

    fn contains(&self, z: (f64, f64), slack: f64) -> bool {
        z.0 >= self.re_min - slack && z.0 <= self.re_max + slack && z.1 >= self.im_min - slack && z.1 <= self.im_max + slack
    }

    fn width(&self) -> f64 {
        self.re_max - self.re_min
    }

    fn height(&self) -> f64 {
        self.im_max - self.im_min
    }
}

/// Search window [−Λ, Λ] × [−Γ, 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lambda_max: f64,
    pub depth: f64,
}

/// Radius of the disc around λ = 0 kept out of every search.
pub const THRESHOLD_RADIUS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
    pub residual: f64,
}

impl Resonance {
    pub fn lambda(&self) -> Complex<f64> {
        Complex::new(self.re, self.im)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSet {
    pub h: f64,
    pub window: Window,
    pub resonances: Vec<Resonance>,
    /// True when `max_count` cut the search short.
    pub truncated: bool,
    /// Order of the zero of W̃ at λ = 0 (−1 for the free problem's pole-free W).
    pub threshold_order: i64,
}

impl ResonanceSet {
    pub fn total_multiplicity(&self) -> usize {
        self.resonances.iter().map(|r| r.multiplicity).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["re", "im", "multiplicity", "residual"])?;
        for r in &self.resonances {
            w.write_record([fmt17(r.re), fmt17(r.im), r.multiplicity.to_string(), fmt17(r.residual)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<Resonance>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in r.deserialize() {
            out.push(rec?);
        }
        Ok(out)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

/// Full-precision decimal rendering for CSV output.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Argument-principle machinery with a shared evaluation cache.
pub struct ZeroCounter<'a, T> {
    problem: &'a SpectralProblem<T>,
    cache: Mutex<HashMap<(u64, u64), ScaledComplex<T>>>,
    /// Samples per unit length on a first pass.
    density: f64,
    max_refine: usize,
}

/// Largest accepted phase change between neighbouring samples.
const PHASE_STEP: f64 = std::f64::consts::FRAC_PI_4;

#[derive(Debug)]
enum CountError {
    NearZero { at: Complex<f64> },
    Fatal(Error),
}

impl<'a, T: Real> ZeroCounter<'a, T> {
    pub fn new(problem: &'a SpectralProblem<T>) -> Self {
        // phase of W̃ turns at roughly the round-trip time 2L/h per unit λ
        let span = to_f64(problem.truncation) * 2.0 / to_f64(problem.h);
        Self { problem, cache: Mutex::new(HashMap::new()), density: 8.0 * (span + 1.0) / std::f64::consts::PI, max_refine: 40 }
    }

    pub fn eval(&self, z: (f64, f64)) -> Result<ScaledComplex<T>> {
        let key = (z.0.to_bits(), z.1.to_bits());
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let v = self.problem.wronskian(Complex::new(lit(z.0), lit(z.1)))?;
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }

    fn eval_many(&self, pts: &[(f64, f64)]) -> Result<Vec<ScaledComplex<T>>> {
        pts.par_iter().map(|&p| self.eval(p)).collect()
    }

    /// Total phase change of W̃ along the straight segment p → q.
    fn edge_phase(&self, p: (f64, f64), q: (f64, f64)) -> std::result::Result<f64, CountError> {
        // canonical direction so shared edges reuse cached samples
        let (a, b, flip) = if (p.0, p.1) <= (q.0, q.1) { (p, q, 1.0) } else { (q, p, -1.0) };
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let n = ((len * self.density).ceil() as usize).max(8);
        let mut ts: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let at = |t: f64| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
        let mut vals = self.eval_many(&ts.iter().map(|&t| at(t)).collect::<Vec<_>>()).map_err(CountError::Fatal)?;
        for _round in 0..self.max_refine {
            let mut insert = Vec::new();
            for i in 0..ts.len() - 1 {
                let d = phase_diff(&vals[i], &vals[i + 1]);
                if d.abs() > PHASE_STEP {
                    insert.push(i);
                }
            }
            if insert.is_empty() {
                let total: f64 = (0..ts.len() - 1).map(|i| phase_diff(&vals[i], &vals[i + 1])).sum();
                return Ok(flip * total);
            }
            let mids: Vec<f64> = insert.iter().map(|&i| 0.5 * (ts[i] + ts[i + 1])).collect();
            if mids.iter().zip(&insert).any(|(m, &i)| (ts[i + 1] - ts[i]) * len < 1e-12 * (1.0 + len) || *m == ts[i]) {
                let i = insert[0];
                let z = at(ts[i]);
                return Err(CountError::NearZero { at: Complex::new(z.0, z.1) });
            }
            let new_vals = self.eval_many(&mids.iter().map(|&t| at(t)).collect::<Vec<_>>()).map_err(CountError::Fatal)?;
            for (j, &i) in insert.iter().enumerate().rev() {
                ts.insert(i + 1, mids[j]);
                vals.insert(i + 1, new_vals[j]);
            }
        }
        let z = at(0.5);
        Err(CountError::NearZero { at: Complex::new(z.0, z.1) })
    }

    fn count_rect(&self, r: &Rect) -> std::result::Result<i64, CountError> {
        let c = r.corners();
        let mut total = 0.0;
        for i in 0..4 {
            total += self.edge_phase(c[i], c[(i + 1) % 4])?;
        }
        let w = total / (2.0 * std::f64::consts::PI);
        let n = w.round();
        if (w - n).abs() > 0.1 {
            return Err(CountError::NearZero { at: Complex::new(0.5 * (r.re_min + r.re_max), 0.5 * (r.im_min + r.im_max)) });
        }
        Ok(n as i64)
    }

    /// Winding number of W̃ around the closed polygon.
    pub fn winding(&self, polygon: &[(f64, f64)]) -> Result<i64> {
        let mut total = 0.0;
        for i in 0..polygon.len() {
            total += self
                .edge_phase(polygon[i], polygon[(i + 1) % polygon.len()])
                .map_err(|e| count_error_to_error(e, "closed contour"))?;
        }
        Ok((total / (2.0 * std::f64::consts::PI)).round() as i64)
    }
}

fn count_error_to_error(e: CountError, context: &str) -> Error {
    match e {
        CountError::Fatal(e) => e,
        CountError::NearZero { at } => Error::BoundaryTooCoarse { context: format!("{context}: W̃ nearly vanishes near {at}") },
    }
}

fn phase_diff<T: Real>(a: &ScaledComplex<T>, b: &ScaledComplex<T>) -> f64 {
    to_f64(b.ratio(a).arg())
}

/// Number of zeros of W̃ inside `rect` (with multiplicity).
pub fn count_zeros<T: Real>(problem: &SpectralProblem<T>, rect: Rect) -> Result<i64> {
    if rect.im_max >= 0.0 {
        return Err(Error::invalid("rect", "must lie in the lower half-plane"));
    }
    let counter = ZeroCounter::new(problem);
    counter.count_rect(&rect).map_err(|e| count_error_to_error(e, "rectangle boundary"))
}

/// Newton iteration on W̃ with a central-difference derivative.
fn newton<T: Real>(counter: &ZeroCounter<'_, T>, start: Complex<f64>) -> Result<(Complex<f64>, f64, bool)> {
    let mut z = start;
    let mut converged = false;
    let mut prev = f64::INFINITY;
    for _ in 0..50 {
        let d = 1e-6 * (1.0 + z.norm());
        let f0 = counter.problem.wronskian(c64::<T>(z))?;
        let fp = counter.problem.wronskian(c64::<T>(z + d))?;
        let fm = counter.problem.wronskian(c64::<T>(z - d))?;
        let slope = (fp.ratio(&f0) - fm.ratio(&f0)) / lit::<T>(2.0 * d);
        let step = Complex::new(to_f64(slope.re), to_f64(slope.im)).inv();
        if !step.re.is_finite() || !step.im.is_finite() {
            break;
        }
        z -= step;
        let size = step.norm();
        // stalled at the noise floor of W̃: further steps only wander
        if size <= 1e-13 * (1.0 + z.norm()) || (size <= 1e-7 * (1.0 + z.norm()) && size > 0.5 * prev) {
            converged = true;
            break;
        }
        prev = size;
    }
    let res = to_f64(counter.problem.wronskian(c64::<T>(z))?.norm());
    Ok((z, res, converged || res <= 1e-10))
}

fn c64<T: Real>(z: Complex<f64>) -> Complex<T> {
    Complex::new(lit(z.re), lit(z.im))
}

/// Residual target for accepted resonances.
pub const NEWTON_RESIDUAL: f64 = 1e-10;

/// Locates all resonances in the window, using λ ↦ −λ̄ symmetry to search
/// only Re λ ≥ 0.
pub fn find_resonances<T: Real>(problem: &SpectralProblem<T>, window: Window, max_count: usize) -> Result<ResonanceSet> {
    if !(window.lambda_max > 0.0) || !(window.depth > THRESHOLD_RADIUS) {
        return Err(Error::invalid("window", "needs Λ > 0 and Γ above the threshold radius"));
    }
    let problem = &problem.for_depth(lit(window.depth));
    let counter = ZeroCounter::new(problem);
    // strip straddling Re λ = 0 so purely imaginary resonances sit inside
    let mut strip = 1.37e-3;
    let mut top = -1.0009 * THRESHOLD_RADIUS;
    let mut re_max = window.lambda_max;
    let mut depth = window.depth;
    let mut attempt = 0;
    let root = loop {
        let r = Rect::new(-strip, re_max, -depth, top);
        match counter.count_rect(&r) {
            Ok(n) => break (r, n),
            Err(CountError::NearZero { .. }) if attempt < 6 => {
                attempt += 1;
                let f = 1.0 + 0.0137 * attempt as f64;
                strip *= f;
                top *= f;
                re_max *= 1.0 + 1e-3 * attempt as f64;
                depth *= 1.0 + 1e-3 * attempt as f64;
            }
            Err(e) => return Err(count_error_to_error(e, "search window")),
        }
    };
    let mut found: Vec<Resonance> = Vec::new();
    let mut truncated = false;
    let mut queue = vec![root];
    let min_size = 1e-7;
    while let Some((rect, n)) = queue.pop() {
        if n <= 0 {
            continue;
        }
        let total: usize = found.iter().map(|r| if r.re > strip { 2 * r.multiplicity } else { r.multiplicity }).sum();
        if total > max_count {
            truncated = true;
            break;
        }
        let center = Complex::new(0.5 * (rect.re_min + rect.re_max), 0.5 * (rect.im_min + rect.im_max));
        if n == 1 {
            let (z, res, ok) = newton(&counter, center)?;
            let slack = 1e-9 * (1.0 + z.norm());
            if ok && rect.contains((z.re, z.im), slack) && !found.iter().any(|r| (r.lambda() - z).norm() < 1e-8 * (1.0 + z.norm())) {
                found.push(Resonance { re: z.re, im: z.im, multiplicity: 1, residual: res });
                continue;
            }
        } else if rect.width().max(rect.height()) < min_size {
            let (z, res, _) = newton(&counter, center)?;
            let z = if rect.contains((z.re, z.im), min_size) { z } else { center };
            found.push(Resonance { re: z.re, im: z.im, multiplicity: n as usize, residual: res });
            continue;
        }
        if rect.width().max(rect.height()) < min_size {
            // a simple zero Newton could not pin down; keep the box center
            let res = to_f64(counter.eval((center.re, center.im))?.norm());
            found.push(Resonance { re: center.re, im: center.im, multiplicity: 1, residual: res });
            continue;
        }
        match split(&counter, &rect, n) {
            Ok(children) => queue.extend(children),
            Err(Error::BoundaryTooCoarse { .. }) if rect.width().max(rect.height()) < 1e-4 * (1.0 + center.norm()) => {
                // phase noise at this depth hides the internal structure
                let (z, res, _) = newton(&counter, center)?;
                let z = if rect.contains((z.re, z.im), rect.width().max(rect.height())) { z } else { center };
                found.push(Resonance { re: z.re, im: z.im, multiplicity: n as usize, residual: res });
            }
            Err(e) => return Err(e),
        }
    }
    // keep the shallowest ones when the cap was overshot
    found.sort_by(|a, b| b.im.partial_cmp(&a.im).unwrap());
    let weight = |r: &Resonance| if r.re > strip { 2 * r.multiplicity } else { r.multiplicity };
    while found.iter().map(weight).sum::<usize>() > max_count {
        found.pop();
        truncated = true;
    }
    let mut out = Vec::new();
    for r in found {
        if r.re > strip {
            out.push(Resonance { re: -r.re, im: r.im, multiplicity: r.multiplicity, residual: r.residual });
        }
        out.push(r);
    }
    out.retain(|r| r.re.abs() <= window.lambda_max && r.im >= -window.depth);
    out.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(b.im.partial_cmp(&a.im).unwrap()));
    let threshold_order = threshold_order(problem)?;
    Ok(ResonanceSet { h: to_f64(problem.h), window, resonances: out, truncated, threshold_order })
}

/// Splits a box across its longer side, nudging the cut off any zero.
fn split<T: Real>(counter: &ZeroCounter<'_, T>, rect: &Rect, n: i64) -> Result<Vec<(Rect, i64)>> {
    for attempt in 0..8 {
        let frac = 0.5 + 0.0173 * attempt as f64 * if attempt % 2 == 0 { 1.0 } else { -1.0 };
        let (a, b) = if rect.width() >= rect.height() {
            let m = rect.re_min + frac * rect.width();
            (Rect { re_max: m, ..*rect }, Rect { re_min: m, ..*rect })
        } else {
            let m = rect.im_min + frac * rect.height();
            (Rect { im_max: m, ..*rect }, Rect { im_min: m, ..*rect })
        };
        let (na, nb) = match (counter.count_rect(&a), counter.count_rect(&b)) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(CountError::Fatal(e)), _) | (_, Err(CountError::Fatal(e))) => return Err(e),
            _ => continue,
        };
        if na + nb == n && na >= 0 && nb >= 0 {
            return Ok(vec![(a, na), (b, nb)]);
        }
    }
    Err(Error::BoundaryTooCoarse { context: format!("could not split box {rect:?} consistently") })
}

/// Order of the zero of W̃ at λ = 0, from its winding around |λ| = 10⁻³.
/// Generic potentials give −1 (W(0) ≠ 0 while W̃ has the 1/λ pole); V ≡ 0 gives 0.
pub fn threshold_order<T: Real>(problem: &SpectralProblem<T>) -> Result<i64> {
    if problem.field.is_free() {
        return Ok(0);
    }
    let counter = ZeroCounter::new(problem);
    let m = 64;
    let poly: Vec<(f64, f64)> = (0..m)
        .map(|j| {
            let t = 2.0 * std::f64::consts::PI * (j as f64 + 0.31) / m as f64;
            (THRESHOLD_RADIUS * t.cos(), THRESHOLD_RADIUS * t.sin())
        })
        .collect();
    counter.winding(&poly)
}

/// A resonance-side trace value with its truncation bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceValue {
    pub value: f64,
    pub bound: f64,
    /// Imaginary part left after mirror-pair assembly.
    pub imag_residue: f64,
}

/// (1/4π) Σ mult·∫_ℝ e^{−i|t|λ} ĝ(t) dt over the set, plus the contribution of
/// the threshold: a zero of W̃ of order m at λ = 0 counts as a resonance of
/// multiplicity m there, i.e. m·g(0)/2.
pub fn resonance_sum(set: &ResonanceSet, pair: &TestFunctionPair<f64>) -> Result<TraceValue> {
    let (t0, t1) = pair
        .support()
        .ok_or_else(|| Error::invalid("pair", "resonance sums need ĝ supported away from 0"))?;
    let quad = Adaptive::<f64>::new(20, 1e-15, 1e-13);
    let terms: Vec<Result<Complex<f64>>> = set
        .resonances
        .par_iter()
        .map(|r| {
            let lam = r.lambda();
            let panels = 4 + ((t1 - t0) * lam.re.abs() / std::f64::consts::PI).ceil() as usize;
            let v = quad
                .integrate(t0, t1, panels, |t| (Complex::new(0.0, -t) * lam).exp() * pair.ghat(t))
                .map_err(|f| Error::quad(format!("resonance term at λ = {lam}"), f))?
                .value;
            Ok(v * (2.0 * r.multiplicity as f64) / (4.0 * std::f64::consts::PI))
        })
        .collect();
    let mut total = Complex::new(0.0, 0.0);
    for t in terms {
        total += t?;
    }
    let g0 = pair.g(0.0)?;
    total += g0 / 2.0 * set.threshold_order as f64;
    let bound = truncation_bound(set, t0, g0);
    Ok(TraceValue { value: total.re, bound, imag_residue: total.im })
}

/// Heuristic bound on the resonances missed below depth Γ: each term is at
/// most (g(0)/2)·e^{−t₀|Im λ|}, and the count per unit depth is taken to grow
/// linearly at the rate observed inside the window.
pub fn truncation_bound(set: &ResonanceSet, t0: f64, g0: f64) -> f64 {
    let gamma = set.window.depth;
    let n = set.total_multiplicity().max(2) as f64;
    let rate = 2.0 * n / (gamma * gamma);
    let tail = (-t0 * gamma).exp() * (gamma / t0 + 1.0 / (t0 * t0));
    g0.abs() / 2.0 * rate * tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{make_free_field, make_square_barrier};

    #[test]
    fn free_wronskian_is_one() {
        let p = SpectralProblem::new(make_free_field::<f64>(1).unwrap(), 1.0).unwrap();
        let w = p.wronskian(Complex::new(2.0, -0.5)).unwrap().value();
        assert!((w - Complex::new(1.0, 0.0)).norm() < 1e-12);
        let raw = p.wronskian_raw(Complex::new(2.0, -0.5)).unwrap();
        assert!((raw - Complex::new(0.0, -2.0) * Complex::new(2.0, -0.5)).norm() < 1e-11);
    }

    #[test]
    fn barrier_conjugate_symmetry() {
        let p = SpectralProblem::new(make_square_barrier::<f64>(1.0, 0.0, 1.0).unwrap(), 1.0).unwrap();
        let z = Complex::new(1.3, -0.7);
        let a = p.wronskian(z).unwrap().value();
        let b = p.wronskian(-z.conj()).unwrap().value();
        assert!((a - b.conj()).norm() < 1e-10 * a.norm());
    }
}
