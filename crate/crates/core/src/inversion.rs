//! From moments back to a potential: distribution function, coarea densities,
//! the Cauchy–Schwarz radiality certificate, the radial profile and the 1-D
//! flowline reconstruction.
//!
//! The level variable is ρ = √ln(S/s), where S is the (fitted) maximum, and
//! q = ρⁿ. On a uniform ρ-grid the unknowns are cell densities in q:
//! a(s)|ds| = w_j dq and b(s)|ds| = w′_j ρ² s² dq. A Gaussian V = e^{−|x|²}
//! has both constant, w = ω_n and w′ = 4ω_n.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::{lstsq, nnls, Mat};
use crate::moments::MomentTable;
use crate::ode::{Control, Dopri5};
use crate::potentials::{argmax_1d, PotentialField, RadialProfile, Tabulated};
use crate::quadrature::GaussLegendre;
use crate::resonances::fmt17;
use crate::scalar::{unit_ball_volume, unit_sphere_area};
use crate::{Error, Result};

/// Discretization of the inversion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionGrid {
    pub cells: usize,
    /// Lowest represented level as a fraction of max V.
    pub floor: f64,
    pub tikhonov: f64,
}

impl Default for InversionGrid {
    fn default() -> Self {
        Self { cells: 200, floor: 1e-12, tikhonov: 1e-8 }
    }
}

impl InversionGrid {
    fn validate(&self) -> Result<()> {
        if self.cells < 10 {
            return Err(Error::invalid("cells", format!("need at least 10, got {}", self.cells)));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(Error::invalid("floor", format!("must lie in (0, 1), got {}", self.floor)));
        }
        if !(self.tikhonov >= 0.0) {
            return Err(Error::invalid("tikhonov", "must be nonnegative"));
        }
        Ok(())
    }

    fn nodes(&self) -> Vec<f64> {
        let top = (1.0 / self.floor).ln().sqrt();
        (0..=self.cells).map(|i| top * i as f64 / self.cells as f64).collect()
    }
}

/// μ(s) = vol({V > s}), piecewise linear in q = ρⁿ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionFunction {
    pub n: usize,
    /// Fitted max V.
    pub max: f64,
    /// ρ nodes, ascending from 0.
    pub rho: Vec<f64>,
    /// μ at each node; μ(ρ = 0) = 0.
    pub mu: Vec<f64>,
    /// Max |fit − M_k| over the moments used.
    pub residual: f64,
    pub ill_posed: bool,
    /// Moment orders that entered the fit.
    pub used: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct DistributionRow {
    s: String,
    mu: String,
    density: String,
}

impl DistributionFunction {
    /// Builds μ from values at levels `s` (ascending, inside (0, max)).
    pub fn from_levels(n: usize, max: f64, s: &[f64], mu: &[f64]) -> Result<Self> {
        if s.len() != mu.len() || s.is_empty() {
            return Err(Error::invalid("levels", "need matching, nonempty level and μ lists"));
        }
        if s.windows(2).any(|w| w[1] <= w[0]) || s[0] <= 0.0 || s[s.len() - 1] >= max {
            return Err(Error::invalid("levels", "must be strictly ascending inside (0, max)"));
        }
        let mut rho = vec![0.0];
        let mut vals = vec![0.0];
        for (&si, &mi) in s.iter().zip(mu).rev() {
            rho.push((max / si).ln().sqrt());
            vals.push(mi);
        }
        Ok(Self { n, max, rho, mu: vals, residual: 0.0, ill_posed: false, used: vec![] })
    }

    /// Level of each node.
    pub fn levels(&self) -> Vec<f64> {
        self.rho.iter().map(|r| self.max * (-r * r).exp()).collect()
    }

    pub fn mu_at(&self, s: f64) -> f64 {
        if self.max <= 0.0 || s >= self.max {
            return 0.0;
        }
        let p = (self.max / s).ln().sqrt();
        let last = self.rho.len() - 1;
        if p >= self.rho[last] {
            return self.mu[last];
        }
        let j = self.rho.partition_point(|&r| r <= p).max(1) - 1;
        let e = self.n as i32;
        let t = (p.powi(e) - self.rho[j].powi(e)) / (self.rho[j + 1].powi(e) - self.rho[j].powi(e));
        self.mu[j] + t * (self.mu[j + 1] - self.mu[j])
    }

    /// −μ′(s) on the cell containing s.
    pub fn density_at(&self, s: f64) -> f64 {
        if self.max <= 0.0 || s >= self.max {
            return 0.0;
        }
        let p = (self.max / s).ln().sqrt();
        let j = self.rho.partition_point(|&r| r <= p).clamp(1, self.rho.len() - 1) - 1;
        let e = self.n as i32;
        let slope = (self.mu[j + 1] - self.mu[j]) / (self.rho[j + 1].powi(e) - self.rho[j].powi(e));
        slope * self.n as f64 * p.powi(e - 1) / (2.0 * p.max(f64::MIN_POSITIVE) * s)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (s, mu) in self.levels().into_iter().zip(&self.mu).rev() {
            let density = if s < self.max { self.density_at(s) } else { 0.0 };
            w.serialize(DistributionRow { s: fmt17(s), mu: fmt17(*mu), density: fmt17(density) })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads (s, μ) rows written by [`write_csv`](Self::write_csv).
    pub fn read_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for row in r.deserialize() {
            let row: DistributionRow = row?;
            let parse = |x: &str| x.parse::<f64>().map_err(|e| Error::invalid("distribution", e.to_string()));
            out.push((parse(&row.s)?, parse(&row.mu)?));
        }
        Ok(out)
    }
}

/// ∫ over each cell of `f(ρ)`, eight-point Gauss–Legendre per cell.
fn cell_integrals(rho: &[f64], rule: &GaussLegendre<f64>, f: impl Fn(f64) -> f64) -> Vec<f64> {
    rho.windows(2).map(|w| rule.integrate(w[0], w[1], &mut |p: f64| f(p))).collect()
}

struct CellFit {
    weights: Vec<f64>,
    /// max_k |fit_k − target_k|
    residual: f64,
    /// weighted misfit plus penalty, the quantity minimized
    objective: f64,
}

/// min Σ_k ((E w)_k/t_k − 1)² + τ ∫ (d²μ/dq²)² dq over w ≥ 0, with q = ρⁿ and
/// cell weights w_j = dμ/dq.
fn fit_cells(columns: &[Vec<f64>], targets: &[f64], q: &[f64], tikhonov: f64) -> CellFit {
    let cells = columns[0].len();
    let rows = targets.len();
    let mut a = Mat::zeros(rows + cells - 1, cells);
    let mut b = vec![0.0; rows + cells - 1];
    for (i, (col, &t)) in columns.iter().zip(targets).enumerate() {
        for (j, &e) in col.iter().enumerate() {
            a.set(i, j, e / t);
        }
        b[i] = 1.0;
    }
    let root = tikhonov.sqrt();
    for j in 0..cells - 1 {
        let h = 0.5 * (q[j + 2] - q[j]);
        let scale = root / h.sqrt();
        a.set(rows + j, j, -scale);
        a.set(rows + j, j + 1, scale);
    }
    // the unconstrained minimizer already satisfies the KKT conditions when it is nonnegative
    let free = lstsq(&a, &b);
    let w = if free.iter().all(|&x| x >= 0.0) { free } else { nnls(&a, &b, 4 * cells) };
    let fitted = a.mul_vec(&w);
    let objective = fitted.iter().zip(&b).map(|(f, t)| (f - t) * (f - t)).sum();
    let residual = (0..rows).map(|i| ((fitted[i] - 1.0) * targets[i]).abs()).fold(0.0, f64::max);
    CellFit { weights: w, residual, objective }
}

/// ∫_cell sᵏ dq for M_k.
fn m_columns(ks: &[usize], n: usize, rho: &[f64], max: f64, rule: &GaussLegendre<f64>) -> Vec<Vec<f64>> {
    let nf = n as f64;
    ks.iter()
        .map(|&k| {
            let kf = k as f64;
            cell_integrals(rho, rule, |p| nf * p.powi(n as i32 - 1) * (kf * (max.ln() - p * p)).exp())
        })
        .collect()
}

/// ∫_cell ρ² s^{k+2} dq for N_k.
fn n_columns(ks: &[usize], n: usize, rho: &[f64], max: f64, rule: &GaussLegendre<f64>) -> Vec<Vec<f64>> {
    let nf = n as f64;
    ks.iter()
        .map(|&k| {
            let kf = k as f64 + 2.0;
            cell_integrals(rho, rule, |p| nf * p.powi(n as i32 + 1) * (kf * (max.ln() - p * p)).exp())
        })
        .collect()
}

/// Usable moment orders: k ≥ n, reliable, positive.
fn usable_orders(table: &MomentTable, values: impl Fn(usize) -> f64) -> Vec<usize> {
    table.ks().filter(|&k| k >= table.n && table.is_reliable(k) && values(k) > 0.0).collect()
}

const MIN_MOMENTS: usize = 7;
const ILL_POSED: f64 = 1e-4;

/// Inverts M_k = ∫ sᵏ dμ for a nonincreasing μ with nonnegative cell
/// increments. The maximum S is fitted by golden section between the ratio
/// bounds M_K/M_{K−1} and M_K/M_{K−1}/(1 − n/K).
pub fn moments_to_distribution(table: &MomentTable, grid: &InversionGrid) -> Result<DistributionFunction> {
    grid.validate()?;
    let rho = grid.nodes();
    let n = table.n;
    if table.m.iter().all(|&m| m == 0.0) {
        let mu = vec![0.0; rho.len()];
        return Ok(DistributionFunction { n, max: 0.0, rho, mu, residual: 0.0, ill_posed: false, used: vec![] });
    }
    let ks = usable_orders(table, |k| table.m_at(k));
    if ks.len() < MIN_MOMENTS {
        return Err(Error::invalid(
            "moments",
            format!("need at least {MIN_MOMENTS} reliable moments with k ≥ n, got {}", ks.len()),
        ));
    }
    let targets: Vec<f64> = ks.iter().map(|&k| table.m_at(k)).collect();
    let kk = ks[ks.len() - 1];
    let prev = ks[ks.len() - 2];
    let ratio = (targets[ks.len() - 1] / targets[ks.len() - 2]).powf(1.0 / (kk - prev) as f64);
    let lo = ratio;
    let hi = ratio / (1.0 - n as f64 / kk as f64);
    let rule = GaussLegendre::new(8);
    let q: Vec<f64> = rho.iter().map(|p| p.powi(n as i32)).collect();
    let solve = |s: f64| fit_cells(&m_columns(&ks, n, &rho, s, &rule), &targets, &q, grid.tikhonov);
    let max = golden_min(&|s| solve(s).objective, lo, hi, 1e-10 * hi);
    let fit = solve(max);
    let mut mu = vec![0.0; rho.len()];
    for j in 0..fit.weights.len() {
        mu[j + 1] = mu[j] + fit.weights[j] * (q[j + 1] - q[j]);
    }
    Ok(DistributionFunction {
        n,
        max,
        rho,
        mu,
        residual: fit.residual,
        ill_posed: fit.residual > ILL_POSED * table.m_at(ks[0]),
        used: ks,
    })
}

fn golden_min(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
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
    (a + b) / 2.0
}

/// a(s), b(s) and the perimeter proxies on a set of levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoareaDensities {
    pub n: usize,
    pub max: f64,
    /// Ascending levels.
    pub levels: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// P(s): preimage count (n = 1) or sphere area.
    pub perimeter: Vec<f64>,
    /// P₀(s) of the radial candidate with the same μ(s).
    pub reference: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DensityRow {
    s: String,
    a: String,
    b: String,
    perimeter: String,
    reference: String,
}

/// Area of the sphere bounding a ball of volume `mu`; 2 points for n = 1.
fn reference_perimeter(n: usize, mu: f64) -> f64 {
    if n == 1 {
        return 2.0;
    }
    let r = (mu / unit_ball_volume::<f64>(n)).powf(1.0 / n as f64);
    unit_sphere_area::<f64>(n) * r.powi(n as i32 - 1)
}

const NEGATIVE_DENSITY: f64 = -1e-8;

/// a = −μ′ from the distribution, b from the same constrained inversion of
/// the N_k family, both at cell midpoints.
pub fn coarea_densities(distribution: &DistributionFunction, table: &MomentTable, grid: &InversionGrid) -> Result<CoareaDensities> {
    grid.validate()?;
    let d = distribution;
    if d.max <= 0.0 {
        return Err(Error::invalid("distribution", "max V must be positive"));
    }
    let ks = usable_orders(table, |k| table.n_at(k));
    if ks.len() < MIN_MOMENTS {
        return Err(Error::invalid(
            "moments",
            format!("need at least {MIN_MOMENTS} reliable N_k with k ≥ n, got {}", ks.len()),
        ));
    }
    let targets: Vec<f64> = ks.iter().map(|&k| table.n_at(k)).collect();
    let rule = GaussLegendre::new(8);
    let n = d.n;
    let q: Vec<f64> = d.rho.iter().map(|p| p.powi(n as i32)).collect();
    let fit = fit_cells(&n_columns(&ks, n, &d.rho, d.max, &rule), &targets, &q, grid.tikhonov);
    let cells = d.rho.len() - 1;
    let mut out = CoareaDensities {
        n: d.n,
        max: d.max,
        levels: vec![],
        a: vec![],
        b: vec![],
        perimeter: vec![],
        reference: vec![],
    };
    for j in (0..cells).rev() {
        let p = 0.5 * (d.rho[j] + d.rho[j + 1]);
        let s = d.max * (-p * p).exp();
        let (qa, qb, qm) = (d.rho[j].powi(n as i32), d.rho[j + 1].powi(n as i32), p.powi(n as i32));
        let w = (d.mu[j + 1] - d.mu[j]) / (qb - qa);
        if w < NEGATIVE_DENSITY {
            return Err(Error::Monotonicity(format!("negative density {w:.3e} at s = {s}")));
        }
        let jac = n as f64 * p.powi(n as i32 - 1) / (2.0 * p * s);
        let mu = d.mu[j] + w * (qm - qa);
        let p0 = reference_perimeter(n, mu);
        out.levels.push(s);
        out.a.push(w.max(0.0) * jac);
        out.b.push(fit.weights[j] * p * p * s * s * jac);
        out.perimeter.push(p0);
        out.reference.push(p0);
    }
    Ok(out)
}

/// Densities straight from the level sets of a known field.
pub fn oracle_densities(field: &PotentialField<f64>, levels: &[f64]) -> Result<CoareaDensities> {
    let (max, _) = field.max_value();
    let n = field.dimension();
    let mut out = CoareaDensities {
        n,
        max,
        levels: levels.to_vec(),
        a: vec![],
        b: vec![],
        perimeter: vec![],
        reference: vec![],
    };
    for &s in levels {
        let o = crate::potentials::level_set_oracle(field, s)?;
        out.a.push(o.inverse_grad_sum());
        out.b.push(o.grad_sum());
        out.perimeter.push(o.perimeter());
        out.reference.push(if n == 1 { 2.0 } else { o.perimeter() });
    }
    Ok(out)
}

impl CoareaDensities {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for i in 0..self.levels.len() {
            w.serialize(DensityRow {
                s: fmt17(self.levels[i]),
                a: fmt17(self.a[i]),
                b: fmt17(self.b[i]),
                perimeter: fmt17(self.perimeter[i]),
                reference: fmt17(self.reference[i]),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`write_csv`](Self::write_csv); `n` and max V are not stored.
    pub fn read_csv(path: &Path, n: usize, max: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = CoareaDensities { n, max, levels: vec![], a: vec![], b: vec![], perimeter: vec![], reference: vec![] };
        let parse = |x: &str| x.parse::<f64>().map_err(|e| Error::invalid("densities", e.to_string()));
        for row in r.deserialize() {
            let row: DensityRow = row?;
            out.levels.push(parse(&row.s)?);
            out.a.push(parse(&row.a)?);
            out.b.push(parse(&row.b)?);
            out.perimeter.push(parse(&row.perimeter)?);
            out.reference.push(parse(&row.reference)?);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "RADIAL-CONSISTENT")]
    RadialConsistent,
    #[serde(rename = "NON-RADIAL")]
    NonRadial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub levels: Vec<f64>,
    pub defects: Vec<f64>,
    pub sup_defect: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

pub const CERTIFICATE_THRESHOLD: f64 = 1e-3;

/// Levels certified by default, as fractions of max V.
pub const CERTIFICATE_WINDOW: (f64, f64) = (0.05, 0.95);

/// defect(s) = a(s)b(s)/P₀(s)² − 1 on the levels inside `window`·max V.
pub fn cs_certificate(densities: &CoareaDensities, window: (f64, f64)) -> Result<Certificate> {
    let (lo, hi) = (window.0 * densities.max, window.1 * densities.max);
    let mut levels = Vec::new();
    let mut defects = Vec::new();
    for i in 0..densities.levels.len() {
        let s = densities.levels[i];
        if s < lo || s > hi || densities.a[i] <= 0.0 || densities.b[i] <= 0.0 {
            continue;
        }
        let p0 = densities.reference[i];
        levels.push(s);
        defects.push(densities.a[i] * densities.b[i] / (p0 * p0) - 1.0);
    }
    if levels.len() < 10 {
        return Err(Error::invalid("densities", format!("need at least 10 nondegenerate levels, got {}", levels.len())));
    }
    let sup_defect = defects.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let verdict = if sup_defect <= CERTIFICATE_THRESHOLD { Verdict::RadialConsistent } else { Verdict::NonRadial };
    Ok(Certificate { levels, defects, sup_defect, threshold: CERTIFICATE_THRESHOLD, verdict })
}

/// R⁻¹(s) = (μ(s)/ω_n)^{1/n}, monotone-interpolated in ρ.
pub fn distribution_to_profile(distribution: &DistributionFunction) -> Result<RadialProfile<f64>> {
    let d = distribution;
    if d.max <= 0.0 {
        return Err(Error::invalid("distribution", "max V must be positive"));
    }
    let w = unit_ball_volume::<f64>(d.n);
    let r: Vec<f64> = d.mu.iter().map(|m| (m / w).powf(1.0 / d.n as f64)).collect();
    Ok(RadialProfile::from_table(Tabulated::new(d.max, d.rho.clone(), r)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub x0: f64,
    pub sup_error: f64,
    /// Truncation radius around x₀.
    pub radius: f64,
    pub grid: Vec<f64>,
    pub reconstructed: Vec<f64>,
    pub target: Vec<f64>,
}

const GRID_POINTS: usize = 2001;
/// Flowlines start on the profile itself where it has dropped by this fraction,
/// since V′ = 0 at the peak and V′ ~ √(max − V) just below it.
const START_DROP: f64 = 1e-6;

/// Rebuilds V along the two flowlines V′ = −sign(x − x₀)|R′(R⁻¹(V))| out of
/// the maximum of `target` and compares on a uniform grid.
pub fn reconstruct_field_1d(profile: &RadialProfile<f64>, target: &PotentialField<f64>) -> Result<Reconstruction> {
    if target.dimension() != 1 {
        return Err(Error::invalid("target", "flowline reconstruction is one-dimensional"));
    }
    let (vmax, xmax) = target.max_value();
    if !(vmax > 0.0) {
        return Err(Error::invalid("target", "max V must be positive"));
    }
    let pmax = profile.max_value();
    let radius = target.support_radius(1e-10 * vmax).max(profile.effective_radius(1e-10 * pmax));
    let x0 = argmax_1d(|x| target.eval1(x), xmax - 1.0, xmax + 1.0, 4000);
    let half = (GRID_POINTS - 1) / 2;
    let step = radius / half as f64;
    let speed = |v: f64| -> f64 { profile.deriv(profile.inverse(v.min(pmax))).abs() };
    let stall = 1e-14 * pmax;
    let start = profile.inverse(pmax * (1.0 - START_DROP));
    let branch = |dir: f64| -> Result<Vec<f64>> {
        let ode = Dopri5::<f64>::new(1e-12, 1e-15);
        let mut out = Vec::with_capacity(half);
        let mut x = x0 + dir * start;
        let mut v = profile.eval(start);
        for i in 1..=half {
            let xi = x0 + dir * step * i as f64;
            let mut stalled = None;
            let (_, vi) = ode
                .solve(
                    |_, v: &f64| -dir * speed(*v),
                    x,
                    xi,
                    v,
                    None,
                    |xs, vs: &f64| {
                        if *vs > stall && speed(*vs) < stall {
                            stalled = Some(xs);
                            return Control::Stop;
                        }
                        Control::Continue
                    },
                )
                .map_err(|e| Error::Ode { lambda: "flowline".into(), at: xi, reason: format!("{e:?}") })?;
            if let Some(at) = stalled {
                return Err(Error::Singularity { at });
            }
            x = xi;
            v = vi.max(0.0);
            out.push(v);
        }
        Ok(out)
    };
    let (left, right) = rayon::join(|| branch(-1.0), || branch(1.0));
    let (left, right) = (left?, right?);
    let mut grid = Vec::with_capacity(GRID_POINTS);
    let mut rec = Vec::with_capacity(GRID_POINTS);
    for (i, v) in left.iter().enumerate().rev() {
        grid.push(x0 - step * (i + 1) as f64);
        rec.push(*v);
    }
    grid.push(x0);
    rec.push(pmax);
    for (i, v) in right.iter().enumerate() {
        grid.push(x0 + step * (i + 1) as f64);
        rec.push(*v);
    }
    let tgt: Vec<f64> = grid.iter().map(|&x| target.eval1(x)).collect();
    let sup_error = rec.iter().zip(&tgt).fold(0.0f64, |m, (r, t)| m.max((r - t).abs()));
    Ok(Reconstruction { x0, sup_error, radius, grid, reconstructed: rec, target: tgt })
}
