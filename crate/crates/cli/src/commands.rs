//! The five subcommands. Each writes its files into `out` and reports whether
//! the run completed or stopped early.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resinv::inversion::{
    coarea_densities, cs_certificate, distribution_to_profile, moments_to_distribution, oracle_densities,
    reconstruct_field_1d, Certificate, DistributionFunction, InversionGrid, Verdict,
};
use resinv::moments::{direct_moments, extract_quad, MomentTable};
use resinv::resonances::{find_resonances, resonance_sum, SpectralProblem, Window};
use resinv::testfns::build_pair;
use resinv::trace::{direct_leading, direct_subleading, spectral_shift_trace, TraceReport, TraceRow};
use resinv::{Error, Field, Quad};
use serde::Serialize;

use crate::config::{MomentMode, RunConfig};

/// How a command finished.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Complete,
    /// The resonance search hit `max_count`; output is partial.
    Truncated,
}

pub type CmdResult = Result<Status, Error>;

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn field(cfg: &RunConfig) -> Result<Field, Error> {
    cfg.potential.build::<f64>()
}

pub fn cmd_resonances(cfg: &RunConfig, out: &Path) -> CmdResult {
    let f = field(cfg)?;
    if f.dimension() != 1 {
        return Err(Error::invalid("potential.n", "resonances are computed for n = 1"));
    }
    let r = &cfg.resonances;
    let problem = SpectralProblem::new(f, r.h)?;
    let set = find_resonances(&problem, Window { lambda_max: r.lambda_max, depth: r.depth }, r.max_count)?;
    set.write_csv(&out.join("resonances.csv"))?;
    set.write_json(&out.join("resonances.json"))?;
    Ok(if set.truncated { Status::Truncated } else { Status::Complete })
}

#[derive(Serialize)]
struct FitJson<'a> {
    c0: f64,
    c2: f64,
    c4: f64,
    condition: f64,
    residuals: &'a [f64],
    direct_leading: f64,
    /// (1/12)·I₂, the prediction for c₂.
    direct_subleading_over_12: f64,
    c0_relative_error: Option<f64>,
    c2_relative_error: Option<f64>,
    /// |Δc₂/c₂| when the smallest h is dropped.
    c2_change_without_smallest_h: Option<f64>,
}

fn relative(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| a / b - 1.0)
}

pub fn cmd_trace(cfg: &RunConfig, out: &Path) -> CmdResult {
    let f = field(cfg)?;
    if f.dimension() != 1 {
        return Err(Error::invalid("potential.n", "the h-sweep is computed for n = 1"));
    }
    let pair = build_pair::<f64>(cfg.bump, 3)?;
    let mut rows = Vec::with_capacity(cfg.trace.h.len());
    let mut status = Status::Complete;
    for &h in &cfg.trace.h {
        let problem = SpectralProblem::new(f.clone(), h)?;
        let shift = spectral_shift_trace(&problem, &pair)?.value;
        let resonance = match (cfg.trace.lambda_max, cfg.trace.depth) {
            (Some(lambda_max), Some(depth)) => {
                let set = find_resonances(&problem, Window { lambda_max, depth }, cfg.resonances.max_count)?;
                if set.truncated {
                    status = Status::Truncated;
                }
                let v = resonance_sum(&set, &pair)?;
                Some((v.value, v.bound))
            }
            _ => None,
        };
        rows.push(TraceRow::choose(h, resonance, shift));
    }
    let i1 = direct_leading(&f, &pair)?;
    let i2 = direct_subleading(&f, &pair)?;
    let report = TraceReport::assemble(rows, i1, i2)?;
    report.write_sweep_csv(&out.join("trace_sweep.csv"))?;
    let fit = &report.fit;
    let json = FitJson {
        c0: fit.c0,
        c2: fit.c2,
        c4: fit.c4,
        condition: fit.condition,
        residuals: &fit.residuals,
        direct_leading: i1,
        direct_subleading_over_12: i2 / 12.0,
        c0_relative_error: relative(fit.c0, i1),
        c2_relative_error: relative(fit.c2, i2 / 12.0),
        c2_change_without_smallest_h: report
            .fit_without_smallest
            .as_ref()
            .and_then(|g| (fit.c2 != 0.0).then(|| (g.c2 - fit.c2).abs() / fit.c2.abs())),
    };
    write_json(&out.join("fit.json"), &json)?;
    Ok(status)
}

/// Moments from the configured source, plus the direct table for comparison.
fn moments(cfg: &RunConfig) -> Result<(MomentTable, MomentTable), Error> {
    let n = cfg.dimension();
    let k_max = cfg.k_max();
    let direct = direct_moments(&field(cfg)?, n, k_max)?;
    let table = match cfg.moments.source {
        MomentMode::Direct => direct.clone(),
        MomentMode::Extracted => extract_quad(cfg.potential.build::<Quad>()?, cfg.bump, k_max, &cfg.moments.lambdas)?.table,
    };
    Ok((table, direct))
}

pub fn cmd_invariants(cfg: &RunConfig, out: &Path) -> CmdResult {
    let (table, direct) = moments(cfg)?;
    table.write_csv(&out.join("moments.csv"))?;
    table.write_json(&out.join("moments.json"))?;
    if cfg.moments.source == MomentMode::Extracted {
        direct.write_csv(&out.join("moments_direct.csv"))?;
    }
    Ok(Status::Complete)
}

#[derive(Serialize)]
struct OracleCheck {
    levels: Vec<f64>,
    defects: Vec<f64>,
    sup_defect: f64,
}

#[derive(Serialize)]
struct CertificateJson<'a> {
    verdict: Verdict,
    sup_defect: f64,
    threshold: f64,
    window: [f64; 2],
    fitted_max: f64,
    moment_residual: f64,
    ill_posed: bool,
    moments_used: &'a [usize],
    levels: &'a [f64],
    defects: &'a [f64],
    /// Level-set defects of the input field at seeded random levels.
    oracle_check: Option<OracleCheck>,
}

struct Certified {
    distribution: DistributionFunction,
    certificate: Certificate,
}

fn grid(cfg: &RunConfig) -> InversionGrid {
    let i = &cfg.inversion;
    InversionGrid { cells: i.cells, floor: i.floor, tikhonov: i.tikhonov }
}

fn oracle_check(cfg: &RunConfig, f: &Field) -> Result<Option<OracleCheck>, Error> {
    if cfg.inversion.oracle_samples == 0 || (f.dimension() > 1 && !f.is_radial()) {
        return Ok(None);
    }
    let (max, _) = f.max_value();
    let [lo, hi] = cfg.inversion.window;
    let levels = sampled_levels(cfg.seed, cfg.inversion.oracle_samples, (lo, hi), max);
    let d = oracle_densities(f, &levels)?;
    let defects: Vec<f64> = (0..levels.len()).map(|i| d.a[i] * d.b[i] / (d.reference[i] * d.reference[i]) - 1.0).collect();
    let sup_defect = defects.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    Ok(Some(OracleCheck { levels, defects, sup_defect }))
}

fn certify(cfg: &RunConfig, out: &Path) -> Result<Certified, Error> {
    let f = field(cfg)?;
    if !(f.max_value().0 > 0.0) {
        return Err(Error::invalid("potential", "max V must be positive"));
    }
    let (table, direct) = moments(cfg)?;
    table.write_csv(&out.join("moments.csv"))?;
    if cfg.moments.source == MomentMode::Extracted {
        direct.write_csv(&out.join("moments_direct.csv"))?;
    }
    let g = grid(cfg);
    let distribution = moments_to_distribution(&table, &g)?;
    distribution.write_csv(&out.join("distribution.csv"))?;
    let densities = coarea_densities(&distribution, &table, &g)?;
    densities.write_csv(&out.join("densities.csv"))?;
    let [lo, hi] = cfg.inversion.window;
    let certificate = cs_certificate(&densities, (lo, hi))?;
    let json = CertificateJson {
        verdict: certificate.verdict,
        sup_defect: certificate.sup_defect,
        threshold: certificate.threshold,
        window: cfg.inversion.window,
        fitted_max: distribution.max,
        moment_residual: distribution.residual,
        ill_posed: distribution.ill_posed,
        moments_used: &distribution.used,
        levels: &certificate.levels,
        defects: &certificate.defects,
        oracle_check: oracle_check(cfg, &f)?,
    };
    write_json(&out.join("certificate.json"), &json)?;
    Ok(Certified { distribution, certificate })
}

pub fn cmd_certify(cfg: &RunConfig, out: &Path) -> CmdResult {
    certify(cfg, out)?;
    Ok(Status::Complete)
}

#[derive(Serialize)]
struct ReconstructionJson<'a> {
    verdict: Verdict,
    performed: bool,
    note: Option<&'static str>,
    x0: Option<f64>,
    sup_error: Option<f64>,
    within_tolerance: Option<bool>,
    radius: Option<f64>,
    /// sup |R − R_ref| on r ∈ [0, profile_radius].
    profile_error: Option<f64>,
    profile_radius: f64,
    fitted_max: f64,
    defect_levels: &'a [f64],
    defects: &'a [f64],
}

/// Compared radii for the recovered profile.
const PROFILE_RADIUS: f64 = 2.0;

pub fn cmd_pipeline(cfg: &RunConfig, out: &Path) -> CmdResult {
    let c = certify(cfg, out)?;
    let radial = c.certificate.verdict == Verdict::RadialConsistent;
    let profile = if radial { Some(distribution_to_profile(&c.distribution)?) } else { None };
    let profile_error = match (&profile, &cfg.reference) {
        (Some(p), Some(r)) => {
            let reference = r.build::<f64>()?;
            let (rp, _) = reference
                .radial_profile()
                .ok_or_else(|| Error::invalid("reference", "must be a radial profile"))?;
            Some((0..=400).map(|i| PROFILE_RADIUS * i as f64 / 400.0).fold(0.0f64, |m, r| m.max((p.eval(r) - rp.eval(r)).abs())))
        }
        _ => None,
    };
    let mut json = ReconstructionJson {
        verdict: c.certificate.verdict,
        performed: false,
        note: None,
        x0: None,
        sup_error: None,
        within_tolerance: None,
        radius: None,
        profile_error,
        profile_radius: PROFILE_RADIUS,
        fitted_max: c.distribution.max,
        defect_levels: &c.certificate.levels,
        defects: &c.certificate.defects,
    };
    match &profile {
        None => json.note = Some("certificate failed; no radial profile to integrate"),
        Some(_) if cfg.dimension() != 1 => json.note = Some("flowline reconstruction is built for n = 1 only"),
        Some(p) => {
            let rec = reconstruct_field_1d(p, &field(cfg)?)?;
            json.performed = true;
            json.x0 = Some(rec.x0);
            json.sup_error = Some(rec.sup_error);
            json.within_tolerance = Some(rec.sup_error <= cfg.tolerances.reconstruction);
            json.radius = Some(rec.radius);
            let mut w = csv::Writer::from_path(out.join("reconstruction.csv"))?;
            w.write_record(["x", "reconstructed", "target"])?;
            for i in 0..rec.grid.len() {
                w.write_record([fmt(rec.grid[i]), fmt(rec.reconstructed[i]), fmt(rec.target[i])])?;
            }
            w.flush()?;
        }
    }
    write_json(&out.join("reconstruction.json"), &json)?;
    Ok(Status::Complete)
}

/// Reads reconstruction.csv back as (x, reconstructed, target) rows.
pub fn read_reconstruction_csv(path: &Path) -> Result<Vec<[f64; 3]>, Error> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut row = [0.0; 3];
        for (i, v) in row.iter_mut().enumerate() {
            let field = rec.get(i).ok_or_else(|| Error::invalid("reconstruction.csv", "short row"))?;
            *v = field.parse().map_err(|e: std::num::ParseFloatError| Error::invalid("reconstruction.csv", e.to_string()))?;
        }
        out.push(row);
    }
    Ok(out)
}

fn fmt(x: f64) -> String {
    resinv::resonances::fmt17(x)
}

/// Sorted random levels in `window`·max, reproducible from the seed.
pub fn sampled_levels(seed: u64, count: usize, window: (f64, f64), max: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..count).map(|_| max * rng.gen_range(window.0..window.1)).collect();
    v.sort_by(f64::total_cmp);
    v
}
