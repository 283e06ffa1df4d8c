use std::path::{Path, PathBuf};
use std::process::Command;

use num_complex::Complex64 as C;
use resinv::inversion::{CoareaDensities, DistributionFunction};
use resinv::moments::MomentTable;
use resinv::resonances::ResonanceSet;
use resinv::trace::TraceReport;
use resinv_cli::commands::{read_reconstruction_csv, sampled_levels};
use resinv_cli::config::RunConfig;
use serde_json::Value;

struct Run {
    code: i32,
    stderr: String,
    out: PathBuf,
    _dir: tempfile::TempDir,
}

fn run(command: &str, config: &str, extra: &[&str]) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_resinv"))
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    Run { code: o.status.code().unwrap(), stderr: String::from_utf8_lossy(&o.stderr).into_owned(), out, _dir: dir }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const BARRIER: &str = r#"
[potential]
kind = "square_barrier"
height = 1.0
left = 0.0
right = 1.0

[resonances]
lambda_max = 8.0
depth = 2.0
"#;

const FREE: &str = r#"
[potential]
kind = "free"
"#;

const TWO_BUMP: &str = r#"
[potential]
kind = "gaussian_sum"
components = [
  { amplitude = 1.0, width = 1.0, center = 0.0 },
  { amplitude = 0.5, width = 0.5, center = 3.0 },
]

[moments]
source = "direct"
"#;

// square barrier of height 1 on [0, 1] at h = 1: resonances solve
// 2ik cos q + (q + k²/q) sin q = 0 with q² = k² − 1
fn barrier_condition(k: C) -> C {
    let q = (k * k - 1.0).sqrt();
    2.0 * C::i() * k * q.cos() + (q + k * k / q) * q.sin()
}

fn polish(mut k: C) -> C {
    for _ in 0..60 {
        let d = (barrier_condition(k + 1e-7) - barrier_condition(k - 1e-7)) / 2e-7;
        let step = barrier_condition(k) / d;
        k -= step;
        if step.norm() < 1e-15 {
            break;
        }
    }
    k
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            count += 1;
        }
    }
    assert_eq!(count, 5);
}

#[test]
fn malformed_configs_name_the_field() {
    for (text, field) in [
        ("[potential]\nkind = \"gaussian\"\namplitude = 1.0\nwidth = 1.0\n[resonances]\nh = -1.0\n", "resonances.h"),
        ("[potential]\nkind = \"gaussian\"\namplitude = 1.0\nwidth = 1.0\nn = 2\n", "potential.n"),
        ("[potential]\nkind = \"gaussian\"\namplitude = 1.0\nwidth = 1.0\n[trace]\nh = [1.0, 0.5, 0.5, 0.25]\n", "trace.h"),
        ("[potential]\nkind = \"gaussian\"\namplitude = 1.0\nwidth = 1.0\n[inversion]\nwindow = [0.9, 0.1]\n", "inversion.window"),
        ("[potential]\nkind = \"gaussian\"\namplitude = 1.0\nwidth = 1.0\nbogus = 3\n", "bogus"),
    ] {
        let r = run("resonances", text, &[]);
        assert_eq!(r.code, 1, "{text}");
        assert!(r.stderr.contains(field), "{field} not in {}", r.stderr);
    }
}

#[test]
fn missing_config_exits_one() {
    let o = Command::new(env!("CARGO_BIN_EXE_resinv")).arg("resonances").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let r = run("resonances", BARRIER, &[]);
    let missing = Command::new(env!("CARGO_BIN_EXE_resinv"))
        .args(["resonances", "--config", "/nonexistent/run.toml", "--out"])
        .arg(&r.out)
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn free_potential_gives_header_only_csv() {
    let r = run("resonances", FREE, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = std::fs::read_to_string(r.out.join("resonances.csv")).unwrap();
    assert_eq!(text.trim_end(), "re,im,multiplicity,residual");
    assert!(ResonanceSet::read_csv(&r.out.join("resonances.csv")).unwrap().is_empty());
}

#[test]
fn barrier_rows_solve_the_matching_condition() {
    let r = run("resonances", BARRIER, &["--threads", "1"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = ResonanceSet::read_csv(&r.out.join("resonances.csv")).unwrap();
    // a dense Newton scan of the condition finds only the root on the imaginary axis here
    assert_eq!(rows.len(), 1);
    assert!((rows[0].lambda() - C::new(0.0, -0.62410876)).norm() < 1e-8);
    for z in &rows {
        let k = z.lambda();
        assert!((polish(k) - k).norm() < 1e-8, "{k}");
        assert!(k.re.abs() <= 8.0 && k.im < 0.0 && k.im >= -2.0);
    }
    let set: ResonanceSet = serde_json::from_value(json(&r.out.join("resonances.json"))).unwrap();
    assert_eq!(set.resonances, rows);
}

#[test]
fn truncation_exits_two_with_partial_output() {
    let cfg = r#"
[potential]
kind = "gaussian"
amplitude = 1.0
width = 1.0

[resonances]
lambda_max = 3.0
depth = 1.6
max_count = 1
"#;
    let r = run("resonances", cfg, &[]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("truncated"));
    let set: ResonanceSet = serde_json::from_value(json(&r.out.join("resonances.json"))).unwrap();
    assert!(set.truncated);
    assert!(set.total_multiplicity() <= 1);
    assert_eq!(ResonanceSet::read_csv(&r.out.join("resonances.csv")).unwrap(), set.resonances);
}

#[test]
fn free_trace_is_zero() {
    let r = run("trace", &format!("{FREE}[trace]\nh = [1.0, 0.5, 0.25, 0.125]\n"), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = TraceReport::read_sweep_csv(&r.out.join("trace_sweep.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|row| row.used == 0.0 && row.spectral_shift == 0.0));
    let fit = json(&r.out.join("fit.json"));
    for key in ["c0", "c2", "direct_leading", "direct_subleading_over_12"] {
        assert_eq!(fit[key].as_f64(), Some(0.0), "{key}");
    }
}

#[test]
fn free_pipeline_is_rejected() {
    let r = run("pipeline", FREE, &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("potential"), "{}", r.stderr);
}

#[test]
fn two_bump_pipeline_is_non_radial() {
    let r = run("pipeline", TWO_BUMP, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rec = json(&r.out.join("reconstruction.json"));
    assert_eq!(rec["verdict"], "NON-RADIAL");
    assert_eq!(rec["performed"], false);
    let cert = json(&r.out.join("certificate.json"));
    assert_eq!(cert["verdict"], "NON-RADIAL");
    assert!(cert["oracle_check"]["sup_defect"].as_f64().unwrap() > 0.1);
    assert!(!r.out.join("reconstruction.csv").exists());
}

#[test]
fn outputs_are_deterministic() {
    let a = run("certify", TWO_BUMP, &[]);
    let b = run("certify", TWO_BUMP, &["--threads", "1"]);
    for f in ["certificate.json", "moments.csv", "distribution.csv", "densities.csv"] {
        assert_eq!(std::fs::read(a.out.join(f)).unwrap(), std::fs::read(b.out.join(f)).unwrap(), "{f}");
    }
    let a = run("resonances", BARRIER, &[]);
    let b = run("resonances", BARRIER, &[]);
    assert_eq!(std::fs::read(a.out.join("resonances.json")).unwrap(), std::fs::read(b.out.join("resonances.json")).unwrap());
}

#[test]
fn pipeline_outputs_round_trip() {
    let cfg = r#"
seed = 11
[potential]
kind = "gaussian"
amplitude = 1.0
width = 1.0
center = [2.0]

[reference]
kind = "gaussian"
amplitude = 1.0
width = 1.0

[moments]
source = "direct"
"#;
    let r = run("pipeline", cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let o = &r.out;

    let rec = json(&o.join("reconstruction.json"));
    assert_eq!(rec["verdict"], "RADIAL-CONSISTENT");
    assert!((rec["x0"].as_f64().unwrap() - 2.0).abs() < 1e-4);
    assert!(rec["sup_error"].as_f64().unwrap() <= 1e-3);
    assert!(rec["profile_error"].as_f64().unwrap() <= 1e-3);

    let table = MomentTable::read_csv(&o.join("moments.csv"), 1).unwrap();
    let again = o.join("moments_again.csv");
    table.write_csv(&again).unwrap();
    assert_eq!(std::fs::read(o.join("moments.csv")).unwrap(), std::fs::read(&again).unwrap());

    let mu = DistributionFunction::read_csv(&o.join("distribution.csv")).unwrap();
    assert!(mu.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 >= w[1].1));

    let max = json(&o.join("certificate.json"))["fitted_max"].as_f64().unwrap();
    let d = CoareaDensities::read_csv(&o.join("densities.csv"), 1, max).unwrap();
    let again = o.join("densities_again.csv");
    d.write_csv(&again).unwrap();
    assert_eq!(std::fs::read(o.join("densities.csv")).unwrap(), std::fs::read(&again).unwrap());

    let rows = read_reconstruction_csv(&o.join("reconstruction.csv")).unwrap();
    assert_eq!(rows.len(), 2001);
    let sup = rows.iter().fold(0.0f64, |m, r| m.max((r[1] - r[2]).abs()));
    assert_eq!(sup, rec["sup_error"].as_f64().unwrap());

    // the oracle levels are drawn from the seed
    let cert = json(&o.join("certificate.json"));
    let levels: Vec<f64> = cert["oracle_check"]["levels"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let (vmax, _) = resinv::potentials::radialize(resinv::potentials::make_gaussian_profile(1.0, 1.0).unwrap(), 1, &[2.0]).unwrap().max_value();
    assert_eq!(levels, sampled_levels(11, 16, (0.05, 0.95), vmax));
}

#[test]
fn trace_outputs_round_trip() {
    let cfg = r#"
[potential]
kind = "gaussian"
amplitude = 1.0
width = 1.0

[trace]
h = [1.0, 0.95, 0.9, 0.85]
lambda_max = 2.0
depth = 0.8
"#;
    let r = run("trace", cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = TraceReport::read_sweep_csv(&r.out.join("trace_sweep.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.h).collect::<Vec<_>>(), vec![1.0, 0.95, 0.9, 0.85]);
    assert!(rows.iter().all(|r| r.resonance_value.is_some() && r.resonance_bound.is_some()));
    let fit = json(&r.out.join("fit.json"));
    assert!(fit["c0"].is_f64() && fit["residuals"].as_array().unwrap().len() == 4);
}
