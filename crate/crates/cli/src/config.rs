//! Run configuration: TOML with one section per stage.

use std::path::{Path, PathBuf};

use resinv::moments::{default_k_max, geometric_lambdas};
use resinv::potentials::FieldSpec;
use resinv::testfns::BumpSpec;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub potential: FieldSpec,
    /// Radial profile the recovered one is compared against.
    #[serde(default)]
    pub reference: Option<FieldSpec>,
    #[serde(default)]
    pub bump: BumpSpec,
    #[serde(default)]
    pub resonances: ResonanceSection,
    #[serde(default)]
    pub trace: TraceSection,
    #[serde(default)]
    pub moments: MomentSection,
    #[serde(default)]
    pub inversion: InversionSection,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_seed() -> u64 {
    20240917
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResonanceSection {
    pub h: f64,
    pub lambda_max: f64,
    pub depth: f64,
    pub max_count: usize,
}

impl Default for ResonanceSection {
    fn default() -> Self {
        Self { h: 1.0, lambda_max: 20.0, depth: 3.0, max_count: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceSection {
    pub h: Vec<f64>,
    /// When set, each h also gets a resonance sum over [−Λ, Λ] × [−Γ, 0).
    pub lambda_max: Option<f64>,
    pub depth: Option<f64>,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self { h: (0..7).map(|j| 0.5f64.powi(j)).collect(), lambda_max: None, depth: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMode {
    /// Large-λ extraction from the trace invariants (quad precision).
    Extracted,
    /// Quadrature of ∫Vᵏ and ∫Vᵏ|∇V|².
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentSection {
    pub source: MomentMode,
    pub k_max: Option<usize>,
    pub lambdas: Vec<f64>,
}

impl Default for MomentSection {
    fn default() -> Self {
        Self { source: MomentMode::Extracted, k_max: None, lambdas: geometric_lambdas(4.0, 64.0, 17) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionSection {
    pub cells: usize,
    pub floor: f64,
    pub tikhonov: f64,
    /// Certified levels as fractions of max V.
    pub window: [f64; 2],
    /// Randomly drawn levels for the level-set cross-check.
    pub oracle_samples: usize,
}

impl Default for InversionSection {
    fn default() -> Self {
        let g = resinv::inversion::InversionGrid::default();
        let (lo, hi) = resinv::inversion::CERTIFICATE_WINDOW;
        Self { cells: g.cells, floor: g.floor, tikhonov: g.tikhonov, window: [lo, hi], oracle_samples: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Sup reconstruction error accepted in the report.
    pub reconstruction: f64,
    /// Sup profile error against `reference`.
    pub profile: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { reconstruction: 1e-3, profile: 1e-3 }
    }
}

/// A configuration problem, naming the offending field.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn bad(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), reason: reason.into() }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| text[s].lines().next().unwrap_or("").trim().to_string()).unwrap_or_default();
            ConfigError { field, reason: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn dimension(&self) -> usize {
        self.potential.dimension()
    }

    pub fn k_max(&self) -> usize {
        self.moments.k_max.unwrap_or_else(|| default_k_max(self.dimension()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.dimension();
        if n % 2 == 0 {
            return Err(bad("potential.n", format!("dimension must be odd, got {n}")));
        }
        self.potential.build::<f64>().map_err(|e| bad("potential", e.to_string()))?;
        if let Some(r) = &self.reference {
            r.build::<f64>().map_err(|e| bad("reference", e.to_string()))?;
        }
        BumpSpec::new(self.bump.t0, self.bump.t1).map_err(|e| bad("bump", e.to_string()))?;
        let r = &self.resonances;
        positive("resonances.h", r.h)?;
        positive("resonances.lambda_max", r.lambda_max)?;
        positive("resonances.depth", r.depth)?;
        if r.max_count == 0 {
            return Err(bad("resonances.max_count", "must be positive"));
        }
        let hs = &self.trace.h;
        if hs.len() < 4 {
            return Err(bad("trace.h", "need at least four values for the h² fit"));
        }
        for &h in hs {
            positive("trace.h", h)?;
        }
        if hs.windows(2).any(|w| w[1] >= w[0]) {
            return Err(bad("trace.h", "must be strictly decreasing"));
        }
        match (self.trace.lambda_max, self.trace.depth) {
            (Some(l), Some(d)) => {
                positive("trace.lambda_max", l)?;
                positive("trace.depth", d)?;
            }
            (None, None) => {}
            _ => return Err(bad("trace.lambda_max", "lambda_max and depth go together")),
        }
        let k_max = self.k_max();
        if k_max < n + 6 {
            return Err(bad("moments.k_max", format!("must be at least n + 6 = {}", n + 6)));
        }
        let lams = &self.moments.lambdas;
        if lams.iter().any(|&l| !(l >= 1.0)) || lams.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("moments.lambdas", "must be strictly increasing and at least 1"));
        }
        if self.moments.source == MomentMode::Extracted && lams.len() < k_max + 1 {
            return Err(bad("moments.lambdas", format!("need at least k_max + 1 = {} values", k_max + 1)));
        }
        let inv = &self.inversion;
        if inv.cells < 10 {
            return Err(bad("inversion.cells", "need at least 10"));
        }
        if !(inv.floor > 0.0 && inv.floor < 1.0) {
            return Err(bad("inversion.floor", "must lie in (0, 1)"));
        }
        positive("inversion.tikhonov", inv.tikhonov)?;
        let [lo, hi] = inv.window;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(bad("inversion.window", "need 0 < lo < hi < 1"));
        }
        positive("tolerances.reconstruction", self.tolerances.reconstruction)?;
        positive("tolerances.profile", self.tolerances.profile)?;
        Ok(())
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive, got {v}")))
    }
}
