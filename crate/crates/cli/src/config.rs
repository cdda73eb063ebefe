use std::path::{Path, PathBuf};

use kforge::backstep::TriangularSpec;
use kforge::dsl::parse;
use kforge::funclass::{envelope_from_samples, MonotoneEnvelope};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Expression envelopes sample their derivative bound on `[0, ENVELOPE_S_MAX]`.
const ENVELOPE_S_MAX: f64 = 1000.0;
const ENVELOPE_GRID: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Synthesize,
    Simulate,
    Verify,
    Certify,
    ReproduceExample,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        toml::Value::String(s.into()).try_into().map_err(|_| format!("unknown mode '{s}'"))
    }
}

/// `"1 + r*s"`, `{ nodes = [[0, 1], [1, 2]] }`, `{ const = 1 }`,
/// `{ poly = [1, 1] }` or `{ exp = [scale, rate] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvelopeConfig {
    Expr(String),
    Nodes { nodes: Vec<(f64, f64)> },
    Const {
        #[serde(rename = "const")]
        value: f64,
    },
    Poly { poly: Vec<f64> },
    Exp { exp: (f64, f64) },
}

impl EnvelopeConfig {
    pub fn build(&self, r: f64, what: &str) -> Result<MonotoneEnvelope, CliError> {
        let schema = |e: String| CliError::Schema(format!("system.{what}: {e}"));
        match self {
            EnvelopeConfig::Expr(text) => {
                let expr = parse(text).map_err(|e| schema(e.to_string()))?;
                MonotoneEnvelope::from_expr(&expr, r, ENVELOPE_S_MAX, ENVELOPE_GRID).map_err(|e| schema(e.to_string()))
            }
            EnvelopeConfig::Nodes { nodes } => envelope_from_samples(nodes).map_err(|e| schema(e.to_string())),
            EnvelopeConfig::Const { value } => Ok(MonotoneEnvelope::constant(*value)),
            EnvelopeConfig::Poly { poly } => MonotoneEnvelope::poly(poly.clone()).map_err(|e| schema(e.to_string())),
            EnvelopeConfig::Exp { exp } => MonotoneEnvelope::exp(exp.0, exp.1).map_err(|e| schema(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n: usize,
    pub r: f64,
    pub sigma: f64,
    pub phi: EnvelopeConfig,
    pub l: EnvelopeConfig,
    #[serde(default)]
    pub rhs: Option<Vec<String>>,
    #[serde(default)]
    pub disturbance_box: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    /// Defaults to `r / 128`.
    pub dt: Option<f64>,
    pub horizon: f64,
    pub seeds: usize,
    pub first_seed: u64,
    /// Master-inequality sample count per stage.
    pub samples: usize,
    pub sample_box: (f64, f64),
    pub tolerance: f64,
    /// Bound on `‖x₀‖_r` for random initial histories.
    pub radius: f64,
    pub dwell: f64,
    pub scheme: String,
    pub open_loop: bool,
    pub convention: String,
    /// `B_2` override as an expression in `s`.
    pub override_b2: Option<String>,
    /// Manifest to load instead of synthesizing.
    pub manifest: Option<PathBuf>,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            dt: None,
            horizon: 20.0,
            seeds: 32,
            first_seed: 0,
            samples: 10_000,
            sample_box: (-3.0, 3.0),
            tolerance: 1e-3,
            radius: 2.0,
            dwell: 0.25,
            scheme: "sdirk2".into(),
            open_loop: false,
            convention: "general".into(),
            override_b2: None,
            manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("kforge-out"), formats: vec!["json".into(), "csv".into()] }
    }
}

impl OutputConfig {
    pub fn csv(&self) -> bool {
        self.formats.iter().any(|f| f == "csv")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub system: Option<SystemConfig>,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))
    }

    /// Default config for the built-in reference system.
    pub fn reference(mode: Mode) -> Self {
        Self { mode, system: None, numerics: NumericsConfig::default(), output: OutputConfig::default() }
    }

    /// Fills derived defaults and checks every field before any computation.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Schema(m));
        if let Some(sys) = &self.system {
            if sys.n == 0 {
                return bad("system.n must be at least 1".into());
            }
            if !(sys.sigma > 0.0 && sys.sigma.is_finite()) {
                return bad(format!("system.sigma must be positive, got {}", sys.sigma));
            }
            if !(sys.r > 0.0 && sys.r.is_finite()) {
                return bad(format!("system.r must be positive, got {}", sys.r));
            }
            if let Some(rhs) = &sys.rhs {
                if rhs.len() != sys.n {
                    return bad(format!("system.rhs has {} entries, expected {}", rhs.len(), sys.n));
                }
            }
            if let Some((i, b)) = sys.disturbance_box.iter().enumerate().find(|(_, b)| !(b.0 <= b.1)) {
                return bad(format!("system.disturbance_box[{i}] is empty: {b:?}"));
            }
        } else if self.mode != Mode::ReproduceExample && self.numerics.manifest.is_none() {
            return bad("a [system] block is required for this mode".into());
        }
        let r = self.system.as_ref().map_or(1.0, |s| s.r);
        let num = &mut self.numerics;
        let dt = *num.dt.get_or_insert(r / 128.0);
        if !(dt > 0.0) {
            return bad(format!("numerics.dt must be positive, got {dt}"));
        }
        let ratio = r / dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return bad(format!("numerics.dt = {dt} does not divide r = {r}"));
        }
        if !(num.horizon > 0.0) {
            return bad("numerics.horizon must be positive".into());
        }
        if num.seeds == 0 {
            return bad("numerics.seeds must be at least 1".into());
        }
        if num.samples == 0 {
            return bad("numerics.samples must be at least 1".into());
        }
        if !(num.sample_box.0 < num.sample_box.1) {
            return bad(format!("numerics.sample_box is empty: {:?}", num.sample_box));
        }
        if !(num.tolerance >= 0.0) {
            return bad("numerics.tolerance must be nonnegative".into());
        }
        if !(num.radius >= 0.0) || !(num.dwell > 0.0) {
            return bad("numerics.radius must be nonnegative and numerics.dwell positive".into());
        }
        if !matches!(num.scheme.as_str(), "rk4" | "sdirk2") {
            return bad(format!("numerics.scheme must be rk4 or sdirk2, got '{}'", num.scheme));
        }
        num.convention.parse::<kforge::backstep::Convention>().map_err(CliError::Schema)?;
        for f in &self.output.formats {
            if !matches!(f.as_str(), "json" | "csv") {
                return bad(format!("unknown output format '{f}'"));
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.numerics.dt.expect("resolved")
    }

    pub fn spec(&self) -> Result<TriangularSpec, CliError> {
        let sys = self.system.as_ref().ok_or_else(|| CliError::Schema("missing [system] block".into()))?;
        Ok(TriangularSpec {
            n: sys.n,
            r: sys.r,
            sigma: sys.sigma,
            phi: sys.phi.build(sys.r, "phi")?,
            l: sys.l.build(sys.r, "l")?,
            rhs: sys.rhs.clone(),
            disturbance_box: sys.disturbance_box.clone(),
        })
    }
}
