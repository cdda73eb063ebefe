//! Recursive backstepping synthesis for triangular delay systems
//!
//! ```text
//! ẋ_i = f_i(t, d, x_1..x_i) + g_i(t, d, x_1..x_i) x_{i+1}(t),   i < n
//! ẋ_n = f_n(t, d, x) + g_n(t, d, x) u(t)
//! ```
//!
//! Given the envelopes `φ` (bounds on `f_i`, `g_i`) and `L` (Lipschitz-type
//! growth), [`synthesize`] builds the gains `μ_i`, the virtual controls `k_i`,
//! the comparison functions `γ_i`, `b_i`, `ρ_j`, `B_i`, and from them a
//! delay-free feedback `u = k_n(x(0))` together with the max-type functional
//! that certifies it.

mod chain;
mod synth;
mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{bind_rhs, BindError};
use crate::funclass::{FuncError, MonotoneEnvelope};
use crate::history::HistorySegment;
use crate::sim::GeneralRfdeSpec;

pub use synth::{bound_b, rho_majorant, synthesize, Overrides, SynthesisOptions};
pub use verify::{
    build_srclf, feedback_law, master_margin, verify_master_inequality, FeedbackLaw, MasterReport,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("{what} override for stage {stage} rejected at s = {s}: {detail}")]
    Override { what: &'static str, stage: usize, s: f64, detail: String },
    #[error("non-finite or non-positive gain at stage {stage}, point {at:?}")]
    NonFinite { stage: usize, at: Vec<f64> },
    #[error(transparent)]
    Func(#[from] FuncError),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
}

/// How the worked two-stage example departs from the general recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `δ_j = |∇k_j| (1 + Σμ)`, `B_i ≥ max (1 + Σμ)`.
    #[default]
    General,
    /// `δ_j = |∇k_j| Σμ`, `B_i ≥ max Σμ`, stage two with three completed
    /// squares (`3/(4σ)`) and, for constant `φ`, no `μ_1²ξ_1²` factor.
    Worked,
}

impl Convention {
    pub fn label(self) -> &'static str {
        match self {
            Convention::General => "general",
            Convention::Worked => "worked",
        }
    }

    /// Offset added to `Σμ` in `δ_j` and in the `B_i` requirement.
    pub(crate) fn unit(self) -> f64 {
        match self {
            Convention::General => 1.0,
            Convention::Worked => 0.0,
        }
    }
}

impl std::str::FromStr for Convention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "general" | "paper-5.13" => Ok(Convention::General),
            "worked" | "example-5.46" => Ok(Convention::Worked),
            other => Err(format!("unknown convention '{other}'")),
        }
    }
}

/// Triangular system data: order, delay, target rate and the two envelopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangularSpec {
    pub n: usize,
    pub r: f64,
    pub sigma: f64,
    pub phi: MonotoneEnvelope,
    pub l: MonotoneEnvelope,
    /// Full right-hand side per component, e.g. `f_1 + g_1 x2(0)`.
    #[serde(default)]
    pub rhs: Option<Vec<String>>,
    #[serde(default)]
    pub disturbance_box: Vec<(f64, f64)>,
}

impl TriangularSpec {
    /// Two-stage system with integral and sup-norm couplings:
    /// `ẋ1 = d1 ∫ x1² + x2`, `ẋ2 = d2 ‖x2‖_r + u`, `φ ≡ 1`, `L(w) = 1 + r w`.
    pub fn reference_system(sigma: f64, r: f64) -> Self {
        Self {
            n: 2,
            r,
            sigma,
            phi: MonotoneEnvelope::constant(1.0),
            l: MonotoneEnvelope::Poly { coeffs: vec![1.0, r] },
            rhs: Some(vec![
                "d1*integral(sq(x1), r) + x2(0)".into(),
                "d2*norm_r(x2) + u".into(),
            ]),
            disturbance_box: vec![(-1.0, 1.0), (-1.0, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n == 0 {
            return Err(SynthError::Spec("n must be at least 1".into()));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(SynthError::Spec(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(SynthError::Spec(format!("r must be positive, got {}", self.r)));
        }
        let grid: Vec<f64> = (0..=200).map(|k| 0.25 * k as f64).collect();
        self.phi.check_invariants(&grid, true)?;
        self.l.check_invariants(&grid, false)?;
        if let Some(rhs) = &self.rhs {
            if rhs.len() != self.n {
                return Err(SynthError::Dim { expected: self.n, got: rhs.len() });
            }
        }
        if let Some((i, b)) = self.disturbance_box.iter().enumerate().find(|(_, b)| !(b.0 <= b.1)) {
            return Err(SynthError::Spec(format!("disturbance box component {} is empty: {:?}", i + 1, b)));
        }
        Ok(())
    }

    /// Simulation model from the declared right-hand side.
    pub fn rfde(&self) -> Result<GeneralRfdeSpec<f64>, SynthError> {
        let texts = self
            .rhs
            .as_ref()
            .ok_or_else(|| SynthError::Spec("no right-hand side declared".into()))?;
        let bound = bind_rhs(texts, self.n, self.disturbance_box.len(), self.r)?;
        let spec = GeneralRfdeSpec::new(
            self.n,
            self.r,
            move |t, d: &[f64], x: &HistorySegment<f64>, u: &[f64], out: &mut [f64]| {
                bound.eval(t, d, x, u, out).map_err(|e| e.to_string())
            },
        );
        Ok(spec
            .with_disturbance_box(self.disturbance_box.clone())
            .with_control_set(vec![(f64::NEG_INFINITY, f64::INFINITY)]))
    }
}

/// Comparison functions of one stage. `b_i = 1 / recip`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub index: usize,
    pub gamma: MonotoneEnvelope,
    pub recip: MonotoneEnvelope,
    /// `ρ_i`, present for `i < n`.
    pub rho: Option<MonotoneEnvelope>,
    /// `B_i`, present for `i ≥ 2`.
    pub bound: Option<MonotoneEnvelope>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRecord {
    pub what: String,
    pub stage: usize,
    pub source: String,
}

/// Output of [`synthesize`]. Immutable; gains are evaluated on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub spec: TriangularSpec,
    pub convention: Convention,
    pub stages: Vec<Stage>,
    pub overrides: Vec<OverrideRecord>,
    pub provenance: Vec<String>,
    /// Multiplier on each `μ_i`, 1 unless deliberately perturbed.
    pub gain_scale: Vec<f64>,
    /// Largest argument covered by the tabulated `B_i` (none for stage 1).
    pub certified_range: Vec<Option<f64>>,
}

impl SynthesisResult {
    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn sigma(&self) -> f64 {
        self.spec.sigma
    }

    pub fn r(&self) -> f64 {
        self.spec.r
    }

    fn stage(&self, i: usize) -> &Stage {
        &self.stages[i - 1]
    }

    pub fn gamma(&self, i: usize, s: f64) -> f64 {
        self.stage(i).gamma.value(s)
    }

    pub fn b(&self, i: usize, s: f64) -> f64 {
        1.0 / self.stage(i).recip.value(s)
    }

    pub fn rho(&self, j: usize, s: f64) -> Option<f64> {
        self.stage(j).rho.as_ref().map(|e| e.value(s))
    }

    pub fn bound(&self, i: usize, s: f64) -> Option<f64> {
        self.stage(i).bound.as_ref().map(|e| e.value(s))
    }

    /// Copy with `μ_i` multiplied by `factor`.
    pub fn with_gain_scale(&self, i: usize, factor: f64) -> Self {
        let mut out = self.clone();
        out.gain_scale[i - 1] *= factor;
        out.provenance.push(format!("mu_{i} scaled by {factor}"));
        out
    }

    /// Export tables on a uniform `s` grid and a `ξ_1` grid.
    pub fn manifest(&self, s_max: f64, xi_max: f64, count: usize) -> Manifest {
        let count = count.max(2);
        let s_grid: Vec<f64> = (0..count).map(|k| s_max * k as f64 / (count - 1) as f64).collect();
        let xi_grid: Vec<f64> = (0..count)
            .map(|k| -xi_max + 2.0 * xi_max * k as f64 / (count - 1) as f64)
            .collect();
        let tables = self
            .stages
            .iter()
            .map(|st| StageTable {
                stage: st.index,
                gamma: st.gamma.sample(&s_grid).into_iter().map(|p| p.1).collect(),
                b: s_grid.iter().map(|&s| 1.0 / st.recip.value(s)).collect(),
                rho: st.rho.as_ref().map(|e| s_grid.iter().map(|&s| e.value(s)).collect()),
                bound: st.bound.as_ref().map(|e| s_grid.iter().map(|&s| e.value(s)).collect()),
            })
            .collect();
        let mu1 = xi_grid.iter().map(|&x| self.mu(1, &[x])).collect();
        Manifest { result: self.clone(), s_grid, xi_grid, mu1, tables }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTable {
    pub stage: usize,
    pub gamma: Vec<f64>,
    pub b: Vec<f64>,
    pub rho: Option<Vec<f64>>,
    pub bound: Option<Vec<f64>>,
}

/// Serializable snapshot; `result` alone re-instantiates every gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub result: SynthesisResult,
    pub s_grid: Vec<f64>,
    pub xi_grid: Vec<f64>,
    pub mu1: Vec<f64>,
    pub tables: Vec<StageTable>,
}
