use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Convention, OverrideRecord, Stage, SynthError, SynthesisResult, TriangularSpec};
use crate::funclass::MonotoneEnvelope;
use crate::qmc::halton_box;
use crate::scalar::{Dual, Scalar};

/// Safety factor on scanned `B_i` maxima.
pub const B_MARGIN: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub convention: Convention,
    /// Half-width of the box `[-h, h]ⁿ` the gains are sized for.
    pub box_half: f64,
    /// Nodes of each `B_i` table.
    pub grid_n: usize,
    /// Extra factor on the largest `B_i` argument met inside the box.
    pub range_factor: f64,
    /// Quasi-random probes for the gain positivity check.
    pub probes: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { convention: Convention::General, box_half: 3.0, grid_n: 96, range_factor: 4.0, probes: 256 }
    }
}

impl SynthesisOptions {
    pub fn with_convention(convention: Convention) -> Self {
        Self { convention, ..Self::default() }
    }
}

/// User-supplied `B_i` / `ρ_j`, each with a free-form source label.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub bound: BTreeMap<usize, (MonotoneEnvelope, String)>,
    pub rho: BTreeMap<usize, (MonotoneEnvelope, String)>,
}

impl Overrides {
    pub fn with_bound(mut self, stage: usize, env: MonotoneEnvelope, source: impl Into<String>) -> Self {
        self.bound.insert(stage, (env, source.into()));
        self
    }

    pub fn with_rho(mut self, stage: usize, env: MonotoneEnvelope, source: impl Into<String>) -> Self {
        self.rho.insert(stage, (env, source.into()));
        self
    }
}

/// `ρ(s) = γ(s) + s·γ'(s) + R'(s)/R(0)²` with `b = 1/R`.
///
/// The last term bounds `b(s') - b(s)` for `s' ≤ s`; it vanishes for constant `R`.
pub fn rho_majorant(gamma: &MonotoneEnvelope, recip: &MonotoneEnvelope) -> Result<MonotoneEnvelope, SynthError> {
    for s in [0.0, 1.0, 10.0, 100.0] {
        let d = gamma.deriv_sup(s) + recip.deriv_sup(s);
        if !d.is_finite() {
            return Err(SynthError::Spec(format!("derivative bound not finite at s = {s}")));
        }
    }
    let mut terms = vec![
        gamma.clone(),
        MonotoneEnvelope::product(vec![MonotoneEnvelope::identity(), gamma.clone().derivative_bound()]),
    ];
    if recip.deriv_sup(f64::MAX) != 0.0 {
        let r0 = recip.value(0.0);
        terms.push(recip.clone().derivative_bound().scaled(1.0 / (r0 * r0)));
    }
    Ok(MonotoneEnvelope::sum(terms))
}

/// Scanned `B_i`: the envelope, the grid and the raw maxima at each node.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundScan {
    pub envelope: MonotoneEnvelope,
    pub grid: Vec<f64>,
    pub raw: Vec<f64>,
}

fn lattice(dim: usize) -> Vec<Vec<f64>> {
    let m: i64 = match dim {
        1 => 32,
        2 => 12,
        3 => 6,
        _ => 4,
    };
    let mut out = Vec::new();
    let mut cur = vec![0i64; dim];
    fn rec(k: usize, budget: i64, m: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<f64>>) {
        if k == cur.len() {
            out.push(cur.iter().map(|&v| v as f64 / m as f64).collect());
            return;
        }
        for v in -budget..=budget {
            cur[k] = v;
            rec(k + 1, budget - v.abs(), m, cur, out);
        }
    }
    rec(0, m, m, &mut cur, &mut out);
    out
}

fn scan_grid(s_max: f64, grid_n: usize) -> Vec<f64> {
    let n = grid_n.max(8);
    let knee = s_max.min(8.0);
    let n_uniform = n / 4;
    let mut grid: Vec<f64> = (0..=n_uniform).map(|k| knee * k as f64 / n_uniform as f64).collect();
    if s_max > knee {
        let n_geo = n - n_uniform;
        let ratio = (s_max / knee).powf(1.0 / n_geo as f64);
        grid.extend((1..=n_geo).map(|k| knee * ratio.powi(k as i32)));
    }
    grid
}

/// Monotone upper envelope of `max {unit + Σ_{j<i} μ_j : |z|₁ ≤ s}` on
/// `[0, s_max]`, sampled on a lattice of the `z`-ball including its vertices.
///
/// Node `k > 0` takes the maximum over the next node's ball, then everything
/// is scaled by [`B_MARGIN`].
pub fn bound_b(i: usize, partial: &SynthesisResult, s_max: f64, grid_n: usize) -> Result<BoundScan, SynthError> {
    assert!(i >= 2 && partial.stages.len() >= i - 1, "stages before {i} must exist");
    let dim = i - 1;
    let unit = partial.convention.unit();
    let pts = lattice(dim);
    let mut grid = scan_grid(s_max, grid_n);
    let extra = if grid.len() >= 2 {
        let (a, b) = (grid[grid.len() - 2], grid[grid.len() - 1]);
        b + (b - a).max(b * (b / a.max(f64::MIN_POSITIVE) - 1.0))
    } else {
        1.0
    };
    grid.push(extra);
    let mut raw = Vec::with_capacity(grid.len());
    for &s in &grid {
        let mut best = f64::NEG_INFINITY;
        for unit_z in &pts {
            let z: Vec<f64> = unit_z.iter().map(|v| v * s).collect();
            let xi = partial.xi_from_z(&z);
            let x: Vec<Dual> = xi.iter().map(|&v| Dual::constant(v)).collect();
            let ch = partial.chain(dim, &x, false);
            let v = unit + ch.mu.iter().map(|m| m.value()).sum::<f64>();
            if !v.is_finite() {
                return Err(SynthError::NonFinite { stage: i, at: z });
            }
            best = best.max(v);
        }
        raw.push(best);
    }
    let last = grid.len() - 1;
    let nodes: Vec<(f64, f64)> = (0..last)
        .map(|k| {
            let v = if k == 0 { raw[0] } else { raw[k + 1] };
            (grid[k], B_MARGIN * v)
        })
        .collect();
    grid.truncate(last);
    raw.truncate(last);
    let envelope = crate::funclass::envelope_from_samples(&nodes)?;
    Ok(BoundScan { envelope, grid, raw })
}

fn stage_functions(spec: &TriangularSpec, i: usize, bound: Option<&MonotoneEnvelope>) -> (MonotoneEnvelope, MonotoneEnvelope) {
    let e = (spec.sigma * spec.r).exp();
    let fi = i as f64;
    match bound {
        None => {
            let w = MonotoneEnvelope::linear(e);
            let gamma = MonotoneEnvelope::sum(vec![
                spec.l.clone().compose(w.clone()).scaled(e),
                spec.phi.clone().compose(w.clone()),
            ]);
            (gamma, spec.phi.clone().compose(w))
        }
        Some(b) => {
            let a = b.clone().arg_scaled(fi * e);
            let w = MonotoneEnvelope::product(vec![MonotoneEnvelope::linear(fi * e), a.clone()]);
            let gamma = MonotoneEnvelope::sum(vec![
                MonotoneEnvelope::product(vec![spec.l.clone().compose(w.clone()), a]).scaled(fi * e),
                spec.phi.clone().compose(w.clone()),
            ]);
            (gamma, spec.phi.clone().compose(w))
        }
    }
}

/// Largest `B_i` argument `i e^{σr} max(p_i, s_i)` over probes of the box.
fn range_for(res: &SynthesisResult, i: usize, opts: &SynthesisOptions) -> f64 {
    let h = opts.box_half;
    let mut pts = halton_box(512, i, -h, h);
    for mask in 0..(1u32 << i.min(6)) {
        pts.push((0..i).map(|b| if mask >> b & 1 == 1 { h } else { -h }).collect());
    }
    let fi = i as f64;
    let lead = if i == 2 { 1.0 } else { fi / 2.0 };
    let mut worst: f64 = 1.0;
    for xi in pts {
        let z = res.z(&xi);
        let p = lead + z.iter().map(|v| v * v).sum::<f64>();
        let s: f64 = z.iter().map(|v| v.abs()).sum();
        if p.is_finite() {
            worst = worst.max(p.max(s));
        }
    }
    fi * (res.sigma() * res.r()).exp() * worst * opts.range_factor
}

fn check_bound_override(stage: usize, env: &MonotoneEnvelope, scan: &BoundScan) -> Result<(), SynthError> {
    for (&s, &need) in scan.grid.iter().zip(&scan.raw) {
        let got = env.value(s);
        if !(got >= need * (1.0 - 1e-12) - 1e-12) {
            return Err(SynthError::Override {
                what: "B",
                stage,
                s,
                detail: format!("value {got} below the required {need}"),
            });
        }
    }
    Ok(())
}

fn check_rho_override(
    stage: usize,
    rho: &MonotoneEnvelope,
    gamma: &MonotoneEnvelope,
    recip: &MonotoneEnvelope,
    s_cap: f64,
) -> Result<(), SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + stage as u64);
    let b = |s: f64| 1.0 / recip.value(s);
    for _ in 0..10_000 {
        let x: f64 = rng.gen_range(0.0..=s_cap);
        let y: f64 = rng.gen_range(0.0..=s_cap);
        let (s, sp) = if x >= y { (x, y) } else { (y, x) };
        let lhs = b(s) - b(sp) + s * gamma.value(s) - sp * gamma.value(sp);
        let rhs = (s - sp) * rho.value(s);
        if lhs > rhs + 1e-12 * (1.0 + lhs.abs() + rhs.abs()) {
            return Err(SynthError::Override {
                what: "rho",
                stage,
                s,
                detail: format!("pair (s, s') = ({s}, {sp}): {lhs} > {rhs}"),
            });
        }
    }
    Ok(())
}

/// Runs the stage recursion and probes every gain for positivity.
pub fn synthesize(spec: &TriangularSpec, overrides: &Overrides, opts: &SynthesisOptions) -> Result<SynthesisResult, SynthError> {
    spec.validate()?;
    let n = spec.n;
    let mut spec = spec.clone();
    let mut provenance = vec![format!(
        "n = {n}, r = {}, sigma = {}, convention = {}",
        spec.r,
        spec.sigma,
        opts.convention.label()
    )];
    let phi_min = (0..=400).map(|k| spec.phi.value(0.25 * k as f64)).fold(f64::INFINITY, f64::min);
    if phi_min < 1.0 {
        spec.phi = spec.phi.clone().at_least_one();
        provenance.push(format!("phi replaced by max(phi, 1) (sampled minimum {phi_min})"));
    }
    for &i in overrides.bound.keys() {
        if i < 2 || i > n {
            return Err(SynthError::Spec(format!("B override for nonexistent stage {i}")));
        }
    }
    for &j in overrides.rho.keys() {
        if j < 1 || j >= n {
            return Err(SynthError::Spec(format!("rho override for nonexistent stage {j}")));
        }
    }

    let mut res = SynthesisResult {
        spec: spec.clone(),
        convention: opts.convention,
        stages: Vec::with_capacity(n),
        overrides: Vec::new(),
        provenance,
        gain_scale: vec![1.0; n],
        certified_range: vec![None; n],
    };

    for i in 1..=n {
        let bound = if i == 1 {
            None
        } else {
            let s_max = range_for(&res, i, opts);
            let scan = bound_b(i, &res, s_max, opts.grid_n)?;
            res.certified_range[i - 1] = Some(s_max);
            let chosen = match overrides.bound.get(&i) {
                Some((env, source)) => {
                    check_bound_override(i, env, &scan)?;
                    res.overrides.push(OverrideRecord { what: "B".into(), stage: i, source: source.clone() });
                    res.provenance.push(format!("B_{i}: override '{source}' admitted against scan on [0, {s_max:.6e}]"));
                    env.clone()
                }
                None => {
                    res.provenance.push(format!(
                        "B_{i}: lattice scan of the z-ball, {} nodes on [0, {s_max:.6e}], margin {B_MARGIN}",
                        scan.grid.len()
                    ));
                    scan.envelope
                }
            };
            Some(chosen)
        };
        let (gamma, recip) = stage_functions(&spec, i, bound.as_ref());
        res.provenance.push(format!("gamma_{i}, b_{i}: closed-form compositions of phi, L{}", if i > 1 { " and B" } else { "" }));
        res.stages.push(Stage { index: i, gamma: gamma.clone(), recip: recip.clone(), rho: None, bound });
        if i < n {
            let rho = match overrides.rho.get(&i) {
                Some((env, source)) => {
                    let cap = if i == 1 { 50.0 } else { res.certified_range[i - 1].unwrap_or(50.0).min(1e4) };
                    check_rho_override(i, env, &gamma, &recip, cap)?;
                    res.overrides.push(OverrideRecord { what: "rho".into(), stage: i, source: source.clone() });
                    res.provenance.push(format!("rho_{i}: override '{source}' admitted"));
                    env.clone()
                }
                None => {
                    res.provenance.push(format!("rho_{i}: gamma + s gamma' + |b'| majorant"));
                    rho_majorant(&gamma, &recip)?
                }
            };
            res.stages[i - 1].rho = Some(rho);
        }
        res.provenance.push(format!("mu_{i}, k_{i}: stage-{} formula, evaluated by forward-mode chain", if i <= 2 { i.to_string() } else { "i".into() }));
    }

    let mut probes = halton_box(opts.probes, n, -opts.box_half, opts.box_half);
    probes.push(vec![0.0; n]);
    for xi in probes {
        let x: Vec<Dual> = xi.iter().map(|&v| Dual::constant(v)).collect();
        let ch = res.chain(n, &x, false);
        for (i, m) in ch.mu.iter().enumerate() {
            let v = m.value();
            if !(v.is_finite() && v > 0.0) {
                return Err(SynthError::NonFinite { stage: i + 1, at: xi });
            }
        }
    }
    Ok(res)
}
