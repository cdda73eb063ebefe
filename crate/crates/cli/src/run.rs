use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use kforge::backstep::{
    build_srclf, feedback_law, synthesize, verify_master_inequality, Convention, Manifest, MasterReport, Overrides,
    SynthesisOptions, SynthesisResult, TriangularSpec,
};
use kforge::dsl::parse;
use kforge::funclass::MonotoneEnvelope;
use kforge::history::fmt17;
use kforge::lyapunov::{certify_values, DecayMode, MaxTypeFunctional};
use kforge::qmc::halton_box;
use kforge::sim::{integrate_with, make_disturbance, random_history, IntegrateOptions, Scheme};
use kforge::{History, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Mode, RunConfig};
use crate::error::CliError;
use crate::reference::ClosedForms;

/// Tables in the manifest cover `s ∈ [0, 5]` and `ξ_1 ∈ [-5, 5]`.
const TABLE_S_MAX: f64 = 5.0;
const TABLE_XI_MAX: f64 = 5.0;
const TABLE_COUNT: usize = 101;

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestFile {
    pub generated_unix: u64,
    pub sha256: String,
    pub config: RunConfig,
    pub manifest: Manifest,
}

pub fn result_hash(res: &SynthesisResult) -> String {
    let text = serde_json::to_string(res).expect("serializable");
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

pub fn load_manifest(path: &Path) -> Result<ManifestFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let file: ManifestFile =
        serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("manifest {}: {e}", path.display())))?;
    let hash = result_hash(&file.manifest.result);
    if hash != file.sha256 {
        return Err(CliError::Schema(format!("manifest hash mismatch: recorded {}, computed {hash}", file.sha256)));
    }
    Ok(file)
}

pub struct Outcome {
    pub pass: bool,
    pub summary: Value,
    pub reason: Option<String>,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        std::fs::write(self.out.join(name), contents).map_err(|e| CliError::Io(format!("{name}: {e}")))
    }

    fn write_json(&self, name: &str, v: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }

    fn convention(&self) -> Convention {
        self.cfg.numerics.convention.parse().expect("resolved")
    }

    fn overrides(&self, r: f64) -> Result<Overrides, CliError> {
        match &self.cfg.numerics.override_b2 {
            Some(text) => Ok(Overrides::default().with_bound(2, parse_envelope(text, r)?, format!("user: {text}"))),
            None => Ok(Overrides::default()),
        }
    }

    fn options(&self) -> SynthesisOptions {
        SynthesisOptions {
            box_half: self.cfg.numerics.sample_box.0.abs().max(self.cfg.numerics.sample_box.1.abs()),
            ..SynthesisOptions::with_convention(self.convention())
        }
    }

    /// Loads the configured manifest or synthesizes from the system block.
    fn gains(&self) -> Result<SynthesisResult, CliError> {
        if let Some(path) = &self.cfg.numerics.manifest {
            return Ok(load_manifest(path)?.manifest.result);
        }
        let spec = self.cfg.spec()?;
        Ok(synthesize(&spec, &self.overrides(spec.r)?, &self.options())?)
    }

    fn save_manifest(&self, res: &SynthesisResult) -> Result<String, CliError> {
        let manifest = res.manifest(TABLE_S_MAX, TABLE_XI_MAX, TABLE_COUNT);
        let sha256 = result_hash(res);
        let generated_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let file = ManifestFile { generated_unix, sha256: sha256.clone(), config: self.cfg.clone(), manifest };
        self.write_json("manifest.json", &file)?;
        let mut log = String::new();
        for line in &res.provenance {
            let _ = writeln!(log, "{line}");
        }
        for o in &res.overrides {
            let _ = writeln!(log, "override {} stage {}: {}", o.what, o.stage, o.source);
        }
        self.write("provenance.log", &log)?;
        Ok(sha256)
    }

    fn master(&self, res: &SynthesisResult) -> Result<Vec<MasterReport>, CliError> {
        let (lo, hi) = self.cfg.numerics.sample_box;
        let reports: Vec<MasterReport> =
            (1..=res.n()).map(|i| verify_master_inequality(res, i, self.cfg.numerics.samples, lo, hi)).collect();
        self.write_json("master_report.json", &reports)?;
        Ok(reports)
    }
}

fn parse_envelope(text: &str, r: f64) -> Result<MonotoneEnvelope, CliError> {
    let expr = parse(text).map_err(|e| CliError::Schema(format!("override '{text}': {e}")))?;
    MonotoneEnvelope::from_expr(&expr, r, 1000.0, 4000).map_err(|e| CliError::Schema(format!("override '{text}': {e}")))
}

fn master_outcome(reports: &[MasterReport], extra: Value) -> Outcome {
    let failing: Vec<usize> = reports.iter().filter(|r| !r.pass).map(|r| r.stage).collect();
    let worst = reports.iter().map(|r| r.worst_margin).fold(f64::NEG_INFINITY, f64::max);
    let mut summary = json!({ "master_pass": failing.is_empty(), "worst_margin": worst, "failing_stages": failing });
    if let (Value::Object(m), Value::Object(e)) = (&mut summary, extra) {
        m.extend(e);
    }
    Outcome {
        pass: failing.is_empty(),
        reason: (!failing.is_empty()).then(|| format!("master inequality fails at stages {failing:?}")),
        summary,
    }
}

pub fn execute(cfg: RunConfig, out: PathBuf, threads: Option<usize>) -> Result<Outcome, CliError> {
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let ctx = Ctx { cfg, out };
    match ctx.cfg.mode {
        Mode::Synthesize => synthesize_cmd(&ctx),
        Mode::Verify => verify_cmd(&ctx),
        Mode::Simulate => runs_cmd(&ctx, threads, false),
        Mode::Certify => runs_cmd(&ctx, threads, true),
        Mode::ReproduceExample => reproduce_cmd(&ctx),
    }
}

fn synthesize_cmd(ctx: &Ctx) -> Result<Outcome, CliError> {
    let res = ctx.gains()?;
    let hash = ctx.save_manifest(&res)?;
    let reports = ctx.master(&res)?;
    Ok(master_outcome(&reports, json!({ "stages": res.n(), "sha256": hash })))
}

fn verify_cmd(ctx: &Ctx) -> Result<Outcome, CliError> {
    let res = ctx.gains()?;
    let reports = ctx.master(&res)?;
    Ok(master_outcome(&reports, json!({ "sha256": result_hash(&res) })))
}

#[derive(Debug, Clone, Serialize)]
struct SeedReport {
    seed: u64,
    status: String,
    pass: bool,
    worst_margin: Option<f64>,
    worst_time: Option<f64>,
    final_norm: f64,
}

fn plot_csv(tr: &Trajectory, values: &[f64], sigma: f64) -> String {
    let t0 = tr.times[0];
    let v0 = values[0];
    let mut s = String::from("t,V,weighted_V\n");
    for (t, v) in tr.times.iter().zip(values) {
        let w = (2.0 * sigma * (t - t0)).exp() * v;
        let norm = if v0 > 0.0 { w / v0 } else { w };
        let _ = writeln!(s, "{},{},{}", fmt17(*t), fmt17(*v), fmt17(norm));
    }
    s
}

fn runs_cmd(ctx: &Ctx, threads: Option<usize>, certify: bool) -> Result<Outcome, CliError> {
    let res = ctx.gains()?;
    let spec: &TriangularSpec = &res.spec;
    let rfde = spec.rfde()?;
    let num = &ctx.cfg.numerics;
    let dt = ctx.cfg.dt();
    let m = (spec.r / dt).round() as usize;
    let scheme = if num.scheme == "rk4" { Scheme::Rk4 } else { Scheme::Sdirk2 };
    let law = feedback_law(&res);
    let v: MaxTypeFunctional<f64> = build_srclf(&res);
    let mode = DecayMode::Exponential { sigma: spec.sigma };
    let seeds: Vec<u64> = (0..num.seeds as u64).map(|k| num.first_seed + k).collect();
    let csv = ctx.cfg.output.csv();

    let run_seed = |seed: u64| -> Result<SeedReport, CliError> {
        let x0: History = random_history(seed, spec.r, m, spec.n, num.radius).map_err(|e| CliError::Runtime(e.to_string()))?;
        let d = make_disturbance(seed, num.dwell, &spec.disturbance_box, 0.0, num.horizon)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let opts = IntegrateOptions::with_scheme(scheme);
        let tr = if num.open_loop {
            integrate_with(&rfde, &x0, &d, |_, _| vec![0.0], 0.0, num.horizon, dt, opts)
        } else {
            integrate_with(&rfde, &x0, &d, law.as_feedback(), 0.0, num.horizon, dt, opts)
        }
        .map_err(|e| CliError::Runtime(format!("seed {seed}: {e}")))?;
        let values: Vec<f64> = (0..tr.len()).map(|k| v.eval_v(&tr.window(k))).collect();
        let completed = tr.status.is_completed();
        let mut report = SeedReport {
            seed,
            status: tr.status.label().into(),
            pass: completed,
            worst_margin: None,
            worst_time: None,
            final_norm: kforge::history::norm(tr.final_state()),
        };
        if certify && completed {
            let cert = certify_values(&values, &tr, &mode, num.tolerance).map_err(|e| CliError::Runtime(e.to_string()))?;
            report.pass = cert.pass;
            report.worst_margin = Some(cert.worst_margin);
            report.worst_time = Some(cert.worst_time);
        }
        if csv {
            ctx.write(&format!("trajectory_seed{seed}.csv"), &tr.to_csv(Some(&values)))?;
            if certify {
                ctx.write(&format!("plot_seed{seed}.csv"), &plot_csv(&tr, &values, spec.sigma))?;
            }
        }
        if certify {
            ctx.write_json(&format!("certify_seed{seed}.json"), &report)?;
        }
        Ok(report)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let reports: Vec<SeedReport> = pool.install(|| seeds.par_iter().map(|&s| run_seed(s)).collect::<Result<_, _>>())?;

    let failed: Vec<u64> = reports.iter().filter(|r| !r.pass).map(|r| r.seed).collect();
    let worst = reports.iter().filter_map(|r| r.worst_margin).fold(f64::NEG_INFINITY, f64::max);
    let summary = json!({
        "mode": if certify { "certify" } else { "simulate" },
        "open_loop": num.open_loop,
        "seeds": reports.len(),
        "failed_seeds": failed,
        "worst_margin": if worst.is_finite() { Some(worst) } else { None },
        "tolerance": num.tolerance,
        "sha256": result_hash(&res),
    });
    ctx.write_json(
        if certify { "certify_report.json" } else { "simulate_report.json" },
        &json!({ "summary": summary, "seeds": reports }),
    )?;
    let pass = failed.is_empty();
    let what = if certify { "decay certificate fails" } else { "simulation did not complete" };
    Ok(Outcome { pass, reason: (!pass).then(|| format!("{what} for seeds {failed:?}")), summary })
}

#[derive(Debug, Clone, Serialize)]
struct Deviation {
    quantity: &'static str,
    domain: &'static str,
    points: usize,
    max_abs: f64,
    max_rel: f64,
}

struct Tally {
    rows: Vec<Deviation>,
}

impl Tally {
    fn add(&mut self, quantity: &'static str, domain: &'static str, pairs: impl Iterator<Item = (f64, f64)>) {
        let mut row = Deviation { quantity, domain, points: 0, max_abs: 0.0, max_rel: 0.0 };
        for (got, want) in pairs {
            let abs = (got - want).abs();
            row.points += 1;
            row.max_abs = row.max_abs.max(abs);
            row.max_rel = row.max_rel.max(abs / want.abs().max(1.0));
            if abs.is_nan() {
                row.max_abs = f64::NAN;
                row.max_rel = f64::NAN;
            }
        }
        self.rows.push(row);
    }
}

fn reproduce_cmd(ctx: &Ctx) -> Result<Outcome, CliError> {
    let (sigma, r) = ctx.cfg.system.as_ref().map_or((0.1, 1.0), |s| (s.sigma, s.r));
    let closed = ClosedForms::new(sigma, r);
    let spec = TriangularSpec::reference_system(sigma, r);
    let convention = ctx.convention();
    let overrides = match &ctx.cfg.numerics.override_b2 {
        Some(text) => Overrides::default().with_bound(2, parse_envelope(text, r)?, format!("user: {text}")),
        None => Overrides::default().with_bound(2, closed.b2(), "closed form"),
    };
    let opts = SynthesisOptions::with_convention(convention);
    // report-only: a rejected override falls back to the scanned bound
    let (res, rejected) = match synthesize(&spec, &overrides, &opts) {
        Ok(res) => (res, None),
        Err(e @ kforge::backstep::SynthError::Override { .. }) => {
            (synthesize(&spec, &Overrides::default(), &opts)?, Some(e.to_string()))
        }
        Err(e) => return Err(e.into()),
    };

    let xi: Vec<f64> = (0..=1000).map(|k| -5.0 + 0.01 * k as f64).collect();
    let s: Vec<f64> = (0..=1000).map(|k| 0.005 * k as f64).collect();
    let plane = halton_box(2000, 2, -3.0, 3.0);
    let mut t = Tally { rows: Vec::new() };
    t.add("mu1", "xi1 in [-5,5]", xi.iter().map(|&x| (res.mu(1, &[x]), closed.mu1(x))));
    t.add("gamma1", "s in [0,5]", s.iter().map(|&v| (res.gamma(1, v), closed.gamma1(v))));
    t.add("k1", "xi1 in [-5,5]", xi.iter().map(|&x| (res.k(1, &[x]), closed.k1(x))));
    t.add("rho1", "s in [0,5]", s.iter().map(|&v| (res.rho(1, v).unwrap_or(f64::NAN), closed.rho1(v))));
    t.add("delta1", "xi1 in [-5,5]", xi.iter().map(|&x| (res.delta(1, &[x]), closed.delta1(x))));
    t.add(
        "delta1_excess_minus_grad_k1",
        "xi1 in [-5,5]",
        xi.iter().map(|&x| (res.delta(1, &[x]) - closed.delta1(x), res.grad_k(1, &[x])[0].abs())),
    );
    t.add("B2", "s in [0,5]", s.iter().map(|&v| (res.bound(2, v).unwrap_or(f64::NAN), closed.b2().value(v))));
    t.add("gamma2", "s in [0,5]", s.iter().map(|&v| (res.gamma(2, v), closed.gamma2(v))));
    t.add("mu2", "[-3,3]^2", plane.iter().map(|p| (res.mu(2, p), closed.mu2(p[0], p[1]))));
    t.add("u", "[-3,3]^2", plane.iter().map(|p| (res.k(2, p), closed.u(p[0], p[1]))));
    t.add("Q", "[-3,3]^2", plane.iter().map(|p| (res.q(p), closed.q(p[0], p[1]))));
    let v_synth = build_srclf(&res);
    let v_closed = MaxTypeFunctional::new(sigma, r, move |x: &[f64]| closed.q(x[0], x[1]), |_: &[f64]| vec![0.0, 0.0]);
    let hists: Vec<History> = (0..64).filter_map(|k| random_history(k, r, 64, 2, 2.0).ok()).collect();
    t.add("V", "64 histories", hists.iter().map(|h| (v_synth.eval_v(h), v_closed.eval_v(h))));

    let mut csv = String::from("quantity,domain,points,max_abs,max_rel\n");
    for row in &t.rows {
        let _ = writeln!(csv, "{},{},{},{},{}", row.quantity, row.domain, row.points, fmt17(row.max_abs), fmt17(row.max_rel));
    }
    if ctx.cfg.output.csv() {
        ctx.write("reproduce_table.csv", &csv)?;
    }
    let summary = json!({
        "sigma": sigma,
        "r": r,
        "convention": convention.label(),
        "b2_source": res.overrides.iter().map(|o| o.source.clone()).collect::<Vec<_>>(),
        "b2_override_rejected": rejected,
        "max_rel_deviation": t.rows.iter().filter(|d| d.quantity != "delta1_excess_minus_grad_k1").map(|d| d.max_rel).fold(0.0, f64::max),
    });
    ctx.write_json("reproduce_report.json", &json!({ "summary": summary, "deviations": t.rows }))?;
    Ok(Outcome { pass: true, summary, reason: None })
}
