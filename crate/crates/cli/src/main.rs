//! `kforge`: synthesize, verify, simulate and certify from a TOML config.
//!
//! Exit codes: 0 pass, 2 verification failure, 3 schema failure, 4 runtime fault.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod error;
mod reference;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use config::{Mode, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "kforge", version, about = "Backstepping synthesis and decay certification for time-delay systems")]
struct Args {
    /// Overrides the config's `mode`.
    mode: Option<Mode>,
    /// TOML run configuration (optional for reproduce-example).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of closed-loop seeds; overrides `numerics.seeds`.
    #[arg(long)]
    seeds: Option<usize>,
    /// `B_2` override as an expression in `s`.
    #[arg(long = "override-B2", value_name = "EXPR")]
    override_b2: Option<String>,
    /// paper-5.13 (general recursion) or example-5.46 (worked convention).
    #[arg(long, value_name = "CONVENTION")]
    example_convention: Option<String>,
    /// Gains manifest to load instead of synthesizing.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Caps the number of worker threads.
    #[arg(long, env = "KFORGE_THREADS")]
    threads: Option<usize>,
}

fn load(args: &Args) -> Result<RunConfig, CliError> {
    let mut cfg = match (&args.config, args.mode) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(Mode::ReproduceExample)) => RunConfig::reference(Mode::ReproduceExample),
        (None, _) => return Err(CliError::Schema("--config is required for this mode".into())),
    };
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(n) = args.seeds {
        cfg.numerics.seeds = n;
    }
    if let Some(e) = &args.override_b2 {
        cfg.numerics.override_b2 = Some(e.clone());
    }
    match &args.example_convention {
        Some(c) => cfg.numerics.convention = c.clone(),
        None if cfg.mode == Mode::ReproduceExample && cfg.numerics.convention == "general" => {
            cfg.numerics.convention = "worked".into();
        }
        None => {}
    }
    if let Some(m) = &args.manifest {
        cfg.numerics.manifest = Some(m.clone());
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = load(&args).and_then(|cfg| {
        let out = cfg.output.dir.clone();
        run::execute(cfg, out.clone(), args.threads.filter(|&n| n > 0)).map(|o| (o, out))
    });
    match result {
        Ok((outcome, out)) => {
            let code = if outcome.pass { 0 } else { 2 };
            let status = json!({ "exit_code": code, "pass": outcome.pass, "reason": outcome.reason, "summary": outcome.summary });
            let _ = std::fs::write(out.join("status.json"), format!("{status:#}\n"));
            println!("{status}");
            ExitCode::from(code)
        }
        Err(e) => {
            let status = json!({ "exit_code": e.exit_code(), "pass": false, "kind": e.kind(), "reason": e.to_string() });
            eprintln!("{status}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
