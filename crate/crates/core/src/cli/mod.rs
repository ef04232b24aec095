//! Batch front end: runs the pipeline stages on a problem config and writes
//! CSV/JSON artifacts plus a run manifest.

mod stages;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Category, Error, Result};
use crate::local_model::{LocalModel, Numerics, ProblemConfig};

pub use stages::Stage;

/// Fixed 17-significant-digit scientific formatting used in every CSV.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_else(|| "inf".into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Eigen-splitting of the Hessian.
    Spectral,
    /// Rate ladder constants and their invariants.
    Ladder,
    /// Local stable and unstable manifold graphs.
    Manifolds,
    /// Finite-horizon graph sweeps and convergence reports.
    Lambda,
    /// Conley pair, stable foliation and retraction audits.
    Foliate,
    /// Cross-validation against the shooting oracle.
    Oracle,
    /// Every stage in order.
    All,
}

#[derive(Debug, Parser)]
#[command(
    name = "thicken",
    version,
    about = "Local invariant manifolds, finite-horizon graphs and stable foliations near a hyperbolic critical point"
)]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// Problem config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Seed for every random sample.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed-point tolerance; the integrator runs at ten times this.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// With `all`, stop after this stage.
    #[arg(long, value_enum)]
    pub stage: Option<Stage>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageStatus {
    /// `pass`, `fail` or `error`.
    pub status: &'static str,
    pub summary: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<Value>,
}

/// Record of one run, written to `manifest.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    /// SHA-256 of the config bytes, hex encoded.
    pub config_hash: String,
    pub seed: u64,
    pub fixed_point_tol: f64,
    pub ladder_echo: BTreeMap<String, f64>,
    pub ladder_checks: BTreeMap<String, bool>,
    pub stage_statuses: BTreeMap<String, StageStatus>,
    /// Paths relative to the output directory, in order of creation.
    pub artifact_paths: Vec<String>,
    /// Seconds per stage.
    pub wall_times: BTreeMap<String, f64>,
    pub exit_code: i32,
}

/// Machine-readable error record.
pub fn error_record(e: &Error, stage: Option<Stage>) -> Value {
    let category = match e.category() {
        Category::Assertion => "assertion",
        Category::Configuration => "configuration",
        Category::Solver => "solver",
    };
    json!({
        "error": e.kind(),
        "category": category,
        "exit_code": e.category().exit_code(),
        "stage": stage.map(|s| s.name()),
        "message": e.to_string(),
    })
}

/// Output directory bookkeeping: every file goes through [`Outputs::write`]
/// so that the manifest lists it.
pub struct Outputs {
    pub root: PathBuf,
    pub paths: Vec<String>,
}

impl Outputs {
    pub fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, contents)?;
        if !self.paths.iter().any(|p| p == rel) {
            self.paths.push(rel.to_string());
        }
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, &text)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn numerics(args: &Args) -> Result<Numerics> {
    let mut n = Numerics::default();
    if let Some(seed) = args.seed {
        n.seed = seed;
    }
    if let Some(tol) = args.tol {
        if !(tol > 0.0 && tol < 1e-2) {
            return Err(Error::Config(format!("--tol {tol} must lie in (0, 1e-2)")));
        }
        n.fixed_point_tol = tol;
        n.ode_tol = (10.0 * tol).max(1e-13);
    }
    Ok(n)
}

fn stages_for(args: &Args) -> Vec<Stage> {
    let single = |s: Stage| vec![s];
    match args.command {
        Command::Spectral => single(Stage::Spectral),
        Command::Ladder => single(Stage::Ladder),
        Command::Manifolds => single(Stage::Manifolds),
        Command::Lambda => single(Stage::Lambda),
        Command::Foliate => single(Stage::Foliate),
        Command::Oracle => single(Stage::Oracle),
        Command::All => {
            let last = args.stage.unwrap_or(Stage::Oracle);
            Stage::ALL.iter().copied().take_while(|s| *s <= last).collect()
        }
    }
}

/// Runs `args` and returns the process exit code.
pub fn run(args: &Args) -> i32 {
    let mut out = Outputs {
        root: args.out.clone(),
        paths: Vec::new(),
    };
    let fail = |out: &mut Outputs, e: &Error| {
        let record = error_record(e, None);
        eprintln!("{record}");
        let _ = out.write_json("error.json", &record);
        e.category().exit_code()
    };
    if let Some(threads) = args.threads {
        if threads == 0 {
            return fail(&mut out, &Error::Config("--threads must be positive".into()));
        }
        // A second build in the same process keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let bytes = match std::fs::read(&args.config) {
        Ok(b) => b,
        Err(e) => {
            return fail(
                &mut out,
                &Error::Config(format!("cannot read {}: {e}", args.config.display())),
            )
        }
    };
    let setup = || -> Result<(ProblemConfig, Numerics)> {
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config(format!("config is not UTF-8: {e}")))?;
        Ok((ProblemConfig::from_json(text)?, numerics(args)?))
    };
    let (config, numerics) = match setup() {
        Ok(v) => v,
        Err(e) => return fail(&mut out, &e),
    };
    if let Err(e) = std::fs::create_dir_all(&out.root) {
        return fail(&mut out, &Error::Io(e));
    }

    let mut manifest = RunManifest {
        command: format!("{:?}", args.command).to_lowercase(),
        config_path: args.config.display().to_string(),
        config_hash: sha256_hex(&bytes),
        seed: numerics.seed,
        fixed_point_tol: numerics.fixed_point_tol,
        ladder_echo: BTreeMap::new(),
        ladder_checks: BTreeMap::new(),
        stage_statuses: BTreeMap::new(),
        artifact_paths: Vec::new(),
        wall_times: BTreeMap::new(),
        exit_code: 0,
    };
    let mut ctx = stages::Context {
        config,
        numerics,
        model: None,
    };
    let mut exit = 0;
    for stage in stages_for(args) {
        let start = Instant::now();
        let result = stages::run_stage(stage, &mut ctx, &mut out);
        manifest
            .wall_times
            .insert(stage.name().into(), start.elapsed().as_secs_f64());
        let status = match result {
            Ok(outcome) => StageStatus {
                status: if outcome.pass { "pass" } else { "fail" },
                summary: outcome.summary,
                error: None,
            },
            Err(e) => {
                let record = error_record(&e, Some(stage));
                eprintln!("{record}");
                exit = e.category().exit_code();
                StageStatus {
                    status: "error",
                    summary: Value::Null,
                    error: Some(record),
                }
            }
        };
        if status.status == "fail" && exit == 0 {
            exit = Category::Assertion.exit_code();
        }
        eprintln!("{:<10} {}", stage.name(), status.status);
        manifest.stage_statuses.insert(stage.name().into(), status);
        if exit != 0 && exit != Category::Assertion.exit_code() {
            break;
        }
    }
    if let Some(model) = &ctx.model {
        manifest.ladder_echo = model
            .ladder
            .echo()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        manifest.ladder_checks = model
            .ladder
            .invariant_checks()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
    }
    if let Some(record) = manifest.stage_statuses.values().find_map(|s| s.error.clone()) {
        if out.write_json("error.json", &record).is_err() {
            return Category::Configuration.exit_code();
        }
    }
    manifest.exit_code = exit;
    out.paths.push("manifest.json".into());
    manifest.artifact_paths = out.paths.clone();
    if let Err(e) = out.write_json("manifest.json", &manifest) {
        eprintln!("{}", error_record(&e, None));
        return Category::Configuration.exit_code();
    }
    exit
}

/// Parses `argv` and runs; clap usage errors map to the configuration code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Args::try_parse_from(argv) {
        Ok(args) => run(&args),
        Err(e) => {
            let code = if e.use_stderr() {
                Category::Configuration.exit_code()
            } else {
                0
            };
            let _ = e.print();
            code
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}

/// Builds the local model for `config` with `numerics`.
pub fn build_model(config: &ProblemConfig, numerics: Numerics) -> Result<LocalModel> {
    LocalModel::build(config.to_problem()?, &config.ladder_overrides, numerics)
}

/// Reads a manifest back as JSON.
pub fn read_manifest(out: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(out.join("manifest.json"))?;
    Ok(serde_json::from_str(&text)?)
}
