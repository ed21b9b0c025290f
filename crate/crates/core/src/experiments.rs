//! Command-line experiments.
//!
//! Exit codes: 0 when the expected outcome is reproduced, 1 on usage or
//! validation errors, 2 when the run completes but the outcome differs.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::flow::BlockLinearField;
use crate::glued::{GluedHeteroclinicSystem, SystemFixture};
use crate::hetero::{frame_for, transversality, ObstructionFrame, TransversalityVerdict};
use crate::pseudo::{pseudo_defect, pseudo_from_orbit, pseudo_glued, SampledPseudotrajectory};
use crate::shadow::{
    glued_windows, lipschitz_sweep, nosubset_feasibility, shadow_search, EpsChoice, LipVerdict, NosubsetConfig,
    NosubsetError, SearchStart, ShadowConfig, SweepConfig,
};
use crate::spiral::{cert_search, cert_validate, SpiralError, SpiralKind, SpiralParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NOT_REPRODUCED: i32 = 2;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "SHADOWLAB_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "shadowlab", version, about = "Shadowing experiments near hyperbolic equilibria")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find and validate a window certificate for an expanding spiral or line.
    SpiralCert(SpiralCertArgs),
    /// Lipschitz sweep on a glued model.
    Counterexample(CounterexampleArgs),
    /// Brute-force the jump pseudotrajectory near a planar saddle connection.
    Nosubset(NosubsetArgs),
    /// Defect of a sampled pseudotrajectory.
    Defect(DefectArgs),
    /// Multi-start shadowing search.
    ShadowSearch(ShadowSearchArgs),
    /// Transversality verdict and obstruction frame of a glued model.
    Transversality(TransversalityArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SpiralCertArgs {
    #[arg(long, value_enum)]
    pub kind: SpiralKind,
    #[arg(long, allow_negative_numbers = true)]
    pub a: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1.0)]
    pub b: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub eps: f64,
    #[arg(long = "L", allow_negative_numbers = true)]
    #[serde(rename = "L")]
    pub l: f64,
    #[arg(long, default_value_t = 100_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Validate this window instead of searching (needs --d0).
    #[arg(long = "T", requires = "d0")]
    #[serde(rename = "T")]
    pub t: Option<f64>,
    #[arg(long, requires = "t")]
    pub d0: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    /// Every cell fails with a corroborating obstruction verdict.
    Lipfail,
    /// The largest `L` passes at every `d` and every ratio stays bounded.
    Lipok,
}

#[derive(Debug, Args, Serialize)]
pub struct CounterexampleArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long = "L", value_delimiter = ',', default_value = "1,2,5")]
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3")]
    pub d: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    pub starts: usize,
    #[arg(long, default_value_t = 20_000)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Expectation::Lipfail)]
    pub expect: Expectation,
    /// Ratio bound for `--expect lipok`.
    #[arg(long, default_value_t = 50.0)]
    pub max_ratio: f64,
    #[arg(long)]
    pub t_back: Option<f64>,
    #[arg(long)]
    pub t_fwd: Option<f64>,
    /// Defect constant; defaults to the fixture's value, else measured.
    #[arg(long)]
    pub c1: Option<f64>,
    /// Sweep table as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct NosubsetArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, default_value_t = 8.0)]
    pub tau0: f64,
    #[arg(long, default_value_t = 8.0)]
    pub tau1: f64,
    /// `auto` or a number.
    #[arg(long, default_value = "auto")]
    pub eps: String,
    /// Points per axis.
    #[arg(long, default_value_t = 200)]
    pub xgrid: usize,
    #[arg(long, default_value_t = 1000)]
    pub hsamples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30.0)]
    pub t_back: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dt: f64,
    /// Per-point failure records as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

/// Source of a pseudotrajectory for `defect` and `shadow-search`.
#[derive(Debug, Args, Serialize)]
pub struct PseudoSource {
    /// Block field JSON (`{"blocks": [...]}`).
    #[arg(long, conflicts_with = "system")]
    pub field: Option<PathBuf>,
    /// Pseudotrajectory JSON (`{"t0", "dt", "nodes"}`) for `--field`.
    #[arg(long, requires = "field")]
    pub pseudo: Option<PathBuf>,
    /// Sample the orbit of this point instead (with `--field`).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0,4")]
    pub window: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub dt: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Glued fixture; uses the glued construction with offset `--d`.
    #[arg(long)]
    pub system: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    pub d: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct DefectArgs {
    #[command(flatten)]
    pub source: PseudoSource,
    /// Nodes as CSV.
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ShadowSearchArgs {
    #[command(flatten)]
    pub source: PseudoSource,
    #[arg(long, default_value_t = 0.0)]
    pub class_a: f64,
    #[arg(long, default_value_t = 16)]
    pub starts: usize,
    #[arg(long, default_value_t = 5000)]
    pub budget: usize,
    #[arg(long)]
    pub target: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TransversalityArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(String),
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

/// `{tool, version, command, seed, config, result}` as pretty JSON.
pub fn envelope(command: &str, seed: u64, config: &impl Serialize, result: &impl Serialize) -> String {
    let v = json!({
        "tool": "shadowlab",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config": config,
        "result": result,
    });
    serde_json::to_string_pretty(&v).expect("serializable") + "\n"
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string())),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_system(path: &Path) -> Result<(SystemFixture, GluedHeteroclinicSystem), CliError> {
    let fx = SystemFixture::load(path).map_err(invalid)?;
    let sys = fx.build().map_err(invalid)?;
    Ok((fx, sys))
}

fn load_field(path: &Path) -> Result<BlockLinearField, CliError> {
    let s = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Install the global worker pool. Later calls are ignored.
pub fn init_workers(workers: Option<usize>) {
    if let Some(n) = workers.filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Run a parsed command line and return the exit code.
pub fn run(cli: Cli) -> i32 {
    init_workers(cli.workers);
    let res = match &cli.command {
        Command::SpiralCert(a) => cmd_spiral_cert(a),
        Command::Counterexample(a) => cmd_counterexample(a),
        Command::Nosubset(a) => cmd_nosubset(a),
        Command::Defect(a) => cmd_defect(a),
        Command::ShadowSearch(a) => cmd_shadow_search(a),
        Command::Transversality(a) => cmd_transversality(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

pub fn cmd_spiral_cert(a: &SpiralCertArgs) -> Result<i32, CliError> {
    let p = SpiralParams { kind: a.kind, a: a.a, b: a.b, eps: a.eps, l: a.l };
    p.validate().map_err(invalid)?;
    if let (Some(t), Some(d0)) = (a.t, a.d0) {
        let v = cert_validate(&p, t, d0, a.trials, a.seed).map_err(invalid)?;
        let result = json!({"pass": v.pass, "T": t, "d0": d0, "trials": a.trials, "validation": v});
        emit(&a.out, &envelope("spiral-cert", a.seed, a, &result))?;
        return Ok(if v.pass { EXIT_OK } else { EXIT_NOT_REPRODUCED });
    }
    match cert_search(&p, a.trials, a.seed) {
        Ok(cert) => {
            emit(&a.out, &envelope("spiral-cert", a.seed, a, &cert))?;
            Ok(EXIT_OK)
        }
        Err(SpiralError::CertificationFailed { escalations, worst }) => {
            let result = json!({"pass": false, "escalations": escalations, "worst": worst});
            emit(&a.out, &envelope("spiral-cert", a.seed, a, &result))?;
            eprintln!("certification failed after {escalations} escalations");
            Ok(EXIT_NOT_REPRODUCED)
        }
        Err(e) => Err(invalid(e)),
    }
}

pub fn cmd_counterexample(a: &CounterexampleArgs) -> Result<i32, CliError> {
    let (fx, sys) = load_system(&a.system)?;
    if a.l.iter().chain(&a.d).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid("L and d values must be positive"));
    }
    let tv = transversality(&sys);
    let frame = frame_for(&sys).map_err(invalid)?;
    let cfg = SweepConfig {
        l_list: a.l.clone(),
        d_list: a.d.clone(),
        starts: a.starts,
        budget: a.budget,
        seed: a.seed,
        t_back: a.t_back,
        t_fwd: a.t_fwd,
        c1: a.c1.or(fx.c1),
    };
    let table = lipschitz_sweep(&sys, &frame, &cfg).map_err(invalid)?;
    if let Some(p) = &a.csv {
        let mut w = create(p)?;
        table.write_csv(&mut w).map_err(invalid)?;
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    }
    let reproduced = match a.expect {
        Expectation::Lipfail => {
            tv.verdict == TransversalityVerdict::Nontransversal && table.rows.iter().all(|r| r.corroborated_fail())
        }
        Expectation::Lipok => {
            let lmax = a.l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            table.rows.iter().all(|r| r.ratio <= a.max_ratio)
                && table.rows.iter().filter(|r| r.l == lmax).all(|r| r.verdict == LipVerdict::LipOk)
        }
    };
    let result = json!({
        "system": fx.name,
        "transversality": tv,
        "frame": frame,
        "reproduced": reproduced,
        "table": table,
    });
    emit(&a.out, &envelope("counterexample", a.seed, a, &result))?;
    Ok(if reproduced { EXIT_OK } else { EXIT_NOT_REPRODUCED })
}

pub fn cmd_nosubset(a: &NosubsetArgs) -> Result<i32, CliError> {
    let (_, sys) = load_system(&a.system)?;
    let eps = match a.eps.trim() {
        "auto" => EpsChoice::Auto,
        s => EpsChoice::Value(s.parse().map_err(|_| invalid(format!("--eps must be 'auto' or a number, got {s}")))?),
    };
    let cfg = NosubsetConfig {
        eps,
        t_jump: a.tau0,
        t_lead: a.tau1,
        t_back: a.t_back,
        dt: a.dt,
        x_grid: a.xgrid,
        h_samples: a.hsamples,
        seed: a.seed,
        keep_points: a.points.is_some(),
        ..Default::default()
    };
    let report = match nosubset_feasibility(&sys, &cfg) {
        Ok(r) => r,
        Err(e @ NosubsetError::InvalidEps { .. }) => return Err(invalid(e)),
        Err(e) => return Err(invalid(e)),
    };
    if let Some(p) = &a.points {
        let mut w = csv::Writer::from_writer(create(p)?);
        let io = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(["x0", "x1", "on_wu", "branch", "t_min", "t_max"]).map_err(io)?;
        for r in &report.points {
            let branch = serde_json::to_value(r.branch).expect("serializable");
            w.write_record([
                r.x[0].to_string(),
                r.x[1].to_string(),
                r.on_wu.to_string(),
                branch.as_str().unwrap_or("other").to_string(),
                r.t_min.to_string(),
                r.t_max.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    }
    let mut summary = report.clone();
    summary.points.clear();
    emit(&a.out, &envelope("nosubset", a.seed, a, &summary))?;
    Ok(if report.feasible { EXIT_NOT_REPRODUCED } else { EXIT_OK })
}

enum Source {
    Ambient(BlockLinearField, SampledPseudotrajectory<Vec<f64>>),
    Glued(GluedHeteroclinicSystem, ObstructionFrame, SampledPseudotrajectory<crate::glued::ChartPoint>),
}

fn build_source(s: &PseudoSource) -> Result<Source, CliError> {
    if let Some(path) = &s.system {
        let (_, sys) = load_system(path)?;
        let frame = frame_for(&sys).map_err(invalid)?;
        let (tb, tf) = glued_windows(&sys);
        let g = pseudo_glued(&sys, &frame, s.d, tb, tf).map_err(invalid)?;
        return Ok(Source::Glued(sys, frame, g));
    }
    let path = s.field.as_ref().ok_or_else(|| invalid("need --field or --system"))?;
    let field = load_field(path)?;
    let g = if let Some(pp) = &s.pseudo {
        let txt = std::fs::read_to_string(pp).map_err(|e| CliError::Io(format!("{}: {e}", pp.display())))?;
        let raw: SampledPseudotrajectory<Vec<f64>> =
            serde_json::from_str(&txt).map_err(|e| invalid(format!("{}: {e}", pp.display())))?;
        if raw.nodes.iter().any(|x| x.len() != field.dim()) {
            return Err(invalid("pseudotrajectory nodes do not match the field dimension"));
        }
        SampledPseudotrajectory::new(raw.t0, raw.dt, raw.nodes).map_err(invalid)?
    } else {
        let x0 = s.x0.as_ref().ok_or_else(|| invalid("need --pseudo or --x0 with --field"))?;
        if x0.len() != field.dim() || s.window.len() != 2 {
            return Err(invalid("--x0 must match the field dimension and --window needs two values"));
        }
        pseudo_from_orbit(&field, x0, (s.window[0], s.window[1]), s.dt, s.noise, s.seed).map_err(invalid)?
    };
    Ok(Source::Ambient(field, g))
}

pub fn cmd_defect(a: &DefectArgs) -> Result<i32, CliError> {
    let (est, rows) = match build_source(&a.source)? {
        Source::Ambient(f, g) => {
            if let Some(p) = &a.csv {
                g.write_csv(&f, create(p)?).map_err(invalid)?;
            }
            (pseudo_defect(&f, &g).map_err(invalid)?, g.len())
        }
        Source::Glued(sys, _, g) => {
            if let Some(p) = &a.csv {
                g.write_csv(&sys, create(p)?).map_err(invalid)?;
            }
            (pseudo_defect(&sys, &g).map_err(invalid)?, g.len())
        }
    };
    let result = json!({"defect": est, "nodes": rows});
    emit(&a.out, &envelope("defect", a.source.seed, a, &result))?;
    Ok(EXIT_OK)
}

pub fn cmd_shadow_search(a: &ShadowSearchArgs) -> Result<i32, CliError> {
    if !(a.class_a >= 0.0) || a.starts == 0 || a.budget == 0 {
        return Err(invalid("--class-a must be nonnegative; --starts and --budget positive"));
    }
    let cfg = ShadowConfig { target: a.target, ..ShadowConfig::new(a.class_a, a.starts, a.budget, a.source.seed) };
    let result = match build_source(&a.source)? {
        Source::Ambient(f, g) => shadow_search(&f, &g, &cfg, &[]).map_err(invalid)?,
        Source::Glued(sys, frame, g) => {
            let d = a.source.d;
            let extras = [
                SearchStart::point(frame.e_q.iter().map(|x| d * x).collect()),
                SearchStart::point(sys.apply_k_inv(&frame.e_p.iter().map(|x| d * x).collect::<Vec<_>>())),
            ];
            shadow_search(&sys, &g, &cfg, &extras).map_err(invalid)?
        }
    };
    emit(&a.out, &envelope("shadow-search", a.source.seed, a, &result))?;
    Ok(match a.target {
        Some(t) if result.best_eps > t => EXIT_NOT_REPRODUCED,
        _ => EXIT_OK,
    })
}

pub fn cmd_transversality(a: &TransversalityArgs) -> Result<i32, CliError> {
    let (fx, sys) = load_system(&a.system)?;
    let tv = transversality(&sys);
    let frame = crate::hetero::select_obstruction_frame(&sys).ok();
    let result = json!({"system": fx.name, "transversality": tv, "frame": frame});
    emit(&a.out, &envelope("transversality", 0, a, &result))?;
    Ok(EXIT_OK)
}
