//! Command-line harness: `stqn [globals] <synth|scatter|limits|verify|check|replay>`.
//!
//! Exit status: 0 when every selected check passes, 2 when a check fails,
//! 1 on any error (printed as `error[stage]: message`).

use crate::chaos::{bound_constant, kappa_and_limits, limit_cov_g, limit_cov_gsq, LimitSettings, M2Quadrature};
use crate::config::{parse_config, ExperimentConfig};
use crate::error::{Error, Result};
use crate::models::{check_assumptions, SpectralDensity, WaveletSpec};
use crate::quad::Tolerance;
use crate::rng::stage_seed;
use crate::scattering::Scatterer;
use crate::stats::{
    checks_pass, covariance_report, distribution_report, finite_cov_report, run_rate, write_samples_csv, CheckResult,
    Experiment,
};
use crate::synth::{read_path_binary, read_path_csv, write_path_binary, write_path_csv, SampledPath, Synthesizer};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Parser)]
#[command(name = "stqn", version, about = "STQN scattering toolkit for stationary Gaussian processes")]
pub struct Cli {
    /// Experiment config (TOML, or JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
pub enum Command {
    /// Synthesize sample paths.
    Synth(SynthArgs),
    /// Apply the STQN cascade to a path.
    Scatter(ScatterArgs),
    /// Limit constants, limit covariances and bounds.
    Limits(LimitsArgs),
    /// Monte Carlo verification.
    Verify(VerifyArgs),
    /// Check the standing assumptions only.
    Check,
    /// Re-run a manifest and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
pub enum PathFormat {
    Bin,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Number of paths.
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, value_enum, default_value_t = PathFormat::Bin)]
    pub format: PathFormat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScatterArgs {
    /// Input path (.bin or .csv); synthesized from the config when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Scale vector j1,...,jM.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0,4")]
    pub scales: Vec<i32>,
    #[arg(long, value_enum, default_value_t = PathFormat::Csv)]
    pub format: PathFormat,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LimitsArgs {
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    /// j1,...,j_{M-1}.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0")]
    pub scales_prefix: Vec<i32>,
    #[arg(long)]
    pub wavelet: Option<String>,
    #[arg(long)]
    pub density: Option<String>,
    /// Relative tolerance of the outer integrals.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Final scales for the depth-2 TV bound.
    #[arg(long, value_delimiter = ',', default_value = "6,7,8,9,10,11")]
    pub tv_scales: Vec<i32>,
    /// Lags at which to report the limit covariances.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2")]
    pub lags: Vec<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
pub enum VerifyMode {
    Dist,
    Cov,
    FiniteCov,
    Rate,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub mode: VerifyMode,
    /// Replicas (overrides the config).
    #[arg(long)]
    pub replicas: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub command: Value,
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// File name -> sha256 hex digest.
    pub outputs: BTreeMap<String, String>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Outputs { dir, files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let p = self.path(name);
        std::fs::write(p, serde_json::to_string_pretty(v)? + "\n")?;
        Ok(())
    }
}

struct Outcome {
    checks: Vec<CheckResult>,
}

fn stage_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Scatter(_) => "scatter",
        Command::Limits(_) => "limits",
        Command::Verify(v) => match v.mode {
            VerifyMode::Dist => "verify-dist",
            VerifyMode::Cov => "verify-cov",
            VerifyMode::FiniteCov => "verify-finite-cov",
            VerifyMode::Rate => "verify-rate",
        },
        Command::Check => "check",
        Command::Replay(_) => "replay",
    }
}

/// Runs the CLI on explicit arguments and returns the exit status.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stage = stage_name(&cli.command);
    match run(&cli) {
        Ok(checks) => {
            for c in &checks.0 {
                println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks_pass(&checks.0, &checks.1) {
                0
            } else {
                2
            }
        }
        Err(e) => {
            eprintln!("error[{stage}]: {e}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        // `check` reports assumption failures itself instead of refusing the config.
        Some(p) if matches!(cli.command, Command::Check) => {
            ExperimentConfig::from_str_any(&std::fs::read_to_string(p)?)?
        }
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.output.dir = d.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(Vec<CheckResult>, Vec<String>)> {
    if let Some(t) = cli.threads {
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    if let Command::Replay(r) = &cli.command {
        return replay(r, cli.out_dir.as_deref()).map(|c| (c, Vec::new()));
    }
    let mut cfg = load_config(cli)?;
    if let Command::Verify(v) = &cli.command {
        if let Some(r) = v.replicas {
            cfg.replicas = r;
        }
    }
    let started = now();
    let mut out = Outputs::new(PathBuf::from(&cfg.output.dir))?;
    let outcome = match &cli.command {
        Command::Synth(a) => synth(&cfg, a, &mut out)?,
        Command::Scatter(a) => scatter(&cfg, a, &mut out)?,
        Command::Limits(a) => limits(&cfg, a, &mut out)?,
        Command::Verify(a) => verify(&cfg, a, &mut out)?,
        Command::Check => check(&cfg, &mut out)?,
        Command::Replay(_) => unreachable!("handled above"),
    };
    let mut outputs = BTreeMap::new();
    for f in &out.files {
        outputs.insert(f.clone(), sha256_file(&out.dir.join(f))?);
    }
    let stage_seeds = ["synth", "limits", "distances", "bootstrap", "rate"]
        .iter()
        .map(|s| (s.to_string(), stage_seed(cfg.seed, s)))
        .collect();
    let manifest = RunManifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        command: serde_json::to_value(&cli.command)?,
        config: cfg.clone(),
        master_seed: cfg.seed,
        stage_seeds,
        started_unix: started,
        finished_unix: now(),
        outputs,
    };
    std::fs::write(out.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok((outcome.checks, cfg.checks.clone()))
}

fn replay(r: &ReplayArgs, out_dir: Option<&Path>) -> Result<Vec<CheckResult>> {
    let text = std::fs::read_to_string(&r.manifest)?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::MalformedFile(format!("manifest: {e}")))?;
    let command: Command = serde_json::from_value(m.command.clone())?;
    if matches!(command, Command::Replay(_)) {
        return Err(Error::invalid("a replay manifest cannot be replayed"));
    }
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => r.manifest.with_file_name("replay"),
    };
    std::fs::create_dir_all(&dir)?;
    let mut cfg = m.config.clone();
    cfg.output.dir = dir.to_string_lossy().into_owned();
    let cfg_path = dir.join("replay-config.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg)?)?;
    let cli = Cli {
        config: Some(cfg_path),
        seed: None,
        threads: None,
        out_dir: None,
        command,
    };
    run(&cli)?;
    let mut mismatched = Vec::new();
    for (name, digest) in &m.outputs {
        let now = sha256_file(&dir.join(name)).unwrap_or_default();
        if &now != digest {
            mismatched.push(name.clone());
        }
    }
    Ok(vec![CheckResult {
        name: "digests_match".into(),
        passed: mismatched.is_empty(),
        detail: if mismatched.is_empty() {
            format!("{} output digests reproduced", m.outputs.len())
        } else {
            format!("differing outputs: {}", mismatched.join(", "))
        },
    }])
}

fn synth(cfg: &ExperimentConfig, a: &SynthArgs, out: &mut Outputs) -> Result<Outcome> {
    if a.paths == 0 {
        return Err(Error::invalid("--paths must be positive"));
    }
    let sd = cfg.density()?;
    let s = Synthesizer::new(&sd, cfg.grid)?;
    let mut files = Vec::new();
    for k in 0..a.paths {
        let p = s.synthesize_replica(cfg.seed, k as u64)?;
        let name = match a.format {
            PathFormat::Bin => format!("path_{k}.bin"),
            PathFormat::Csv => format!("path_{k}.csv"),
        };
        let file = out.path(&name);
        match a.format {
            PathFormat::Bin => write_path_binary(&p, &file)?,
            PathFormat::Csv => write_path_csv(&p, &file)?,
        }
        files.push(json!({"file": name, "seed": p.seed}));
    }
    out.json(
        "synth_report.json",
        &json!({
            "density": sd.label,
            "grid": cfg.grid,
            "total_mass": s.total_mass(),
            "paths": files,
        }),
    )?;
    Ok(Outcome { checks: Vec::new() })
}

fn read_any(path: &Path) -> Result<SampledPath> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_path_csv(path),
        _ => read_path_binary(path),
    }
}

fn scatter(cfg: &ExperimentConfig, a: &ScatterArgs, out: &mut Outputs) -> Result<Outcome> {
    let w = cfg.wavelet()?;
    let path = match &a.input {
        Some(p) => read_any(p)?,
        None => Synthesizer::new(&cfg.density()?, cfg.grid)?.synthesize_replica(cfg.seed, 0)?,
    };
    let grid = path.grid();
    let sc = Scatterer::new(&w, grid, cfg.scatter)?;
    sc.check_scales(&a.scales)?;
    let t = sc.t_transform(&path, &a.scales)?;
    let u = sc.stqn_cascade(&path, &a.scales)?;
    let ext = if a.format == PathFormat::Csv { "csv" } else { "bin" };
    for (name, p) in [("t", &t), ("u", &u)] {
        let f = out.path(&format!("{name}.{ext}"));
        match a.format {
            PathFormat::Bin => write_path_binary(p, &f)?,
            PathFormat::Csv => write_path_csv(p, &f)?,
        }
    }
    let max_rel = t
        .values
        .iter()
        .zip(&u.values)
        .map(|(t, u)| (u - t * t).abs() / u.abs().max(1e-300))
        .fold(0.0, f64::max);
    out.json(
        "scatter_report.json",
        &json!({
            "wavelet": w.label,
            "scales": a.scales,
            "grid": grid,
            "warnings": Scatterer::scale_warnings(&a.scales),
            "mean_u": u.values.iter().sum::<f64>() / u.len() as f64,
            "max_rel_u_minus_t_squared": max_rel,
        }),
    )?;
    Ok(Outcome {
        checks: vec![CheckResult {
            name: "u_equals_t_squared".into(),
            passed: max_rel <= 1e-10,
            detail: format!("max relative deviation {max_rel:e}"),
        }],
    })
}

fn limits(cfg: &ExperimentConfig, a: &LimitsArgs, out: &mut Outputs) -> Result<Outcome> {
    let sd = SpectralDensity::from_id(a.density.as_deref().unwrap_or(&cfg.density))?;
    let w = WaveletSpec::from_id(a.wavelet.as_deref().unwrap_or(&cfg.wavelet))?;
    let rep = check_assumptions(&sd, &w);
    if let Some(f) = rep.failures().first() {
        return Err(Error::AssumptionViolated(format!("{}: {}", f.name, f.detail)));
    }
    if !(a.tol > 0.0 && a.tol < 1.0) {
        return Err(Error::invalid("--tol must lie in (0, 1)"));
    }
    let settings = LimitSettings {
        rel_tol: a.tol,
        seed: stage_seed(cfg.seed, "limits"),
        ..LimitSettings::default()
    };
    let lc = kappa_and_limits(&sd, &w, &a.scales_prefix, a.depth, &settings)?;
    let lag_tol = 1e-12;
    let cov = a
        .lags
        .iter()
        .map(|&d| {
            Ok(json!({
                "delta": d,
                "cov_g": limit_cov_g(&lc, &w, d)?,
                "cov_g_squared": limit_cov_gsq(&lc, &w, d)?,
                "rel_tol": lag_tol,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let bc = bound_constant(a.depth, &sd, &w, a.scales_prefix[0])?;
    let mut checks = vec![CheckResult {
        name: "constants_nonnegative".into(),
        passed: lc.c.iter().all(|c| c.value >= 0.0) && lc.kappa >= 0.0,
        detail: format!("kappa = {:.6e} +- {:.1e}", lc.kappa, lc.kappa_err),
    }];
    let mut report = json!({
        "density": sd.label,
        "wavelet": w.label,
        "depth": a.depth,
        "scales_prefix": a.scales_prefix,
        "c_constants": lc.c,
        "kappa": lc.kappa,
        "kappa_err": lc.kappa_err,
        "psi_hat_l2": lc.psi_hat_l2,
        "limit_variance": lc.limit_variance,
        "limit_variance_err": lc.limit_variance_err,
        "limit_cov": cov,
        "bound_constant": bc,
        "status": lc.status,
        "provenance": lc.provenance,
    });
    if a.depth == 2 {
        let q = M2Quadrature::new(&sd, &w, a.scales_prefix[0], Tolerance::new(0.0, 1e-7))?;
        let tv = a.tv_scales.iter().map(|&j| q.tv_bound(j)).collect::<Result<Vec<_>>>()?;
        checks.push(CheckResult {
            name: "tv_bound_nonnegative".into(),
            passed: tv.iter().all(|b| b.value >= 0.0),
            detail: format!("{} scales", tv.len()),
        });
        report["tv_bound"] = serde_json::to_value(tv)?;
    }
    out.json("limits_report.json", &report)?;
    Ok(Outcome { checks })
}

fn verify(cfg: &ExperimentConfig, a: &VerifyArgs, out: &mut Outputs) -> Result<Outcome> {
    if a.mode == VerifyMode::Rate {
        let r = run_rate(cfg)?;
        out.json("rate_report.json", &r)?;
        return Ok(Outcome { checks: r.checks });
    }
    let exp = Experiment::new(cfg)?;
    if a.mode == VerifyMode::FiniteCov && cfg.depth() != 2 {
        return Err(Error::Unsupported(format!(
            "finite covariance check needs depth 2 (got {})",
            cfg.depth()
        )));
    }
    let samples = exp.sample()?;
    let limits = exp.limit_constants()?;
    if cfg.output.write_samples {
        let f = out.path("samples.csv");
        write_samples_csv(&samples, &f)?;
    }
    let checks = match a.mode {
        VerifyMode::Dist => {
            let r = distribution_report(&exp, &samples, &limits)?;
            out.json("dist_report.json", &r)?;
            r.checks
        }
        VerifyMode::Cov => {
            let r = covariance_report(&exp, &samples, &limits)?;
            out.json("cov_report.json", &r)?;
            r.checks
        }
        VerifyMode::FiniteCov => {
            let r = finite_cov_report(&exp, &samples, &limits)?;
            out.json("finite_cov_report.json", &r)?;
            r.checks
        }
        VerifyMode::Rate => unreachable!("handled above"),
    };
    Ok(Outcome { checks })
}

fn check(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome> {
    let rep = check_assumptions(&cfg.density()?, &cfg.wavelet()?);
    out.json("check_report.json", &rep)?;
    Ok(Outcome {
        checks: rep
            .checks
            .iter()
            .map(|c| CheckResult {
                name: c.name.clone(),
                passed: c.passed,
                detail: c.detail.clone(),
            })
            .collect(),
    })
}
