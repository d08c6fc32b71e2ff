//! Command-line front end: strict JSON configs in, JSON + CSV + manifest out.
//!
//! Exit codes: 0 pass, 1 usage or I/O error, 2 verification failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::algebra::{condition_report, GroupPoint, ModelFile, ModelSpec, MATRIX_TOL};
use crate::error::{Error, Result};
use crate::fields::{registry, TestFunction};
use crate::inequalities::{
    harnack_diagnostics, poincare_report, reverse_poincare_scales, write_csv_tables,
    ControlBudget, InequalityReport,
};
use crate::malliavin::{weight_moment_diagnostic, Direction};
use crate::montecarlo::{
    gradient_bound_scaling, gradient_suite, q_inverse_scaling, run_paths, Budget, ScalingTable, DEFAULT_FD_EPSILON,
};
use crate::paths::{compute_functionals, sample_brownian, terminal_point, DEFAULT_STEPS};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

/// Environment variable overriding the config seed.
pub const SEED_ENV: &str = "SUBELLIPTIC_SEED";

/// Path count used by `--smoke`.
pub const SMOKE_PATHS: usize = 100;

/// Reverse Poincaré constant divisor for the sharpness control.
pub const SHARPNESS_SCALE: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(name = "subelliptic", version, about = "Monte Carlo checks for step-two subelliptic diffusions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run config; built-in Heisenberg defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the environment and the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Tiny path budget; never fails on statistics.
    #[arg(long, global = true)]
    pub smoke: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Bracket, A1 and A2 condition checks.
    Check,
    /// Bismut versus finite differences and Driver versus direct gradients.
    VerifyGradient,
    /// Reverse Poincaré, Poincaré and Harnack-type reports.
    Inequalities,
    /// Scaling diagnostics (never gates).
    Diagnostics,
    /// Terminal-law moments of the diffusion and of the path functionals.
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::VerifyGradient => "verify-gradient",
            Command::Inequalities => "inequalities",
            Command::Diagnostics => "diagnostics",
            Command::Simulate => "simulate",
        }
    }
}

/// Assumptions `check` must confirm besides `λ > 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Requirements {
    pub a1: bool,
    pub a2: bool,
}

/// Deliberate corruptions for negative controls.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestHooks {
    pub flip_weight_sign: bool,
}

/// Inputs of the Harnack-type diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnackConfig {
    pub z_prime: GroupPoint,
    pub f: TestFunction,
    pub p: f64,
}

/// One run config. Absent optional lists fall back to the default suites;
/// a present but empty `f_list` is an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default = "default_model")]
    pub model: ModelFile,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default)]
    pub z0: Option<GroupPoint>,
    #[serde(default)]
    pub f_list: Option<Vec<TestFunction>>,
    #[serde(default)]
    pub directions: Option<Vec<Direction>>,
    #[serde(default = "default_t_list")]
    pub t_list: Vec<f64>,
    #[serde(default = "default_scaling_t_list")]
    pub scaling_t_list: Vec<f64>,
    #[serde(default = "default_fd_epsilon")]
    pub fd_epsilon: f64,
    #[serde(default)]
    pub require: Requirements,
    #[serde(default)]
    pub harnack: Option<HarnackConfig>,
    #[serde(default)]
    pub test_hooks: TestHooks,
}

fn default_model_id() -> String {
    "heisenberg".into()
}
fn default_model() -> ModelFile {
    ModelSpec::heisenberg().to_file()
}
fn default_seed() -> u64 {
    12345
}
fn default_paths() -> usize {
    100_000
}
fn default_steps() -> usize {
    DEFAULT_STEPS
}
fn default_t() -> f64 {
    1.0
}
fn default_t_list() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn default_scaling_t_list() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0]
}
fn default_fd_epsilon() -> f64 {
    DEFAULT_FD_EPSILON
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn model(&self) -> Result<ModelSpec> {
        ModelSpec::from_file(&self.model)
    }

    fn z0(&self, model: &ModelSpec) -> GroupPoint {
        self.z0.clone().unwrap_or_else(|| GroupPoint::origin(model))
    }

    fn functions(&self, model: &ModelSpec, with_gauss: bool) -> Result<Vec<TestFunction>> {
        match &self.f_list {
            Some(list) if list.is_empty() => Err(Error::invalid("f_list", "no test functions given")),
            Some(list) => Ok(list.clone()),
            None => {
                let mut out = registry::trig_suite(model.m(), model.d());
                if with_gauss {
                    out.extend(registry::gauss_suite());
                }
                Ok(out)
            }
        }
    }

    fn harnack(&self, model: &ModelSpec) -> HarnackConfig {
        self.harnack.clone().unwrap_or_else(|| {
            let (m, d) = (model.m(), model.d());
            let mut x = vec![0.0; m];
            x[0] = 0.5;
            let mut a = vec![0.0; m];
            a[0] = 1.0;
            HarnackConfig {
                z_prime: GroupPoint::new(x, vec![0.0; d]),
                f: TestFunction::Trig {
                    a,
                    b: vec![0.0; d],
                    c: 0.0,
                    amp: 0.5,
                    offset: 1.0,
                },
                p: 2.0,
            }
        })
    }
}

/// Overrides from the command line and the environment.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub env_seed: Option<u64>,
    pub workers: Option<usize>,
    pub smoke: bool,
}

impl RunOptions {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed.or(self.env_seed) {
            cfg.seed = s;
        }
        if self.smoke {
            cfg.n_paths = SMOKE_PATHS;
        }
    }

    fn budget(&self, cfg: &RunConfig) -> Budget {
        let b = Budget::new(cfg.n_paths, cfg.seed).with_steps(cfg.n_steps);
        match self.workers {
            Some(w) => b.with_workers(w),
            None => b,
        }
    }
}

/// Result of one command: its exit code and the two output documents.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit: i32,
    pub json: Value,
    pub csv: Vec<u8>,
}

/// Provenance written next to every command output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub smoke: bool,
    pub timestamp_unix: u64,
    pub files: Vec<String>,
}

struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Result<Self> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(header)?;
        Ok(Self { w })
    }

    fn row(&mut self, fields: Vec<String>) -> Result<()> {
        self.w.write_record(fields)?;
        Ok(())
    }

    fn finish(self) -> Result<Vec<u8>> {
        self.w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Runs `command` on an already loaded config.
pub fn run_command(command: Command, mut cfg: RunConfig, opts: &RunOptions) -> Result<Outcome> {
    opts.apply(&mut cfg);
    match command {
        Command::Check => cmd_check(&cfg),
        Command::VerifyGradient => cmd_verify_gradient(&cfg, opts),
        Command::Inequalities => cmd_inequalities(&cfg, opts),
        Command::Diagnostics => cmd_diagnostics(&cfg, opts),
        Command::Simulate => cmd_simulate(&cfg, opts),
    }
}

fn cmd_check(cfg: &RunConfig) -> Result<Outcome> {
    let model = cfg.model()?;
    let report = condition_report(&model)?;
    let a1_ok = !cfg.require.a1 || report.a1_satisfied == Some(true);
    let a2_ok = !cfg.require.a2 || report.a2_pass;
    let pass = report.hormander && a1_ok && a2_ok;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut t = Table::new(&["quantity", "value", "pass", "seed", "n_paths", "n_steps", "n_rejected", "slack"])?;
    let rows = [
        ("lambda", report.lambda.to_string(), report.hormander),
        ("theta", opt(report.theta_estimate), a1_ok),
        ("a2", report.a2_pass.to_string(), a2_ok),
        ("c1", opt(report.c1), report.c1.is_some()),
        ("c2", opt(report.c2), report.c2.is_some()),
    ];
    for (name, value, ok) in rows {
        t.row(vec![
            name.into(),
            value,
            ok.to_string(),
            cfg.seed.to_string(),
            "0".into(),
            "0".into(),
            "0".into(),
            MATRIX_TOL.to_string(),
        ])?;
    }
    Ok(Outcome {
        exit: if pass { EXIT_PASS } else { EXIT_FAIL },
        json: json!({ "model_id": cfg.model_id, "require": cfg.require, "pass": pass, "report": report }),
        csv: t.finish()?,
    })
}

fn cmd_verify_gradient(cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome> {
    let model = cfg.model()?;
    let z0 = cfg.z0(&model);
    let functions = cfg.functions(&model, false)?;
    let dirs = cfg
        .directions
        .clone()
        .unwrap_or_else(|| Direction::default_suite(model.m(), model.d()));
    if dirs.is_empty() {
        return Err(Error::invalid("directions", "no directions given"));
    }
    let budget = opts.budget(cfg);
    let rows = gradient_suite(&model, &z0, cfg.t, &functions, &dirs, &budget, cfg.fd_epsilon, cfg.test_hooks.flip_weight_sign)?;
    let n_failed = rows.iter().filter(|r| !(r.bismut_pass && r.driver_pass)).count();
    let mut t = Table::new(&[
        "function", "direction", "bismut", "bismut_se", "fd", "fd_se", "bismut_pass", "driver", "driver_se", "direct",
        "direct_se", "driver_pass", "bismut_tolerance", "driver_tolerance", "seed", "n_paths", "n_steps", "n_rejected",
        "slack",
    ])?;
    for r in &rows {
        t.row(vec![
            r.function.clone(),
            r.direction.clone(),
            r.bismut.value.to_string(),
            r.bismut.stderr.to_string(),
            r.fd.value.to_string(),
            r.fd.stderr.to_string(),
            r.bismut_pass.to_string(),
            r.driver.value.to_string(),
            r.driver.stderr.to_string(),
            r.direct.value.to_string(),
            r.direct.stderr.to_string(),
            r.driver_pass.to_string(),
            r.bismut_tolerance.to_string(),
            r.driver_tolerance.to_string(),
            budget.seed.to_string(),
            r.bismut.n.to_string(),
            budget.n_steps.to_string(),
            r.bismut.n_rejected.to_string(),
            r.bismut_tolerance.to_string(),
        ])?;
    }
    let exit = if opts.smoke || n_failed == 0 { EXIT_PASS } else { EXIT_FAIL };
    Ok(Outcome {
        exit,
        json: json!({
            "model_id": cfg.model_id,
            "smoke": opts.smoke,
            "flip_weight_sign": cfg.test_hooks.flip_weight_sign,
            "n_rows": rows.len(),
            "n_failed": n_failed,
            "rows": rows,
        }),
        csv: t.finish()?,
    })
}

fn cmd_inequalities(cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome> {
    let model = cfg.model()?;
    let z = cfg.z0(&model);
    let functions = cfg.functions(&model, true)?;
    let budget = opts.budget(cfg);
    let mut reports =
        reverse_poincare_scales(&model, &cfg.model_id, &z, &cfg.t_list, &functions, &budget, &[1.0, SHARPNESS_SCALE])?;
    let sharp = reports.pop().expect("two scales");
    let rp = reports.pop().expect("two scales");
    let mut pfuncs = functions.clone();
    if cfg.f_list.is_none() {
        pfuncs.push(TestFunction::X { i: 0 });
    }
    let poincare = poincare_report(&model, &cfg.model_id, &z, &cfg.t_list, &pfuncs, &budget)?;
    let h = cfg.harnack(&model);
    let controls = ControlBudget {
        seed: cfg.seed,
        ..ControlBudget::default()
    };
    let harnack = harnack_diagnostics(&model, &z, &h.z_prime, cfg.t, &h.f, h.p, &budget, &controls)?;
    let mut csv = Vec::new();
    let tables: [(&str, &str, &[_]); 4] = [
        (&rp.inequality, &rp.model_id, &rp.rows),
        (&sharp.inequality, &sharp.model_id, &sharp.rows),
        (&poincare.report.inequality, &poincare.report.model_id, &poincare.report.rows),
        ("harnack", &cfg.model_id, &harnack.rows),
    ];
    write_csv_tables(&tables, &mut csv)?;
    let exit = if opts.smoke || rp.all_pass { EXIT_PASS } else { EXIT_FAIL };
    let summary = |r: &InequalityReport| json!({ "all_pass": r.all_pass, "n_failed": r.n_failed(), "worst_ratio": r.worst_ratio });
    Ok(Outcome {
        exit,
        json: json!({
            "model_id": cfg.model_id,
            "smoke": opts.smoke,
            "gate": summary(&rp),
            "sharpness_control": summary(&sharp),
            "reverse_poincare": rp,
            "reverse_poincare_sharpness": sharp,
            "poincare": poincare,
            "harnack": harnack,
        }),
        csv,
    })
}

fn scaling_rows(t: &mut Table, table: &ScalingTable, budget: &Budget) -> Result<()> {
    for r in &table.rows {
        t.row(vec![
            table.quantity.clone(),
            r.t.to_string(),
            r.value.value.to_string(),
            r.value.stderr.to_string(),
            table.slope.to_string(),
            table.expected_slope.to_string(),
            budget.seed.to_string(),
            r.value.n.to_string(),
            budget.n_steps.to_string(),
            r.value.n_rejected.to_string(),
            "0".into(),
        ])?;
    }
    Ok(())
}

const SCALING_HEADER: [&str; 11] = [
    "quantity", "t", "value", "se", "slope", "expected_slope", "seed", "n_paths", "n_steps", "n_rejected", "slack",
];

fn cmd_diagnostics(cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome> {
    let model = cfg.model()?;
    let z = cfg.z0(&model);
    let budget = opts.budget(cfg);
    let (m, d) = (model.m(), model.d());
    let q = q_inverse_scaling(&model, &cfg.scaling_t_list, &budget)?;
    let moments = weight_moment_diagnostic(&model, &z, &Direction::vertical(m, d, 0), &cfg.scaling_t_list, 1, &budget)?;
    let f = match &cfg.f_list {
        Some(list) => list.first().cloned().ok_or_else(|| Error::invalid("f_list", "no test functions given"))?,
        None => {
            let mut a = vec![0.0; m];
            a[0] = 1.0;
            TestFunction::trig(&a, &vec![1.0; d], 0.0)
        }
    };
    let bound = gradient_bound_scaling(&model, &z, &f, &cfg.scaling_t_list, &budget)?;
    let mut t = Table::new(&SCALING_HEADER)?;
    scaling_rows(&mut t, &q, &budget)?;
    for r in &moments.rows {
        for (name, e, slope) in [
            ("E|D*h|", &r.moment_h, moments.slope_h),
            ("E|D*h~|", &r.moment_h_tilde, moments.slope_h_tilde),
        ] {
            t.row(vec![
                name.into(),
                r.t.to_string(),
                e.value.to_string(),
                e.stderr.to_string(),
                slope.to_string(),
                moments.envelope_slope.to_string(),
                budget.seed.to_string(),
                e.n.to_string(),
                budget.n_steps.to_string(),
                e.n_rejected.to_string(),
                "0".into(),
            ])?;
        }
    }
    scaling_rows(&mut t, &bound.sqrt_gamma, &budget)?;
    for r in &bound.ratios {
        t.row(vec![
            "gradient_ratio".into(),
            r.t.to_string(),
            r.value.value.to_string(),
            r.value.stderr.to_string(),
            "0".into(),
            "0".into(),
            budget.seed.to_string(),
            r.value.n.to_string(),
            budget.n_steps.to_string(),
            r.value.n_rejected.to_string(),
            (3.0 * r.value.stderr).to_string(),
        ])?;
    }
    Ok(Outcome {
        exit: EXIT_PASS,
        json: json!({
            "model_id": cfg.model_id,
            "smoke": opts.smoke,
            "q_inverse": q,
            "q_inverse_slope_within_0.3": q.slope_within(0.3),
            "weight_moments": moments,
            "gradient_bound": bound,
            "function": f.name(),
        }),
        csv: t.finish()?,
    })
}

fn cmd_simulate(cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome> {
    let model = cfg.model()?;
    let z0 = cfg.z0(&model);
    z0.check(&model)?;
    let budget = opts.budget(cfg);
    let grid = budget.grid(cfg.t)?;
    let (m, d) = (model.m(), model.d());
    let mut names: Vec<String> = Vec::new();
    names.extend((0..m).map(|i| format!("X{}", i + 1)));
    names.extend((0..d).map(|l| format!("Y{}", l + 1)));
    names.extend((0..d).map(|l| format!("Y{}^2", l + 1)));
    names.extend((0..d).map(|l| format!("q{0}{0}", l + 1)));
    names.extend((0..d).map(|l| format!("S{}", l + 1)));
    let s = run_paths(&budget, grid, names.len(), |idx| {
        let b = sample_brownian(grid, m, budget.seed, idx);
        let zt = terminal_point(&model, &z0, &b);
        let f = compute_functionals(&model, &b);
        let mut row = zt.x.clone();
        row.extend(&zt.y);
        row.extend(zt.y.iter().map(|y| y * y));
        row.extend((0..d).map(|l| f.q[(l, l)]));
        row.extend(f.s.iter().copied());
        Some(row)
    })?;
    let mut t = Table::new(&["quantity", "t", "mean", "se", "seed", "n_paths", "n_steps", "n_rejected", "slack"])?;
    let mut stats = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let e = s.estimate(c);
        t.row(vec![
            name.clone(),
            cfg.t.to_string(),
            e.value.to_string(),
            e.stderr.to_string(),
            budget.seed.to_string(),
            e.n.to_string(),
            budget.n_steps.to_string(),
            e.n_rejected.to_string(),
            (3.0 * e.stderr).to_string(),
        ])?;
        stats.push(json!({ "quantity": name, "estimate": e }));
    }
    Ok(Outcome {
        exit: EXIT_PASS,
        json: json!({ "model_id": cfg.model_id, "smoke": opts.smoke, "z0": z0, "t": cfg.t, "moments": stats }),
        csv: t.finish()?,
    })
}

/// Writes `<out>/<command>.json`, `<out>/<command>.csv` and `<out>/manifest.json`.
pub fn write_outputs(out: &Path, command: Command, cfg_hash: &str, cfg: &RunConfig, smoke: bool, o: &Outcome) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let name = command.name();
    let json_name = format!("{name}.json");
    let csv_name = format!("{name}.csv");
    let mut text = serde_json::to_string_pretty(&o.json)?;
    text.push('\n');
    std::fs::write(out.join(&json_name), text)?;
    std::fs::write(out.join(&csv_name), &o.csv)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        config_hash: cfg_hash.into(),
        seed: cfg.seed,
        n_paths: if smoke { SMOKE_PATHS } else { cfg.n_paths },
        n_steps: cfg.n_steps,
        smoke,
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        files: vec![json_name, csv_name],
    };
    let mut f = std::fs::File::create(out.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::InvalidParameter { .. }
        | Error::DimensionMismatch(_)
        | Error::SingularSigma { .. } => EXIT_USAGE,
        _ => EXIT_FAIL,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => match v.trim().parse::<u64>() {
            Ok(s) => Some(s),
            Err(_) => {
                eprintln!("error: {SEED_ENV} must be an unsigned integer, got {v:?}");
                return EXIT_USAGE;
            }
        },
        Err(_) => None,
    };
    let opts = RunOptions {
        seed: cli.seed,
        env_seed,
        workers: cli.workers,
        smoke: cli.smoke,
    };
    if opts.workers == Some(0) {
        eprintln!("error: --workers must be positive");
        return EXIT_USAGE;
    }
    let run = || -> Result<i32> {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        opts.apply(&mut cfg);
        let hash = cfg.hash();
        let o = run_command(cli.command, cfg.clone(), &opts)?;
        write_outputs(&cli.out, cli.command, &hash, &cfg, opts.smoke, &o)?;
        println!("{}", serde_json::to_string_pretty(&o.json)?);
        Ok(o.exit)
    };
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
