//! The `robust-est` command line.
//!
//! Exit codes: 0 on success, 2 on invalid input (bad flags, unreadable or
//! invalid scenario files), 1 on internal failures. Every command prints a
//! human-readable report and writes a structured result into `--out`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;

use crate::attacks::{AttackKind, AttackPlan};
use crate::certifier::{certify, Certificate, CertifyOptions};
use crate::harness::{breakdown_sweep, run_trial, write_sweep_csv, BreakdownPoint, SweepOptions};
use crate::model::{derive_seed, rng_from_seed, Scenario};
use crate::selftest;
use crate::solver::{estimate, Method, MethodChoice, SolverOptions};
use crate::{Error, Result};

pub const SEED_ENV: &str = "ROBUST_EST_SEED";

#[derive(Debug, Parser)]
#[command(name = "robust-est", version, about = "Robust state estimation under sparse sensor attacks")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,

    /// Directory for structured outputs.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Random seed; falls back to $ROBUST_EST_SEED, then to the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for mesh evaluation and sweep trials.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Margin tolerance for `certify`; relative stall tolerance for the solver elsewhere.
    #[arg(long, global = true)]
    pub tol: Option<f64>,

    /// Covering radius of the sphere mesh.
    #[arg(long, global = true, value_name = "E")]
    pub mesh_eps: Option<f64>,

    /// Random directions searched in addition to the mesh.
    #[arg(long, global = true, value_name = "R")]
    pub random_dirs: Option<usize>,

    /// Solver route: auto, closed, weiszfeld or subgrad.
    #[arg(long, global = true)]
    pub method: Option<String>,

    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide robustness of the scenario's estimator.
    Certify { scenario: PathBuf },
    /// Compute the estimate for given (or simulated) measurements.
    Estimate {
        scenario: PathBuf,
        /// Stacked measurements, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        y: Option<Vec<f64>>,
        /// True state used to simulate measurements when --y is absent (default 0).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
    },
    /// Bias of the estimate under an attack, one row per magnitude.
    Attack {
        scenario: PathBuf,
        #[arg(long, value_parser = ["theorem2", "random", "targeted"])]
        kind: String,
        #[arg(long, value_delimiter = ',', required = true)]
        t: Vec<f64>,
        /// Attacked sensors (zero-based).
        #[arg(long, value_delimiter = ',')]
        support: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        u0: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
    },
    /// Certificate plus witness-attack bias curve for each attack budget.
    Sweep {
        scenario: PathBuf,
        /// Budgets to sweep (default 1..m-1).
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000,100000,1000000")]
        t: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
    },
    /// Run the bundled property checks.
    Selftest,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match config.jobs {
        Some(jobs) => match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
            Ok(pool) => pool.install(|| execute(&config)),
            Err(e) => Err(Error::Internal(format!("thread pool: {e}"))),
        },
        None => execute(&config),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                2
            } else {
                1
            }
        }
    }
}

fn seed_for(config: &RunConfig, scenario: Option<&Scenario>) -> Result<u64> {
    if let Some(seed) = config.seed {
        return Ok(seed);
    }
    if let Ok(raw) = std::env::var(SEED_ENV) {
        return raw
            .trim()
            .parse()
            .map_err(|_| Error::validation(SEED_ENV, format!("expected an unsigned integer, got {raw:?}")));
    }
    Ok(scenario.map(|s| s.seed()).unwrap_or(0))
}

fn solver_options(config: &RunConfig) -> Result<SolverOptions> {
    let mut opts = SolverOptions::default();
    if let Some(m) = &config.method {
        opts.method = m.parse::<MethodChoice>()?;
    }
    if let Some(n) = config.max_iters {
        opts.max_iters = n;
    }
    if let Some(tol) = config.tol {
        opts.tol = positive(tol, "tol")?;
    }
    Ok(opts)
}

fn certify_options(config: &RunConfig, seed: u64) -> Result<CertifyOptions> {
    let mut opts = CertifyOptions {
        seed,
        ..Default::default()
    };
    if let Some(eps) = config.mesh_eps {
        opts.mesh_eps = Some(positive(eps, "mesh-eps")?);
    }
    if let Some(r) = config.random_dirs {
        opts.random_dirs = r;
    }
    if let Some(tol) = config.tol {
        opts.tol = positive(tol, "tol")?;
    }
    Ok(opts)
}

fn positive(v: f64, field: &str) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::validation(field, format!("must be positive, got {v}")))
    }
}

fn state_arg(scenario: &Scenario, x: &Option<Vec<f64>>) -> Result<DVector<f64>> {
    let n = scenario.model().n();
    match x {
        None => Ok(DVector::zeros(n)),
        Some(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(Error::validation("x", format!("expected {n} entries, found {}", v.len()))),
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(format!("serialize {name}: {e}")))?;
    text.push('\n');
    create_and_write(&path, text.as_bytes())?;
    Ok(path)
}

fn create_and_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::Internal(format!("create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Error::Internal(format!("write {}: {e}", path.display())))
}

/// Rounds to 12 significant digits for display; structured outputs keep full precision.
fn tidy(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| format!("{}", tidy(x))).collect();
    format!("[{}]", parts.join(", "))
}

fn execute(config: &RunConfig) -> Result<i32> {
    match &config.command {
        Command::Certify { scenario } => cmd_certify(config, scenario),
        Command::Estimate { scenario, y, x } => cmd_estimate(config, scenario, y, x),
        Command::Attack {
            scenario,
            kind,
            t,
            support,
            u0,
            x,
        } => cmd_attack(config, scenario, kind, t, support, u0, x),
        Command::Sweep {
            scenario,
            p,
            t,
            trials,
            x,
        } => cmd_sweep(config, scenario, p, t, *trials, x),
        Command::Selftest => cmd_selftest(config),
    }
}

fn print_certificate(path: &Path, scenario: &Scenario, cert: &Certificate) {
    println!(
        "scenario: {} (n = {}, m = {}, p = {})",
        path.display(),
        scenario.model().n(),
        scenario.model().m(),
        scenario.p()
    );
    println!("decision: {}", cert.decision);
    match cert.margin_min {
        Some(m) => println!("margin: {}", tidy(m)),
        None => println!("margin: unbounded gain on sensor {}", cert.unbounded_sensor.unwrap_or_default()),
    }
    println!("witness_u: {}", fmt_vec(&cert.witness_u));
    println!("witness_I: {:?}", cert.witness_i);
    println!("rigorous: {}", cert.rigorous);
    match cert.mesh_resolution {
        Some(eps) => println!("mesh: {} points, resolution {eps}", cert.mesh_size),
        None => println!("mesh: none (random directions and refinement only)"),
    }
    if let Some(lb) = cert.margin_lower_bound {
        println!("margin lower bound: {lb}");
    }
}

fn cmd_certify(config: &RunConfig, path: &Path) -> Result<i32> {
    let scenario = Scenario::load(path)?;
    let seed = seed_for(config, Some(&scenario))?;
    let cert = certify(&scenario, &certify_options(config, seed)?)?;
    print_certificate(path, &scenario, &cert);
    let written = write_json(&config.out, "certificate.json", &cert)?;
    println!("wrote {}", written.display());
    Ok(0)
}

#[derive(Debug, Serialize)]
struct EstimateDocument {
    y: Vec<f64>,
    x_hat: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    method: Method,
}

fn cmd_estimate(config: &RunConfig, path: &Path, y: &Option<Vec<f64>>, x: &Option<Vec<f64>>) -> Result<i32> {
    let scenario = Scenario::load(path)?;
    let model = scenario.model();
    let solver = solver_options(config)?;
    let y = match y {
        Some(v) if v.len() == model.total_rows() => DVector::from_column_slice(v),
        Some(v) => {
            return Err(Error::validation(
                "y",
                format!("expected {} entries, found {}", model.total_rows(), v.len()),
            ))
        }
        None => {
            let x = state_arg(&scenario, x)?;
            let seed = seed_for(config, Some(&scenario))?;
            let noise = scenario.noise().sample(model.total_rows(), &mut rng_from_seed(seed));
            model.measure(&x, &noise)?
        }
    };
    let result = estimate(&scenario, &y, &solver)?;
    println!("x_hat = {}", fmt_vec(result.x_hat.as_slice()));
    println!("objective = {}", tidy(result.objective));
    println!("method = {}, iterations = {}, converged = {}", result.method, result.iterations, result.converged);
    let doc = EstimateDocument {
        y: y.iter().copied().collect(),
        x_hat: result.x_hat.iter().copied().collect(),
        objective: result.objective,
        iterations: result.iterations,
        converged: result.converged,
        method: result.method,
    };
    write_json(&config.out, "estimate.json", &doc)?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct AttackRow {
    t: f64,
    bias_norm: f64,
    objective: f64,
    converged: bool,
}

#[allow(clippy::too_many_arguments)]
fn cmd_attack(
    config: &RunConfig,
    path: &Path,
    kind: &str,
    ts: &[f64],
    support: &Option<Vec<usize>>,
    u0: &Option<Vec<f64>>,
    x: &Option<Vec<f64>>,
) -> Result<i32> {
    let scenario = Scenario::load(path)?;
    let kind: AttackKind = kind.parse()?;
    let seed = seed_for(config, Some(&scenario))?;
    let solver = solver_options(config)?;
    let x = state_arg(&scenario, x)?;
    let n = scenario.model().n();
    let default_support: Vec<usize> = (0..scenario.p()).collect();
    let template = match kind {
        AttackKind::Theorem2 if u0.is_none() || support.is_none() => {
            let cert = certify(&scenario, &certify_options(config, seed)?)?;
            eprintln!("witness from certificate: decision {}, u0 = {}, I0 = {:?}", cert.decision, fmt_vec(&cert.witness_u), cert.witness_i);
            AttackPlan::theorem2(
                u0.clone().unwrap_or(cert.witness_u),
                support.clone().unwrap_or(cert.witness_i),
                0.0,
            )
        }
        AttackKind::Theorem2 => AttackPlan::theorem2(u0.clone().unwrap_or_default(), support.clone().unwrap_or_default(), 0.0),
        AttackKind::RandomGross => AttackPlan::random_gross(support.clone().unwrap_or(default_support), 0.0),
        AttackKind::TargetedLs => {
            let dir = u0.clone().unwrap_or_else(|| {
                let mut e = vec![0.0; n];
                e[0] = 1.0;
                e
            });
            AttackPlan::targeted_ls(dir, support.clone().unwrap_or(default_support), 0.0)
        }
    };
    template.validate(scenario.model(), scenario.p())?;

    let trial_seed = derive_seed(seed, &[0]);
    let mut out = Vec::new();
    {
        let mut csv = csv::Writer::from_writer(&mut out);
        for &t in ts {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::validation("t", format!("magnitudes must be finite and non-negative, got {t}")));
            }
            let record = run_trial(&scenario, &x, Some(&template.with_magnitude(t)), trial_seed, &solver)?;
            csv.serialize(AttackRow {
                t,
                bias_norm: record.bias_norm,
                objective: record.objective,
                converged: record.converged,
            })
            .map_err(|e| Error::Internal(format!("csv: {e}")))?;
        }
        csv.flush().map_err(|e| Error::Internal(format!("csv: {e}")))?;
    }
    std::io::stdout()
        .write_all(&out)
        .map_err(|e| Error::Internal(format!("stdout: {e}")))?;
    create_and_write(&config.out.join("attack.csv"), &out)?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct SweepSummary<'a> {
    scenario_digest: String,
    seed: u64,
    trials: usize,
    t: &'a [f64],
    points: &'a [BreakdownPoint],
}

fn cmd_sweep(config: &RunConfig, path: &Path, p: &Option<Vec<usize>>, ts: &[f64], trials: usize, x: &Option<Vec<f64>>) -> Result<i32> {
    let scenario = Scenario::load(path)?;
    let seed = seed_for(config, Some(&scenario))?;
    let x = state_arg(&scenario, x)?;
    let m = scenario.model().m();
    let budgets = p.clone().unwrap_or_else(|| (1..m).collect());
    if let Some(&bad) = budgets.iter().find(|&&b| b >= m) {
        return Err(Error::validation("p", format!("budget {bad} must be below m = {m}")));
    }
    let options = SweepOptions {
        trials,
        seed,
        solver: solver_options(config)?,
        certify: CertifyOptions {
            tol: CertifyOptions::default().tol,
            ..certify_options(config, seed)?
        },
    };
    let points = breakdown_sweep(&scenario, &budgets, &x, ts, &options)?;

    println!("{:>3}  {:<14} {:>12}  {:<10} {:>14}  consistency", "p", "decision", "margin", "flag", "max bias @ t_max");
    for pt in &points {
        let margin = pt.certificate.margin_min.map(|m| format!("{m:.6}")).unwrap_or_else(|| "unbounded".into());
        let last = pt.report.points.last().map(|s| s.max_bias).unwrap_or(f64::NAN);
        println!(
            "{:>3}  {:<14} {:>12}  {:<10} {:>14.6e}  {:?}",
            pt.p,
            pt.certificate.decision.to_string(),
            margin,
            format!("{:?}", pt.report.flag).to_uppercase(),
            last,
            pt.consistency
        );
    }

    let reports: Vec<_> = points.iter().map(|p| &p.report).collect();
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &reports)?;
    create_and_write(&config.out.join("sweep.csv"), &csv)?;
    write_json(
        &config.out,
        "summary.json",
        &SweepSummary {
            scenario_digest: scenario.digest(),
            seed,
            trials,
            t: ts,
            points: &points,
        },
    )?;
    Ok(0)
}

fn cmd_selftest(config: &RunConfig) -> Result<i32> {
    let seed = seed_for(config, None)?;
    let checks = selftest::run(seed);
    for c in &checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {} failed", checks.len(), failed);
    write_json(&config.out, "selftest.json", &checks)?;
    Ok(if failed == 0 { 0 } else { 1 })
}
