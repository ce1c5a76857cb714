//! Experiment runner: single trials, bias curves over attack magnitude and
//! breakdown sweeps over the attack budget.
//!
//! Trial `k` of a sweep draws its noise from `derive_seed(seed, [k])`, so every
//! magnitude `t` sees the same noise realizations and bias curves are smooth
//! in `t`.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::AttackPlan;
use crate::certifier::{certify, Certificate, CertifyOptions, Decision};
use crate::model::{derive_seed, rng_from_seed, Scenario, SparseAttack};
use crate::solver::{estimate, Method, SolverOptions};
use crate::{Error, Result};

/// Relative change between the last two magnitudes below which a curve is flat.
pub const PLATEAU_RTOL: f64 = 1e-3;
/// Log-log slope over the last decade at or above which a curve diverges.
pub const DIVERGENCE_SLOPE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub scenario_digest: String,
    pub seed: u64,
    pub x_true: Vec<f64>,
    pub noise: Vec<f64>,
    pub plan: Option<AttackPlan>,
    pub attack_support: Vec<usize>,
    pub x_hat: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: Method,
    /// `||x_hat - x||`.
    pub bias_norm: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Measure, attack, estimate. Solver non-convergence is recorded, not raised.
pub fn run_trial(
    scenario: &Scenario,
    x: &DVector<f64>,
    plan: Option<&AttackPlan>,
    seed: u64,
    solver: &SolverOptions,
) -> Result<TrialRecord> {
    let started = Instant::now();
    let model = scenario.model();
    model.check_state(x, "true state")?;
    let mut rng = rng_from_seed(seed);
    let noise = scenario.noise().sample(model.total_rows(), &mut rng);
    let z = model.measure(x, &noise)?;
    let (y, attack) = match plan {
        Some(plan) => plan.realize(model, &z, scenario.p(), derive_seed(seed, &[1]))?,
        None => (z, SparseAttack::none()),
    };
    let result = estimate(scenario, &y, solver)?;
    Ok(TrialRecord {
        scenario_digest: scenario.digest(),
        seed,
        x_true: x.iter().copied().collect(),
        noise: noise.iter().copied().collect(),
        plan: plan.cloned(),
        attack_support: attack.support(),
        bias_norm: (&result.x_hat - x).norm(),
        x_hat: result.x_hat.iter().copied().collect(),
        objective: result.objective,
        iterations: result.iterations,
        converged: result.converged,
        method: result.method,
        wall_time: started.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BiasFlag {
    Plateau,
    Diverging,
    /// Too few magnitudes, or neither pattern is present.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub t: f64,
    pub median_bias: f64,
    pub max_bias: f64,
    pub converged: usize,
    pub trials: usize,
}

/// One CSV row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: usize,
    pub t: f64,
    pub trial: usize,
    pub bias_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub p: usize,
    pub axis: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub decision: Option<Decision>,
    pub flag: BiasFlag,
    /// Log-log slope of the max bias over the last decade of `t`.
    pub slope: Option<f64>,
    pub trial_count: usize,
    pub seed: u64,
    #[serde(skip)]
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn max_biases(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.max_bias).collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Flags a curve of max biases over increasing magnitudes.
pub fn classify(ts: &[f64], biases: &[f64]) -> (BiasFlag, Option<f64>) {
    let n = ts.len().min(biases.len());
    if n < 2 {
        return (BiasFlag::Unknown, None);
    }
    let (t_last, b_last) = (ts[n - 1], biases[n - 1]);
    let reference = (0..n - 1).rev().find(|&j| ts[j] <= t_last / 10.0 * (1.0 + 1e-12)).unwrap_or(0);
    let (t_ref, b_ref) = (ts[reference], biases[reference]);
    let slope = (b_ref > 0.0 && b_last > 0.0).then(|| (b_last / b_ref).ln() / (t_last / t_ref).ln());

    let b_prev = biases[n - 2];
    let scale = b_prev.abs().max(b_last.abs());
    if (b_last - b_prev).abs() <= PLATEAU_RTOL * scale || scale <= 1e-300 {
        return (BiasFlag::Plateau, slope);
    }
    if slope.is_some_and(|s| s >= DIVERGENCE_SLOPE) {
        return (BiasFlag::Diverging, slope);
    }
    (BiasFlag::Unknown, slope)
}

fn check_axis(ts: &[f64]) -> Result<()> {
    if ts.is_empty() {
        return Err(Error::validation("t", "at least one magnitude is required"));
    }
    let mut prev = 0.0;
    for &t in ts {
        if !(t.is_finite() && t > prev) {
            return Err(Error::validation("t", "magnitudes must be positive, finite and strictly increasing"));
        }
        prev = t;
    }
    Ok(())
}

/// Max and median bias over `trials` runs at each magnitude of `ts`.
pub fn bias_curve(
    scenario: &Scenario,
    x: &DVector<f64>,
    template: &AttackPlan,
    ts: &[f64],
    trials: usize,
    seed: u64,
    solver: &SolverOptions,
) -> Result<SweepReport> {
    check_axis(ts)?;
    if trials == 0 {
        return Err(Error::validation("trials", "must be at least 1"));
    }
    template.validate(scenario.model(), scenario.p())?;
    let jobs: Vec<(usize, usize)> = (0..ts.len()).flat_map(|i| (0..trials).map(move |k| (i, k))).collect();
    let records = jobs
        .par_iter()
        .map(|&(i, k)| {
            let plan = template.with_magnitude(ts[i]);
            run_trial(scenario, x, Some(&plan), derive_seed(seed, &[k as u64]), solver)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(ts.len());
    let mut rows = Vec::with_capacity(records.len());
    for (i, &t) in ts.iter().enumerate() {
        let chunk = &records[i * trials..(i + 1) * trials];
        let mut biases: Vec<f64> = chunk.iter().map(|r| r.bias_norm).collect();
        let max_bias = biases.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        points.push(SweepPoint {
            t,
            median_bias: median(&mut biases),
            max_bias,
            converged: chunk.iter().filter(|r| r.converged).count(),
            trials,
        });
        rows.extend(chunk.iter().enumerate().map(|(k, r)| SweepRow {
            p: scenario.p(),
            t,
            trial: k,
            bias_norm: r.bias_norm,
            converged: r.converged,
        }));
    }
    let maxima: Vec<f64> = points.iter().map(|p| p.max_bias).collect();
    let (flag, slope) = classify(ts, &maxima);
    Ok(SweepReport {
        p: scenario.p(),
        axis: ts.to_vec(),
        points,
        decision: None,
        flag,
        slope,
        trial_count: trials,
        seed,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    Consistent,
    Inconsistent,
    /// The certifier gave no verdict (zero margin or too coarse a mesh).
    NoVerdict,
}

pub fn consistency(decision: Decision, flag: BiasFlag) -> Consistency {
    match (decision, flag) {
        (Decision::Inconclusive, _) => Consistency::NoVerdict,
        (Decision::Robust, BiasFlag::Plateau) => Consistency::Consistent,
        (Decision::NotRobust | Decision::UnboundedGain, BiasFlag::Diverging) => Consistency::Consistent,
        _ => Consistency::Inconsistent,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownPoint {
    pub p: usize,
    pub certificate: Certificate,
    pub report: SweepReport,
    pub consistency: Consistency,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverOptions,
    pub certify: CertifyOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 0,
            solver: SolverOptions::default(),
            certify: CertifyOptions::default(),
        }
    }
}

/// For each budget `p`: certify, then sweep the certificate's witness attack.
pub fn breakdown_sweep(
    base: &Scenario,
    p_values: &[usize],
    x: &DVector<f64>,
    ts: &[f64],
    options: &SweepOptions,
) -> Result<Vec<BreakdownPoint>> {
    p_values
        .iter()
        .map(|&p| {
            let scenario = base.with_p(p)?;
            let certificate = certify(&scenario, &options.certify)?;
            let template = AttackPlan::from_certificate(&certificate, ts[0]);
            let mut report = bias_curve(&scenario, x, &template, ts, options.trials, options.seed, &options.solver)?;
            report.decision = Some(certificate.decision);
            Ok(BreakdownPoint {
                p,
                consistency: consistency(certificate.decision, report.flag),
                certificate,
                report,
            })
        })
        .collect()
}

/// Writes `p,t,trial,bias_norm,converged` rows.
pub fn write_sweep_csv<W: Write>(writer: W, reports: &[&SweepReport]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for report in reports {
        for row in &report.rows {
            csv.serialize(row).map_err(|e| Error::Internal(format!("csv: {e}")))?;
        }
    }
    csv.flush().map_err(|e| Error::Internal(format!("csv: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostKind;
    use crate::model::NoiseSpec;

    fn geometric(from: f64, count: usize) -> Vec<f64> {
        (0..count).map(|k| from * 10f64.powi(k as i32)).collect()
    }

    #[test]
    fn exact_recovery_without_attack_or_noise() {
        for kind in CostKind::all_default() {
            let s = Scenario::identical_scalar(5, kind, 2).unwrap();
            let x = DVector::from_element(1, 0.75);
            let r = run_trial(&s, &x, None, 1, &SolverOptions::default()).unwrap();
            assert!(r.bias_norm <= 1e-6, "{kind}: {}", r.bias_norm);
        }
    }

    #[test]
    fn least_squares_noise_matches_mean() {
        let s = Scenario::identical_scalar(4, CostKind::SquaredL2, 1)
            .unwrap()
            .with_noise(NoiseSpec::gaussian(0.01))
            .unwrap();
        let x = DVector::from_element(1, 3.0);
        let r = run_trial(&s, &x, None, 42, &SolverOptions::default()).unwrap();
        let mean_noise = r.noise.iter().sum::<f64>() / 4.0;
        assert!((r.bias_norm - mean_noise.abs()).abs() < 1e-12);
        assert!(r.bias_norm < 0.05);
    }

    #[test]
    fn least_squares_bias_is_linear() {
        let s = Scenario::identical_scalar(3, CostKind::SquaredL2, 1).unwrap();
        let x = DVector::zeros(1);
        let ts = geometric(10.0, 4);
        let plan = AttackPlan::targeted_ls(vec![1.0], vec![0], 1.0);
        let report = bias_curve(&s, &x, &plan, &ts, 3, 0, &SolverOptions::default()).unwrap();
        for p in &report.points {
            assert!((p.max_bias - p.t / 3.0).abs() <= 1e-12 * p.t);
        }
        assert_eq!(report.flag, BiasFlag::Diverging);
    }

    #[test]
    fn median_curve_plateaus() {
        let s = Scenario::identical_scalar(3, CostKind::L1, 1)
            .unwrap()
            .with_noise(NoiseSpec::uniform(0.1))
            .unwrap();
        let x = DVector::zeros(1);
        let plan = AttackPlan::targeted_ls(vec![1.0], vec![0], 1.0);
        let report = bias_curve(&s, &x, &plan, &geometric(10.0, 4), 5, 3, &SolverOptions::default()).unwrap();
        assert_eq!(report.flag, BiasFlag::Plateau);
    }

    #[test]
    fn single_magnitude_is_unknown() {
        let s = Scenario::identical_scalar(3, CostKind::L1, 1).unwrap();
        let plan = AttackPlan::targeted_ls(vec![1.0], vec![0], 1.0);
        let report = bias_curve(&s, &DVector::zeros(1), &plan, &[100.0], 2, 0, &SolverOptions::default()).unwrap();
        assert_eq!(report.flag, BiasFlag::Unknown);
    }

    #[test]
    fn classify_patterns() {
        let ts = geometric(1.0, 4);
        assert_eq!(classify(&ts, &[1.0, 2.0, 2.0, 2.0]).0, BiasFlag::Plateau);
        assert_eq!(classify(&ts, &[0.0, 0.0, 0.0, 0.0]).0, BiasFlag::Plateau);
        assert_eq!(classify(&ts, &[1.0, 10.0, 100.0, 1000.0]).0, BiasFlag::Diverging);
        // sqrt growth: slope 0.5
        assert_eq!(classify(&ts, &[1.0, 3.16, 10.0, 31.6]).0, BiasFlag::Unknown);
    }

    #[test]
    fn axis_is_validated() {
        let s = Scenario::identical_scalar(3, CostKind::L1, 1).unwrap();
        let plan = AttackPlan::targeted_ls(vec![1.0], vec![0], 1.0);
        let opts = SolverOptions::default();
        assert!(bias_curve(&s, &DVector::zeros(1), &plan, &[10.0, 1.0], 1, 0, &opts).is_err());
        assert!(bias_curve(&s, &DVector::zeros(1), &plan, &[], 1, 0, &opts).is_err());
    }

    #[test]
    fn breakdown_over_budget() {
        let base = Scenario::identical_scalar(5, CostKind::L1, 1)
            .unwrap()
            .with_noise(NoiseSpec::uniform(0.05))
            .unwrap();
        let opts = SweepOptions {
            trials: 4,
            ..Default::default()
        };
        let points = breakdown_sweep(&base, &[1, 2, 3, 4], &DVector::zeros(1), &geometric(10.0, 5), &opts).unwrap();
        let summary: Vec<_> = points.iter().map(|p| (p.certificate.decision, p.report.flag)).collect();
        assert_eq!(
            summary,
            vec![
                (Decision::Robust, BiasFlag::Plateau),
                (Decision::Robust, BiasFlag::Plateau),
                (Decision::NotRobust, BiasFlag::Diverging),
                (Decision::NotRobust, BiasFlag::Diverging),
            ]
        );
        let margins: Vec<_> = points.iter().map(|p| p.certificate.margin_min.unwrap()).collect();
        assert_eq!(margins, vec![3.0, 1.0, -1.0, -3.0]);
        assert!(points.iter().all(|p| p.consistency == Consistency::Consistent));
    }

    #[test]
    fn equality_budget_has_no_verdict() {
        let base = Scenario::identical_scalar(4, CostKind::L1, 1).unwrap();
        let opts = SweepOptions {
            trials: 2,
            ..Default::default()
        };
        let points = breakdown_sweep(&base, &[2], &DVector::zeros(1), &geometric(10.0, 3), &opts).unwrap();
        assert_eq!(points[0].certificate.decision, Decision::Inconclusive);
        assert_eq!(points[0].consistency, Consistency::NoVerdict);
    }

    #[test]
    fn reports_are_deterministic() {
        let base = Scenario::identical_scalar(5, CostKind::L2Norm, 2)
            .unwrap()
            .with_noise(NoiseSpec::gaussian(0.1))
            .unwrap();
        let plan = AttackPlan::theorem2(vec![1.0], vec![0, 1], 1.0);
        let ts = geometric(1.0, 3);
        let a = bias_curve(&base, &DVector::zeros(1), &plan, &ts, 6, 17, &SolverOptions::default()).unwrap();
        let b = bias_curve(&base, &DVector::zeros(1), &plan, &ts, 6, 17, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_layout() {
        let s = Scenario::identical_scalar(3, CostKind::L1, 1).unwrap();
        let plan = AttackPlan::targeted_ls(vec![1.0], vec![0], 1.0);
        let report = bias_curve(&s, &DVector::zeros(1), &plan, &[1.0, 2.0], 2, 0, &SolverOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[&report]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "p,t,trial,bias_norm,converged");
        assert_eq!(lines.len(), 5);
    }
}
