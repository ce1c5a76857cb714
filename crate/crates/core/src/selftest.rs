//! Quick built-in checks run by `robust-est selftest`.
//!
//! These are a trimmed copy of the property suite: each check draws a few
//! hundred random cases from a seeded generator and reports the first
//! violation it finds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attacks::AttackPlan;
use crate::certifier::{certify, subset_margin, CertifyOptions, Decision};
use crate::costs::{CostKind, CostSpec, Gain};
use crate::harness::run_trial;
use crate::model::{derive_seed, enumerate_subsets, rng_from_seed, MeasurementModel, NoiseSpec, Scenario};
use crate::solver::{estimate, SolverOptions};

const CASES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn from(name: &str, outcome: Result<String, String>) -> Self {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

type Outcome = Result<String, String>;
type CheckFn = fn(&mut ChaCha8Rng) -> Outcome;

pub fn run(seed: u64) -> Vec<Check> {
    let checks: [(&str, CheckFn); 7] = [
        ("cost_semi_norm", cost_semi_norm),
        ("cost_subgradient", cost_subgradient),
        ("cost_one_step_bound", cost_one_step_bound),
        ("lasso_envelope", lasso_envelope),
        ("estimator_examples", estimator_examples),
        ("scalar_certificates", scalar_certificates),
        ("p_largest_rule", p_largest_rule),
    ];
    let mut out: Vec<Check> = checks
        .iter()
        .enumerate()
        .map(|(k, (name, f))| {
            let mut rng = rng_from_seed(derive_seed(seed, &[k as u64]));
            Check::from(name, f(&mut rng))
        })
        .collect();
    out.push(Check::from("attack_bias", attack_bias()));
    out
}

fn vec_in(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

fn costs() -> Vec<CostKind> {
    vec![
        CostKind::SquaredL2,
        CostKind::L1,
        CostKind::L2Norm,
        CostKind::LassoEnvelope { lambda: 0.5 },
        CostKind::LassoEnvelope { lambda: 2.0 },
    ]
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn cost_semi_norm(rng: &mut ChaCha8Rng) -> Outcome {
    for kind in costs() {
        for _ in 0..CASES {
            let d = rng.random_range(1..4);
            let spec = CostSpec::new(kind, d).map_err(err)?;
            let v = vec_in(rng, d, 5.0);
            let w = vec_in(rng, d, 5.0);
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let sum: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
            let fv = spec.eval(&v).map_err(err)?;
            if spec.eval(&vec![0.0; d]).map_err(err)? != 0.0 {
                return Err(format!("{kind}: f(0) != 0"));
            }
            if fv < 0.0 || (spec.eval(&neg).map_err(err)? - fv).abs() > 1e-12 * (1.0 + fv) {
                return Err(format!("{kind}: sign or symmetry fails at {v:?}"));
            }
            if kind != CostKind::SquaredL2 && !matches!(kind, CostKind::LassoEnvelope { .. }) {
                let fw = spec.eval(&w).map_err(err)?;
                if spec.eval(&sum).map_err(err)? > fv + fw + 1e-9 {
                    return Err(format!("{kind}: triangle inequality fails"));
                }
            }
            let profile = spec.radial_profile(&v, &[0.5, 1.0, 2.0, 4.0]).map_err(err)?;
            if profile.windows(2).any(|p| p[1] < p[0] - 1e-12) {
                return Err(format!("{kind}: not radially nondecreasing along {v:?}"));
            }
        }
    }
    Ok(format!("{} cases per cost", CASES))
}

fn cost_subgradient(rng: &mut ChaCha8Rng) -> Outcome {
    for kind in costs() {
        for _ in 0..CASES {
            let d = rng.random_range(1..4);
            let spec = CostSpec::new(kind, d).map_err(err)?;
            let v = vec_in(rng, d, 5.0);
            let w = vec_in(rng, d, 5.0);
            let g = spec.subgradient(&v).map_err(err)?;
            let lin: f64 = g.iter().zip(w.iter().zip(&v)).map(|(gi, (wi, vi))| gi * (wi - vi)).sum();
            let fv = spec.eval(&v).map_err(err)?;
            let fw = spec.eval(&w).map_err(err)?;
            if fw < fv + lin - 1e-9 * (1.0 + fv.abs() + fw.abs()) {
                return Err(format!("{kind}: subgradient inequality fails at v={v:?}, w={w:?}"));
            }
        }
    }
    Ok(format!("{} cases per cost", CASES))
}

fn cost_one_step_bound(rng: &mut ChaCha8Rng) -> Outcome {
    for kind in costs().into_iter().filter(|k| *k != CostKind::SquaredL2) {
        for _ in 0..CASES {
            let (d, n) = (rng.random_range(1..4), rng.random_range(1..4));
            let spec = CostSpec::new(kind, d).map_err(err)?;
            let h = DMatrix::from_fn(d, n, |_, _| rng.random_range(-2.0..2.0));
            let u = DVector::from_vec(vec_in(rng, n, 3.0));
            let v = DVector::from_vec(vec_in(rng, d, 10.0));
            let hu = &h * &u;
            let shifted: Vec<f64> = (&v + &hu).iter().copied().collect();
            let step = spec.eval(&shifted).map_err(err)? - spec.eval(v.as_slice()).map_err(err)?;
            let Gain::Finite(c) = spec.asymptotic_gain(&h, &u).map_err(err)? else {
                return Err(format!("{kind}: gain unexpectedly unbounded"));
            };
            if step > c + 1e-9 * (1.0 + c) {
                return Err(format!("{kind}: one-step increase {step} exceeds gain {c}"));
            }
        }
    }
    Ok(format!("{} cases per finite-gain cost", CASES))
}

fn lasso_envelope(rng: &mut ChaCha8Rng) -> Outcome {
    for &lambda in &[0.5, 1.0, 2.0] {
        let spec = CostSpec::new(CostKind::LassoEnvelope { lambda }, 1).map_err(err)?;
        for _ in 0..50 {
            let s: f64 = rng.random_range(-5.0..5.0);
            // The inner minimizer of (s - a)^2 + lambda |a| is soft thresholding.
            let a = s.signum() * (s.abs() - lambda / 2.0).max(0.0);
            let direct = (s - a).powi(2) + lambda * a.abs();
            let got = spec.eval(&[s]).map_err(err)?;
            if (got - direct).abs() > 1e-12 * (1.0 + direct) {
                return Err(format!("lambda={lambda}: envelope({s}) = {got}, inner minimum {direct}"));
            }
        }
    }
    Ok("soft-threshold identity on 150 points".into())
}

fn estimator_examples(_: &mut ChaCha8Rng) -> Outcome {
    let opts = SolverOptions::default();
    let median = Scenario::identical_scalar(3, CostKind::L1, 1).map_err(err)?;
    let x = estimate(&median, &DVector::from_vec(vec![1.0, 2.0, 100.0]), &opts).map_err(err)?.x_hat[0];
    if (x - 2.0).abs() > 1e-6 {
        return Err(format!("median of (1, 2, 100) estimated as {x}"));
    }
    let ls = Scenario::identical_scalar(3, CostKind::SquaredL2, 1).map_err(err)?;
    let x = estimate(&ls, &DVector::from_vec(vec![1.0, 2.0, 3.0]), &opts).map_err(err)?.x_hat[0];
    if (x - 2.0).abs() > 1e-9 {
        return Err(format!("least squares of (1, 2, 3) estimated as {x}"));
    }
    Ok("median and mean recovered".into())
}

fn scalar_certificates(_: &mut ChaCha8Rng) -> Outcome {
    for m in 3..=7 {
        for p in 0..m {
            let scenario = Scenario::identical_scalar(m, CostKind::L1, p).map_err(err)?;
            let cert = certify(&scenario, &CertifyOptions::default()).map_err(err)?;
            let expected = match (m as i64 - 2 * p as i64).signum() {
                1 => Decision::Robust,
                0 => Decision::Inconclusive,
                _ => Decision::NotRobust,
            };
            if cert.decision != expected {
                return Err(format!("m={m}, p={p}: {} instead of {expected}", cert.decision));
            }
        }
    }
    Ok("identical scalar l1 sensors, m = 3..7".into())
}

fn p_largest_rule(rng: &mut ChaCha8Rng) -> Outcome {
    for _ in 0..50 {
        let m = rng.random_range(1..=7);
        let p = rng.random_range(0..=m);
        let gains: Vec<Gain> = (0..m).map(|_| Gain::Finite(rng.random_range(0.0..3.0))).collect();
        let (fast, _) = subset_margin(&gains, p).map_err(err)?;
        let total: f64 = gains.iter().filter_map(|g| g.finite()).sum();
        let brute = enumerate_subsets(m, p)
            .map(|s| total - 2.0 * s.iter().map(|&i| gains[i].finite().unwrap_or(0.0)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if (fast - brute).abs() > 1e-12 * (1.0 + total) {
            return Err(format!("gains {gains:?}, p={p}: rule {fast}, enumeration {brute}"));
        }
    }
    Ok("50 random gain vectors".into())
}

fn attack_bias() -> Outcome {
    let opts = SolverOptions::default();
    let model = MeasurementModel::identical_scalar(3).map_err(err)?;
    let ls = Scenario::new(model.clone(), vec![CostKind::SquaredL2; 3], 1, NoiseSpec::none(), 0).map_err(err)?;
    let x = DVector::zeros(1);
    let plan = AttackPlan::targeted_ls(vec![1.0], vec![0], 300.0);
    let bias = run_trial(&ls, &x, Some(&plan), 0, &opts).map_err(err)?.bias_norm;
    if (bias - 100.0).abs() > 1e-8 {
        return Err(format!("least squares bias {bias}, expected 100"));
    }
    let median = Scenario::new(model, vec![CostKind::L1; 3], 1, NoiseSpec::uniform(0.5), 0).map_err(err)?;
    let plan = AttackPlan::theorem2(vec![1.0], vec![0], 1e6);
    let bias = run_trial(&median, &x, Some(&plan), 7, &opts).map_err(err)?.bias_norm;
    if bias > 1.0 {
        return Err(format!("median bias {bias} under a single gross error"));
    }
    Ok("least squares breaks, median holds".into())
}
