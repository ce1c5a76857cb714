//! Estimators `x_hat = argmin_x sum_i f_i(y_i - H_i x)`.
//!
//! Three routes are available: the normal-equations solution when every cost
//! is quadratic, Weiszfeld iterations when every cost is the Euclidean norm
//! and all sensors share one square block, and a general first-order scheme
//! (subgradient descent followed by a smoothing-continuation Newton polish).

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::costs::{envelope, sigma_max, CostKind, CostSpec};
use crate::model::{MeasurementModel, Scenario};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Weiszfeld,
    FirstOrder,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ClosedForm => "closed_form",
            Method::Weiszfeld => "weiszfeld",
            Method::FirstOrder => "first_order",
        })
    }
}

/// Requested solver route; `Auto` picks the closed form or Weiszfeld when applicable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    #[default]
    Auto,
    Closed,
    Weiszfeld,
    Subgrad,
}

impl std::str::FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "closed" => Ok(Self::Closed),
            "weiszfeld" => Ok(Self::Weiszfeld),
            "subgrad" => Ok(Self::Subgrad),
            other => Err(Error::validation(
                "method",
                format!("unknown method {other:?}; expected auto|closed|weiszfeld|subgrad"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: MethodChoice,
    /// Iteration cap for the subgradient and Weiszfeld loops.
    pub max_iters: usize,
    /// Relative improvement below which the subgradient loop counts as stalled.
    pub tol: f64,
    /// Window length for the stall test.
    pub patience: usize,
    /// Run the smoothing-continuation Newton polish after subgradient descent.
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: MethodChoice::Auto,
            max_iters: 200_000,
            tol: 1e-10,
            patience: 200,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub x_hat: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: Method,
}

/// `F(x) = sum_i f_i(y_i - H_i x)` for fixed measurements `y`.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    model: &'a MeasurementModel,
    costs: &'a [CostSpec],
    y: &'a DVector<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(model: &'a MeasurementModel, costs: &'a [CostSpec], y: &'a DVector<f64>) -> Result<Self> {
        if costs.len() != model.m() {
            return Err(Error::dimension("costs", model.m(), costs.len()));
        }
        for (i, c) in costs.iter().enumerate() {
            if c.dim() != model.rows(i) {
                return Err(Error::dimension(format!("cost {i}"), model.rows(i), c.dim()));
            }
        }
        model.check_stacked(y, "measurements")?;
        Ok(Self { model, costs, y })
    }

    pub fn from_scenario(scenario: &'a Scenario, y: &'a DVector<f64>) -> Result<Self> {
        Self::new(scenario.model(), scenario.costs(), y)
    }

    pub fn model(&self) -> &MeasurementModel {
        self.model
    }

    pub fn costs(&self) -> &[CostSpec] {
        self.costs
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.y - self.model.apply(x)
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let r = self.residual(x);
        let r = r.as_slice();
        self.costs
            .iter()
            .enumerate()
            .map(|(i, c)| c.value(&r[self.model.block_range(i)]))
            .sum()
    }

    /// A subgradient of `F` at `x`: `-sum_i H_i^T g_i` with `g_i` in the subdifferential of `f_i`.
    pub fn subgradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.residual(x);
        let mut g = DVector::zeros(self.model.n());
        let mut gi = Vec::new();
        for (i, c) in self.costs.iter().enumerate() {
            let range = self.model.block_range(i);
            gi.resize(range.len(), 0.0);
            c.subgradient_into(&r.as_slice()[range], &mut gi);
            let gi = DVector::from_column_slice(&gi);
            g.gemv_tr(-1.0, self.model.sensor(i), &gi, 1.0);
        }
        g
    }

    /// Number of terms whose value is smoothed by `smoothed`.
    fn smoothed_terms(&self) -> usize {
        self.costs
            .iter()
            .map(|c| match c.kind() {
                CostKind::SquaredL2 | CostKind::LassoEnvelope { .. } => 0,
                CostKind::L1 => c.dim(),
                CostKind::L2Norm => 1,
            })
            .sum()
    }

    /// Value, gradient and Hessian of the smoothed objective `F_eps`, with
    /// `F_eps <= F <= F_eps + eps * smoothed_terms()`.
    fn smoothed(&self, x: &DVector<f64>, eps: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = self.model.n();
        let r = self.residual(x);
        let mut value = 0.0;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        let eps2 = eps * eps;
        for (i, c) in self.costs.iter().enumerate() {
            let range = self.model.block_range(i);
            let ri = &r.as_slice()[range.clone()];
            let h = self.model.sensor(i);
            let k = ri.len();
            // residual-space gradient and Hessian of the smoothed f_i
            let mut gi = DVector::zeros(k);
            let mut hi = DMatrix::zeros(k, k);
            match c.kind() {
                CostKind::SquaredL2 => {
                    for (j, &s) in ri.iter().enumerate() {
                        value += s * s;
                        gi[j] = 2.0 * s;
                        hi[(j, j)] = 2.0;
                    }
                }
                CostKind::L1 => {
                    for (j, &s) in ri.iter().enumerate() {
                        let rho = (s * s + eps2).sqrt();
                        value += rho - eps;
                        gi[j] = s / rho;
                        hi[(j, j)] = eps2 / (rho * rho * rho);
                    }
                }
                CostKind::L2Norm => {
                    let sq: f64 = ri.iter().map(|s| s * s).sum();
                    let rho = (sq + eps2).sqrt();
                    value += rho - eps;
                    for j in 0..k {
                        gi[j] = ri[j] / rho;
                        for l in 0..k {
                            let delta = if j == l { 1.0 } else { 0.0 };
                            hi[(j, l)] = (delta - ri[j] * ri[l] / (rho * rho)) / rho;
                        }
                    }
                }
                CostKind::LassoEnvelope { lambda } => {
                    for (j, &s) in ri.iter().enumerate() {
                        value += envelope(lambda, s);
                        let d = s.abs() - 0.5 * lambda;
                        if d <= 0.0 {
                            gi[j] = 2.0 * s;
                            hi[(j, j)] = 2.0;
                        } else {
                            gi[j] = lambda * s.signum();
                            // curvature surrogate on the linear piece
                            let rho = (d * d + eps2).sqrt();
                            hi[(j, j)] = lambda * eps2 / (rho * rho * rho);
                        }
                    }
                }
            }
            grad.gemv_tr(-1.0, h, &gi, 1.0);
            hess += h.transpose() * hi * h;
        }
        (value, grad, hess)
    }
}

/// Normal-equations estimate `(H^T H)^{-1} H^T y`, computed through a thin QR of `H`.
pub fn estimate_least_squares(model: &MeasurementModel, y: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_stacked(y, "measurements")?;
    least_squares_stacked(&model.stacked(), y)
}

pub(crate) fn least_squares_stacked(h: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let n = h.ncols();
    if h.nrows() < n {
        return Err(Error::RankDeficient { rank: h.nrows(), n });
    }
    let qr = h.clone().qr();
    let r = qr.r();
    let q = qr.q();
    let smax = r.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if r.diagonal().iter().any(|v| v.abs() <= 1e-14 * smax) || smax == 0.0 {
        return Err(Error::RankDeficient { rank: n - 1, n });
    }
    let solve = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
        r.solve_upper_triangular(&(q.transpose() * rhs))
            .ok_or_else(|| Error::RankDeficient { rank: n - 1, n })
    };
    let mut x = solve(y)?;
    // one step of iterative refinement
    let resid = y - h * &x;
    x += solve(&resid)?;
    Ok(x)
}

/// Geometric median of `points`: the minimizer of `sum_i ||p_i - x||_2`.
pub fn geometric_median(points: &[DVector<f64>]) -> Result<DVector<f64>> {
    Ok(weiszfeld(points, 100_000)?.0)
}

/// Weiszfeld iterations with the coincident-point correction. Returns the
/// point, the iteration count and whether the step tolerance was met.
pub fn weiszfeld(points: &[DVector<f64>], max_iters: usize) -> Result<(DVector<f64>, usize, bool)> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidArgument("geometric median of an empty point set".into()))?;
    let n = first.len();
    if let Some(p) = points.iter().find(|p| p.len() != n) {
        return Err(Error::dimension("point", n, p.len()));
    }
    let scale = points.iter().map(|p| p.amax()).fold(1.0, f64::max);
    let coincide = 1e-12 * scale;
    let step_tol = 1e-15 * scale;

    let mut x = points.iter().fold(DVector::zeros(n), |acc, p| acc + p) / points.len() as f64;
    for iter in 1..=max_iters {
        let mut num = DVector::zeros(n);
        let mut den = 0.0;
        let mut pull = DVector::zeros(n);
        let mut multiplicity = 0.0;
        for p in points {
            let diff = p - &x;
            let d = diff.norm();
            if d <= coincide {
                multiplicity += 1.0;
            } else {
                num.axpy(1.0 / d, p, 1.0);
                den += 1.0 / d;
                pull.axpy(1.0 / d, &diff, 1.0);
            }
        }
        if den == 0.0 {
            return Ok((x, iter, true));
        }
        let target = num / den;
        let next = if multiplicity == 0.0 {
            target
        } else {
            // x sits on a data point: optimal iff the pull of the others is at most its weight
            let strength = pull.norm();
            if strength <= multiplicity {
                return Ok((x, iter, true));
            }
            let w = multiplicity / strength;
            target * (1.0 - w) + &x * w
        };
        let moved = (&next - &x).norm();
        x = next;
        if moved <= step_tol {
            return Ok((x, iter, true));
        }
    }
    Ok((x, max_iters, false))
}

fn weiszfeld_applicable(model: &MeasurementModel, costs: &[CostSpec]) -> bool {
    let h0 = model.sensor(0);
    h0.nrows() == model.n()
        && costs.iter().all(|c| c.kind() == CostKind::L2Norm)
        && model.sensors().iter().all(|h| h == h0)
}

/// Minimizes the scenario objective at measurements `y`.
pub fn estimate(scenario: &Scenario, y: &DVector<f64>, options: &SolverOptions) -> Result<EstimateResult> {
    let objective = Objective::from_scenario(scenario, y)?;
    let model = scenario.model();
    let costs = scenario.costs();
    let all_quadratic = costs.iter().all(|c| c.kind() == CostKind::SquaredL2);
    let route = match options.method {
        MethodChoice::Auto if all_quadratic => Method::ClosedForm,
        MethodChoice::Auto if weiszfeld_applicable(model, costs) => Method::Weiszfeld,
        MethodChoice::Auto | MethodChoice::Subgrad => Method::FirstOrder,
        MethodChoice::Closed if all_quadratic => Method::ClosedForm,
        MethodChoice::Closed => {
            return Err(Error::validation("method", "closed form requires squared_l2 costs on every sensor"))
        }
        MethodChoice::Weiszfeld if weiszfeld_applicable(model, costs) => Method::Weiszfeld,
        MethodChoice::Weiszfeld => {
            return Err(Error::validation(
                "method",
                "weiszfeld requires l2norm costs and one shared square block H_i",
            ))
        }
    };
    match route {
        Method::ClosedForm => {
            let x_hat = estimate_least_squares(model, y)?;
            Ok(EstimateResult {
                objective: objective.value(&x_hat),
                x_hat,
                iterations: 0,
                converged: true,
                method: Method::ClosedForm,
            })
        }
        Method::Weiszfeld => {
            // sum ||y_i - A x|| = sum ||y_i - s|| with s = A x
            let points: Vec<_> = (0..model.m()).map(|i| model.block(y, i).into_owned()).collect();
            let (s, iterations, converged) = weiszfeld(&points, options.max_iters)?;
            let a = model.sensor(0);
            let x_hat = if a.is_identity(0.0) {
                s
            } else {
                a.clone()
                    .lu()
                    .solve(&s)
                    .ok_or_else(|| Error::RankDeficient { rank: model.n() - 1, n: model.n() })?
            };
            Ok(EstimateResult {
                objective: objective.value(&x_hat),
                x_hat,
                iterations,
                converged,
                method: Method::Weiszfeld,
            })
        }
        Method::FirstOrder => {
            let x0 = estimate_least_squares(model, y)?;
            first_order_minimize(&objective, &x0, options)
        }
    }
}

/// Step-size scale `1 / sum_i K_i`; quadratic costs contribute `2 sigma_max(H_i)^2`.
fn step_constant(objective: &Objective<'_>) -> f64 {
    let total: f64 = objective
        .costs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let h = objective.model.sensor(i);
            c.gain_lipschitz(h).unwrap_or_else(|_| 2.0 * sigma_max(h).powi(2))
        })
        .sum();
    if total > 0.0 {
        1.0 / total
    } else {
        1.0
    }
}

/// Subgradient descent with step `c / sqrt(k)` and best-iterate tracking,
/// followed (unless disabled) by the smoothing-continuation Newton polish.
/// With the polish enabled the subgradient phase is only a short warm start.
/// The lowest objective seen is returned.
pub fn first_order_minimize(objective: &Objective<'_>, x0: &DVector<f64>, options: &SolverOptions) -> Result<EstimateResult> {
    objective.model.check_state(x0, "initial point")?;
    let c = step_constant(objective);

    let mut x = x0.clone();
    let mut best = x0.clone();
    let mut best_f = objective.value(x0);
    let mut anchor_f = best_f;
    let mut window = 0;
    let mut iterations = 0;
    let mut stationary = false;
    let mut stalled = false;
    let budget = if options.polish {
        options.max_iters.min(WARM_START_ITERS)
    } else {
        options.max_iters
    };

    for k in 1..=budget {
        iterations = k;
        let g = objective.subgradient(&x);
        if g.iter().all(|v| *v == 0.0) {
            stationary = true;
            break;
        }
        x.axpy(-c / (k as f64).sqrt(), &g, 1.0);
        let f = objective.value(&x);
        if f < best_f {
            best_f = f;
            best.copy_from(&x);
        }
        window += 1;
        if window >= options.patience {
            if anchor_f - best_f <= options.tol * (1.0 + best_f.abs()) {
                stalled = true;
                break;
            }
            anchor_f = best_f;
            window = 0;
        }
    }
    // a zero subgradient at the evaluated point certifies optimality there
    if stationary {
        let fx = objective.value(&x);
        if fx <= best_f {
            best_f = fx;
            best.copy_from(&x);
        }
    }

    let mut converged = stationary || (stalled && !options.polish);
    if options.polish && !stationary {
        let (xp, polish_iters, polish_ok) = smoothing_newton(objective, &best);
        iterations += polish_iters;
        let fp = objective.value(&xp);
        if fp <= best_f {
            best_f = fp;
            best = xp;
        }
        converged = polish_ok;
    }

    Ok(EstimateResult {
        x_hat: best,
        objective: best_f,
        iterations,
        converged,
        method: Method::FirstOrder,
    })
}

/// Subgradient iterations spent as a warm start when the Newton polish follows.
const WARM_START_ITERS: usize = 2_000;
const NEWTON_STAGE_ITERS: usize = 60;
const MAX_STAGES: usize = 60;

/// Damped Newton on `F_eps` with `eps` shrinking tenfold per stage until the
/// smoothing gap `eps * terms` drops below `1e-13 (1 + F)`.
fn smoothing_newton(objective: &Objective<'_>, x0: &DVector<f64>) -> (DVector<f64>, usize, bool) {
    let terms = objective.smoothed_terms().max(1) as f64;
    let mut x = x0.clone();
    let r0 = objective.residual(&x);
    let mut eps = r0.amax().max(1.0);
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..MAX_STAGES {
        let stage_ok = newton_stage(objective, &mut x, eps, &mut iterations);
        let f = objective.value(&x);
        let target = 1e-13 * (1.0 + f) / terms;
        if eps <= target {
            converged = stage_ok;
            break;
        }
        eps = (eps * 0.1).max(target);
    }
    (x, iterations, converged)
}

/// Returns true when the Newton decrement test was met (or no further
/// decrease is representable in floating point).
fn newton_stage(objective: &Objective<'_>, x: &mut DVector<f64>, eps: f64, iterations: &mut usize) -> bool {
    let n = x.len();
    for _ in 0..NEWTON_STAGE_ITERS {
        *iterations += 1;
        let (f, g, h) = objective.smoothed(x, eps);
        let mut tau = 1e-13 * h.diagonal().amax() + 1e-300;
        let mut dir = -&g;
        for _ in 0..40 {
            let mut reg = h.clone();
            for j in 0..n {
                reg[(j, j)] += tau;
            }
            if let Some(chol) = reg.cholesky() {
                dir = -chol.solve(&g);
                break;
            }
            tau *= 100.0;
        }
        let slope = g.dot(&dir);
        if slope.is_nan() || slope >= 0.0 || -slope <= 1e-14 * (1.0 + f.abs()) {
            return true;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            let trial = &*x + &dir * step;
            let (ft, _, _) = objective.smoothed(&trial, eps);
            if ft <= f + 1e-4 * step * slope {
                *x = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return true;
        }
    }
    false
}
