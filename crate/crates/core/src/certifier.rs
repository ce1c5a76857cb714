//! Robustness certificates from the asymptotic gains.
//!
//! For a unit direction `u` let `margin(u) = sum_{i not in I} C_i(u) - sum_{i in I} C_i(u)`
//! for the worst attacked set `I` of size `p`, which is the set of the `p`
//! largest gains. A strictly positive margin on the whole unit sphere makes
//! the estimator robust; a strictly negative margin at one direction makes it
//! breakable by the attack in [`crate::attacks::synthesize_theorem2`]. Zero
//! margin is left undecided.
//!
//! The sphere is searched on a deterministic mesh with a known covering
//! radius `eps`. Since the margin is Lipschitz with constant at most
//! `L = 2 sum_i K_i`, a mesh minimum above `L * eps` establishes the sign
//! everywhere.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{CostKind, Gain, GainFn};
use crate::model::{rng_from_seed, Scenario};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Robust,
    NotRobust,
    Inconclusive,
    UnboundedGain,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Robust => "Robust",
            Decision::NotRobust => "NotRobust",
            Decision::Inconclusive => "Inconclusive",
            Decision::UnboundedGain => "UnboundedGain",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub decision: Decision,
    /// Smallest margin found over all searched directions; `None` when a gain is unbounded.
    pub margin_min: Option<f64>,
    pub witness_u: Vec<f64>,
    #[serde(rename = "witness_I")]
    pub witness_i: Vec<usize>,
    /// True when the decision holds over the whole sphere, not just the searched points.
    pub rigorous: bool,
    /// Covering radius of the mesh; `None` when no mesh was evaluated.
    pub mesh_resolution: Option<f64>,
    pub mesh_size: usize,
    /// `L = 2 sum_i K_i`.
    pub lipschitz: Option<f64>,
    /// `min_mesh margin - L * eps`, a lower bound on the margin over the sphere.
    pub margin_lower_bound: Option<f64>,
    /// `margin_min / m`, reported as a diagnostic only.
    pub delta: Option<f64>,
    pub directions_evaluated: usize,
    /// Sensor whose gain is unbounded, for `UnboundedGain`.
    pub unbounded_sensor: Option<usize>,
    pub n: usize,
    pub m: usize,
    pub p: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyOptions {
    /// Requested covering radius; `None` picks the finest mesh within `max_mesh`.
    pub mesh_eps: Option<f64>,
    pub random_dirs: usize,
    pub tol: f64,
    pub seed: u64,
    pub max_mesh: usize,
    pub refine: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            mesh_eps: None,
            random_dirs: 256,
            tol: 1e-9,
            seed: 0,
            max_mesh: 100_000,
            refine: true,
        }
    }
}

fn by_gain_desc(gains: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..gains.len()).collect();
    idx.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    idx
}

/// `total - 2 * (sum of p largest)` and the worst subset, ties to the lowest index.
pub(crate) fn margin_of(gains: &[f64], p: usize) -> (f64, Vec<usize>) {
    let order = by_gain_desc(gains);
    let mut worst: Vec<usize> = order[..p].to_vec();
    worst.sort_unstable();
    let total: f64 = gains.iter().sum();
    let attacked: f64 = worst.iter().map(|&i| gains[i]).sum();
    (total - 2.0 * attacked, worst)
}

/// Worst-case subset margin at one direction.
pub fn subset_margin(gains: &[Gain], p: usize) -> Result<(f64, Vec<usize>)> {
    if p > gains.len() {
        return Err(Error::InvalidArgument(format!("p = {p} exceeds the {} gains", gains.len())));
    }
    let mut values = Vec::with_capacity(gains.len());
    for (i, g) in gains.iter().enumerate() {
        match *g {
            Gain::Unbounded => return Err(Error::UnboundedGain { what: format!("sensor {i}") }),
            Gain::Finite(c) if c.is_finite() && c >= 0.0 => values.push(c),
            Gain::Finite(c) => return Err(Error::InvalidArgument(format!("gain {i} = {c} is not a finite non-negative value"))),
        }
    }
    Ok(margin_of(&values, p))
}

/// Per-sensor gain functions of a scenario.
pub(crate) struct Gains<'a> {
    fns: Vec<GainFn<'a>>,
    p: usize,
}

impl<'a> Gains<'a> {
    pub(crate) fn new(scenario: &'a Scenario) -> Result<Self> {
        let model = scenario.model();
        let fns = scenario
            .costs()
            .iter()
            .enumerate()
            .map(|(i, c)| GainFn::new(c, model.sensor(i)))
            .collect::<Result<_>>()?;
        Ok(Self { fns, p: scenario.p() })
    }

    pub(crate) fn at(&self, u: &DVector<f64>) -> Vec<Gain> {
        self.fns.iter().map(|g| g.eval(u)).collect()
    }

    /// Margin at `u`, or the first sensor with an unbounded gain there.
    pub(crate) fn margin(&self, u: &DVector<f64>) -> std::result::Result<(f64, Vec<usize>), usize> {
        let mut values = Vec::with_capacity(self.fns.len());
        for (i, g) in self.fns.iter().enumerate() {
            match g.eval(u) {
                Gain::Finite(c) => values.push(c),
                Gain::Unbounded => return Err(i),
            }
        }
        Ok(margin_of(&values, self.p))
    }

    fn margin_value(&self, u: &DVector<f64>) -> f64 {
        self.margin(u).map(|(m, _)| m).unwrap_or(f64::NEG_INFINITY)
    }

    /// `2 sum_i K_i`; a quadratic cost on an all-zero block contributes nothing.
    fn lipschitz(&self, scenario: &Scenario) -> Option<f64> {
        let mut total = 0.0;
        for (i, g) in self.fns.iter().enumerate() {
            match g.lipschitz() {
                Ok(k) => total += k,
                Err(_) if scenario.model().sensor(i).iter().all(|v| *v == 0.0) => {}
                Err(_) => return None,
            }
        }
        Some(2.0 * total)
    }
}

/// Deterministic covering of the unit sphere in `R^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereMesh {
    n: usize,
    layout: Layout,
    /// Covering radius bound.
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Layout {
    /// `{+1, -1}`.
    Line,
    /// `count` equally spaced angles.
    Circle { count: usize },
    /// A `per_axis^(n-1)` grid on each of the `2n` faces of the cube, projected radially.
    Cube { per_axis: usize },
}

impl SphereMesh {
    /// Mesh with covering radius at most `eps`, or `None` if it would exceed `max_points`.
    pub fn with_eps(n: usize, eps: f64, max_points: usize) -> Option<Self> {
        if n == 1 {
            return Some(Self {
                n,
                layout: Layout::Line,
                eps: 0.0,
            });
        }
        if !eps.is_finite() || eps <= 0.0 {
            return None;
        }
        if n == 2 {
            // chord between neighbours is at most the angular step 2 pi / count <= eps
            let count = (2.0 * std::f64::consts::PI / eps).ceil();
            if count > max_points as f64 {
                return None;
            }
            return Some(Self {
                n,
                layout: Layout::Circle { count: count as usize },
                eps,
            });
        }
        // on a face, the nearest grid point is within (h/2) sqrt(n-1) with h = 2/(k-1);
        // radial projection onto the sphere is 1-Lipschitz outside the unit ball
        let free = (n - 1) as f64;
        let per_axis = (free.sqrt() / eps).ceil() + 1.0;
        let size = 2.0 * n as f64 * per_axis.powf(free);
        if size > max_points as f64 {
            return None;
        }
        let per_axis = per_axis as usize;
        Some(Self {
            n,
            layout: Layout::Cube { per_axis },
            eps: free.sqrt() / (per_axis - 1) as f64,
        })
    }

    /// The finest mesh with at most `max_points` points.
    pub fn finest(n: usize, max_points: usize) -> Option<Self> {
        match n {
            1 => Self::with_eps(1, 0.0, max_points),
            2 => {
                if max_points < 3 {
                    return None;
                }
                Some(Self {
                    n,
                    layout: Layout::Circle { count: max_points },
                    eps: 2.0 * std::f64::consts::PI / max_points as f64,
                })
            }
            _ => {
                let free = (n - 1) as f64;
                let faces = 2.0 * n as f64;
                let mut per_axis = (max_points as f64 / faces).powf(1.0 / free).floor() as usize;
                while per_axis >= 2 && faces * (per_axis as f64).powf(free) > max_points as f64 {
                    per_axis -= 1;
                }
                if per_axis < 2 {
                    return None;
                }
                Some(Self {
                    n,
                    layout: Layout::Cube { per_axis },
                    eps: free.sqrt() / (per_axis - 1) as f64,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        match self.layout {
            Layout::Line => 2,
            Layout::Circle { count } => count,
            Layout::Cube { per_axis } => 2 * self.n * per_axis.pow((self.n - 1) as u32),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, index: usize) -> DVector<f64> {
        match self.layout {
            Layout::Line => DVector::from_element(1, if index == 0 { 1.0 } else { -1.0 }),
            Layout::Circle { count } => {
                let theta = 2.0 * std::f64::consts::PI * index as f64 / count as f64;
                DVector::from_column_slice(&[theta.cos(), theta.sin()])
            }
            Layout::Cube { per_axis } => {
                let face_size = per_axis.pow((self.n - 1) as u32);
                let face = index / face_size;
                let mut rest = index % face_size;
                let axis = face / 2;
                let sign = if face.is_multiple_of(2) { 1.0 } else { -1.0 };
                let h = 2.0 / (per_axis - 1) as f64;
                let mut v = DVector::zeros(self.n);
                for j in 0..self.n {
                    if j == axis {
                        v[j] = sign;
                    } else {
                        v[j] = -1.0 + h * (rest % per_axis) as f64;
                        rest /= per_axis;
                    }
                }
                v.normalize()
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Best {
    margin: f64,
    index: usize,
}

fn min_best(a: Best, b: Best) -> Best {
    match a.margin.total_cmp(&b.margin).then(a.index.cmp(&b.index)) {
        Ordering::Greater => b,
        _ => a,
    }
}

fn random_directions(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            out.push(v / norm);
        }
    }
    out
}

/// Pattern search on the sphere from `start`, shrinking the step when no
/// coordinate move improves the margin.
fn refine(gains: &Gains<'_>, start: &DVector<f64>, step0: f64) -> (DVector<f64>, f64, usize) {
    let n = start.len();
    let mut u = start.clone();
    let mut best = gains.margin_value(&u);
    let mut step = step0;
    let mut evals = 0;
    while step > 1e-12 && evals < 20_000 {
        let mut improved = false;
        'moves: for j in 0..n {
            for sign in [1.0, -1.0] {
                let mut cand = u.clone();
                cand[j] += sign * step;
                let norm = cand.norm();
                if norm == 0.0 {
                    continue;
                }
                cand /= norm;
                evals += 1;
                let m = gains.margin_value(&cand);
                if m < best {
                    best = m;
                    u = cand;
                    improved = true;
                    break 'moves;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (u, best, evals)
}

fn fill_subset(first: usize, m: usize, p: usize) -> Vec<usize> {
    let mut subset = vec![first];
    subset.extend((0..m).filter(|&i| i != first).take(p.saturating_sub(1)));
    subset.truncate(p);
    subset.sort_unstable();
    subset
}

/// Decides robustness of the scenario's estimator against `p`-sparse attacks.
pub fn certify(scenario: &Scenario, options: &CertifyOptions) -> Result<Certificate> {
    let model = scenario.model();
    let (n, m, p) = (model.n(), model.m(), scenario.p());
    let gains = Gains::new(scenario)?;

    let mut cert = Certificate {
        decision: Decision::Inconclusive,
        margin_min: None,
        witness_u: Vec::new(),
        witness_i: Vec::new(),
        rigorous: false,
        mesh_resolution: None,
        mesh_size: 0,
        lipschitz: gains.lipschitz(scenario),
        margin_lower_bound: None,
        delta: None,
        directions_evaluated: 0,
        unbounded_sensor: None,
        n,
        m,
        p,
    };

    // coordinate directions already expose every quadratic cost on a nonzero block
    let mut screen: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            e
        })
        .collect();
    if n > 1 {
        screen.extend(random_directions(n, options.random_dirs, options.seed ^ 0x05c4_ee11));
    }
    cert.directions_evaluated += screen.len();
    let unbounded = screen.iter().find_map(|u| gains.margin(u).err().map(|i| (u.clone(), i)));
    if let Some((u, sensor)) = unbounded {
        cert.unbounded_sensor = Some(sensor);
        cert.witness_u = u.iter().copied().collect();
        if p >= 1 {
            cert.decision = Decision::UnboundedGain;
            cert.witness_i = fill_subset(sensor, m, p);
        } else {
            // with p = 0 the only admissible attack is a = 0
            cert.decision = Decision::Robust;
        }
        cert.rigorous = true;
        return Ok(cert);
    }

    let mesh = match options.mesh_eps {
        Some(eps) => SphereMesh::with_eps(n, eps, options.max_mesh),
        None => SphereMesh::finest(n, options.max_mesh),
    };

    let mut best_u: Option<DVector<f64>> = None;
    let mut best_margin = f64::INFINITY;
    let mut mesh_min = None;
    if let Some(mesh) = &mesh {
        let found = (0..mesh.len())
            .into_par_iter()
            .map(|index| Best {
                margin: gains.margin_value(&mesh.point(index)),
                index,
            })
            .reduce(
                || Best {
                    margin: f64::INFINITY,
                    index: usize::MAX,
                },
                min_best,
            );
        cert.mesh_size = mesh.len();
        cert.mesh_resolution = Some(mesh.eps);
        cert.directions_evaluated += mesh.len();
        mesh_min = Some(found.margin);
        best_margin = found.margin;
        best_u = Some(mesh.point(found.index));
    }

    if n > 1 {
        let dirs = random_directions(n, options.random_dirs, options.seed);
        cert.directions_evaluated += dirs.len();
        let found = dirs
            .par_iter()
            .enumerate()
            .map(|(index, u)| Best {
                margin: gains.margin_value(u),
                index,
            })
            .reduce(
                || Best {
                    margin: f64::INFINITY,
                    index: usize::MAX,
                },
                min_best,
            );
        if found.index != usize::MAX && found.margin < best_margin {
            best_margin = found.margin;
            best_u = Some(dirs[found.index].clone());
        }
        if options.refine {
            if let Some(start) = &best_u {
                let step0 = mesh.map(|m| m.eps.max(1e-6)).unwrap_or(0.1);
                let (u, margin, evals) = refine(&gains, start, step0);
                cert.directions_evaluated += evals;
                if margin < best_margin {
                    best_margin = margin;
                    best_u = Some(u);
                }
            }
        }
    }

    let u = best_u.ok_or_else(|| Error::Internal("no direction was evaluated".into()))?;
    let (margin, worst) = gains
        .margin(&u)
        .map_err(|i| Error::Internal(format!("gain of sensor {i} became unbounded after screening")))?;
    debug_assert!((margin - best_margin).abs() <= 1e-12 * (1.0 + margin.abs()));
    cert.margin_min = Some(margin);
    cert.delta = Some(margin / m as f64);
    cert.witness_u = u.iter().copied().collect();
    cert.witness_i = worst;

    if let (Some(mesh), Some(lip), Some(mesh_min)) = (&mesh, cert.lipschitz, mesh_min) {
        cert.margin_lower_bound = Some(mesh_min - lip * mesh.eps);
    }

    if margin < -options.tol {
        cert.decision = Decision::NotRobust;
        cert.rigorous = true;
    } else if margin > options.tol && cert.margin_lower_bound.is_some_and(|lb| lb > 0.0) {
        cert.decision = Decision::Robust;
        cert.rigorous = true;
    } else {
        cert.decision = Decision::Inconclusive;
        cert.rigorous = false;
    }
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRow {
    pub u: Vec<f64>,
    pub margin: f64,
    #[serde(rename = "worst_I")]
    pub worst_i: Vec<usize>,
}

/// Margin and worst subset at each of the given unit directions, in order.
pub fn margin_landscape(scenario: &Scenario, directions: &[DVector<f64>]) -> Result<Vec<LandscapeRow>> {
    let gains = Gains::new(scenario)?;
    let n = scenario.model().n();
    directions
        .iter()
        .enumerate()
        .map(|(k, u)| {
            if u.len() != n {
                return Err(Error::dimension(format!("direction {k}"), n, u.len()));
            }
            if (u.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "direction {k} has norm {}, expected a unit vector",
                    u.norm()
                )));
            }
            let (margin, worst_i) = subset_margin(&gains.at(u), scenario.p())?;
            Ok(LandscapeRow {
                u: u.iter().copied().collect(),
                margin,
                worst_i,
            })
        })
        .collect()
}

/// True when some sensor uses the quadratic cost on a nonzero block.
pub fn has_unbounded_gain(scenario: &Scenario) -> bool {
    scenario
        .costs()
        .iter()
        .enumerate()
        .any(|(i, c)| c.kind() == CostKind::SquaredL2 && scenario.model().sensor(i).iter().any(|v| *v != 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{enumerate_subsets, MeasurementModel, NoiseSpec};
    use nalgebra::DMatrix;

    fn finite(v: &[f64]) -> Vec<Gain> {
        v.iter().map(|&c| Gain::Finite(c)).collect()
    }

    fn brute_force(gains: &[f64], p: usize) -> (f64, Vec<usize>) {
        let total: f64 = gains.iter().sum();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for subset in enumerate_subsets(gains.len(), p) {
            let attacked: f64 = subset.iter().map(|&i| gains[i]).sum();
            let margin = total - 2.0 * attacked;
            if best.as_ref().is_none_or(|(b, _)| margin < *b) {
                best = Some((margin, subset));
            }
        }
        best.unwrap()
    }

    #[test]
    fn margin_examples_match_brute_force() {
        let (m, worst) = subset_margin(&finite(&[1.0; 5]), 2).unwrap();
        assert_eq!((m, worst.clone()), (1.0, vec![0, 1]));
        assert_eq!(brute_force(&[1.0; 5], 2), (1.0, worst));

        let (m, worst) = subset_margin(&finite(&[5.0, 1.0, 1.0, 1.0, 1.0]), 1).unwrap();
        assert_eq!((m, worst.clone()), (-1.0, vec![0]));
        assert_eq!(brute_force(&[5.0, 1.0, 1.0, 1.0, 1.0], 1), (-1.0, worst));

        let (m, worst) = subset_margin(&finite(&[0.5, 2.0, 1.5]), 0).unwrap();
        assert_eq!((m, worst), (4.0, vec![]));
    }

    #[test]
    fn margin_rejects_unbounded() {
        let gains = vec![Gain::Finite(1.0), Gain::Unbounded];
        assert!(matches!(subset_margin(&gains, 1), Err(Error::UnboundedGain { .. })));
    }

    #[test]
    fn scalar_l1_certificates() {
        let robust = Scenario::identical_scalar(3, CostKind::L1, 1).unwrap();
        let cert = certify(&robust, &CertifyOptions::default()).unwrap();
        assert_eq!(cert.decision, Decision::Robust);
        assert_eq!(cert.margin_min, Some(1.0));
        assert!(cert.rigorous);
        let rows = margin_landscape(&robust, &[DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)]).unwrap();
        assert!(rows.iter().all(|r| r.margin == 1.0));

        let broken = Scenario::identical_scalar(3, CostKind::L1, 2).unwrap();
        let cert = certify(&broken, &CertifyOptions::default()).unwrap();
        assert_eq!(cert.decision, Decision::NotRobust);
        assert_eq!(cert.margin_min, Some(-1.0));
        assert_eq!(cert.witness_i, vec![0, 1]);
        assert_eq!(cert.witness_u, vec![1.0]);
    }

    #[test]
    fn quadratic_sensor_gives_unbounded_gain() {
        let model = MeasurementModel::identical_scalar(3).unwrap();
        let s = Scenario::new(
            model,
            vec![CostKind::L1, CostKind::SquaredL2, CostKind::L1],
            1,
            NoiseSpec::none(),
            0,
        )
        .unwrap();
        assert!(has_unbounded_gain(&s));
        let cert = certify(&s, &CertifyOptions::default()).unwrap();
        assert_eq!(cert.decision, Decision::UnboundedGain);
        assert_eq!(cert.unbounded_sensor, Some(1));
        assert_eq!(cert.witness_i, vec![1]);
    }

    #[test]
    fn equality_margin_is_inconclusive() {
        let s = Scenario::identical_scalar(4, CostKind::L1, 2).unwrap();
        let cert = certify(&s, &CertifyOptions::default()).unwrap();
        assert_eq!(cert.decision, Decision::Inconclusive);
        assert!(!cert.rigorous);
    }

    #[test]
    fn circle_mesh_covering() {
        let mesh = SphereMesh::with_eps(2, 0.1, 100_000).unwrap();
        assert_eq!(mesh.len(), 63);
        for i in 0..mesh.len() {
            assert!((mesh.point(i).norm() - 1.0).abs() < 1e-12);
        }
        let probe = DVector::from_column_slice(&[(0.05f64).cos(), (0.05f64).sin()]);
        let nearest = (0..mesh.len()).map(|i| (mesh.point(i) - &probe).norm()).fold(f64::INFINITY, f64::min);
        assert!(nearest <= mesh.eps);
    }

    #[test]
    fn cube_mesh_covering_radius_holds_on_samples() {
        let mesh = SphereMesh::with_eps(3, 0.25, 100_000).unwrap();
        assert!(mesh.eps <= 0.25);
        let points: Vec<_> = (0..mesh.len()).map(|i| mesh.point(i)).collect();
        for u in random_directions(3, 300, 11) {
            let nearest = points.iter().map(|p| (p - &u).norm()).fold(f64::INFINITY, f64::min);
            assert!(nearest <= mesh.eps, "{nearest} > {}", mesh.eps);
        }
    }

    #[test]
    fn oversized_mesh_is_declined() {
        assert!(SphereMesh::with_eps(6, 1e-3, 100_000).is_none());
        let s = Scenario::new(
            MeasurementModel::new(6, vec![DMatrix::identity(6, 6); 5]).unwrap(),
            vec![CostKind::L2Norm; 5],
            1,
            NoiseSpec::none(),
            0,
        )
        .unwrap();
        let opts = CertifyOptions {
            mesh_eps: Some(1e-3),
            random_dirs: 32,
            ..Default::default()
        };
        let cert = certify(&s, &opts).unwrap();
        assert_eq!(cert.mesh_resolution, None);
        assert!(!cert.rigorous);
        assert_eq!(cert.decision, Decision::Inconclusive);
    }

    #[test]
    fn landscape_checks_unit_norm() {
        let s = Scenario::identical_scalar(3, CostKind::L1, 1).unwrap();
        assert!(margin_landscape(&s, &[DVector::from_element(1, 2.0)]).is_err());
    }

    #[test]
    fn anisotropic_landscape_matches_direct_evaluation() {
        let model = MeasurementModel::new(
            2,
            vec![
                DMatrix::from_row_slice(1, 2, &[2.0, 0.0]),
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]),
            ],
        )
        .unwrap();
        let s = Scenario::new(model, vec![CostKind::L1, CostKind::L2Norm], 1, NoiseSpec::none(), 0).unwrap();
        let dirs: Vec<_> = (0..8)
            .map(|k| {
                let th = std::f64::consts::FRAC_PI_4 * k as f64;
                DVector::from_column_slice(&[th.cos(), th.sin()])
            })
            .collect();
        let rows = margin_landscape(&s, &dirs).unwrap();
        for (row, u) in rows.iter().zip(&dirs) {
            let c0 = (2.0 * u[0]).abs();
            let c1 = (u[1] * u[1] + (u[0] + u[1]).powi(2)).sqrt();
            let expect = -(c0 - c1).abs();
            assert!((row.margin - expect).abs() < 1e-12);
            let worst = if c0 >= c1 { 0 } else { 1 };
            assert_eq!(row.worst_i, vec![worst]);
        }
    }
}
