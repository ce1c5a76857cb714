//! Attack synthesis.
//!
//! The witness attack replaces each attacked block by `t H_i u0` for a
//! direction `u0` and subset `I0` with negative margin; the estimate then
//! follows `t u0` off to infinity. Random gross corruption and the additive
//! attack aimed at the least-squares estimate serve as baselines.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::certifier::Certificate;
use crate::model::{apply_attack, derive_seed, rng_from_seed, MeasurementModel, SparseAttack};
use crate::solver::estimate_least_squares;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// `y_i = t H_i u0` on the support.
    Theorem2,
    /// Support blocks replaced by `U[-t, t]` entries.
    RandomGross,
    /// Additive `a_i = t H_i d` on the support.
    TargetedLs,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Theorem2 => "theorem2",
            AttackKind::RandomGross => "random_gross",
            AttackKind::TargetedLs => "targeted_ls",
        })
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theorem2" => Ok(Self::Theorem2),
            "random" | "random_gross" => Ok(Self::RandomGross),
            "targeted" | "targeted_ls" => Ok(Self::TargetedLs),
            other => Err(Error::validation(
                "kind",
                format!("unknown attack kind {other:?}; expected theorem2|random|targeted"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub kind: AttackKind,
    /// Unit direction `u0` for `theorem2`, bias direction for `targeted_ls`.
    pub direction: Option<Vec<f64>>,
    pub support: Vec<usize>,
    /// `t` for `theorem2` and `targeted_ls`, noise scale for `random_gross`.
    pub magnitude: f64,
}

impl AttackPlan {
    pub fn theorem2(u0: Vec<f64>, support: Vec<usize>, t: f64) -> Self {
        Self {
            kind: AttackKind::Theorem2,
            direction: Some(u0),
            support,
            magnitude: t,
        }
    }

    pub fn random_gross(support: Vec<usize>, scale: f64) -> Self {
        Self {
            kind: AttackKind::RandomGross,
            direction: None,
            support,
            magnitude: scale,
        }
    }

    pub fn targeted_ls(direction: Vec<f64>, support: Vec<usize>, t: f64) -> Self {
        Self {
            kind: AttackKind::TargetedLs,
            direction: Some(direction),
            support,
            magnitude: t,
        }
    }

    /// The witness attack of a certificate at magnitude `t`.
    pub fn from_certificate(cert: &Certificate, t: f64) -> Self {
        Self::theorem2(cert.witness_u.clone(), cert.witness_i.clone(), t)
    }

    pub fn with_magnitude(&self, t: f64) -> Self {
        Self {
            magnitude: t,
            ..self.clone()
        }
    }

    pub fn validate(&self, model: &MeasurementModel, p: usize) -> Result<()> {
        check_support(model, &self.support, p)?;
        if !(self.magnitude.is_finite() && self.magnitude >= 0.0) {
            return Err(Error::validation("attack.t", format!("must be finite and non-negative, got {}", self.magnitude)));
        }
        match self.kind {
            AttackKind::RandomGross => Ok(()),
            AttackKind::Theorem2 | AttackKind::TargetedLs => {
                let dir = self
                    .direction
                    .as_ref()
                    .ok_or_else(|| Error::validation("attack.u0", "a direction is required"))?;
                if dir.len() != model.n() {
                    return Err(Error::validation(
                        "attack.u0",
                        format!("expected {} entries, found {}", model.n(), dir.len()),
                    ));
                }
                if self.kind == AttackKind::Theorem2 {
                    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if (norm - 1.0).abs() > 1e-9 {
                        return Err(Error::validation("attack.u0", format!("must be a unit vector, norm is {norm}")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Manipulated measurements and the induced sparse attack `y - z`.
    pub fn realize(&self, model: &MeasurementModel, z: &DVector<f64>, p: usize, seed: u64) -> Result<(DVector<f64>, SparseAttack)> {
        self.validate(model, p)?;
        match self.kind {
            AttackKind::Theorem2 => synthesize_theorem2(model, z, self, p),
            AttackKind::RandomGross => {
                let y = random_gross_attack(model, z, &self.support, self.magnitude, seed)?;
                let attack = induced_attack(model, z, &y, &self.support, p)?;
                Ok((y, attack))
            }
            AttackKind::TargetedLs => {
                let dir = DVector::from_column_slice(self.direction.as_deref().unwrap_or_default());
                let targeted = targeted_ls_attack(model, &self.support, p, &dir, self.magnitude)?;
                let y = apply_attack(model, z, &targeted.attack)?;
                Ok((y, targeted.attack))
            }
        }
    }
}

fn check_support(model: &MeasurementModel, support: &[usize], p: usize) -> Result<()> {
    if support.len() > p {
        return Err(Error::validation(
            "attack.support",
            format!("{} sensors exceed the budget p = {p}", support.len()),
        ));
    }
    let mut seen = vec![false; model.m()];
    for &i in support {
        if i >= model.m() {
            return Err(Error::validation("attack.support", format!("sensor {i} out of range (m = {})", model.m())));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::validation("attack.support", format!("sensor {i} listed twice")));
        }
    }
    Ok(())
}

fn induced_attack(model: &MeasurementModel, z: &DVector<f64>, y: &DVector<f64>, support: &[usize], p: usize) -> Result<SparseAttack> {
    let blocks: BTreeMap<_, _> = support
        .iter()
        .map(|&i| (i, model.block(y, i) - model.block(z, i)))
        .collect();
    SparseAttack::new(model, p, blocks)
}

/// Replaces each attacked block by `t H_i u0`, i.e. `a_i = t H_i u0 - z_i`.
pub fn synthesize_theorem2(model: &MeasurementModel, z: &DVector<f64>, plan: &AttackPlan, p: usize) -> Result<(DVector<f64>, SparseAttack)> {
    if plan.kind != AttackKind::Theorem2 {
        return Err(Error::InvalidArgument(format!("expected a theorem2 plan, got {}", plan.kind)));
    }
    plan.validate(model, p)?;
    model.check_stacked(z, "measurements")?;
    let u0 = DVector::from_column_slice(plan.direction.as_deref().unwrap_or_default());
    let mut y = z.clone();
    for &i in &plan.support {
        let r = model.block_range(i);
        let target = model.sensor(i) * &u0 * plan.magnitude;
        y.rows_mut(r.start, r.len()).copy_from(&target);
    }
    let attack = induced_attack(model, z, &y, &plan.support, p)?;
    Ok((y, attack))
}

/// Replaces the support blocks by independent `U[-scale, scale]` entries.
pub fn random_gross_attack(model: &MeasurementModel, z: &DVector<f64>, support: &[usize], scale: f64, seed: u64) -> Result<DVector<f64>> {
    check_support(model, support, support.len())?;
    model.check_stacked(z, "measurements")?;
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(Error::validation("attack.scale", "must be finite and non-negative"));
    }
    let mut rng = rng_from_seed(derive_seed(seed, &[0x00a7_7ac4]));
    let mut y = z.clone();
    for &i in support {
        for row in model.block_range(i) {
            y[row] = if scale == 0.0 { 0.0 } else { rng.random_range(-scale..=scale) };
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetedAttack {
    pub attack: SparseAttack,
    /// Shift of the least-squares estimate, `(H^T H)^{-1} H^T a`.
    pub predicted_shift: DVector<f64>,
}

/// Additive blocks `a_i = t H_i d` on the support, with the resulting least-squares shift.
pub fn targeted_ls_attack(model: &MeasurementModel, support: &[usize], p: usize, direction: &DVector<f64>, t: f64) -> Result<TargetedAttack> {
    check_support(model, support, p)?;
    model.check_state(direction, "bias direction")?;
    let blocks: BTreeMap<_, _> = support.iter().map(|&i| (i, model.sensor(i) * direction * t)).collect();
    let attack = SparseAttack::new(model, p, blocks)?;
    let predicted_shift = estimate_least_squares(model, &attack.stacked(model))?;
    Ok(TargetedAttack { attack, predicted_shift })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn theorem2_replaces_attacked_blocks() {
        let model = MeasurementModel::identical_scalar(3).unwrap();
        let z = dv(&[0.1, -0.2, 0.05]);
        let plan = AttackPlan::theorem2(vec![1.0], vec![0, 1], 100.0);
        let (y, attack) = synthesize_theorem2(&model, &z, &plan, 2).unwrap();
        assert_eq!(y, dv(&[100.0, 100.0, 0.05]));
        assert_eq!(attack.support(), vec![0, 1]);
        assert!(SparseAttack::is_sparse_vector(&model, &(&y - &z), 2));
    }

    #[test]
    fn theorem2_at_zero_magnitude_zeroes_blocks() {
        let model = MeasurementModel::identical_scalar(3).unwrap();
        let z = dv(&[0.1, -0.2, 0.05]);
        let plan = AttackPlan::theorem2(vec![-1.0], vec![2], 0.0);
        let (y, attack) = synthesize_theorem2(&model, &z, &plan, 1).unwrap();
        assert_eq!(y, dv(&[0.1, -0.2, 0.0]));
        assert_eq!(attack.block(2).unwrap(), &dv(&[-0.05]));
    }

    #[test]
    fn theorem2_validates_plan() {
        let model = MeasurementModel::identical_scalar(3).unwrap();
        let z = dv(&[0.0; 3]);
        let over_budget = AttackPlan::theorem2(vec![1.0], vec![0, 1], 1.0);
        assert!(synthesize_theorem2(&model, &z, &over_budget, 1).is_err());
        let not_unit = AttackPlan::theorem2(vec![2.0], vec![0], 1.0);
        assert!(synthesize_theorem2(&model, &z, &not_unit, 1).is_err());
    }

    #[test]
    fn random_gross_examples() {
        let model = MeasurementModel::identical_scalar(4).unwrap();
        let z = dv(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(random_gross_attack(&model, &z, &[1, 3], 0.0, 5).unwrap(), dv(&[1.0, 0.0, 3.0, 0.0]));
        let a = random_gross_attack(&model, &z, &[0, 2], 50.0, 9).unwrap();
        let b = random_gross_attack(&model, &z, &[0, 2], 50.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!((a[1], a[3]), (2.0, 4.0));
        assert_eq!(random_gross_attack(&model, &z, &[], 50.0, 9).unwrap(), z);
    }

    #[test]
    fn targeted_ls_examples() {
        let model = MeasurementModel::identical_scalar(3).unwrap();
        let t = targeted_ls_attack(&model, &[0], 1, &dv(&[1.0]), 3.0).unwrap();
        assert_eq!(t.attack.stacked(&model), dv(&[3.0, 0.0, 0.0]));
        assert!((t.predicted_shift[0] - 1.0).abs() < 1e-14);

        let zero = targeted_ls_attack(&model, &[0], 1, &dv(&[1.0]), 0.0).unwrap();
        assert_eq!(zero.predicted_shift[0], 0.0);

        let model = MeasurementModel::new(
            2,
            vec![
                DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, -1.0]),
            ],
        )
        .unwrap();
        let u = dv(&[0.3, -0.7]);
        let all = targeted_ls_attack(&model, &[0, 1], 2, &u, 4.0).unwrap();
        assert!((all.predicted_shift - u * 4.0).norm() < 1e-12);
    }

    #[test]
    fn targeted_ls_rejects_budget_violation() {
        let model = MeasurementModel::identical_scalar(3).unwrap();
        assert!(targeted_ls_attack(&model, &[0, 1], 1, &dv(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("random".parse::<AttackKind>().unwrap(), AttackKind::RandomGross);
        assert_eq!("targeted".parse::<AttackKind>().unwrap(), AttackKind::TargetedLs);
        assert!("stealthy".parse::<AttackKind>().is_err());
    }
}
