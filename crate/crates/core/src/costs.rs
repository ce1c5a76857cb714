//! Per-sensor convex costs and their asymptotic gains.
//!
//! Every cost is convex, even, non-negative and vanishes at the origin. The
//! asymptotic gain of sensor `i` along a state direction `u` is the slope
//! `lim_{t -> inf} f_i(t H_i u) / t`; it is a semi-norm in `u` whenever it is
//! finite, and it bounds the one-step increase `f_i(v + H_i u) - f_i(v)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 1.0;

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostKind {
    /// `||v||_2^2`, the least-squares cost.
    SquaredL2,
    /// `||v||_1`.
    L1,
    /// `||v||_2`; with identity blocks this yields the geometric median.
    #[serde(rename = "l2norm")]
    L2Norm,
    /// `min_a ||v - a||_2^2 + lambda ||a||_1`, a per-coordinate Huber function.
    LassoEnvelope {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
}

impl CostKind {
    pub fn name(&self) -> &'static str {
        match self {
            CostKind::SquaredL2 => "squared_l2",
            CostKind::L1 => "l1",
            CostKind::L2Norm => "l2norm",
            CostKind::LassoEnvelope { .. } => "lasso_envelope",
        }
    }

    pub fn all_default() -> [CostKind; 4] {
        [
            CostKind::SquaredL2,
            CostKind::L1,
            CostKind::L2Norm,
            CostKind::LassoEnvelope {
                lambda: DEFAULT_LAMBDA,
            },
        ]
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostKind::LassoEnvelope { lambda } => write!(f, "lasso_envelope(lambda={lambda})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Asymptotic gain value. `Unbounded` is an ordinary outcome, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    Finite(f64),
    Unbounded,
}

impl Gain {
    pub fn finite(self) -> Option<f64> {
        match self {
            Gain::Finite(c) => Some(c),
            Gain::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Gain::Unbounded)
    }
}

impl fmt::Display for Gain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gain::Finite(c) => write!(f, "{c}"),
            Gain::Unbounded => f.write_str("UNBOUNDED"),
        }
    }
}

/// A cost kind bound to the residual dimension `m_i` of its sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSpec {
    kind: CostKind,
    dim: usize,
}

/// Huber-type scalar envelope: `s^2` for `|s| <= lambda/2`, else `lambda |s| - lambda^2 / 4`.
pub(crate) fn envelope(lambda: f64, s: f64) -> f64 {
    let a = s.abs();
    if a <= 0.5 * lambda {
        s * s
    } else {
        lambda * a - 0.25 * lambda * lambda
    }
}

fn envelope_slope(lambda: f64, s: f64) -> f64 {
    if s.abs() <= 0.5 * lambda {
        2.0 * s
    } else {
        lambda * s.signum()
    }
}

fn sign_or_zero(s: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s.signum()
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl CostSpec {
    pub fn new(kind: CostKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("dim", "residual dimension must be positive"));
        }
        if let CostKind::LassoEnvelope { lambda } = kind {
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(Error::validation("lambda", format!("must be positive and finite, got {lambda}")));
            }
        }
        Ok(Self { kind, dim })
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// False exactly for the quadratic cost.
    pub fn gain_finite(&self) -> bool {
        !matches!(self.kind, CostKind::SquaredL2)
    }

    fn check(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::dimension(what, self.dim, v.len()));
        }
        Ok(())
    }

    fn check_block(&self, h: &DMatrix<f64>) -> Result<()> {
        if h.nrows() != self.dim {
            return Err(Error::dimension("H_i rows", self.dim, h.nrows()));
        }
        Ok(())
    }

    pub fn eval(&self, v: &[f64]) -> Result<f64> {
        self.check(v, "residual")?;
        Ok(self.value(v))
    }

    /// Unchecked evaluation; `v.len()` must equal `dim`.
    pub(crate) fn value(&self, v: &[f64]) -> f64 {
        match self.kind {
            CostKind::SquaredL2 => v.iter().map(|x| x * x).sum(),
            CostKind::L1 => v.iter().map(|x| x.abs()).sum(),
            CostKind::L2Norm => norm2(v),
            CostKind::LassoEnvelope { lambda } => v.iter().map(|&s| envelope(lambda, s)).sum(),
        }
    }

    /// An element of the subdifferential. Kink coordinates get 0.
    pub fn subgradient(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v, "residual")?;
        let mut g = vec![0.0; self.dim];
        self.subgradient_into(v, &mut g);
        Ok(g)
    }

    pub(crate) fn subgradient_into(&self, v: &[f64], out: &mut [f64]) {
        match self.kind {
            CostKind::SquaredL2 => out.iter_mut().zip(v).for_each(|(o, x)| *o = 2.0 * x),
            CostKind::L1 => out.iter_mut().zip(v).for_each(|(o, x)| *o = sign_or_zero(*x)),
            CostKind::L2Norm => {
                let r = norm2(v);
                if r == 0.0 {
                    out.iter_mut().for_each(|o| *o = 0.0);
                } else {
                    out.iter_mut().zip(v).for_each(|(o, x)| *o = x / r);
                }
            }
            CostKind::LassoEnvelope { lambda } => out
                .iter_mut()
                .zip(v)
                .for_each(|(o, x)| *o = envelope_slope(lambda, *x)),
        }
    }

    /// Gain along residual-space direction `w = H_i u`.
    pub(crate) fn gain_of_image(&self, w: &[f64], scale: f64) -> Gain {
        match self.kind {
            CostKind::SquaredL2 => {
                if norm2(w) <= 1e-13 * scale {
                    Gain::Finite(0.0)
                } else {
                    Gain::Unbounded
                }
            }
            CostKind::L1 => Gain::Finite(w.iter().map(|x| x.abs()).sum()),
            CostKind::L2Norm => Gain::Finite(norm2(w)),
            CostKind::LassoEnvelope { lambda } => Gain::Finite(lambda * w.iter().map(|x| x.abs()).sum::<f64>()),
        }
    }

    /// `C_i(u) = lim_{t -> inf} f(t H_i u) / t`, in closed form.
    pub fn asymptotic_gain(&self, h: &DMatrix<f64>, u: &DVector<f64>) -> Result<Gain> {
        self.check_block(h)?;
        if u.len() != h.ncols() {
            return Err(Error::dimension("direction", h.ncols(), u.len()));
        }
        let w = h * u;
        Ok(self.gain_of_image(w.as_slice(), h.norm() * u.norm()))
    }

    /// `K_i` with `|C_i(u) - C_i(v)| <= K_i ||u - v||`.
    pub fn gain_lipschitz(&self, h: &DMatrix<f64>) -> Result<f64> {
        self.check_block(h)?;
        let smax = sigma_max(h);
        let rows = (h.nrows() as f64).sqrt();
        match self.kind {
            CostKind::SquaredL2 => Err(Error::UnboundedGain {
                what: "squared_l2 cost".into(),
            }),
            CostKind::L2Norm => Ok(smax),
            CostKind::L1 => Ok(rows * smax),
            CostKind::LassoEnvelope { lambda } => Ok(lambda * rows * smax),
        }
    }

    /// `h_i(u, v, t) = [f(v + t H_i u) - f(v)] / t`.
    pub fn finite_horizon_gain(&self, h: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>, t: f64) -> Result<f64> {
        self.check_block(h)?;
        self.check(v.as_slice(), "offset")?;
        if u.len() != h.ncols() {
            return Err(Error::dimension("direction", h.ncols(), u.len()));
        }
        if t.is_nan() || t <= 0.0 {
            return Err(Error::InvalidArgument(format!("horizon t must be positive, got {t}")));
        }
        let shifted = v + (h * u) * t;
        Ok((self.value(shifted.as_slice()) - self.value(v.as_slice())) / t)
    }

    /// `f(t w) / t` for each `t`; non-decreasing for every convex cost vanishing at 0.
    pub fn radial_profile(&self, w: &[f64], ts: &[f64]) -> Result<Vec<f64>> {
        self.check(w, "direction")?;
        let mut prev = 0.0;
        for &t in ts {
            if t.is_nan() || t <= 0.0 {
                return Err(Error::InvalidArgument(format!("profile abscissae must be positive, got {t}")));
            }
            if t <= prev {
                return Err(Error::InvalidArgument("profile abscissae must be strictly increasing".into()));
            }
            prev = t;
        }
        let mut scaled = vec![0.0; w.len()];
        Ok(ts
            .iter()
            .map(|&t| {
                scaled.iter_mut().zip(w).for_each(|(s, x)| *s = t * x);
                self.value(&scaled) / t
            })
            .collect())
    }
}

pub(crate) fn sigma_max(h: &DMatrix<f64>) -> f64 {
    h.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// The gain function `u -> C_i(u)` of one sensor.
#[derive(Debug, Clone, Copy)]
pub struct GainFn<'a> {
    cost: &'a CostSpec,
    h: &'a DMatrix<f64>,
    scale: f64,
}

impl<'a> GainFn<'a> {
    pub fn new(cost: &'a CostSpec, h: &'a DMatrix<f64>) -> Result<Self> {
        cost.check_block(h)?;
        Ok(Self {
            cost,
            h,
            scale: h.norm(),
        })
    }

    pub fn eval(&self, u: &DVector<f64>) -> Gain {
        let w = self.h * u;
        self.cost.gain_of_image(w.as_slice(), self.scale * u.norm())
    }

    pub fn lipschitz(&self) -> Result<f64> {
        self.cost.gain_lipschitz(self.h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: CostKind, dim: usize) -> CostSpec {
        CostSpec::new(kind, dim).unwrap()
    }

    fn lasso(lambda: f64) -> CostKind {
        CostKind::LassoEnvelope { lambda }
    }

    #[test]
    fn every_kind_vanishes_at_zero() {
        for kind in CostKind::all_default() {
            assert_eq!(spec(kind, 3).eval(&[0.0; 3]).unwrap(), 0.0, "{kind}");
        }
    }

    #[test]
    fn eval_examples() {
        assert_eq!(spec(CostKind::SquaredL2, 2).eval(&[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(spec(CostKind::L1, 2).eval(&[3.0, -4.0]).unwrap(), 7.0);
        assert_eq!(spec(CostKind::L2Norm, 2).eval(&[3.0, -4.0]).unwrap(), 5.0);
        // inner minimizers: a = 0 for s = 0.5, a = 2 for s = 3
        let env = spec(lasso(2.0), 1);
        assert!((env.eval(&[0.5]).unwrap() - 0.25).abs() < 1e-15);
        assert!((env.eval(&[3.0]).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn eval_rejects_wrong_dimension() {
        assert!(matches!(spec(CostKind::L1, 2).eval(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn nonpositive_lambda_is_rejected() {
        assert!(CostSpec::new(lasso(0.0), 1).is_err());
        assert!(CostSpec::new(lasso(f64::NAN), 1).is_err());
    }

    #[test]
    fn subgradient_examples() {
        assert_eq!(spec(CostKind::SquaredL2, 2).subgradient(&[1.0, 2.0]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(spec(CostKind::L1, 2).subgradient(&[0.0, -3.0]).unwrap(), vec![0.0, -1.0]);
        assert_eq!(spec(CostKind::L2Norm, 2).subgradient(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(spec(lasso(2.0), 2).subgradient(&[0.5, -4.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn asymptotic_gain_examples() {
        let id2 = DMatrix::<f64>::identity(2, 2);
        let u = DVector::from_column_slice(&[0.6, 0.8]);
        let c = spec(CostKind::L2Norm, 2).asymptotic_gain(&id2, &u).unwrap();
        assert!((c.finite().unwrap() - 1.0).abs() < 1e-15);

        assert_eq!(spec(CostKind::SquaredL2, 2).asymptotic_gain(&id2, &u).unwrap(), Gain::Unbounded);
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let e2 = DVector::from_column_slice(&[0.0, 1.0]);
        assert_eq!(spec(CostKind::SquaredL2, 2).asymptotic_gain(&h, &e2).unwrap(), Gain::Finite(0.0));
    }

    #[test]
    fn l1_gain_matches_numeric_limit() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let u = DVector::from_column_slice(&[1.0, 0.0]);
        let cost = spec(CostKind::L1, 2);
        let t = 1e6;
        let numeric = cost.eval((&h * &u * t).as_slice()).unwrap() / t;
        let closed = cost.asymptotic_gain(&h, &u).unwrap().finite().unwrap();
        assert_eq!(closed, 1.0);
        assert!((numeric - closed).abs() < 1e-9);
    }

    #[test]
    fn gain_lipschitz_examples() {
        let id2 = DMatrix::<f64>::identity(2, 2);
        assert!((spec(CostKind::L2Norm, 2).gain_lipschitz(&id2).unwrap() - 1.0).abs() < 1e-14);
        let col = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!((spec(CostKind::L1, 2).gain_lipschitz(&col).unwrap() - 2.0).abs() < 1e-14);
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!((spec(lasso(2.0), 1).gain_lipschitz(&one).unwrap() - 2.0).abs() < 1e-14);
        assert!(matches!(
            spec(CostKind::SquaredL2, 1).gain_lipschitz(&one),
            Err(Error::UnboundedGain { .. })
        ));
    }

    #[test]
    fn finite_horizon_gain_examples() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let u = DVector::from_element(1, 1.0);
        let v = DVector::from_element(1, 5.0);
        let h = spec(CostKind::L2Norm, 1).finite_horizon_gain(&one, &u, &v, 10.0).unwrap();
        assert!((h - 1.0).abs() < 1e-15);
        assert!(spec(CostKind::L2Norm, 1).finite_horizon_gain(&one, &u, &v, 0.0).is_err());
        assert!(spec(CostKind::L2Norm, 1).finite_horizon_gain(&one, &u, &v, -1.0).is_err());
    }

    #[test]
    fn radial_profile_examples() {
        let sq = spec(CostKind::SquaredL2, 1).radial_profile(&[1.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(sq, vec![1.0, 2.0, 4.0]);

        let l1 = spec(CostKind::L1, 2).radial_profile(&[0.3, -0.4], &[0.1, 1.0, 7.0]).unwrap();
        assert!(l1.iter().all(|q| (q - 0.7).abs() < 1e-15));

        let env = spec(lasso(2.0), 1).radial_profile(&[1.0], &[0.5, 1.0, 10.0]).unwrap();
        for (got, want) in env.iter().zip([0.5, 1.0, 1.9]) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn radial_profile_rejects_bad_abscissae() {
        let c = spec(CostKind::L1, 1);
        assert!(c.radial_profile(&[1.0], &[0.0, 1.0]).is_err());
        assert!(c.radial_profile(&[1.0], &[2.0, 1.0]).is_err());
    }

    #[test]
    fn gain_serializes_as_document_value() {
        assert_eq!(serde_json::to_string(&Gain::Unbounded).unwrap(), "\"unbounded\"");
        assert_eq!(serde_json::to_string(&Gain::Finite(1.5)).unwrap(), "{\"finite\":1.5}");
    }
}
