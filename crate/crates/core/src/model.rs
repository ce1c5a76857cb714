//! Measurement model, sparse attacks and scenarios.
//!
//! Sensor `i` observes `z_i = H_i x + w_i`; an attacker controlling the set
//! `I` (with `|I| <= p`) reports `y_i = z_i + a_i`, where `a_i = 0` for every
//! sensor outside `I`. Sensor indices are zero-based throughout the crate.

use std::collections::BTreeMap;
use std::path::Path;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::costs::{CostKind, CostSpec};
use crate::{Error, Result};

/// Relative singular-value threshold used for the numerical rank of `H`.
pub const RANK_RTOL: f64 = 1e-10;

/// Per-sensor blocks `H_i` of the stacked observation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    n: usize,
    sensors: Vec<DMatrix<f64>>,
    offsets: Vec<usize>,
}

impl MeasurementModel {
    /// Validates block shapes and that the stacked matrix has full column rank.
    pub fn new(n: usize, sensors: Vec<DMatrix<f64>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("n", "state dimension must be positive"));
        }
        if sensors.is_empty() {
            return Err(Error::validation("sensors", "at least one sensor is required"));
        }
        let mut offsets = Vec::with_capacity(sensors.len() + 1);
        let mut rows = 0;
        for (i, h) in sensors.iter().enumerate() {
            if h.nrows() == 0 {
                return Err(Error::validation(
                    format!("sensors[{i}].H"),
                    "block must have at least one row",
                ));
            }
            if h.ncols() != n {
                return Err(Error::validation(
                    format!("sensors[{i}].H"),
                    format!("expected {n} columns, found {}", h.ncols()),
                ));
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(
                    format!("sensors[{i}].H"),
                    "entries must be finite",
                ));
            }
            offsets.push(rows);
            rows += h.nrows();
        }
        offsets.push(rows);
        let model = Self {
            n,
            sensors,
            offsets,
        };
        let rank = model.rank();
        if rank < n {
            return Err(Error::RankDeficient { rank, n });
        }
        Ok(model)
    }

    /// `m` identical scalar sensors with `H_i = [1]` observing a scalar state.
    pub fn identical_scalar(m: usize) -> Result<Self> {
        Self::new(1, vec![DMatrix::from_element(1, 1, 1.0); m])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.sensors.len()
    }

    pub fn sensor(&self, i: usize) -> &DMatrix<f64> {
        &self.sensors[i]
    }

    pub fn sensors(&self) -> &[DMatrix<f64>] {
        &self.sensors
    }

    /// Number of rows `m_i` of sensor `i`.
    pub fn rows(&self, i: usize) -> usize {
        self.sensors[i].nrows()
    }

    /// Total measurement length `sum_i m_i`.
    pub fn total_rows(&self) -> usize {
        self.offsets[self.sensors.len()]
    }

    /// Row range of sensor `i` inside a stacked measurement vector.
    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn block<'a>(&self, v: &'a DVector<f64>, i: usize) -> nalgebra::DVectorView<'a, f64> {
        let r = self.block_range(i);
        v.rows(r.start, r.len())
    }

    /// Rows of all blocks concatenated in sensor order.
    pub fn stacked(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.total_rows(), self.n);
        for (i, block) in self.sensors.iter().enumerate() {
            h.rows_mut(self.offsets[i], block.nrows()).copy_from(block);
        }
        h
    }

    /// Numerical rank: singular values above `RANK_RTOL * sigma_max`.
    pub fn rank(&self) -> usize {
        let sv = self.stacked().singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        if smax == 0.0 {
            return 0;
        }
        sv.iter().filter(|&&s| s > RANK_RTOL * smax).count()
    }

    pub(crate) fn check_state(&self, x: &DVector<f64>, what: &str) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::dimension(what, self.n, x.len()));
        }
        Ok(())
    }

    pub(crate) fn check_stacked(&self, v: &DVector<f64>, what: &str) -> Result<()> {
        if v.len() != self.total_rows() {
            return Err(Error::dimension(what, self.total_rows(), v.len()));
        }
        Ok(())
    }

    /// `z_i = H_i x + w_i` for every block.
    pub fn measure(&self, x: &DVector<f64>, noise: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x, "state")?;
        self.check_stacked(noise, "noise sample")?;
        let mut z = noise.clone();
        for (i, h) in self.sensors.iter().enumerate() {
            let mut block = z.rows_mut(self.offsets[i], h.nrows());
            block.gemv(1.0, h, x, 1.0);
        }
        Ok(z)
    }

    /// `H x` without noise.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.total_rows());
        for (i, h) in self.sensors.iter().enumerate() {
            out.rows_mut(self.offsets[i], h.nrows()).gemv(1.0, h, x, 0.0);
        }
        out
    }
}

/// An attack vector supported on a set of sensors; blocks outside the
/// support are implicitly zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseAttack {
    blocks: BTreeMap<usize, DVector<f64>>,
}

impl SparseAttack {
    pub fn none() -> Self {
        Self::default()
    }

    /// Validates indices, block lengths and the budget `|support| <= p`.
    pub fn new(model: &MeasurementModel, p: usize, blocks: BTreeMap<usize, DVector<f64>>) -> Result<Self> {
        if blocks.len() > p {
            return Err(Error::validation(
                "attack.support",
                format!("support has {} sensors but the budget is p = {p}", blocks.len()),
            ));
        }
        for (&i, a) in &blocks {
            if i >= model.m() {
                return Err(Error::validation(
                    "attack.support",
                    format!("sensor index {i} out of range (m = {})", model.m()),
                ));
            }
            if a.len() != model.rows(i) {
                return Err(Error::dimension(format!("attack block {i}"), model.rows(i), a.len()));
            }
        }
        Ok(Self { blocks })
    }

    /// Support set in increasing order.
    pub fn support(&self) -> Vec<usize> {
        self.blocks.keys().copied().collect()
    }

    pub fn block(&self, i: usize) -> Option<&DVector<f64>> {
        self.blocks.get(&i)
    }

    pub fn blocks(&self) -> &BTreeMap<usize, DVector<f64>> {
        &self.blocks
    }

    /// The full stacked attack vector.
    pub fn stacked(&self, model: &MeasurementModel) -> DVector<f64> {
        let mut a = DVector::zeros(model.total_rows());
        for (&i, block) in &self.blocks {
            let r = model.block_range(i);
            a.rows_mut(r.start, r.len()).copy_from(block);
        }
        a
    }

    /// Checks that `a` is `(p, m)`-sparse: nonzero on at most `p` blocks.
    pub fn is_sparse_vector(model: &MeasurementModel, a: &DVector<f64>, p: usize) -> bool {
        a.len() == model.total_rows()
            && (0..model.m())
                .filter(|&i| model.block(a, i).iter().any(|v| *v != 0.0))
                .count()
                <= p
    }
}

/// `y_i = z_i + a_i` on the support, `y_i = z_i` elsewhere.
pub fn apply_attack(model: &MeasurementModel, z: &DVector<f64>, attack: &SparseAttack) -> Result<DVector<f64>> {
    model.check_stacked(z, "measurements")?;
    let mut y = z.clone();
    for (&i, a) in attack.blocks() {
        if i >= model.m() {
            return Err(Error::validation(
                "attack.support",
                format!("sensor index {i} out of range (m = {})", model.m()),
            ));
        }
        let r = model.block_range(i);
        if a.len() != r.len() {
            return Err(Error::dimension(format!("attack block {i}"), r.len(), a.len()));
        }
        let mut block = y.rows_mut(r.start, r.len());
        block += a;
    }
    Ok(y)
}

/// All subsets of `{0, .., m-1}` with exactly `p` elements, in lexicographic order.
pub fn enumerate_subsets(m: usize, p: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..m).combinations(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    /// Independent `N(0, scale^2)` entries.
    Gaussian,
    /// Independent `U[-scale, scale]` entries.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub scale: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn gaussian(scale: f64) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            scale,
        }
    }

    pub fn uniform(scale: f64) -> Self {
        Self {
            kind: NoiseKind::Uniform,
            scale,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> DVector<f64> {
        match self.kind {
            NoiseKind::None => DVector::zeros(len),
            NoiseKind::Gaussian => DVector::from_fn(len, |_, _| {
                let s: f64 = rng.sample(StandardNormal);
                self.scale * s
            }),
            NoiseKind::Uniform => DVector::from_fn(len, |_, _| {
                if self.scale == 0.0 {
                    0.0
                } else {
                    rng.random_range(-self.scale..=self.scale)
                }
            }),
        }
    }

    /// Largest possible absolute entry, when bounded.
    pub fn bound(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::None => Some(0.0),
            NoiseKind::Uniform => Some(self.scale),
            NoiseKind::Gaussian => None,
        }
    }
}

/// Mixes a base seed with stream indices (splitmix64 finalizer).
pub fn derive_seed(base: u64, streams: &[u64]) -> u64 {
    let mut h = base;
    for &s in streams {
        h = splitmix(h ^ splitmix(s.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(h)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A measurement model together with per-sensor costs, attack budget and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    model: MeasurementModel,
    costs: Vec<CostSpec>,
    p: usize,
    noise: NoiseSpec,
    seed: u64,
}

impl Scenario {
    pub fn new(model: MeasurementModel, kinds: Vec<CostKind>, p: usize, noise: NoiseSpec, seed: u64) -> Result<Self> {
        if kinds.len() != model.m() {
            return Err(Error::validation(
                "sensors",
                format!("{} costs given for {} sensors", kinds.len(), model.m()),
            ));
        }
        if p >= model.m() {
            return Err(Error::validation(
                "p",
                format!("attack budget must satisfy p < m = {}, got {p}", model.m()),
            ));
        }
        if !(noise.scale.is_finite() && noise.scale >= 0.0) {
            return Err(Error::validation("noise.scale", "must be finite and non-negative"));
        }
        let mut costs = Vec::with_capacity(kinds.len());
        for (i, kind) in kinds.into_iter().enumerate() {
            let cost = CostSpec::new(kind, model.rows(i))
                .map_err(|e| prefix_field(e, &format!("sensors[{i}].cost")))?;
            costs.push(cost);
        }
        Ok(Self {
            model,
            costs,
            p,
            noise,
            seed,
        })
    }

    /// `m` scalar sensors with `H_i = [1]`, all using the same cost and no noise.
    pub fn identical_scalar(m: usize, kind: CostKind, p: usize) -> Result<Self> {
        Self::new(MeasurementModel::identical_scalar(m)?, vec![kind; m], p, NoiseSpec::none(), 0)
    }

    pub fn model(&self) -> &MeasurementModel {
        &self.model
    }

    pub fn costs(&self) -> &[CostSpec] {
        &self.costs
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn noise(&self) -> NoiseSpec {
        self.noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_p(&self, p: usize) -> Result<Self> {
        let kinds = self.costs.iter().map(|c| c.kind()).collect();
        Self::new(self.model.clone(), kinds, p, self.noise, self.seed)
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Result<Self> {
        if !(noise.scale.is_finite() && noise.scale >= 0.0) {
            return Err(Error::validation("noise.scale", "must be finite and non-negative"));
        }
        self.noise = noise;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            n: self.model.n(),
            sensors: self
                .model
                .sensors()
                .iter()
                .zip(&self.costs)
                .map(|(h, c)| SensorFile {
                    h: h.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    cost: c.kind(),
                })
                .collect(),
            p: self.p,
            noise: self.noise,
            seed: self.seed,
        }
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&self.to_file()).expect("scenario serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: ScenarioFile = serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        file.into_scenario()
    }
}

fn prefix_field(err: Error, prefix: &str) -> Error {
    match err {
        Error::Validation { field, message } => Error::Validation {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    }
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub n: usize,
    pub sensors: Vec<SensorFile>,
    pub p: usize,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorFile {
    /// Row-major block `H_i`.
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub cost: CostKind,
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario> {
        let mut blocks = Vec::with_capacity(self.sensors.len());
        let mut kinds = Vec::with_capacity(self.sensors.len());
        for (i, s) in self.sensors.into_iter().enumerate() {
            let rows = s.h.len();
            if rows == 0 {
                return Err(Error::validation(format!("sensors[{i}].H"), "block has no rows"));
            }
            if let Some((r, row)) = s.h.iter().enumerate().find(|(_, row)| row.len() != self.n) {
                return Err(Error::validation(
                    format!("sensors[{i}].H[{r}]"),
                    format!("expected {} columns, found {}", self.n, row.len()),
                ));
            }
            let flat: Vec<f64> = s.h.into_iter().flatten().collect();
            blocks.push(DMatrix::from_row_slice(rows, self.n, &flat));
            kinds.push(s.cost);
        }
        let model = match MeasurementModel::new(self.n, blocks) {
            Err(Error::RankDeficient { rank, n }) => {
                return Err(Error::validation(
                    "sensors",
                    format!("stacked H has rank {rank} < n = {n}; the state is not observable"),
                ))
            }
            other => other?,
        };
        Scenario::new(model, kinds, self.p, self.noise, self.seed)
    }
}
