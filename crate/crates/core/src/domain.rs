//! Shared domain types: label distributions, hypotheses, feature streams and
//! the seeded random source used by every stochastic operation.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for sum-to-one checks.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// A probability vector over labels `0..M`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LabelDist {
    probs: Vec<f64>,
}

impl LabelDist {
    /// Normalizes non-negative finite weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let mut sum = 0.0;
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if w < 0.0 {
                return Err(Error::NegativeWeight { index, value: w });
            }
            sum += w;
        }
        if sum <= 0.0 {
            return Err(Error::AllZero);
        }
        Ok(Self {
            probs: weights.iter().map(|w| w / sum).collect(),
        })
    }

    /// Accepts an already normalized vector without rescaling it.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let mut sum = 0.0;
        for (index, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if p < 0.0 {
                return Err(Error::NegativeWeight { index, value: p });
            }
            sum += p;
        }
        if probs.is_empty() {
            return Err(Error::AllZero);
        }
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Self { probs })
    }

    /// Internal constructor for vectors that are normalized by construction
    /// (mixtures and pushforwards of valid distributions).
    pub(crate) fn from_probs_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!(
            (probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6,
            "unnormalized internal distribution"
        );
        Self { probs }
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "uniform distribution over zero labels");
        Self {
            probs: vec![1.0 / m as f64; m],
        }
    }

    pub fn point_mass(m: usize, label: usize) -> Self {
        assert!(label < m);
        let mut probs = vec![0.0; m];
        probs[label] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Number of labels M.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn mass(&self, label: usize) -> f64 {
        self.probs[label]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// Inverse-CDF draw of one label.
    pub fn sample(&self, rng: &mut SeededRng) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut last_supported = 0;
        for (y, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_supported = y;
                if u < acc {
                    return y;
                }
            }
        }
        // u landed in the rounding gap above the accumulated mass
        last_supported
    }
}

impl AsRef<[f64]> for LabelDist {
    fn as_ref(&self) -> &[f64] {
        &self.probs
    }
}

/// Normalizes `weights` into a [`LabelDist`].
pub fn make_dist(weights: &[f64]) -> Result<LabelDist> {
    LabelDist::from_weights(weights)
}

/// Context handed to hypotheses. Constant hypotheses ignore it; tables use it
/// as a row index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Feature(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub enum Hypothesis {
    Constant(LabelDist),
    Table(Vec<LabelDist>),
}

impl Hypothesis {
    pub fn evaluate(&self, x: Feature) -> Result<&LabelDist> {
        match self {
            Hypothesis::Constant(p) => Ok(p),
            Hypothesis::Table(rows) => rows.get(x.0).ok_or(Error::FeatureOutOfRange {
                feature: x.0,
                len: rows.len(),
            }),
        }
    }

    fn label_count(&self) -> Option<usize> {
        match self {
            Hypothesis::Constant(p) => Some(p.len()),
            Hypothesis::Table(rows) => rows.first().map(LabelDist::len),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Hypothesis::Constant(_))
    }
}

/// Evaluates `h` at `x`.
pub fn evaluate(h: &Hypothesis, x: Feature) -> Result<LabelDist> {
    h.evaluate(x).cloned()
}

/// An ordered, non-empty list of hypotheses over a common label count.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisClass {
    hypotheses: Vec<Hypothesis>,
    m: usize,
}

impl HypothesisClass {
    pub fn new(hypotheses: Vec<Hypothesis>) -> Result<Self> {
        let first = hypotheses
            .first()
            .ok_or_else(|| Error::InvalidClass("class has no hypotheses".into()))?;
        let m = first
            .label_count()
            .ok_or_else(|| Error::InvalidClass("table hypothesis with no rows".into()))?;
        if m == 0 {
            return Err(Error::InvalidClass("zero labels".into()));
        }
        for (j, h) in hypotheses.iter().enumerate() {
            let consistent = match h {
                Hypothesis::Constant(p) => p.len() == m,
                Hypothesis::Table(rows) => !rows.is_empty() && rows.iter().all(|r| r.len() == m),
            };
            if !consistent {
                return Err(Error::InvalidClass(format!(
                    "hypothesis {j} does not have {m} labels"
                )));
            }
        }
        Ok(Self { hypotheses, m })
    }

    pub fn constant(dists: Vec<LabelDist>) -> Result<Self> {
        Self::new(dists.into_iter().map(Hypothesis::Constant).collect())
    }

    /// Class size K.
    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    /// Label count M.
    pub fn label_count(&self) -> usize {
        self.m
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn get(&self, j: usize) -> Option<&Hypothesis> {
        self.hypotheses.get(j)
    }

    pub fn is_all_constant(&self) -> bool {
        self.hypotheses.iter().all(Hypothesis::is_constant)
    }

    /// Number of feature rows shared by every table member, if any member is a table.
    pub fn table_rows(&self) -> Option<usize> {
        self.hypotheses
            .iter()
            .filter_map(|h| match h {
                Hypothesis::Table(rows) => Some(rows.len()),
                Hypothesis::Constant(_) => None,
            })
            .min()
    }

    /// All K distributions at feature `x`, in class order.
    pub fn evaluate_all(&self, x: Feature) -> Result<Vec<&LabelDist>> {
        self.hypotheses.iter().map(|h| h.evaluate(x)).collect()
    }

    pub fn to_file(&self) -> ClassFile {
        ClassFile {
            m: self.m,
            hypotheses: self
                .hypotheses
                .iter()
                .map(|h| match h {
                    Hypothesis::Constant(p) => HypothesisSpec::Constant {
                        probs: p.probs().to_vec(),
                    },
                    Hypothesis::Table(rows) => HypothesisSpec::Table {
                        rows: rows.iter().map(|r| r.probs().to_vec()).collect(),
                    },
                })
                .collect(),
        }
    }

    pub fn from_file(file: &ClassFile) -> Result<Self> {
        let check = |v: &[f64]| -> Result<LabelDist> {
            if v.len() != file.m {
                return Err(Error::DimensionMismatch {
                    expected: file.m,
                    got: v.len(),
                });
            }
            LabelDist::from_weights(v)
        };
        let hypotheses = file
            .hypotheses
            .iter()
            .map(|spec| match spec {
                HypothesisSpec::Constant { probs } => check(probs).map(Hypothesis::Constant),
                HypothesisSpec::Table { rows } => rows
                    .iter()
                    .map(|r| check(r))
                    .collect::<Result<Vec<_>>>()
                    .map(Hypothesis::Table),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(hypotheses)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ClassFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }
}

/// On-disk hypothesis class: `{"M": int, "hypotheses": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFile {
    #[serde(rename = "M")]
    pub m: usize,
    pub hypotheses: Vec<HypothesisSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HypothesisSpec {
    Constant { probs: Vec<f64> },
    Table { rows: Vec<Vec<f64>> },
}

/// Nature's choice of feature for each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureStream {
    Fixed { feature: Feature },
    Cyclic { features: Vec<Feature> },
    Scripted { features: Vec<Feature> },
}

impl FeatureStream {
    /// Checks that the stream yields one feature for every round of `horizon`.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        match self {
            FeatureStream::Fixed { .. } => Ok(()),
            FeatureStream::Cyclic { features } if features.is_empty() => {
                Err(Error::config("features", "cyclic stream is empty"))
            }
            FeatureStream::Cyclic { .. } => Ok(()),
            FeatureStream::Scripted { features } if features.len() != horizon => {
                Err(Error::config(
                    "features",
                    format!(
                        "scripted stream has {} features for horizon {horizon}",
                        features.len()
                    ),
                ))
            }
            FeatureStream::Scripted { .. } => Ok(()),
        }
    }

    /// Feature of round `t` (0-based). Callers validate first.
    pub fn at(&self, t: usize) -> Feature {
        match self {
            FeatureStream::Fixed { feature } => *feature,
            FeatureStream::Cyclic { features } => features[t % features.len()],
            FeatureStream::Scripted { features } => features[t],
        }
    }

    /// Default stream for a class: fixed for constant classes, cyclic over
    /// the table rows otherwise.
    pub fn default_for(class: &HypothesisClass) -> Self {
        match class.table_rows() {
            None => FeatureStream::Fixed {
                feature: Feature(0),
            },
            Some(rows) => FeatureStream::Cyclic {
                features: (0..rows).map(Feature).collect(),
            },
        }
    }
}

/// Deterministic random source identified by `(seed, stream)`.
///
/// Backed by ChaCha20, whose output is specified bit-for-bit, so equal
/// identifiers give equal draws on every platform. Integer ranges are drawn
/// through `u64` so results do not depend on the width of `usize`.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform draw in `(0, 1]`.
    pub fn uniform_open_low(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index draw from an empty range");
        self.inner.gen_range(0..n as u64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
