//! Per-round alphabet expansion.
//!
//! Each label `y` owns a contiguous block of `s_y = ⌈M·max_j f_j(x)[y]⌉`
//! clipped symbols. A label is mapped to a uniform symbol of its own block
//! (`h'`), except with probability `1/T` where it is mapped to a uniform
//! symbol of the whole expanded alphabet (`h`). Under `h` every hypothesis
//! assigns each clipped symbol a mass in `[1/(T·N'), 1/M]`, so the
//! log-likelihood of a clipped symbol has bounded sensitivity.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use crate::domain::{Feature, HypothesisClass, LabelDist, SeededRng};
use crate::error::{Error, Result};

/// Partition of the clipped alphabet `0..N'` into per-label blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipPlan {
    block_sizes: Vec<usize>,
    /// `offsets[y]..offsets[y + 1]` is the block of label `y`.
    offsets: Vec<usize>,
    k: usize,
    horizon: usize,
}

/// `⌈m·p⌉`, snapping products within `1e-9` of an integer onto it so that
/// representation error in `p` (e.g. `10 × 0.1`) does not add a symbol.
fn ceil_product(m: usize, p: f64) -> usize {
    let x = m as f64 * p;
    let r = x.round();
    if (x - r).abs() <= 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Builds the plan for feature `x`; requires `horizon >= 2`.
pub fn build_clip_plan(class: &HypothesisClass, x: Feature, horizon: usize) -> Result<ClipPlan> {
    if horizon < 2 {
        return Err(Error::InvalidParameter {
            field: "horizon",
            message: format!("clipping needs T >= 2, got {horizon}"),
        });
    }
    let m = class.label_count();
    let dists = class.evaluate_all(x)?;
    let block_sizes: Vec<usize> = (0..m)
        .map(|y| {
            let peak = dists.iter().map(|d| d.mass(y)).fold(0.0, f64::max);
            ceil_product(m, peak)
        })
        .collect();
    let mut offsets = Vec::with_capacity(m + 1);
    let mut acc = 0;
    offsets.push(0);
    for &s in &block_sizes {
        acc += s;
        offsets.push(acc);
    }
    Ok(ClipPlan {
        block_sizes,
        offsets,
        k: class.len(),
        horizon,
    })
}

impl ClipPlan {
    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Size N' of the clipped alphabet.
    pub fn n_prime(&self) -> usize {
        *self.offsets.last().expect("offsets always holds a leading 0")
    }

    pub fn label_count(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn class_size(&self) -> usize {
        self.k
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn block(&self, y: usize) -> Range<usize> {
        self.offsets[y]..self.offsets[y + 1]
    }

    /// The label whose block contains clipped symbol `y_prime`.
    pub fn label_of(&self, y_prime: usize) -> usize {
        debug_assert!(y_prime < self.n_prime());
        self.offsets[1..].partition_point(|&end| end <= y_prime)
    }

    fn check_label(&self, y: usize) -> Result<()> {
        let m = self.label_count();
        if y >= m {
            return Err(Error::LabelOutOfRange { label: y, m });
        }
        if self.block_sizes[y] == 0 {
            return Err(Error::EmptyBlock { label: y });
        }
        Ok(())
    }

    /// Draws `h'(y)`: uniform over the block of `y`.
    pub fn sample_h_prime(&self, y: usize, rng: &mut SeededRng) -> Result<usize> {
        self.check_label(y)?;
        Ok(self.offsets[y] + rng.index(self.block_sizes[y]))
    }

    /// Draws `h(y)`: `h'(y)` with probability `1 - 1/T`, otherwise uniform
    /// over the whole clipped alphabet.
    pub fn sample_h(&self, y: usize, rng: &mut SeededRng) -> Result<usize> {
        self.check_label(y)?;
        if rng.bernoulli(1.0 / self.horizon as f64) {
            Ok(rng.index(self.n_prime()))
        } else {
            self.sample_h_prime(y, rng)
        }
    }

    /// Closed-form law of `h(y)` for `y ~ p`.
    ///
    /// Mass on labels with an empty block (impossible for members of the
    /// class the plan was built from) is spread uniformly.
    pub fn pushforward(&self, p: &[f64]) -> Result<LabelDist> {
        self.pushforward_mixed(p, 1.0 / self.horizon as f64)
    }

    /// Closed-form law of `h'(y)` for `y ~ p`.
    pub fn pushforward_prime(&self, p: &[f64]) -> Result<LabelDist> {
        self.pushforward_mixed(p, 0.0)
    }

    fn pushforward_mixed(&self, p: &[f64], uniform_weight: f64) -> Result<LabelDist> {
        let m = self.label_count();
        if p.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: p.len(),
            });
        }
        let n = self.n_prime();
        let keep = 1.0 - uniform_weight;
        let orphaned: f64 = p
            .iter()
            .zip(&self.block_sizes)
            .filter(|(_, &s)| s == 0)
            .map(|(&mass, _)| mass)
            .sum();
        // p is a distribution, so the uniform part carries exactly `uniform_weight`
        let floor = (uniform_weight + keep * orphaned) / n as f64;
        let mut q = vec![floor; n];
        for y in 0..m {
            let s = self.block_sizes[y];
            if s == 0 {
                continue;
            }
            let inside = keep * p[y] / s as f64;
            for v in &mut q[self.block(y)] {
                *v += inside;
            }
        }
        Ok(LabelDist::from_probs_unchecked(q))
    }

    /// Folds a distribution over clipped symbols back onto labels by summing
    /// each block.
    pub fn unclip(&self, q: &[f64]) -> Result<LabelDist> {
        let n = self.n_prime();
        if q.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: q.len(),
            });
        }
        let folded = (0..self.label_count())
            .map(|y| q[self.block(y)].iter().sum())
            .collect();
        Ok(LabelDist::from_probs_unchecked(folded))
    }

    /// Bounds `[1/(T·N'), 1/M]` that every hypothesis pushforward obeys.
    pub fn mass_range(&self) -> (f64, f64) {
        (
            (1.0 / self.horizon as f64) / self.n_prime() as f64,
            1.0 / self.label_count() as f64,
        )
    }
}

/// Folds `q` onto labels according to `plan`.
pub fn unclip_prediction(plan: &ClipPlan, q: &[f64]) -> Result<LabelDist> {
    plan.unclip(q)
}

/// A plan together with the pushforward `h∘f_j(x)` of every hypothesis.
#[derive(Debug, Clone)]
pub struct ClippedRound {
    plan: ClipPlan,
    experts: Vec<Vec<f64>>,
    /// `unclip(h∘f_j(x))`, so predictions cost O(K·M) rather than O(K·N').
    folded: Vec<Vec<f64>>,
}

impl ClippedRound {
    pub fn build(class: &HypothesisClass, x: Feature, horizon: usize) -> Result<Self> {
        let plan = build_clip_plan(class, x, horizon)?;
        let experts = class
            .evaluate_all(x)?
            .into_iter()
            .map(|d| plan.pushforward(d.probs()).map(LabelDist::into_vec))
            .collect::<Result<Vec<_>>>()?;
        let folded = experts
            .iter()
            .map(|e| plan.unclip(e).map(LabelDist::into_vec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            plan,
            experts,
            folded,
        })
    }

    pub fn plan(&self) -> &ClipPlan {
        &self.plan
    }

    /// Pushforward of hypothesis `j`.
    pub fn expert(&self, j: usize) -> &[f64] {
        &self.experts[j]
    }

    pub fn experts(&self) -> &[Vec<f64>] {
        &self.experts
    }

    /// `Σ_j w_j · h∘f_j(x)` for normalized weights `w`.
    pub fn mixture(&self, weights: &[f64]) -> LabelDist {
        debug_assert_eq!(weights.len(), self.experts.len());
        let mut q = vec![0.0; self.plan.n_prime()];
        for (w, e) in weights.iter().zip(&self.experts) {
            for (acc, v) in q.iter_mut().zip(e) {
                *acc += w * v;
            }
        }
        LabelDist::from_probs_unchecked(q)
    }

    /// `unclip(Σ_j w_j · h∘f_j(x))`, computed from the folded experts.
    pub fn prediction(&self, weights: &[f64]) -> LabelDist {
        debug_assert_eq!(weights.len(), self.folded.len());
        let mut p = vec![0.0; self.plan.label_count()];
        for (w, e) in weights.iter().zip(&self.folded) {
            for (acc, v) in p.iter_mut().zip(e) {
                *acc += w * v;
            }
        }
        LabelDist::from_probs_unchecked(p)
    }
}

/// Memo of [`ClippedRound`]s by feature for one fixed class and horizon.
#[derive(Debug, Clone)]
pub struct ClipCache {
    horizon: usize,
    rounds: HashMap<Feature, Arc<ClippedRound>>,
}

impl ClipCache {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            rounds: HashMap::new(),
        }
    }

    pub fn get(&mut self, class: &HypothesisClass, x: Feature) -> Result<Arc<ClippedRound>> {
        if let Some(r) = self.rounds.get(&x) {
            return Ok(Arc::clone(r));
        }
        let r = Arc::new(ClippedRound::build(class, x, self.horizon)?);
        self.rounds.insert(x, Arc::clone(&r));
        Ok(r)
    }
}
