//! Learner-side state machines.
//!
//! Every learner alternates [`Learner::predict`] and [`Learner::observe`].
//! A prediction depends only on the features and the messages of earlier
//! rounds; calling the two out of order is a protocol error.

use std::sync::Arc;

use crate::clipping::{ClipCache, ClippedRound};
use crate::domain::{Feature, HypothesisClass, LabelDist};
use crate::error::{Error, Result};
use crate::privacy::{Mechanism, PrivacyParams, PrivateMessage, RandomizedResponse};

/// Unnormalized exponential weights, rescaled so the largest weight is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    weights: Vec<f64>,
    eta: f64,
    round: usize,
}

fn clamp_unit(v: f64) -> (f64, bool) {
    if (0.0..=1.0).contains(&v) {
        (v, false)
    } else if v > 1.0 {
        (1.0, true)
    } else {
        // negative or NaN
        (0.0, true)
    }
}

impl WeightState {
    pub fn new(k: usize, eta: f64) -> Self {
        Self {
            weights: vec![1.0; k],
            eta,
            round: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Number of updates applied so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `w̃_j = w_j / Σ_i w_i`.
    pub fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    /// `w_j ← w_j·e^{-η v_j}` for all j. Entries outside `[0,1]` are clamped;
    /// returns the clamped loss and how many entries were clamped.
    pub fn update(&mut self, loss: &[f64]) -> Result<(Vec<f64>, u64)> {
        if loss.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                got: loss.len(),
            });
        }
        let mut clamps = 0;
        let clamped: Vec<f64> = loss
            .iter()
            .map(|&v| {
                let (c, hit) = clamp_unit(v);
                clamps += hit as u64;
                c
            })
            .collect();
        for (w, v) in self.weights.iter_mut().zip(&clamped) {
            *w *= (-self.eta * v).exp();
        }
        self.rescale();
        Ok((clamped, clamps))
    }

    /// `w_j ← w_j·e^{-η v}` for the single coordinate `j`.
    pub fn update_single(&mut self, j: usize, value: f64) -> Result<(f64, u64)> {
        if j >= self.k() {
            return Err(Error::IndexOutOfRange {
                index: j,
                k: self.k(),
            });
        }
        let (v, hit) = clamp_unit(value);
        self.weights[j] *= (-self.eta * v).exp();
        self.rescale();
        Ok((v, hit as u64))
    }

    fn rescale(&mut self) {
        let max = self.weights.iter().copied().fold(0.0, f64::max);
        for w in &mut self.weights {
            *w = (*w / max).max(f64::MIN_POSITIVE);
        }
        self.round += 1;
    }
}

/// Functional form of [`WeightState::update`].
pub fn wma_update(state: &WeightState, loss: &[f64]) -> Result<WeightState> {
    let mut next = state.clone();
    next.update(loss)?;
    Ok(next)
}

/// Realized quantities of an exponential-weights run on loss vectors `v_t`:
/// the learner's mixed loss `Σ_t Σ_j w̃_j v_{t,j}`, each expert's cumulative
/// loss, and the second-moment term `Σ_t Σ_j w̃_j v²_{t,j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger {
    mixed: f64,
    second_moment: f64,
    expert: Vec<f64>,
    rounds: usize,
}

impl RegretLedger {
    pub fn new(k: usize) -> Self {
        Self {
            mixed: 0.0,
            second_moment: 0.0,
            expert: vec![0.0; k],
            rounds: 0,
        }
    }

    pub fn record(&mut self, normalized: &[f64], loss: &[f64]) {
        for ((w, v), e) in normalized.iter().zip(loss).zip(&mut self.expert) {
            self.mixed += w * v;
            self.second_moment += w * v * v;
            *e += v;
        }
        self.rounds += 1;
    }

    /// Same as [`record`](Self::record) for a loss vector that is zero except
    /// at coordinate `j`.
    pub fn record_sparse(&mut self, normalized: &[f64], j: usize, v: f64) {
        self.mixed += normalized[j] * v;
        self.second_moment += normalized[j] * v * v;
        self.expert[j] += v;
        self.rounds += 1;
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn mixed_loss(&self) -> f64 {
        self.mixed
    }

    pub fn expert_losses(&self) -> &[f64] {
        &self.expert
    }

    /// `Σ_t Σ_j w̃_j v_{t,j} − min_i Σ_t v_{t,i}`.
    pub fn regret(&self) -> f64 {
        self.mixed - self.expert.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `√(2T ln K)`, valid for `η = √(2 ln K/T)` and losses in `[0,1]`.
    pub fn wma_bound(&self, horizon: usize) -> f64 {
        (2.0 * horizon as f64 * (self.expert.len() as f64).ln()).sqrt()
    }

    /// `ln K/η + (η/2)·Σ_t Σ_j w̃_j v²_{t,j}`, valid for any `η > 0` and
    /// nonnegative losses.
    pub fn potential_bound(&self, eta: f64) -> f64 {
        let k = self.expert.len() as f64;
        if k == 1.0 {
            return 0.0;
        }
        k.ln() / eta + eta / 2.0 * self.second_moment
    }
}

/// What the learner receives each round.
#[derive(Debug, Clone, PartialEq)]
pub enum Feedback {
    Message(PrivateMessage),
    /// A randomized-response label.
    Randomized(usize),
}

/// One prediction and the context it was formed in.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    /// `p̂_t` over the M labels.
    pub prediction: LabelDist,
    /// Clipped pushforwards of the round, when the learner clips.
    pub clipping: Option<Arc<ClippedRound>>,
    /// `w̃^t` used to form the prediction.
    pub weights: Vec<f64>,
}

impl RoundOutput {
    /// `p̄_t = Σ_j w̃_j h∘f_j(x_t)` over the clipped alphabet; `p̂_t` is its
    /// unclipped image.
    pub fn clipped_mixture(&self) -> Option<LabelDist> {
        self.clipping.as_ref().map(|r| r.mixture(&self.weights))
    }
}

pub trait Learner {
    /// Stable identifier used in traces.
    fn name(&self) -> &'static str;

    fn predict(&mut self, x: Feature) -> Result<RoundOutput>;

    fn observe(&mut self, feedback: &Feedback) -> Result<()>;

    fn state(&self) -> &WeightState;

    fn ledger(&self) -> &RegretLedger;

    /// Loss entries clamped into `[0,1]` so far.
    fn clamp_events(&self) -> u64;

    /// Runs one full round: predict, then hand the prediction to `respond`
    /// (which plays Nature and the user) and observe what it returns.
    fn round(
        &mut self,
        x: Feature,
        respond: &mut dyn FnMut(&RoundOutput) -> Result<Feedback>,
    ) -> Result<RoundOutput> {
        let out = self.predict(x)?;
        let fb = respond(&out)?;
        self.observe(&fb)?;
        Ok(out)
    }
}

/// Shared machinery of the clipping learners.
#[derive(Debug, Clone)]
struct ClippedCore {
    class: Arc<HypothesisClass>,
    cache: ClipCache,
    state: WeightState,
    ledger: RegretLedger,
    clamps: u64,
    pending: Option<Vec<f64>>,
}

impl ClippedCore {
    fn new(class: Arc<HypothesisClass>, horizon: usize, eta: f64) -> Self {
        let k = class.len();
        Self {
            class,
            cache: ClipCache::new(horizon),
            state: WeightState::new(k, eta),
            ledger: RegretLedger::new(k),
            clamps: 0,
            pending: None,
        }
    }

    fn predict(&mut self, x: Feature) -> Result<RoundOutput> {
        if self.pending.is_some() {
            return Err(Error::Protocol("predict called twice without observe"));
        }
        let round = self.cache.get(&self.class, x)?;
        let weights = self.state.normalized();
        let prediction = round.prediction(&weights);
        self.pending = Some(weights.clone());
        Ok(RoundOutput {
            prediction,
            clipping: Some(round),
            weights,
        })
    }

    fn take_pending(&mut self) -> Result<Vec<f64>> {
        self.pending
            .take()
            .ok_or(Error::Protocol("observe called before predict"))
    }
}

fn check_class(class: &HypothesisClass, params: &PrivacyParams) -> Result<()> {
    if class.len() != params.k() {
        return Err(Error::DimensionMismatch {
            expected: params.k(),
            got: class.len(),
        });
    }
    Ok(())
}

/// Exponential weights on the dense privatized vectors, `η = √(2 ln K/T)`.
#[derive(Debug, Clone)]
pub struct PrivateWma {
    core: ClippedCore,
}

impl PrivateWma {
    pub fn new(class: Arc<HypothesisClass>, params: &PrivacyParams) -> Result<Self> {
        check_class(&class, params)?;
        if !matches!(params.mechanism(), Mechanism::Approximate { .. }) {
            return Err(Error::DeltaRequired);
        }
        let k = class.len() as f64;
        let eta = (2.0 * k.ln() / params.horizon() as f64).sqrt();
        Ok(Self {
            core: ClippedCore::new(class, params.horizon(), eta),
        })
    }
}

impl Learner for PrivateWma {
    fn name(&self) -> &'static str {
        "wma-ldp"
    }

    fn predict(&mut self, x: Feature) -> Result<RoundOutput> {
        self.core.predict(x)
    }

    fn observe(&mut self, feedback: &Feedback) -> Result<()> {
        let Feedback::Message(PrivateMessage::Dense(values)) = feedback else {
            return Err(Error::Protocol("wma-ldp expects a dense message"));
        };
        if values.len() != self.core.state.k() {
            return Err(Error::DimensionMismatch {
                expected: self.core.state.k(),
                got: values.len(),
            });
        }
        let weights = self.core.take_pending()?;
        let (loss, clamps) = self.core.state.update(values)?;
        self.core.ledger.record(&weights, &loss);
        self.core.clamps += clamps;
        Ok(())
    }

    fn state(&self) -> &WeightState {
        &self.core.state
    }

    fn ledger(&self) -> &RegretLedger {
        &self.core.ledger
    }

    fn clamp_events(&self) -> u64 {
        self.core.clamps
    }
}

/// Exponential weights updated only on the revealed coordinate,
/// `η = √(2K ln K/T)`.
#[derive(Debug, Clone)]
pub struct PrivateExp3 {
    core: ClippedCore,
}

impl PrivateExp3 {
    pub fn new(class: Arc<HypothesisClass>, params: &PrivacyParams) -> Result<Self> {
        check_class(&class, params)?;
        if params.mechanism() != Mechanism::Pure {
            return Err(Error::InvalidParameter {
                field: "delta",
                message: "exp3-pure runs the pure mechanism".into(),
            });
        }
        let k = class.len() as f64;
        let eta = (2.0 * k * k.ln() / params.horizon() as f64).sqrt();
        Ok(Self {
            core: ClippedCore::new(class, params.horizon(), eta),
        })
    }
}

impl Learner for PrivateExp3 {
    fn name(&self) -> &'static str {
        "exp3-pure"
    }

    fn predict(&mut self, x: Feature) -> Result<RoundOutput> {
        self.core.predict(x)
    }

    fn observe(&mut self, feedback: &Feedback) -> Result<()> {
        let Feedback::Message(PrivateMessage::Sparse { j, v }) = *feedback else {
            return Err(Error::Protocol("exp3-pure expects a sparse message"));
        };
        let k = self.core.state.k();
        if j >= k {
            return Err(Error::IndexOutOfRange { index: j, k });
        }
        let weights = self.core.take_pending()?;
        let (v, clamps) = self.core.state.update_single(j, v)?;
        self.core.ledger.record_sparse(&weights, j, v);
        self.core.clamps += clamps;
        Ok(())
    }

    fn state(&self) -> &WeightState {
        &self.core.state
    }

    fn ledger(&self) -> &RegretLedger {
        &self.core.ledger
    }

    fn clamp_events(&self) -> u64 {
        self.core.clamps
    }
}

/// Exponential weights on the log-likelihood of a randomized-response label
/// under each hypothesis pushed through the channel. No clipping.
#[derive(Debug, Clone)]
pub struct RrBaseline {
    class: Arc<HypothesisClass>,
    channel: RandomizedResponse,
    floor: f64,
    state: WeightState,
    ledger: RegretLedger,
    clamps: u64,
    pending: Option<(Feature, Vec<f64>)>,
}

impl RrBaseline {
    pub fn new(class: Arc<HypothesisClass>, epsilon: f64, horizon: usize) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::InvalidParameter {
                field: "horizon",
                message: format!("needs T >= 2, got {horizon}"),
            });
        }
        let m = class.label_count();
        let channel = RandomizedResponse::new(m, epsilon)?;
        // equals the smallest channel output probability unless ε is so large
        // that it falls below 1/(T·M)
        let floor = channel
            .cross_probability()
            .max(1.0 / (horizon as f64 * m as f64));
        let k = class.len();
        let eta = (2.0 * (k as f64).ln() / horizon as f64).sqrt();
        Ok(Self {
            class,
            channel,
            floor,
            state: WeightState::new(k, eta),
            ledger: RegretLedger::new(k),
            clamps: 0,
            pending: None,
        })
    }

    pub fn channel(&self) -> &RandomizedResponse {
        &self.channel
    }

    /// Rescaled loss `ln(keep/q)/ln(keep/floor)` of hypothesis output `f` on
    /// the reported label; `q` is the channel output probability.
    pub fn loss(&self, f: &LabelDist, y_tilde: usize) -> f64 {
        let keep = self.channel.keep_probability();
        let cross = self.channel.cross_probability();
        let q = keep * f.mass(y_tilde) + cross * (1.0 - f.mass(y_tilde));
        let q = q.max(self.floor);
        (keep / q).ln() / (keep / self.floor).ln()
    }
}

impl Learner for RrBaseline {
    fn name(&self) -> &'static str {
        "rr-baseline"
    }

    fn predict(&mut self, x: Feature) -> Result<RoundOutput> {
        if self.pending.is_some() {
            return Err(Error::Protocol("predict called twice without observe"));
        }
        let dists = self.class.evaluate_all(x)?;
        let weights = self.state.normalized();
        let mut p = vec![0.0; self.class.label_count()];
        for (w, d) in weights.iter().zip(&dists) {
            for (acc, v) in p.iter_mut().zip(d.probs()) {
                *acc += w * v;
            }
        }
        self.pending = Some((x, weights.clone()));
        Ok(RoundOutput {
            prediction: LabelDist::from_probs_unchecked(p),
            clipping: None,
            weights,
        })
    }

    fn observe(&mut self, feedback: &Feedback) -> Result<()> {
        let Feedback::Randomized(y) = *feedback else {
            return Err(Error::Protocol("rr-baseline expects a randomized label"));
        };
        let m = self.class.label_count();
        if y >= m {
            return Err(Error::LabelOutOfRange { label: y, m });
        }
        let (x, weights) = self
            .pending
            .take()
            .ok_or(Error::Protocol("observe called before predict"))?;
        let loss: Vec<f64> = self
            .class
            .evaluate_all(x)?
            .into_iter()
            .map(|f| self.loss(f, y))
            .collect();
        let (loss, clamps) = self.state.update(&loss)?;
        self.ledger.record(&weights, &loss);
        self.clamps += clamps;
        Ok(())
    }

    fn state(&self) -> &WeightState {
        &self.state
    }

    fn ledger(&self) -> &RegretLedger {
        &self.ledger
    }

    fn clamp_events(&self) -> u64 {
        self.clamps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_dist, SeededRng};
    use crate::privacy::{respond_approx, respond_pure};

    fn class(rows: &[&[f64]]) -> Arc<HypothesisClass> {
        Arc::new(
            HypothesisClass::constant(rows.iter().map(|r| make_dist(r).unwrap()).collect())
                .unwrap(),
        )
    }

    #[test]
    fn zero_loss_keeps_weights() {
        let mut s = WeightState::new(3, 0.7);
        s.update(&[0.0, 0.5, 0.0]).unwrap();
        let before = s.normalized();
        s.update(&[0.0; 3]).unwrap();
        assert_eq!(s.normalized(), before);
    }

    #[test]
    fn two_expert_step() {
        let s = WeightState::new(2, 2f64.ln());
        let next = wma_update(&s, &[0.0, 1.0]).unwrap();
        let w = next.normalized();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(next.round(), 1);
    }

    #[test]
    fn clamping_is_counted() {
        let mut s = WeightState::new(3, 0.1);
        let (loss, clamps) = s.update(&[-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(loss, vec![0.0, 0.5, 1.0]);
        assert_eq!(clamps, 2);
        assert!(matches!(
            s.update(&[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rescale_preserves_ratios() {
        let mut s = WeightState::new(4, 1.0);
        for t in 0..200 {
            s.update(&[0.9, 0.1, (t % 2) as f64, 0.5]).unwrap();
            let max = s.weights().iter().copied().fold(0.0, f64::max);
            assert_eq!(max, 1.0);
            assert!(s.weights().iter().all(|&w| w > 0.0));
            assert!((s.normalized().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let w = s.normalized();
        assert!(w[1] > w[3] && w[3] > w[0]);
    }

    #[test]
    fn wma_regret_random_losses() {
        let (k, horizon) = (16usize, 10_000usize);
        let eta = (2.0 * (k as f64).ln() / horizon as f64).sqrt();
        let mut rng = SeededRng::new(11, 0);
        let mut s = WeightState::new(k, eta);
        let mut ledger = RegretLedger::new(k);
        for _ in 0..horizon {
            let loss: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
            let w = s.normalized();
            s.update(&loss).unwrap();
            ledger.record(&w, &loss);
        }
        assert!(ledger.regret() <= ledger.wma_bound(horizon));
        assert!(ledger.regret() <= ledger.potential_bound(eta));
    }

    #[test]
    fn single_coordinate_update() {
        let mut s = WeightState::new(4, 0.5);
        s.update(&[0.2, 0.4, 0.6, 0.8]).unwrap();
        let before = s.normalized();
        s.update_single(2, 0.9).unwrap();
        let after = s.normalized();
        for (i, j) in [(0, 1), (0, 3), (1, 3)] {
            assert!((before[i] / before[j] - after[i] / after[j]).abs() < 1e-12);
        }
        assert!(after[2] / after[0] < before[2] / before[0]);
        assert!(matches!(
            s.update_single(4, 0.1),
            Err(Error::IndexOutOfRange { index: 4, k: 4 })
        ));
    }

    #[test]
    fn protocol_order_enforced() {
        let c = class(&[&[0.5, 0.5], &[0.9, 0.1]]);
        let params = PrivacyParams::pure(1.0, 2, 100).unwrap();
        let mut l = PrivateExp3::new(c, &params).unwrap();
        let fb = Feedback::Message(PrivateMessage::Sparse { j: 0, v: 0.5 });
        assert!(matches!(l.observe(&fb), Err(Error::Protocol(_))));
        l.predict(Feature(0)).unwrap();
        assert!(matches!(l.predict(Feature(0)), Err(Error::Protocol(_))));
        let dense = Feedback::Message(PrivateMessage::Dense(vec![0.5, 0.5]));
        assert!(matches!(l.observe(&dense), Err(Error::Protocol(_))));
        let bad = Feedback::Message(PrivateMessage::Sparse { j: 2, v: 0.5 });
        assert!(matches!(l.observe(&bad), Err(Error::IndexOutOfRange { .. })));
        l.observe(&fb).unwrap();
    }

    #[test]
    fn dense_length_checked() {
        let c = class(&[&[0.5, 0.5], &[0.9, 0.1]]);
        let params = PrivacyParams::approximate(1.0, 1e-3, 2, 100).unwrap();
        let mut l = PrivateWma::new(c, &params).unwrap();
        l.predict(Feature(0)).unwrap();
        let bad = Feedback::Message(PrivateMessage::Dense(vec![0.5]));
        assert!(matches!(l.observe(&bad), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn single_hypothesis_prediction_is_its_clipped_law() {
        let c = class(&[&[0.6, 0.3, 0.1]]);
        let horizon = 50;
        let params = PrivacyParams::approximate(1.0, 1e-3, 1, horizon).unwrap();
        let mut l = PrivateWma::new(Arc::clone(&c), &params).unwrap();
        let round = ClippedRound::build(&c, Feature(0), horizon).unwrap();
        let expected = round.plan().unclip(round.expert(0)).unwrap();
        let mut rng = SeededRng::new(0, 0);
        for t in 0..20 {
            let out = l.predict(Feature(0)).unwrap();
            for (a, b) in out.prediction.probs().iter().zip(expected.probs()) {
                assert!((a - b).abs() < 1e-15);
            }
            let msg = respond_approx(&round, t % 3, &params, &mut rng).unwrap();
            l.observe(&Feedback::Message(msg)).unwrap();
            assert_eq!(l.state().weights(), &[1.0]);
        }
    }

    #[test]
    fn identical_hypotheses_stay_near_uniform() {
        let c = class(&[&[0.3, 0.7], &[0.3, 0.7], &[0.3, 0.7], &[0.3, 0.7]]);
        let horizon = 1000;
        let params = PrivacyParams::approximate(1.0, 1e-3, 4, horizon).unwrap();
        let round = ClippedRound::build(&c, Feature(0), horizon).unwrap();
        let mut l = PrivateWma::new(Arc::clone(&c), &params).unwrap();
        let mut rng = SeededRng::new(5, 0);
        for t in 0..horizon {
            l.predict(Feature(0)).unwrap();
            let msg = respond_approx(&round, t % 2, &params, &mut rng).unwrap();
            l.observe(&Feedback::Message(msg)).unwrap();
        }
        for w in l.state().normalized() {
            assert!((w - 0.25).abs() <= 0.1, "{w}");
        }
    }

    #[test]
    fn exp3_potential_inequality_and_positive_predictions() {
        let c = class(&[&[0.7, 0.2, 0.1, 0.0], &[0.1, 0.1, 0.1, 0.7], &[0.25; 4]]);
        let horizon = 2000;
        let params = PrivacyParams::pure(1.0, 3, horizon).unwrap();
        let round = ClippedRound::build(&c, Feature(0), horizon).unwrap();
        let truth = make_dist(&[0.7, 0.2, 0.1, 0.0]).unwrap();
        let mut l = PrivateExp3::new(Arc::clone(&c), &params).unwrap();
        let mut rng = SeededRng::new(6, 0);
        let plan = round.plan();
        for _ in 0..horizon {
            let out = l.predict(Feature(0)).unwrap();
            for y in 0..4 {
                let floor = plan.block_sizes()[y] as f64
                    / (horizon as f64 * plan.n_prime() as f64);
                assert!(out.prediction.mass(y) >= floor * (1.0 - 1e-12));
            }
            let y = truth.sample(&mut rng);
            let msg = respond_pure(&round, y, &params, &mut rng).unwrap();
            l.observe(&Feedback::Message(msg)).unwrap();
        }
        let ledger = l.ledger();
        assert!(ledger.regret() <= ledger.potential_bound(l.state().eta()));
    }

    #[test]
    fn prediction_is_unclipped_mixture() {
        let c = class(&[&[0.6, 0.3, 0.1], &[0.05, 0.05, 0.9], &[0.2, 0.5, 0.3]]);
        let params = PrivacyParams::pure(1.0, 3, 100).unwrap();
        let mut l = PrivateExp3::new(c, &params).unwrap();
        let mut rng = SeededRng::new(2, 2);
        for _ in 0..50 {
            let out = l.predict(Feature(0)).unwrap();
            let mix = out.clipped_mixture().unwrap();
            let round = out.clipping.as_ref().unwrap();
            let unclipped = round.plan().unclip(mix.probs()).unwrap();
            for (a, b) in unclipped.probs().iter().zip(out.prediction.probs()) {
                assert!((a - b).abs() < 1e-14);
            }
            let msg = respond_pure(round, 2, &params, &mut rng).unwrap();
            l.observe(&Feedback::Message(msg)).unwrap();
        }
    }

    #[test]
    fn predictions_replay() {
        let c = class(&[&[0.5, 0.5], &[0.8, 0.2]]);
        let params = PrivacyParams::pure(1.0, 2, 200).unwrap();
        let round = ClippedRound::build(&c, Feature(0), 200).unwrap();
        let run = || {
            let mut l = PrivateExp3::new(Arc::clone(&c), &params).unwrap();
            let mut rng = SeededRng::new(21, 3);
            (0..200)
                .map(|_| {
                    let out = l.predict(Feature(0)).unwrap();
                    let msg = respond_pure(&round, 0, &params, &mut rng).unwrap();
                    l.observe(&Feedback::Message(msg)).unwrap();
                    out.prediction
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rr_losses_span_unit_interval() {
        let c = class(&[&[1.0, 0.0, 0.0], &[0.0, 0.5, 0.5]]);
        let l = RrBaseline::new(c, 1.0, 100).unwrap();
        let certain = make_dist(&[1.0, 0.0, 0.0]).unwrap();
        assert!(l.loss(&certain, 0).abs() < 1e-12);
        assert!((l.loss(&certain, 1) - 1.0).abs() < 1e-12);
        let keep = l.channel().keep_probability();
        let cross = l.channel().cross_probability();
        assert!(((keep / cross).ln() - 1.0).abs() < 1e-12);
        for row in l.channel().matrix() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rr_infinite_epsilon_is_noiseless_log_loss() {
        let c = class(&[&[0.8, 0.2], &[0.3, 0.7]]);
        let horizon = 100;
        let mut l = RrBaseline::new(Arc::clone(&c), f64::INFINITY, horizon).unwrap();
        assert_eq!(l.channel().keep_probability(), 1.0);
        let scale = (horizon as f64 * 2.0).ln();
        let mut s = WeightState::new(2, l.state().eta());
        for t in 0..50 {
            let y = (t % 3 == 0) as usize;
            let out = l.predict(Feature(0)).unwrap();
            assert_eq!(out.weights, s.normalized());
            l.observe(&Feedback::Randomized(y)).unwrap();
            let loss = [-(c.hypotheses()[0].evaluate(Feature(0)).unwrap().mass(y)).ln() / scale,
                -(c.hypotheses()[1].evaluate(Feature(0)).unwrap().mass(y)).ln() / scale];
            s.update(&loss).unwrap();
        }
        for (a, b) in l.state().normalized().iter().zip(s.normalized()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rr_prediction_is_unclipped_mixture() {
        let c = class(&[&[0.8, 0.2], &[0.4, 0.6]]);
        let mut l = RrBaseline::new(c, 1.0, 10).unwrap();
        let out = l.predict(Feature(0)).unwrap();
        assert!(out.clipping.is_none());
        assert!((out.prediction.mass(0) - 0.6).abs() < 1e-15);
    }
}
