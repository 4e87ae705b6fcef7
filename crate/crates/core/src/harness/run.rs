//! Replications of the Nature / user / learner protocol.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::clipping::ClipCache;
use crate::domain::{HypothesisClass, LabelDist, SeededRng};
use crate::error::Result;
use crate::learners::{Feedback, Learner, PrivateExp3, PrivateWma, RrBaseline};
use crate::metrics::{kl, pinsker_check, tv, write_traces, RiskTrace, StreamingAverage, TraceMeta};
use crate::privacy::{respond_approx_traced, respond_pure_traced, rr_channel, AccountantReport};

use super::config::{Algorithm, ExperimentConfig, Setup};

/// Roles that own independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Draws `Y_t` from the truth.
    Nature,
    /// Clipping, coordinate choice, Laplace noise, randomized response.
    User,
    /// Calibration runs of batch selection.
    PilotNature,
    PilotUser,
}

/// Stream id of `(truth, rep, role)`. Distinct triples never collide for
/// `truth < 2^24` and `rep < 2^32`.
pub fn stream(truth: usize, rep: usize, role: Role) -> u64 {
    let role = match role {
        Role::Nature => 1,
        Role::User => 2,
        Role::PilotNature => 3,
        Role::PilotUser => 4,
    };
    ((truth as u64) << 40) | ((rep as u64) << 8) | role
}

/// Stream reserved for drawing random instances.
pub fn instance_stream() -> u64 {
    u64::MAX
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Accumulate the average prediction.
    pub average: bool,
    /// Keep every prediction.
    pub keep_predictions: bool,
    /// Use the pilot streams.
    pub pilot: bool,
    /// Replace Nature's label at round `t` (0-based) by `y`.
    pub label_override: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub truth: usize,
    pub rep: usize,
    pub kl_cum: f64,
    pub tv_avg: f64,
    pub clamp_events: u64,
    /// Realized regret of the weights on the consumed losses.
    pub regret: f64,
    /// `√(2T ln K)` for full-feedback learners; for exp3-pure the potential
    /// bound.
    pub regret_bound: f64,
    pub regret_ok: bool,
    /// `ln K/η + (η/2)Σ w̃ v²` on the consumed losses.
    pub potential_bound: f64,
    pub potential_ok: bool,
    pub pinsker_ok: bool,
    /// `Σ_t (Σ_j w̃_j Lap_j − Lap_{j*})` for wma-ldp.
    pub noise_term: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub trace: RiskTrace,
    pub average: Option<LabelDist>,
    pub predictions: Vec<LabelDist>,
}

fn make_learner(setup: &Setup) -> Result<Box<dyn Learner + Send>> {
    let class = std::sync::Arc::clone(&setup.class);
    Ok(match setup.cfg.algorithm {
        Algorithm::WmaLdp => Box::new(PrivateWma::new(class, setup.params.as_ref().unwrap())?),
        Algorithm::Exp3Pure => Box::new(PrivateExp3::new(class, setup.params.as_ref().unwrap())?),
        Algorithm::RrBaseline => {
            Box::new(RrBaseline::new(class, setup.cfg.epsilon, setup.horizon)?)
        }
    })
}

fn truth_at(class: &HypothesisClass, truth: usize, x: crate::domain::Feature) -> Result<&LabelDist> {
    class.hypotheses()[truth].evaluate(x)
}

/// Runs replication `rep` with true hypothesis `truth`.
pub fn run_replication(setup: &Setup, truth: usize, rep: usize, opts: &RunOptions) -> Result<RunOutcome> {
    let cfg = &setup.cfg;
    let (nr, ur) = if opts.pilot {
        (Role::PilotNature, Role::PilotUser)
    } else {
        (Role::Nature, Role::User)
    };
    let mut nature = SeededRng::new(cfg.seed, stream(truth, rep, nr));
    let mut user = SeededRng::new(cfg.seed, stream(truth, rep, ur));
    let mut learner = make_learner(setup)?;
    let mut user_cache = ClipCache::new(setup.horizon);
    let class = &*setup.class;
    let meta = TraceMeta {
        run_id: format!("{}-s{}-j{}-r{}", cfg.algorithm, cfg.seed, truth, rep),
        algorithm: cfg.algorithm.id().to_string(),
        k: class.len(),
        m: class.label_count(),
        horizon: setup.horizon,
        epsilon: cfg.epsilon,
        delta: cfg.delta.unwrap_or(0.0),
        gamma: setup.gamma,
        seed: cfg.seed,
    };
    let mut trace = RiskTrace::new(meta, cfg.record_every);
    let mut avg = StreamingAverage::default();
    let mut predictions = Vec::new();
    let mut noise_term = 0.0;
    let track_noise = cfg.algorithm == Algorithm::WmaLdp;

    for t in 0..setup.horizon {
        let x = setup.features.at(t);
        let clamps_before = learner.clamp_events();
        let out = learner.predict(x)?;
        let f = truth_at(class, truth, x)?;
        let kl_t = kl(f.probs(), out.prediction.probs())?;
        let tv_t = tv(f.probs(), out.prediction.probs())?;
        let mut y = f.sample(&mut nature);
        if let Some((round, label)) = opts.label_override {
            if round == t {
                y = label;
            }
        }
        let feedback = match cfg.algorithm {
            Algorithm::WmaLdp => {
                let round = user_cache.get(class, x)?;
                let (msg, laps) =
                    respond_approx_traced(&round, y, setup.params.as_ref().unwrap(), &mut user)?;
                if track_noise {
                    let mixed: f64 = out.weights.iter().zip(&laps).map(|(w, l)| w * l).sum();
                    noise_term += mixed - laps[truth];
                }
                Feedback::Message(msg)
            }
            Algorithm::Exp3Pure => {
                let round = user_cache.get(class, x)?;
                let (msg, _) =
                    respond_pure_traced(&round, y, setup.params.as_ref().unwrap(), &mut user)?;
                Feedback::Message(msg)
            }
            Algorithm::RrBaseline => Feedback::Randomized(rr_channel(
                y,
                class.label_count(),
                cfg.epsilon,
                &mut user,
            )?),
        };
        learner.observe(&feedback)?;
        trace.push(kl_t, tv_t, learner.clamp_events() - clamps_before);
        if opts.average {
            avg.push(out.prediction.probs())?;
        }
        if opts.keep_predictions {
            predictions.push(out.prediction);
        }
    }
    trace.finish();

    let ledger = learner.ledger();
    let eta = learner.state().eta();
    let regret = ledger.regret();
    let potential_bound = ledger.potential_bound(eta);
    let regret_bound = match cfg.algorithm {
        Algorithm::Exp3Pure => potential_bound,
        _ => ledger.wma_bound(setup.horizon),
    };
    let summary = RunSummary {
        truth,
        rep,
        kl_cum: trace.kl_cum(),
        tv_avg: trace.tv_avg(),
        clamp_events: learner.clamp_events(),
        regret,
        regret_bound,
        regret_ok: regret <= regret_bound,
        potential_bound,
        potential_ok: regret <= potential_bound,
        pinsker_ok: pinsker_check(&trace),
        noise_term: track_noise.then_some(noise_term),
    };
    Ok(RunOutcome {
        summary,
        trace,
        average: if opts.average { Some(avg.finish()?) } else { None },
        predictions,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Aggregate {
    pub truth: usize,
    pub mean_kl_cum: f64,
    pub sd_kl_cum: f64,
    pub se_kl_cum: f64,
    pub mean_tv_avg: f64,
    pub sd_tv_avg: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(truth: usize, runs: &[&RunSummary]) -> Aggregate {
    let kl: Vec<f64> = runs.iter().map(|r| r.kl_cum).collect();
    let tvs: Vec<f64> = runs.iter().map(|r| r.tv_avg).collect();
    let (mean_kl_cum, sd_kl_cum) = mean_sd(&kl);
    let (mean_tv_avg, sd_tv_avg) = mean_sd(&tvs);
    Aggregate {
        truth,
        mean_kl_cum,
        sd_kl_cum,
        se_kl_cum: sd_kl_cum / (kl.len() as f64).sqrt(),
        mean_tv_avg,
        sd_tv_avg,
    }
}

/// Risk bound of the clipping learners:
/// `(1/c)·√(2T ln K) + 3 ln((K+1)T)` for wma-ldp and
/// `(1/c)·√(2TK ln K) + 3 ln((K+1)T)` for exp3-pure.
pub fn risk_bound(setup: &Setup) -> Option<f64> {
    let p = setup.params.as_ref()?;
    let k = p.k() as f64;
    let t = p.horizon() as f64;
    let root = match setup.cfg.algorithm {
        Algorithm::WmaLdp => (2.0 * t * k.ln()).sqrt(),
        Algorithm::Exp3Pure => (2.0 * t * k * k.ln()).sqrt(),
        Algorithm::RrBaseline => return None,
    };
    Some(root / p.normalizer() + 3.0 * p.sensitivity())
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub algorithm: Algorithm,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    pub seed: u64,
    pub reps: usize,
    pub runs: Vec<RunSummary>,
    pub per_truth: Vec<Aggregate>,
    /// Truth with the largest mean cumulative KL-risk.
    pub worst_truth: usize,
    pub mean_kl_cum: f64,
    pub sd_kl_cum: f64,
    pub se_kl_cum: f64,
    pub mean_tv_avg: f64,
    pub sd_tv_avg: f64,
    pub risk_bound: Option<f64>,
    /// Worst mean within the bound plus three standard errors.
    pub risk_bound_ok: Option<bool>,
    pub regret_ok: bool,
    pub potential_ok: bool,
    pub pinsker_ok: bool,
    pub clamp_events: u64,
    pub accountant: Option<AccountantReport>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: ExperimentReport,
    pub traces: Vec<RiskTrace>,
}

impl Experiment {
    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_traces(&mut buf, &self.traces, None)?;
        Ok(buf)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv_bytes()?)?;
        Ok(())
    }
}

pub fn build_report(setup: &Setup, runs: Vec<RunSummary>) -> ExperimentReport {
    let per_truth: Vec<Aggregate> = setup
        .truths
        .iter()
        .map(|&j| {
            let group: Vec<&RunSummary> = runs.iter().filter(|r| r.truth == j).collect();
            aggregate(j, &group)
        })
        .collect();
    let worst = per_truth
        .iter()
        .copied()
        .reduce(|a, b| if b.mean_kl_cum > a.mean_kl_cum { b } else { a })
        .expect("at least one truth");
    let bound = risk_bound(setup);
    let cfg = &setup.cfg;
    ExperimentReport {
        algorithm: cfg.algorithm,
        k: setup.class.len(),
        m: setup.class.label_count(),
        horizon: setup.horizon,
        epsilon: cfg.epsilon,
        delta: cfg.delta.unwrap_or(0.0),
        gamma: setup.gamma,
        seed: cfg.seed,
        reps: cfg.reps,
        regret_ok: runs.iter().all(|r| r.regret_ok),
        potential_ok: runs.iter().all(|r| r.potential_ok),
        pinsker_ok: runs.iter().all(|r| r.pinsker_ok),
        clamp_events: runs.iter().map(|r| r.clamp_events).sum(),
        runs,
        worst_truth: worst.truth,
        mean_kl_cum: worst.mean_kl_cum,
        sd_kl_cum: worst.sd_kl_cum,
        se_kl_cum: worst.se_kl_cum,
        mean_tv_avg: worst.mean_tv_avg,
        sd_tv_avg: worst.sd_tv_avg,
        risk_bound: bound,
        risk_bound_ok: bound.map(|b| worst.mean_kl_cum <= b + 3.0 * worst.se_kl_cum),
        per_truth,
        accountant: setup.accountant,
    }
}

/// Runs every `(truth, rep)` pair in parallel; results are ordered by
/// truth, then replication.
pub fn run_setup(setup: &Setup) -> Result<Experiment> {
    let jobs: Vec<(usize, usize)> = setup
        .truths
        .iter()
        .flat_map(|&j| (0..setup.cfg.reps).map(move |r| (j, r)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(j, r)| run_replication(setup, j, r, &RunOptions::default()))
        .collect::<Result<Vec<_>>>()?;
    let (summaries, traces): (Vec<_>, Vec<_>) =
        outcomes.into_iter().map(|o| (o.summary, o.trace)).unzip();
    Ok(Experiment {
        report: build_report(setup, summaries),
        traces,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    run_setup(&Setup::new(cfg)?)
}

/// Runs `cfg` on an explicit class, ignoring `cfg.instance`.
pub fn run_on_class(cfg: &ExperimentConfig, class: HypothesisClass) -> Result<Experiment> {
    run_setup(&Setup::with_class(cfg, class)?)
}
