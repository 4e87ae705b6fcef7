//! Batch estimation by averaging online predictions and boosting.
//!
//! Each of R exp3-pure runs yields the average of its predictions. The
//! metric median of those R averages is the estimate. When the config does
//! not fix the horizon, T is found by doubling from `⌈K/(ε²α⁴)⌉` (at least
//! 1000) until a calibration run on separate random streams certifies
//! `√(kl_cum/(2T)) ≤ α`, which bounds the TV error of its average.

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::LabelDist;
use crate::error::{Error, Result};
use crate::metrics::{median_boost_index, tv};

use super::config::{Algorithm, ExperimentConfig, Setup, TruthSelection};
use super::run::{run_replication, RunOptions};

/// Largest horizon the calibration will try.
pub const MAX_DERIVED_HORIZON: usize = 1 << 24;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PilotStep {
    #[serde(rename = "T")]
    pub horizon: usize,
    /// `√(kl_cum/(2T))` of the calibration run.
    pub tv_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchResult {
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Whether T came from the config or from calibration.
    pub horizon_derived: bool,
    pub pilot: Vec<PilotStep>,
    pub truth: usize,
    pub estimate: LabelDist,
    pub tv_error: f64,
    /// Replication whose average was selected.
    pub chosen: usize,
    /// TV error of every replication's average.
    pub run_tv: Vec<f64>,
}

fn start_horizon(k: usize, epsilon: f64, alpha: f64) -> usize {
    let raw = k as f64 / (epsilon * epsilon * alpha.powi(4));
    if raw.is_finite() {
        (raw.ceil() as usize).clamp(1000, MAX_DERIVED_HORIZON)
    } else {
        1000
    }
}

fn with_horizon(cfg: &ExperimentConfig, horizon: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.horizon = Some(horizon);
    c
}

/// Doubling calibration of the horizon for accuracy `alpha`.
pub fn derive_horizon(cfg: &ExperimentConfig, alpha: f64) -> Result<(usize, Vec<PilotStep>)> {
    let TruthSelection::Index(truth) = cfg.truth else {
        return Err(Error::config("truth", "batch selection needs a fixed truth index"));
    };
    let probe = Setup::new(&with_horizon(cfg, 2))?;
    let mut horizon = start_horizon(probe.class.len(), cfg.epsilon, alpha);
    let mut steps = Vec::new();
    loop {
        let setup = Setup::new(&with_horizon(cfg, horizon))?;
        let opts = RunOptions {
            pilot: true,
            ..RunOptions::default()
        };
        let run = run_replication(&setup, truth, 0, &opts)?;
        let tv_bound = (run.summary.kl_cum / (2.0 * horizon as f64)).sqrt();
        steps.push(PilotStep { horizon, tv_bound });
        if tv_bound <= alpha || horizon >= MAX_DERIVED_HORIZON {
            return Ok((horizon, steps));
        }
        horizon = (horizon * 2).min(MAX_DERIVED_HORIZON);
    }
}

/// Runs `boost` replications, averages each, and returns the metric median.
/// `cfg.horizon`, when set, overrides the calibration.
pub fn batch_select(cfg: &ExperimentConfig, alpha: f64, boost: usize) -> Result<BatchResult> {
    if cfg.algorithm != Algorithm::Exp3Pure {
        return Err(Error::config("algorithm", "batch selection runs exp3-pure"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config("alpha", format!("must be in (0, 1], got {alpha}")));
    }
    if boost == 0 {
        return Err(Error::config("boost", "needs at least one replication"));
    }
    let TruthSelection::Index(truth) = cfg.truth else {
        return Err(Error::config("truth", "batch selection needs a fixed truth index"));
    };
    let (horizon, pilot, derived) = match cfg.horizon {
        Some(t) => (t, Vec::new(), false),
        None => {
            let (t, steps) = derive_horizon(cfg, alpha)?;
            (t, steps, true)
        }
    };
    let mut run_cfg = with_horizon(cfg, horizon);
    run_cfg.reps = boost;
    let setup = Setup::new(&run_cfg)?;
    if !setup.class.is_all_constant() {
        return Err(Error::config("instance", "batch selection needs constant hypotheses"));
    }
    let opts = RunOptions {
        average: true,
        ..RunOptions::default()
    };
    let averages = (0..boost)
        .into_par_iter()
        .map(|r| {
            run_replication(&setup, truth, r, &opts)
                .map(|o| o.average.expect("averaging requested"))
        })
        .collect::<Result<Vec<_>>>()?;
    let f = setup.class.hypotheses()[truth].evaluate(setup.features.at(0))?;
    let run_tv = averages
        .iter()
        .map(|a| tv(f.probs(), a.probs()))
        .collect::<Result<Vec<_>>>()?;
    let chosen = median_boost_index(&averages)?;
    Ok(BatchResult {
        horizon,
        horizon_derived: derived,
        pilot,
        truth,
        tv_error: run_tv[chosen],
        estimate: averages[chosen].clone(),
        chosen,
        run_tv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::run_replication;
    use crate::metrics::online_to_batch;

    fn cfg() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(Algorithm::Exp3Pure, 1.0);
        c.k = Some(3);
        c.m = Some(4);
        c.horizon = Some(300);
        c.seed = 5;
        c
    }

    #[test]
    fn single_replication_is_plain_average() {
        let c = cfg();
        let r = batch_select(&c, 0.5, 1).unwrap();
        let setup = Setup::new(&c).unwrap();
        let opts = RunOptions {
            keep_predictions: true,
            ..RunOptions::default()
        };
        let run = run_replication(&setup, 0, 0, &opts).unwrap();
        let plain = online_to_batch(&run.predictions).unwrap();
        for (a, b) in plain.probs().iter().zip(r.estimate.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(r.chosen, 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut c = cfg();
        assert!(batch_select(&c, 0.0, 3).is_err());
        assert!(batch_select(&c, 0.2, 0).is_err());
        c.truth = TruthSelection::Scan;
        assert!(batch_select(&c, 0.2, 3).is_err());
        let mut c = cfg();
        c.algorithm = Algorithm::RrBaseline;
        assert!(batch_select(&c, 0.2, 3).is_err());
    }

    #[test]
    fn start_horizon_floor() {
        assert_eq!(start_horizon(4, 1.0, 0.2), 2500);
        assert_eq!(start_horizon(4, f64::INFINITY, 0.2), 1000);
        assert_eq!(start_horizon(1, 10.0, 0.9), 1000);
    }
}
