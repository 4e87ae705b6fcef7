//! Divergences, risk traces and batch conversion.

use std::io::Write;

use serde::Serialize;

use crate::domain::LabelDist;
use crate::error::{Error, Result};

fn same_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(())
}

/// `KL(p, q) = Σ p ln(p/q)`; `+∞` when `q` misses mass of `p`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a <= 0.0 {
            continue;
        }
        if b <= 0.0 {
            return Ok(f64::INFINITY);
        }
        total += a * (a / b).ln();
    }
    // rounding can leave tiny negatives for near-equal inputs
    Ok(total.max(0.0))
}

/// `Σ max(p - q, 0)`, half the L1 distance.
pub fn tv(p: &[f64], q: &[f64]) -> Result<f64> {
    same_len(p, q)?;
    Ok(p.iter().zip(q).map(|(&a, &b)| (a - b).max(0.0)).sum())
}

/// Exact CSV header of a risk trace.
pub const CSV_HEADER: [&str; 15] = [
    "run_id",
    "algorithm",
    "K",
    "M",
    "T",
    "epsilon",
    "delta",
    "gamma",
    "seed",
    "t",
    "kl_instant",
    "kl_cum",
    "tv_instant",
    "tv_avg",
    "clamp_events",
];

/// Column appended by sweeps.
pub const AXIS_COLUMN: &str = "axis_value";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceMeta {
    pub run_id: String,
    pub algorithm: String,
    pub k: usize,
    pub m: usize,
    pub horizon: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: usize,
    pub kl_instant: f64,
    pub kl_cum: f64,
    pub tv_instant: f64,
    pub tv_avg: f64,
    pub clamp_events: u64,
}

/// Running risk of one run. Every round updates the totals; only every
/// `stride`-th round (and the last one) is kept as a record.
#[derive(Debug, Clone, Serialize)]
pub struct RiskTrace {
    pub meta: TraceMeta,
    records: Vec<TraceRecord>,
    stride: usize,
    rounds: usize,
    kl_cum: f64,
    tv_sum: f64,
    clamp_events: u64,
    pointwise_violations: usize,
    last: Option<TraceRecord>,
}

impl RiskTrace {
    pub fn new(meta: TraceMeta, stride: usize) -> Self {
        Self {
            meta,
            records: Vec::new(),
            stride: stride.max(1),
            rounds: 0,
            kl_cum: 0.0,
            tv_sum: 0.0,
            clamp_events: 0,
            pointwise_violations: 0,
            last: None,
        }
    }

    /// Adds round `t = rounds + 1` and the clamp events it produced.
    pub fn push(&mut self, kl_instant: f64, tv_instant: f64, new_clamps: u64) {
        self.rounds += 1;
        self.kl_cum += kl_instant;
        self.tv_sum += tv_instant;
        self.clamp_events += new_clamps;
        if !(tv_instant <= (kl_instant / 2.0).sqrt() + 1e-9) {
            self.pointwise_violations += 1;
        }
        let rec = TraceRecord {
            t: self.rounds,
            kl_instant,
            kl_cum: self.kl_cum,
            tv_instant,
            tv_avg: self.tv_sum / self.rounds as f64,
            clamp_events: self.clamp_events,
        };
        if self.rounds % self.stride == 0 || self.rounds == 1 {
            self.records.push(rec);
        }
        self.last = Some(rec);
    }

    /// Appends the final round if the stride skipped it.
    pub fn finish(&mut self) {
        if let Some(last) = self.last {
            if self.records.last().map(|r| r.t) != Some(last.t) {
                self.records.push(last);
            }
        }
    }

    /// Builds a trace from explicit per-round values with stride 1.
    pub fn from_rounds(meta: TraceMeta, rounds: &[(f64, f64)]) -> Self {
        let mut trace = Self::new(meta, 1);
        for &(k, t) in rounds {
            trace.push(k, t, 0);
        }
        trace
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn kl_cum(&self) -> f64 {
        self.kl_cum
    }

    pub fn tv_avg(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.tv_sum / self.rounds as f64
        }
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    /// Rounds (recorded or not) with `tv > √(kl/2) + 1e-9`.
    pub fn pointwise_violations(&self) -> usize {
        self.pointwise_violations
    }

    fn row(&self, r: &TraceRecord) -> Vec<String> {
        let m = &self.meta;
        vec![
            m.run_id.clone(),
            m.algorithm.clone(),
            m.k.to_string(),
            m.m.to_string(),
            m.horizon.to_string(),
            m.epsilon.to_string(),
            m.delta.to_string(),
            m.gamma.to_string(),
            m.seed.to_string(),
            r.t.to_string(),
            r.kl_instant.to_string(),
            r.kl_cum.to_string(),
            r.tv_instant.to_string(),
            r.tv_avg.to_string(),
            r.clamp_events.to_string(),
        ]
    }
}

/// Pinsker consistency of a trace: per round `tv ≤ √(kl/2)` and on average
/// `tv_avg ≤ √(kl_cum/(2t))`, each with slack `1e-9`.
pub fn pinsker_check(trace: &RiskTrace) -> bool {
    if trace.pointwise_violations > 0 {
        return false;
    }
    let slack = 1e-9;
    trace.records.iter().all(|r| {
        r.tv_instant <= (r.kl_instant / 2.0).sqrt() + slack
            && r.tv_avg <= (r.kl_cum / (2.0 * r.t as f64)).sqrt() + slack
    })
}

/// Writes traces as CSV. When `axis` is given, each trace `i` gets
/// `axis_value = axis[i]` in an extra trailing column.
pub fn write_traces<W: Write>(out: W, traces: &[RiskTrace], axis: Option<&[f64]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    if axis.is_some() {
        header.push(AXIS_COLUMN);
    }
    w.write_record(&header)?;
    for (i, trace) in traces.iter().enumerate() {
        for r in &trace.records {
            let mut row = trace.row(r);
            if let Some(values) = axis {
                row.push(values[i].to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Coordinatewise mean of the predictions.
pub fn online_to_batch(predictions: &[LabelDist]) -> Result<LabelDist> {
    let mut avg = StreamingAverage::default();
    for p in predictions {
        avg.push(p.probs())?;
    }
    avg.finish()
}

/// Running coordinatewise mean, so long runs need not keep every prediction.
#[derive(Debug, Clone, Default)]
pub struct StreamingAverage {
    sum: Vec<f64>,
    count: usize,
}

impl StreamingAverage {
    pub fn push(&mut self, p: &[f64]) -> Result<()> {
        if self.count == 0 {
            self.sum = vec![0.0; p.len()];
        } else {
            same_len(&self.sum, p)?;
        }
        for (s, v) in self.sum.iter_mut().zip(p) {
            *s += v;
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<LabelDist> {
        if self.count == 0 {
            return Err(Error::EmptyList);
        }
        let n = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let total: f64 = mean.iter().sum();
        Ok(LabelDist::from_probs_unchecked(
            mean.into_iter().map(|v| v / total).collect(),
        ))
    }
}

/// Index of the metric median: the estimate whose `⌈R/2⌉`-th nearest
/// estimate (itself included) is closest in TV. Ties go to the lowest index.
pub fn median_boost_index(estimates: &[LabelDist]) -> Result<usize> {
    if estimates.is_empty() {
        return Err(Error::EmptyList);
    }
    let r = estimates.len();
    let rank = r.div_ceil(2);
    let mut best = (f64::INFINITY, 0);
    for (i, a) in estimates.iter().enumerate() {
        let mut d = estimates
            .iter()
            .map(|b| tv(a.probs(), b.probs()))
            .collect::<Result<Vec<_>>>()?;
        d.sort_by(f64::total_cmp);
        let radius = d[rank - 1];
        if radius < best.0 {
            best = (radius, i);
        }
    }
    Ok(best.1)
}

/// The metric-median estimate. If more than half of the estimates are within
/// TV `r` of some target, the result is within `3r` of it.
pub fn median_boost(estimates: &[LabelDist]) -> Result<LabelDist> {
    median_boost_index(estimates).map(|i| estimates[i].clone())
}
