//! One experiment per value of a single axis.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::HypothesisClass;
use crate::error::{Error, Result};
use crate::metrics::write_traces;

use super::config::ExperimentConfig;
use super::run::{run_experiment, run_on_class, Experiment, ExperimentReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    T,
    K,
    M,
    #[serde(rename = "epsilon")]
    Epsilon,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::T => "T",
            SweepAxis::K => "K",
            SweepAxis::M => "M",
            SweepAxis::Epsilon => "epsilon",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" => Ok(SweepAxis::T),
            "K" => Ok(SweepAxis::K),
            "M" => Ok(SweepAxis::M),
            "epsilon" => Ok(SweepAxis::Epsilon),
            other => Err(Error::config(
                "axis",
                format!("expected T, K, M or epsilon, got `{other}`"),
            )),
        }
    }
}

/// Parses `"1000,10000"` into reals.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .map_err(|_| Error::config("values", format!("`{v}` is not a number")))
        })
        .collect()
}

fn as_count(axis: SweepAxis, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::config(
            "values",
            format!("axis {axis} takes non-negative integers, got {v}"),
        ))
    }
}

/// `template` with the axis set to `value`.
pub fn apply_axis(template: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut cfg = template.clone();
    match axis {
        SweepAxis::T => cfg.horizon = Some(as_count(axis, value)?),
        SweepAxis::K => cfg.k = Some(as_count(axis, value)?),
        SweepAxis::M => cfg.m = Some(as_count(axis, value)?),
        SweepAxis::Epsilon => cfg.epsilon = value,
    }
    Ok(cfg)
}

/// Least-squares slope of `ln y` on `ln x`; `None` unless at least two
/// points are positive and finite.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 || pts.len() != x.len() {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub experiments: Vec<Experiment>,
    /// Log-log slope of the mean cumulative KL-risk against the axis.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary<'a> {
    pub axis: SweepAxis,
    pub values: &'a [f64],
    pub mean_kl_cum: Vec<f64>,
    pub slope: Option<f64>,
    pub reports: Vec<&'a ExperimentReport>,
}

impl SweepResult {
    pub fn means(&self) -> Vec<f64> {
        self.experiments.iter().map(|e| e.report.mean_kl_cum).collect()
    }

    pub fn summary(&self) -> SweepSummary<'_> {
        SweepSummary {
            axis: self.axis,
            values: &self.values,
            mean_kl_cum: self.means(),
            slope: self.slope,
            reports: self.experiments.iter().map(|e| &e.report).collect(),
        }
    }

    /// All traces with an `axis_value` column.
    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut traces = Vec::new();
        let mut axis = Vec::new();
        for (v, e) in self.values.iter().zip(&self.experiments) {
            for t in &e.traces {
                traces.push(t.clone());
                axis.push(*v);
            }
        }
        let mut buf = Vec::new();
        write_traces(&mut buf, &traces, Some(&axis))?;
        Ok(buf)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv_bytes()?)?;
        Ok(())
    }
}

pub fn sweep(template: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepResult> {
    sweep_with(template, axis, values, None)
}

/// Class constructor used by [`sweep_with`] in place of `cfg.instance`.
pub type ClassBuilder<'a> = &'a (dyn Fn(&ExperimentConfig) -> Result<HypothesisClass> + Sync);

/// Like [`sweep`], but when `builder` is given each experiment runs on the
/// class it returns for that value's config.
pub fn sweep_with(
    template: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    builder: Option<ClassBuilder<'_>>,
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::config("values", "sweep needs at least one value"));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::config("values", "values must be strictly ascending"));
    }
    let experiments = values
        .iter()
        .map(|&v| {
            let cfg = apply_axis(template, axis, v)?;
            match builder {
                Some(build) => run_on_class(&cfg, build(&cfg)?),
                None => run_experiment(&cfg),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = experiments.iter().map(|e| e.report.mean_kl_cum).collect();
    Ok(SweepResult {
        axis,
        values: values.to_vec(),
        slope: log_log_slope(values, &means),
        experiments,
    })
}
