//! Experiment configuration and its validation.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{FeatureStream, HypothesisClass, SeededRng};
use crate::error::{Error, Result};
use crate::instances::{build_hard_instance, random_instance};
use crate::privacy::{accountant_check, AccountantReport, PrivacyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "wma-ldp")]
    WmaLdp,
    #[serde(rename = "exp3-pure")]
    Exp3Pure,
    #[serde(rename = "rr-baseline")]
    RrBaseline,
}

impl Algorithm {
    pub fn id(self) -> &'static str {
        match self {
            Algorithm::WmaLdp => "wma-ldp",
            Algorithm::Exp3Pure => "exp3-pure",
            Algorithm::RrBaseline => "rr-baseline",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wma-ldp" => Ok(Algorithm::WmaLdp),
            "exp3-pure" => Ok(Algorithm::Exp3Pure),
            "rr-baseline" => Ok(Algorithm::RrBaseline),
            other => Err(Error::config(
                "algorithm",
                format!("expected wma-ldp, exp3-pure or rr-baseline, got `{other}`"),
            )),
        }
    }
}

/// `random`, `hard` or `file:PATH`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InstanceSource {
    #[default]
    Random,
    Hard,
    File(PathBuf),
}

impl FromStr for InstanceSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InstanceSource::Random),
            "hard" => Ok(InstanceSource::Hard),
            _ => match s.strip_prefix("file:") {
                Some(path) if !path.is_empty() => Ok(InstanceSource::File(PathBuf::from(path))),
                _ => Err(Error::config(
                    "instance",
                    format!("expected random, hard or file:PATH, got `{s}`"),
                )),
            },
        }
    }
}

impl TryFrom<String> for InstanceSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InstanceSource> for String {
    fn from(src: InstanceSource) -> String {
        match src {
            InstanceSource::Random => "random".into(),
            InstanceSource::Hard => "hard".into(),
            InstanceSource::File(p) => format!("file:{}", p.display()),
        }
    }
}

/// A fixed true hypothesis, or every member in turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TruthRepr", into = "TruthRepr")]
pub enum TruthSelection {
    Index(usize),
    Scan,
}

impl Default for TruthSelection {
    fn default() -> Self {
        TruthSelection::Index(0)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TruthRepr {
    Index(usize),
    Word(String),
}

impl TryFrom<TruthRepr> for TruthSelection {
    type Error = Error;

    fn try_from(r: TruthRepr) -> Result<Self> {
        match r {
            TruthRepr::Index(i) => Ok(TruthSelection::Index(i)),
            TruthRepr::Word(w) => w.parse(),
        }
    }
}

impl From<TruthSelection> for TruthRepr {
    fn from(t: TruthSelection) -> Self {
        match t {
            TruthSelection::Index(i) => TruthRepr::Index(i),
            TruthSelection::Scan => TruthRepr::Word("scan".into()),
        }
    }
}

impl FromStr for TruthSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "scan" {
            return Ok(TruthSelection::Scan);
        }
        s.parse::<usize>()
            .map(TruthSelection::Index)
            .map_err(|_| Error::config("truth", format!("expected an index or `scan`, got `{s}`")))
    }
}

/// Reals that may be infinite; JSON writes those as `"inf"`.
mod real {
    use serde::{de, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Word(w) => w
                .parse::<f64>()
                .map_err(|_| de::Error::custom(format!("expected a real or \"inf\", got \"{w}\""))),
        }
    }
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub instance: InstanceSource,
    #[serde(default)]
    pub truth: TruthSelection,
    /// Class size; for `hard` the number of pairs.
    #[serde(rename = "K", default)]
    pub k: Option<usize>,
    #[serde(rename = "M", default)]
    pub m: Option<usize>,
    #[serde(rename = "T", default)]
    pub horizon: Option<usize>,
    #[serde(with = "real")]
    pub epsilon: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Tail parameter; `ln T` when absent.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub reps: usize,
    #[serde(default)]
    pub features: Option<FeatureStream>,
    /// Shape of the random-instance sampler.
    #[serde(default = "unit")]
    pub concentration: f64,
    /// Keep every n-th round in traces (first and last are always kept).
    #[serde(default = "one")]
    pub record_every: usize,
}

impl ExperimentConfig {
    /// Minimal config; every optional field at its default.
    pub fn new(algorithm: Algorithm, epsilon: f64) -> Self {
        Self {
            algorithm,
            instance: InstanceSource::Random,
            truth: TruthSelection::Index(0),
            k: None,
            m: None,
            horizon: None,
            epsilon,
            delta: None,
            gamma: None,
            seed: 0,
            reps: 1,
            features: None,
            concentration: 1.0,
            record_every: 1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Checks every field, including those naming the instance.
    pub fn validate(&self) -> Result<()> {
        self.validate_common()?;
        self.validate_instance()
    }

    /// Checks the fields that do not depend on the class.
    pub fn validate_common(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        let delta = self.delta.unwrap_or(0.0);
        match self.algorithm {
            Algorithm::WmaLdp => {
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(Error::config("delta", "wma-ldp needs delta in (0, 1)"));
                }
                if !self.epsilon.is_finite() {
                    return Err(Error::config("epsilon", "wma-ldp needs a finite epsilon"));
                }
            }
            _ => {
                if delta != 0.0 {
                    return Err(Error::config(
                        "delta",
                        format!("{} is pure and takes delta = 0", self.algorithm),
                    ));
                }
            }
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::config("gamma", format!("must be positive and finite, got {g}")));
            }
        }
        match self.horizon {
            None => return Err(Error::config("T", "horizon is required")),
            Some(t) if t < 2 => return Err(Error::config("T", format!("needs T >= 2, got {t}"))),
            _ => {}
        }
        if self.reps == 0 {
            return Err(Error::config("reps", "needs at least one replication"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every", "must be at least 1"));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::config("concentration", "must be positive and finite"));
        }
        Ok(())
    }

    fn validate_instance(&self) -> Result<()> {
        match &self.instance {
            InstanceSource::Random => {
                match self.k {
                    None | Some(0) => return Err(Error::config("K", "random instances need K >= 1")),
                    _ => {}
                }
                match self.m {
                    Some(m) if m >= 2 => {}
                    _ => return Err(Error::config("M", "random instances need M >= 2")),
                }
            }
            InstanceSource::Hard => match self.k {
                None | Some(0) => return Err(Error::config("K", "hard instances need K >= 1 pairs")),
                _ => {}
            },
            InstanceSource::File(_) => {}
        }
        Ok(())
    }

    /// Builds the hypothesis class named by `instance`. Random classes are
    /// drawn from a stream reserved for the instance.
    pub fn build_class(&self) -> Result<HypothesisClass> {
        let horizon = self.horizon.unwrap_or(2);
        match &self.instance {
            InstanceSource::Random => {
                let mut rng = SeededRng::new(self.seed, super::run::instance_stream());
                random_instance(
                    self.k.unwrap_or(1),
                    self.m.unwrap_or(2),
                    self.concentration,
                    &mut rng,
                )
                .map_err(|e| Error::config("instance", e.to_string()))
            }
            InstanceSource::Hard => {
                let inst = build_hard_instance(self.k.unwrap_or(1), horizon, self.epsilon)
                    .map_err(|e| Error::config("instance", e.to_string()))?;
                if let Some(m) = self.m {
                    if m != inst.labels() {
                        return Err(Error::config(
                            "M",
                            format!("hard instance with K={} has M={}, got {m}", inst.k, inst.labels()),
                        ));
                    }
                }
                Ok(inst.class)
            }
            InstanceSource::File(path) => HypothesisClass::load(path)
                .map_err(|e| Error::config("instance", format!("{}: {e}", path.display()))),
        }
    }
}

/// A validated config bound to its class.
#[derive(Debug, Clone)]
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub class: Arc<HypothesisClass>,
    pub horizon: usize,
    pub gamma: f64,
    pub features: FeatureStream,
    pub truths: Vec<usize>,
    /// Release parameters for the clipping learners.
    pub params: Option<PrivacyParams>,
    pub accountant: Option<AccountantReport>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let class = cfg.build_class()?;
        Self::with_class(cfg, class)
    }

    /// Validates `cfg` against an explicitly supplied class; `instance`,
    /// `K` and `M` in `cfg` are then only checked for consistency.
    pub fn with_class(cfg: &ExperimentConfig, class: HypothesisClass) -> Result<Self> {
        cfg.validate_common()?;
        let horizon = cfg.horizon.expect("validated");
        let k = class.len();
        if let (InstanceSource::File(_), Some(want)) = (&cfg.instance, cfg.k) {
            if want != k {
                return Err(Error::config("K", format!("file class has K={k}, got {want}")));
            }
        }
        if let (InstanceSource::File(_), Some(want)) = (&cfg.instance, cfg.m) {
            if want != class.label_count() {
                return Err(Error::config(
                    "M",
                    format!("file class has M={}, got {want}", class.label_count()),
                ));
            }
        }
        let features = cfg
            .features
            .clone()
            .unwrap_or_else(|| FeatureStream::default_for(&class));
        features
            .validate(horizon)
            .map_err(|e| Error::config("features", e.to_string()))?;
        let distinct: Vec<_> = match &features {
            FeatureStream::Fixed { feature } => vec![*feature],
            FeatureStream::Cyclic { features } | FeatureStream::Scripted { features } => {
                let mut f = features.clone();
                f.sort();
                f.dedup();
                f
            }
        };
        for x in distinct {
            class
                .evaluate_all(x)
                .map_err(|e| Error::config("features", e.to_string()))?;
        }
        let truths = match cfg.truth {
            TruthSelection::Index(j) if j < k => vec![j],
            TruthSelection::Index(j) => {
                return Err(Error::config("truth", format!("index {j} outside class of size {k}")))
            }
            TruthSelection::Scan => (0..k).collect(),
        };
        let gamma = cfg.gamma.unwrap_or((horizon as f64).ln());
        let param_err = |e: Error| Error::config("epsilon", e.to_string());
        let (params, accountant) = match cfg.algorithm {
            Algorithm::WmaLdp => {
                let delta = cfg.delta.expect("validated");
                let report = accountant_check(k, cfg.epsilon, delta);
                if !report.ok {
                    return Err(Error::config(
                        "delta",
                        format!(
                            "accountant rejects K={k}, epsilon={}, delta={delta}: composed {}",
                            cfg.epsilon, report.composed_epsilon
                        ),
                    ));
                }
                let p = PrivacyParams::approximate(cfg.epsilon, delta, k, horizon)
                    .and_then(|p| p.with_gamma(gamma))
                    .map_err(param_err)?;
                (Some(p), Some(report))
            }
            Algorithm::Exp3Pure => {
                let p = PrivacyParams::pure(cfg.epsilon, k, horizon)
                    .and_then(|p| p.with_gamma(gamma))
                    .map_err(param_err)?;
                (Some(p), None)
            }
            Algorithm::RrBaseline => {
                if class.label_count() < 2 {
                    return Err(Error::config("M", "randomized response needs M >= 2"));
                }
                (None, None)
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            class: Arc::new(class),
            horizon,
            gamma,
            features,
            truths,
            params,
            accountant,
        })
    }
}
