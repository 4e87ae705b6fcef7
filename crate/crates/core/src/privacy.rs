//! User-side privatization and privacy bookkeeping.
//!
//! Both releases privatize the clipped log-likelihood `log p̄_j[h(y)]` of the
//! user's label under each hypothesis. Its range is at most
//! `Δ = ln((K+1)·T)` wide, so adding Laplace noise of scale `Δ/ε'` makes one
//! coordinate `(ε', 0)`-private. The dense release adds independent noise to
//! all K coordinates and relies on advanced composition; the sparse release
//! reveals a single uniformly chosen coordinate and is `(ε, 0)`-private.

use serde::{Deserialize, Serialize};

use crate::clipping::ClippedRound;
use crate::domain::{LabelDist, SeededRng};
use crate::error::{Error, Result};

/// Which release a parameter set drives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mechanism {
    /// Dense `(ε, δ)` Laplace vector.
    Approximate { delta: f64 },
    /// Single revealed coordinate, `(ε, 0)`.
    Pure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    epsilon: f64,
    gamma: f64,
    k: usize,
    horizon: usize,
    mechanism: Mechanism,
}

fn check_common(epsilon: f64, k: usize, horizon: usize) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter {
            field: "epsilon",
            message: format!("must be positive, got {epsilon}"),
        });
    }
    if k == 0 {
        return Err(Error::InvalidParameter {
            field: "k",
            message: "class must be non-empty".into(),
        });
    }
    if horizon < 2 {
        return Err(Error::InvalidParameter {
            field: "horizon",
            message: format!("needs T >= 2, got {horizon}"),
        });
    }
    Ok(())
}

impl PrivacyParams {
    /// Parameters for the dense release; `gamma` defaults to `ln T`.
    pub fn approximate(epsilon: f64, delta: f64, k: usize, horizon: usize) -> Result<Self> {
        check_common(epsilon, k, horizon)?;
        if !(delta > 0.0) {
            return Err(Error::DeltaRequired);
        }
        if delta >= 1.0 {
            return Err(Error::InvalidParameter {
                field: "delta",
                message: format!("must be below 1, got {delta}"),
            });
        }
        Ok(Self {
            epsilon,
            gamma: (horizon as f64).ln(),
            k,
            horizon,
            mechanism: Mechanism::Approximate { delta },
        })
    }

    /// Parameters for the single-coordinate release; `gamma` defaults to `ln T`.
    pub fn pure(epsilon: f64, k: usize, horizon: usize) -> Result<Self> {
        check_common(epsilon, k, horizon)?;
        Ok(Self {
            epsilon,
            gamma: (horizon as f64).ln(),
            k,
            horizon,
            mechanism: Mechanism::Pure,
        })
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter {
                field: "gamma",
                message: format!("must be positive and finite, got {gamma}"),
            });
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// δ, zero for the pure release.
    pub fn delta(&self) -> f64 {
        match self.mechanism {
            Mechanism::Approximate { delta } => delta,
            Mechanism::Pure => 0.0,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    /// Δ = ln((K+1)·T).
    pub fn sensitivity(&self) -> f64 {
        ((self.k as f64 + 1.0) * self.horizon as f64).ln()
    }

    /// Laplace scale b: `(2√(2K ln 1/δ) + √(Kε))·Δ/ε` for the dense release,
    /// `Δ/ε` for the sparse one. Zero when ε is infinite.
    pub fn noise_scale(&self) -> f64 {
        if self.epsilon.is_infinite() {
            return 0.0;
        }
        let delta_term = match self.mechanism {
            Mechanism::Approximate { delta } => {
                let k = self.k as f64;
                2.0 * (2.0 * k * (1.0 / delta).ln()).sqrt() + (k * self.epsilon).sqrt()
            }
            Mechanism::Pure => 1.0,
        };
        delta_term * self.sensitivity() / self.epsilon
    }

    /// Noise threshold `c' = b·(γ + ln K + ln T)`; each Laplace draw exceeds
    /// it in magnitude with probability `e^{-γ}/(K·T)`.
    pub fn c_prime(&self) -> f64 {
        let k = self.k as f64;
        let t = self.horizon as f64;
        self.noise_scale() * (self.gamma + k.ln() + t.ln())
    }

    /// Normalizer `c = 1/(Δ + 2c')` mapping the noisy statistic into `[0, 1]`.
    pub fn normalizer(&self) -> f64 {
        1.0 / (self.sensitivity() + 2.0 * self.c_prime())
    }

    /// Privacy loss of one released coordinate: `Δ/b`.
    pub fn per_coordinate_epsilon(&self) -> f64 {
        dp_ratio_bound(self.sensitivity(), self.noise_scale())
    }
}

/// `c'(γ)` for the given parameters.
pub fn c_prime(params: &PrivacyParams) -> f64 {
    params.c_prime()
}

/// Privatized observation of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivateMessage {
    Dense(Vec<f64>),
    Sparse { j: usize, v: f64 },
}

/// One Laplace(0, b) draw by inverse CDF from a single uniform.
pub fn laplace_sample(scale: f64, rng: &mut SeededRng) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter {
            field: "scale",
            message: format!("Laplace scale must be positive and finite, got {scale}"),
        });
    }
    Ok(laplace_draw(scale, rng))
}

fn laplace_draw(scale: f64, rng: &mut SeededRng) -> f64 {
    // midpoint of a 2^-53 grid cell, strictly inside (0, 1)
    let u = ((rng.next_u53() as f64) + 0.5) / (1u64 << 53) as f64 - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

fn noise(scale: f64, rng: &mut SeededRng) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        laplace_draw(scale, rng)
    }
}

impl SeededRng {
    fn next_u53(&mut self) -> u64 {
        use rand::RngCore;
        self.next_u64() >> 11
    }
}

/// Log-density of Laplace(0, b) at `x`.
pub fn laplace_log_density(x: f64, scale: f64) -> f64 {
    -(2.0 * scale).ln() - x.abs() / scale
}

/// Supremum of the absolute log-density ratio of a Laplace mechanism of
/// scale `b` on two inputs at distance at most `sensitivity`.
pub fn dp_ratio_bound(sensitivity: f64, scale: f64) -> f64 {
    assert!(scale > 0.0, "Laplace scale must be positive");
    sensitivity / scale
}

/// `ln(p̄_j[y']·M)`: the noiseless centred statistic, always in `[-Δ, 0]`.
pub fn centred_log_likelihood(round: &ClippedRound, j: usize, y_prime: usize) -> f64 {
    let m = round.plan().label_count() as f64;
    (round.expert(j)[y_prime] * m).ln()
}

fn released_value(
    round: &ClippedRound,
    j: usize,
    y_prime: usize,
    lap: f64,
    params: &PrivacyParams,
) -> f64 {
    -params.normalizer() * (centred_log_likelihood(round, j, y_prime) + lap - params.c_prime())
}

fn check_round(round: &ClippedRound, params: &PrivacyParams) -> Result<()> {
    let plan = round.plan();
    if plan.class_size() != params.k() {
        return Err(Error::DimensionMismatch {
            expected: params.k(),
            got: plan.class_size(),
        });
    }
    if plan.horizon() != params.horizon() {
        return Err(Error::InvalidParameter {
            field: "horizon",
            message: format!(
                "plan built for T={} but params use T={}",
                plan.horizon(),
                params.horizon()
            ),
        });
    }
    Ok(())
}

/// Dense release: one clipped draw `y' = h(y)` shared by all K coordinates,
/// each with independent Laplace noise. Returns the message and the noise.
pub fn respond_approx_traced(
    round: &ClippedRound,
    y_true: usize,
    params: &PrivacyParams,
    rng: &mut SeededRng,
) -> Result<(PrivateMessage, Vec<f64>)> {
    if params.delta() == 0.0 {
        return Err(Error::DeltaRequired);
    }
    check_round(round, params)?;
    let y_prime = round.plan().sample_h(y_true, rng)?;
    let scale = params.noise_scale();
    let laps: Vec<f64> = (0..params.k()).map(|_| noise(scale, rng)).collect();
    let values = laps
        .iter()
        .enumerate()
        .map(|(j, &lap)| released_value(round, j, y_prime, lap, params))
        .collect();
    Ok((PrivateMessage::Dense(values), laps))
}

pub fn respond_approx(
    round: &ClippedRound,
    y_true: usize,
    params: &PrivacyParams,
    rng: &mut SeededRng,
) -> Result<PrivateMessage> {
    respond_approx_traced(round, y_true, params, rng).map(|(m, _)| m)
}

/// Sparse release: a uniform index `J`, then `y' = h(y)`, then the single
/// noisy coordinate `J`. Returns the message and the noise draw.
pub fn respond_pure_traced(
    round: &ClippedRound,
    y_true: usize,
    params: &PrivacyParams,
    rng: &mut SeededRng,
) -> Result<(PrivateMessage, f64)> {
    check_round(round, params)?;
    let j = rng.index(params.k());
    let y_prime = round.plan().sample_h(y_true, rng)?;
    let lap = noise(params.noise_scale(), rng);
    let v = released_value(round, j, y_prime, lap, params);
    Ok((PrivateMessage::Sparse { j, v }, lap))
}

pub fn respond_pure(
    round: &ClippedRound,
    y_true: usize,
    params: &PrivacyParams,
    rng: &mut SeededRng,
) -> Result<PrivateMessage> {
    respond_pure_traced(round, y_true, params, rng).map(|(m, _)| m)
}

/// Randomized response over `M` labels: keep the label with probability
/// `1 - η`, otherwise report a uniform other label, with
/// `η = (e^ε/(M-1) + 1)^{-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomizedResponse {
    m: usize,
    epsilon: f64,
    cross: f64,
}

impl RandomizedResponse {
    pub fn new(m: usize, epsilon: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidParameter {
                field: "m",
                message: "randomized response needs at least two labels".into(),
            });
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter {
                field: "epsilon",
                message: format!("must be positive, got {epsilon}"),
            });
        }
        // η = (M-1)/(e^ε + M - 1); keep = e^ε·cross avoids the cancellation in 1 - η
        let cross = 1.0 / (epsilon.exp() + m as f64 - 1.0);
        Ok(Self { m, epsilon, cross })
    }

    pub fn label_count(&self) -> usize {
        self.m
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// η.
    pub fn flip_probability(&self) -> f64 {
        (self.m as f64 - 1.0) * self.cross
    }

    pub fn keep_probability(&self) -> f64 {
        if self.cross == 0.0 {
            return 1.0;
        }
        self.epsilon.exp() * self.cross
    }

    /// Probability of reporting one particular other label.
    pub fn cross_probability(&self) -> f64 {
        self.cross
    }

    /// `c_η = 1 - Mη/(M-1) = (e^ε - 1)/(e^ε + M - 1)`.
    pub fn degradation(&self) -> f64 {
        if self.cross == 0.0 {
            return 1.0;
        }
        self.epsilon.exp_m1() * self.cross
    }

    /// Row-stochastic matrix `C[input][output]`.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.m)
            .map(|y| {
                (0..self.m)
                    .map(|o| {
                        if o == y {
                            self.keep_probability()
                        } else {
                            self.cross_probability()
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Output law of the channel for inputs drawn from `p`.
    pub fn pushforward(&self, p: &LabelDist) -> LabelDist {
        let keep = self.keep_probability();
        let cross = self.cross_probability();
        LabelDist::from_probs_unchecked(
            p.probs()
                .iter()
                .map(|&v| keep * v + cross * (1.0 - v))
                .collect(),
        )
    }

    /// Largest `ln(C[y][o] / C[y'][o])` over all entries of the matrix.
    pub fn max_log_ratio(&self) -> f64 {
        let c = self.matrix();
        let mut worst = f64::NEG_INFINITY;
        for o in 0..self.m {
            for a in 0..self.m {
                for b in 0..self.m {
                    worst = worst.max((c[a][o] / c[b][o]).ln());
                }
            }
        }
        worst
    }

    pub fn sample(&self, y: usize, rng: &mut SeededRng) -> usize {
        if !rng.bernoulli(self.flip_probability()) {
            return y;
        }
        let other = rng.index(self.m - 1);
        if other >= y {
            other + 1
        } else {
            other
        }
    }
}

/// Passes `y` through randomized response.
pub fn rr_channel(y: usize, m: usize, epsilon: f64, rng: &mut SeededRng) -> Result<usize> {
    if y >= m {
        return Err(Error::LabelOutOfRange { label: y, m });
    }
    Ok(RandomizedResponse::new(m, epsilon)?.sample(y, rng))
}

/// Advanced-composition budget check for the dense release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccountantReport {
    pub k: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// `ε' = ε/(2√(2K ln 1/δ) + √(Kε))`.
    pub per_coordinate_epsilon: f64,
    /// `K ε'^2/2 + √(2 ln(1/δ) K ε'^2)`.
    pub composed_epsilon: f64,
    pub ok: bool,
}

pub fn accountant_check(k: usize, epsilon: f64, delta: f64) -> AccountantReport {
    let kf = k as f64;
    let log_inv_delta = (1.0 / delta).ln();
    let eps_prime = epsilon / (2.0 * (2.0 * kf * log_inv_delta).sqrt() + (kf * epsilon).sqrt());
    let composed =
        kf * eps_prime * eps_prime / 2.0 + (2.0 * log_inv_delta * kf * eps_prime * eps_prime).sqrt();
    AccountantReport {
        k,
        epsilon,
        delta,
        per_coordinate_epsilon: eps_prime,
        composed_epsilon: composed,
        ok: composed <= epsilon,
    }
}
