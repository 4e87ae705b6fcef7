//! Locally differentially private online conditional distribution learning.
//!
//! A finite class of distribution-valued hypotheses is known to the learner.
//! Nature fixes one member as the truth, users draw labels from it and release
//! only privatized messages, and the learner predicts a label distribution
//! each round before seeing that round's message. Risk is the cumulative KL
//! divergence from the truth.
//!
//! Modules, bottom-up:
//!
//! - [`domain`]: label distributions, hypotheses, feature streams, seeded RNG.
//! - [`clipping`]: the per-round expanded alphabet whose pushforward masses
//!   are bounded in `[1/(T·N'), 1/M]`, which bounds log-likelihood sensitivity.
//! - [`privacy`]: Laplace noise, the dense `(ε,δ)` and single-coordinate
//!   `(ε,0)` releases, randomized response, and composition accounting.
//! - [`learners`]: exponential weights with full feedback, the single
//!   coordinate EXP3 variant, and a randomized-response baseline.
//! - [`instances`]: Sylvester–Hadamard hard classes and synthetic classes.
//! - [`metrics`]: KL/TV, risk traces, Pinsker checks, averaging and the
//!   metric-median boost.
//! - [`harness`]: end-to-end experiments, sweeps, SVG plots, batch selection.

pub mod clipping;
pub mod domain;
pub mod error;
pub mod harness;
pub mod instances;
pub mod learners;
pub mod metrics;
pub mod privacy;

pub use error::{Error, Result};
