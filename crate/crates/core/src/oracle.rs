//! Inexact two-point zeroth-order oracle.
//!
//! Each query draws one realization `eta` and returns the noisy values of
//! `f(.; eta)` at two points. The additive perturbations come from a
//! [`NoiseChannel`] that never looks at the query point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::problems::StochasticProblem;
use crate::simplex;
use crate::{Error, Result, RngStream};

/// Slack on the neighbourhood test, for points built as `x + mu * e` in floating point.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    /// `U[-delta, delta]`.
    #[serde(rename = "uniform")]
    UniformBounded,
    /// `+delta` or `-delta` with equal probability.
    #[serde(rename = "sign")]
    RandomSign,
    /// Stochastic rounding to a grid of spacing `2^-bits`.
    #[serde(rename = "mantissa")]
    MantissaTruncate,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::UniformBounded => "uniform",
            NoiseKind::RandomSign => "sign",
            NoiseKind::MantissaTruncate => "mantissa",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            NoiseKind::None,
            NoiseKind::UniformBounded,
            NoiseKind::RandomSign,
            NoiseKind::MantissaTruncate,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::invalid(format!("unknown noise channel '{s}' (none|uniform|sign|mantissa)")))
    }
}

/// Source of the bounded additive perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseChannel {
    pub kind: NoiseKind,
    /// Bound on `|perturbation|`. For `MantissaTruncate` this is `2^-bits`.
    pub delta: f64,
    pub bits: u32,
}

impl NoiseChannel {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            delta: 0.0,
            bits: 0,
        }
    }

    pub fn uniform(delta: f64) -> Result<Self> {
        Self::new(NoiseKind::UniformBounded, delta, 0)
    }

    pub fn random_sign(delta: f64) -> Result<Self> {
        Self::new(NoiseKind::RandomSign, delta, 0)
    }

    pub fn mantissa(bits: u32) -> Result<Self> {
        Self::new(NoiseKind::MantissaTruncate, 0.0, bits)
    }

    /// `delta` is ignored for `MantissaTruncate` (derived from `bits`) and for `None`.
    pub fn new(kind: NoiseKind, delta: f64, bits: u32) -> Result<Self> {
        match kind {
            NoiseKind::None => Ok(Self::none()),
            NoiseKind::MantissaTruncate => {
                if !(1..=52).contains(&bits) {
                    return Err(Error::invalid(format!("mantissa bits must be in 1..=52, got {bits}")));
                }
                Ok(Self {
                    kind,
                    delta: (-(bits as f64)).exp2(),
                    bits,
                })
            }
            _ => {
                if !(delta.is_finite() && delta >= 0.0) {
                    return Err(Error::invalid(format!("delta must be finite and >= 0, got {delta}")));
                }
                Ok(Self { kind, delta, bits: 0 })
            }
        }
    }

    /// Returns the reported value and the perturbation it carries.
    pub fn perturb(&self, value: f64, rng: &mut RngStream) -> (f64, f64) {
        let noisy = match self.kind {
            NoiseKind::None => return (value, 0.0),
            NoiseKind::UniformBounded => value + self.delta * rng.symmetric(),
            NoiseKind::RandomSign => value + self.delta * rng.sign(),
            NoiseKind::MantissaTruncate => {
                // floor(v/q + U) rounds up with probability frac(v/q): zero mean, |error| < q
                let q = self.delta;
                q * (value / q + rng.uniform()).floor()
            }
        };
        (noisy, noisy - value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleResponse {
    pub value_a: f64,
    pub value_b: f64,
    /// Perturbations added to the two values.
    pub noise_a: f64,
    pub noise_b: f64,
    /// Sequence number of the realization `eta` shared by both values.
    pub eta_id: u64,
    pub calls_charged: u64,
}

impl OracleResponse {
    pub fn difference(&self) -> f64 {
        self.value_a - self.value_b
    }
}

/// One oracle per run. Realizations come from the caller's stream; the
/// perturbations from the oracle's own stream, so the noise cannot depend on
/// which points are queried.
#[derive(Clone, Debug)]
pub struct Oracle<'a> {
    problem: &'a StochasticProblem,
    channel: NoiseChannel,
    noise: RngStream,
    calls: u64,
    draws: u64,
    eta: Vec<f64>,
}

impl<'a> Oracle<'a> {
    pub fn new(problem: &'a StochasticProblem, channel: NoiseChannel, noise: RngStream) -> Self {
        Self {
            problem,
            channel,
            noise,
            calls: 0,
            draws: 0,
            eta: vec![0.0; problem.n()],
        }
    }

    pub fn problem(&self) -> &'a StochasticProblem {
        self.problem
    }

    pub fn channel(&self) -> NoiseChannel {
        self.channel
    }

    /// Realization used by the most recent query.
    pub fn last_realization(&self) -> &[f64] {
        &self.eta
    }

    /// Noisy `(f(x_a; eta), f(x_b; eta))` on one fresh realization. Charges two calls.
    pub fn query_pair(&mut self, x_a: &[f64], x_b: &[f64], rng: &mut RngStream) -> Result<OracleResponse> {
        let n = self.problem.n();
        if x_a.len() != n || x_b.len() != n {
            return Err(Error::InvalidDimension(x_a.len().min(x_b.len())));
        }
        self.check_domain(x_a)?;
        self.check_domain(x_b)?;
        self.problem.sample_realization(rng, &mut self.eta);
        let eta_id = self.draws;
        self.draws += 1;
        self.calls += 2;
        let (value_a, noise_a) = self.channel.perturb(self.problem.eval(x_a, &self.eta), &mut self.noise);
        let (value_b, noise_b) = self.channel.perturb(self.problem.eval(x_b, &self.eta), &mut self.noise);
        Ok(OracleResponse {
            value_a,
            value_b,
            noise_a,
            noise_b,
            eta_id,
            calls_charged: 2,
        })
    }

    /// Total charged calls so far.
    pub fn call_count(&self) -> u64 {
        self.calls
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("query point has a non-finite coordinate"));
        }
        let sum: f64 = x.iter().sum();
        if x.iter().all(|v| *v >= 0.0) && (sum - 1.0).abs() <= simplex::SUM_TOL {
            return Ok(());
        }
        let mu0 = self.problem.mu0();
        let distance = simplex::distance(x);
        if distance <= mu0 + DOMAIN_SLACK {
            Ok(())
        } else {
            Err(Error::Domain { distance, mu0 })
        }
    }
}
