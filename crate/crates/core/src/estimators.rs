//! Gradient surrogates built from the two-point oracle or from stochastic gradients.
//!
//! | family             | draw                                          | prefactor |
//! |--------------------|-----------------------------------------------|-----------|
//! | `SmoothedTwoPoint` | `(n/mu) (f(x+mu e; eta) - f(x; eta)) nu(e)`    | `n/mu`    |
//! | `DirectionalExact` | `n <grad f(x; eta), e> nu(e)`                  | `n`       |
//! | `ZScheme`          | `<grad f(x; eta), Z> Z`                        | `1`       |
//! | `ZFiniteDiff`      | `(f(x+tau Z; eta) - f(x; eta)) / tau * Z`      | `1/tau`   |
//! | `StochasticSubgradient` | `grad f(x; eta)`                          | `1`       |
//!
//! `nu(e)` is the outward normal of the direction's unit sphere scaled so the
//! surface-to-volume ratio becomes `n/mu` in every case: `sign(e)` for l1,
//! `e` for l2, `sign(e_i) e_i` at the largest coordinate for l-inf.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::oracle::Oracle;
use crate::problems::StochasticProblem;
use crate::sampling::{argmax_abs, dot, l2_ball_into, sample_into, sign, Scheme};
use crate::stats::{McEstimate, Running, RunningVec};
use crate::{Error, Result, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Family {
    SmoothedTwoPoint,
    DirectionalExact,
    ZScheme,
    ZFiniteDiff,
    StochasticSubgradient,
}

/// Distribution of `Z` in the Z-scheme; each has `E[Z Z^T] = I`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ZKind {
    Rademacher,
    /// `N(0, I_n)`.
    ScaledGaussian,
    /// `sqrt(n) e_i`.
    Coordinate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimatorConfig {
    pub family: Family,
    /// Direction scheme for the sphere-based families.
    pub scheme: Scheme,
    pub z_kind: ZKind,
    pub mu: f64,
    pub tau: f64,
}

impl EstimatorConfig {
    pub fn smoothed(scheme: Scheme, mu: f64) -> Self {
        Self {
            family: Family::SmoothedTwoPoint,
            scheme,
            z_kind: ZKind::Rademacher,
            mu,
            tau: 0.0,
        }
    }

    pub fn directional(scheme: Scheme) -> Self {
        Self {
            family: Family::DirectionalExact,
            scheme,
            z_kind: ZKind::Rademacher,
            mu: 0.0,
            tau: 0.0,
        }
    }

    pub fn z_scheme(kind: ZKind) -> Self {
        Self {
            family: Family::ZScheme,
            scheme: z_scheme_of(kind),
            z_kind: kind,
            mu: 0.0,
            tau: 0.0,
        }
    }

    pub fn z_finite_diff(kind: ZKind, tau: f64) -> Self {
        Self {
            family: Family::ZFiniteDiff,
            scheme: z_scheme_of(kind),
            z_kind: kind,
            mu: 0.0,
            tau,
        }
    }

    pub fn subgradient() -> Self {
        Self {
            family: Family::StochasticSubgradient,
            scheme: Scheme::L2Sphere,
            z_kind: ZKind::Rademacher,
            mu: 0.0,
            tau: 0.0,
        }
    }

    /// Whether each draw spends a two-point oracle query.
    pub fn uses_oracle(&self) -> bool {
        matches!(self.family, Family::SmoothedTwoPoint | Family::ZFiniteDiff)
    }

    pub fn validate(&self, problem: &StochasticProblem) -> Result<()> {
        let mu0 = problem.mu0();
        match self.family {
            Family::SmoothedTwoPoint => {
                sphere_scheme(self.scheme)?;
                if !(self.mu > 0.0 && self.mu.is_finite()) {
                    return Err(Error::invalid(format!("mu must be positive, got {}", self.mu)));
                }
                if self.mu > mu0 {
                    return Err(Error::RadiusTooLarge { mu: self.mu, mu0 });
                }
            }
            Family::DirectionalExact => sphere_scheme(self.scheme)?,
            Family::ZFiniteDiff => {
                if !(self.tau > 0.0 && self.tau.is_finite()) {
                    return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
                }
                if self.tau > mu0 {
                    return Err(Error::RadiusTooLarge { mu: self.tau, mu0 });
                }
            }
            Family::ZScheme | Family::StochasticSubgradient => {}
        }
        Ok(())
    }

    /// Short name, also accepted by [`EstimatorConfig::from_label`].
    pub fn label(&self) -> String {
        let p = |s: Scheme| match s {
            Scheme::L1Sphere => "p1",
            Scheme::L2Sphere => "p2",
            Scheme::LInfSphere => "pinf",
            Scheme::LInfBall => "pinf-cube",
            _ => "?",
        };
        let z = |k: ZKind| match k {
            ZKind::Rademacher => "rademacher",
            ZKind::ScaledGaussian => "gaussian",
            ZKind::Coordinate => "coordinate",
        };
        match self.family {
            Family::SmoothedTwoPoint => p(self.scheme).to_string(),
            Family::DirectionalExact => format!("directional-{}", p(self.scheme)),
            Family::ZScheme => z(self.z_kind).to_string(),
            Family::ZFiniteDiff => format!("fd-{}", z(self.z_kind)),
            Family::StochasticSubgradient => "subgradient".to_string(),
        }
    }

    /// Parses a label; `mu` and `tau` are filled in for the families that use them.
    pub fn from_label(label: &str, mu: f64, tau: f64) -> Result<Self> {
        let p = |s: &str| match s {
            "p1" => Some(Scheme::L1Sphere),
            "p2" => Some(Scheme::L2Sphere),
            "pinf" => Some(Scheme::LInfSphere),
            "pinf-cube" => Some(Scheme::LInfBall),
            _ => None,
        };
        let z = |s: &str| match s {
            "rademacher" => Some(ZKind::Rademacher),
            "gaussian" => Some(ZKind::ScaledGaussian),
            "coordinate" => Some(ZKind::Coordinate),
            _ => None,
        };
        if label == "subgradient" {
            return Ok(Self::subgradient());
        }
        if let Some(s) = p(label) {
            return Ok(Self::smoothed(s, mu));
        }
        if let Some(k) = z(label) {
            return Ok(Self::z_scheme(k));
        }
        if let Some(s) = label.strip_prefix("directional-").and_then(p) {
            return Ok(Self::directional(s));
        }
        if let Some(k) = label.strip_prefix("fd-").and_then(z) {
            return Ok(Self::z_finite_diff(k, tau));
        }
        Err(Error::invalid(format!("unknown estimator '{label}'")))
    }
}

impl fmt::Display for EstimatorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for ZKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rademacher" => Ok(ZKind::Rademacher),
            "gaussian" => Ok(ZKind::ScaledGaussian),
            "coordinate" => Ok(ZKind::Coordinate),
            _ => Err(Error::invalid(format!("unknown Z distribution '{s}'"))),
        }
    }
}

fn z_scheme_of(kind: ZKind) -> Scheme {
    match kind {
        ZKind::Rademacher => Scheme::Rademacher,
        ZKind::Coordinate => Scheme::Coordinate,
        // no sphere scheme; only used for the audit field
        ZKind::ScaledGaussian => Scheme::L2Sphere,
    }
}

fn sphere_scheme(s: Scheme) -> Result<()> {
    match s {
        Scheme::L1Sphere | Scheme::L2Sphere | Scheme::LInfSphere | Scheme::LInfBall => Ok(()),
        other => Err(Error::UnsupportedScheme(other)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientEstimate {
    pub g: Vec<f64>,
    /// `None` for the stochastic subgradient and for Gaussian `Z`.
    pub scheme: Option<Scheme>,
    pub prefactor: f64,
}

/// Reusable draw state: one per run, so the hot loop does not allocate.
#[derive(Clone, Debug)]
pub struct Estimator {
    config: EstimatorConfig,
    dir: Vec<f64>,
    query: Vec<f64>,
    eta: Vec<f64>,
    grad: Vec<f64>,
}

impl Estimator {
    pub fn new(config: EstimatorConfig, problem: &StochasticProblem) -> Result<Self> {
        config.validate(problem)?;
        let n = problem.n();
        Ok(Self {
            config,
            dir: vec![0.0; n],
            query: vec![0.0; n],
            eta: vec![0.0; n],
            grad: vec![0.0; n],
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    /// One draw into `out`; returns the prefactor.
    ///
    /// Oracle-free families read the problem through `oracle` and draw `eta`
    /// from `rng` themselves, leaving the call counter untouched.
    pub fn draw_into(&mut self, oracle: &mut Oracle<'_>, x: &[f64], rng: &mut RngStream, out: &mut [f64]) -> Result<f64> {
        let problem = oracle.problem();
        let n = problem.n() as f64;
        let c = self.config;
        let prefactor = match c.family {
            Family::SmoothedTwoPoint => {
                sample_into(c.scheme, rng, &mut self.dir);
                for ((q, xi), ei) in self.query.iter_mut().zip(x).zip(&self.dir) {
                    *q = xi + c.mu * ei;
                }
                let r = oracle.query_pair(&self.query, x, rng)?;
                let pref = n / c.mu;
                apply_normal(c.scheme, &self.dir, pref * r.difference(), out);
                pref
            }
            Family::DirectionalExact => {
                sample_into(c.scheme, rng, &mut self.dir);
                problem.sample_realization(rng, &mut self.eta);
                problem.grad(x, &self.eta, &mut self.grad);
                apply_normal(c.scheme, &self.dir, n * dot(&self.grad, &self.dir), out);
                n
            }
            Family::ZScheme => {
                draw_z(c.z_kind, rng, &mut self.dir);
                problem.sample_realization(rng, &mut self.eta);
                problem.grad(x, &self.eta, &mut self.grad);
                let s = dot(&self.grad, &self.dir);
                for (o, z) in out.iter_mut().zip(&self.dir) {
                    *o = s * z;
                }
                1.0
            }
            Family::ZFiniteDiff => {
                draw_z(c.z_kind, rng, &mut self.dir);
                for ((q, xi), zi) in self.query.iter_mut().zip(x).zip(&self.dir) {
                    *q = xi + c.tau * zi;
                }
                let r = oracle.query_pair(&self.query, x, rng)?;
                let s = r.difference() / c.tau;
                for (o, z) in out.iter_mut().zip(&self.dir) {
                    *o = s * z;
                }
                1.0 / c.tau
            }
            Family::StochasticSubgradient => {
                problem.sample_realization(rng, &mut self.eta);
                problem.grad(x, &self.eta, out);
                1.0
            }
        };
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(prefactor)
    }

    pub fn draw(&mut self, oracle: &mut Oracle<'_>, x: &[f64], rng: &mut RngStream) -> Result<GradientEstimate> {
        let mut g = vec![0.0; x.len()];
        let prefactor = self.draw_into(oracle, x, rng, &mut g)?;
        let scheme = match self.config.family {
            Family::StochasticSubgradient => None,
            Family::ZScheme | Family::ZFiniteDiff if self.config.z_kind == ZKind::ScaledGaussian => None,
            _ => Some(self.config.scheme),
        };
        Ok(GradientEstimate { g, scheme, prefactor })
    }
}

fn draw_z(kind: ZKind, rng: &mut RngStream, out: &mut [f64]) {
    match kind {
        ZKind::Rademacher => sample_into(Scheme::Rademacher, rng, out),
        ZKind::Coordinate => sample_into(Scheme::Coordinate, rng, out),
        ZKind::ScaledGaussian => out.iter_mut().for_each(|v| *v = rng.standard_normal()),
    }
}

/// `out = scale * nu(e)` with the scaled normal of the scheme's sphere.
pub fn apply_normal(scheme: Scheme, e: &[f64], scale: f64, out: &mut [f64]) {
    match scheme {
        Scheme::L1Sphere => {
            for (o, v) in out.iter_mut().zip(e) {
                *o = scale * sign(*v);
            }
        }
        Scheme::LInfSphere | Scheme::LInfBall => {
            out.fill(0.0);
            let i = argmax_abs(e);
            out[i] = scale * sign(e[i]);
        }
        _ => {
            for (o, v) in out.iter_mut().zip(e) {
                *o = scale * v;
            }
        }
    }
}

/// One smoothed two-point draw at `x`.
pub fn smoothed_two_point(config: &EstimatorConfig, oracle: &mut Oracle<'_>, x: &[f64], rng: &mut RngStream) -> Result<GradientEstimate> {
    if config.family != Family::SmoothedTwoPoint {
        return Err(Error::invalid("smoothed_two_point needs a SmoothedTwoPoint config"));
    }
    Estimator::new(*config, oracle.problem())?.draw(oracle, x, rng)
}

/// The `mu -> 0` limit of the smoothed draw, from the stochastic gradient.
pub fn directional_exact(scheme: Scheme, problem: &StochasticProblem, x: &[f64], rng: &mut RngStream) -> Result<GradientEstimate> {
    oracle_free(EstimatorConfig::directional(scheme), problem, x, rng)
}

/// `<grad f(x; eta), Z> Z`.
pub fn z_scheme(problem: &StochasticProblem, x: &[f64], kind: ZKind, rng: &mut RngStream) -> Result<GradientEstimate> {
    oracle_free(EstimatorConfig::z_scheme(kind), problem, x, rng)
}

/// Forward-difference Z-scheme draw. Biased for curved objectives.
pub fn z_finite_diff(oracle: &mut Oracle<'_>, x: &[f64], kind: ZKind, tau: f64, rng: &mut RngStream) -> Result<GradientEstimate> {
    Estimator::new(EstimatorConfig::z_finite_diff(kind, tau), oracle.problem())?.draw(oracle, x, rng)
}

fn oracle_free(config: EstimatorConfig, problem: &StochasticProblem, x: &[f64], rng: &mut RngStream) -> Result<GradientEstimate> {
    let mut oracle = Oracle::new(problem, crate::oracle::NoiseChannel::none(), rng.fork(u64::MAX));
    Estimator::new(config, problem)?.draw(&mut oracle, x, rng)
}

/// Ball used for the smoothing average.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Ball {
    L1,
    L2,
    LInf,
}

impl Ball {
    /// The ball whose boundary carries the directions of `scheme`.
    pub fn for_scheme(scheme: Scheme) -> Result<Self> {
        match scheme {
            Scheme::L1Sphere => Ok(Ball::L1),
            Scheme::L2Sphere => Ok(Ball::L2),
            Scheme::LInfSphere | Scheme::LInfBall => Ok(Ball::LInf),
            other => Err(Error::UnsupportedScheme(other)),
        }
    }

    pub fn sample_into(self, rng: &mut RngStream, out: &mut [f64]) {
        match self {
            Ball::L1 => sample_into(Scheme::L1Ball, rng, out),
            Ball::L2 => l2_ball_into(rng, out),
            Ball::LInf => sample_into(Scheme::LInfBall, rng, out),
        }
    }
}

/// Monte-Carlo estimate of `f^mu(x) = E f(x + mu u; eta)` with `u` uniform in `ball`.
pub fn smoothed_value(problem: &StochasticProblem, x: &[f64], mu: f64, ball: Ball, n_mc: usize, rng: &mut RngStream) -> McEstimate {
    let n = problem.n();
    let (mut u, mut y, mut eta) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut acc = Running::new();
    for _ in 0..n_mc {
        ball.sample_into(rng, &mut u);
        problem.sample_realization(rng, &mut eta);
        for ((yi, xi), ui) in y.iter_mut().zip(x).zip(&u) {
            *yi = xi + mu * ui;
        }
        acc.push(problem.eval(&y, &eta));
    }
    acc.estimate()
}

/// Central-difference gradient of `f^mu`, step `h`, one shared `(u, eta)` per draw for all
/// `2n` evaluations.
pub fn smoothed_gradient_fd(
    problem: &StochasticProblem,
    x: &[f64],
    mu: f64,
    ball: Ball,
    h: f64,
    n_mc: usize,
    rng: &mut RngStream,
) -> Vec<McEstimate> {
    let n = problem.n();
    let (mut u, mut y, mut eta, mut d) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut acc = RunningVec::new(n);
    for _ in 0..n_mc {
        ball.sample_into(rng, &mut u);
        problem.sample_realization(rng, &mut eta);
        for ((yi, xi), ui) in y.iter_mut().zip(x).zip(&u) {
            *yi = xi + mu * ui;
        }
        for i in 0..n {
            let base = y[i];
            y[i] = base + h;
            let up = problem.eval(&y, &eta);
            y[i] = base - h;
            let down = problem.eval(&y, &eta);
            y[i] = base;
            d[i] = (up - down) / (2.0 * h);
        }
        acc.push(&d);
    }
    acc.estimates()
}

/// `Vol(B_1^n(mu)) / Vol(S_1^n(mu)) = mu / (n sqrt(n))`.
pub fn l1_volume_ratio(n: usize, mu: f64) -> f64 {
    let n = n as f64;
    mu / (n * n.sqrt())
}
