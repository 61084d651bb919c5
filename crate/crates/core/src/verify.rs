//! Monte-Carlo verification suites.
//!
//! Each check reports the measured quantity, the threshold it is held to and
//! the Monte-Carlo standard error behind it. Checks inside a suite run in
//! parallel on independent streams, so reports are reproducible for any
//! thread count.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::estimators::{l1_volume_ratio, smoothed_gradient_fd, Ball, Estimator, EstimatorConfig, ZKind};
use crate::oracle::{NoiseChannel, Oracle};
use crate::problems::{make_problem, ProblemKind, StochasticProblem};
use crate::sampling::{check_dim, norm2, norm_inf, sample_into, sign, Scheme};
use crate::simplex::SimplexPoint;
use crate::stats::{McEstimate, Running, RunningVec};
use crate::{Error, Result, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Unbiasedness,
    VarianceBounds,
    VolumeRatio,
    MomentBounds,
    Scaling,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Unbiasedness,
        Suite::VarianceBounds,
        Suite::VolumeRatio,
        Suite::MomentBounds,
        Suite::Scaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Unbiasedness => "unbiasedness",
            Suite::VarianceBounds => "variance",
            Suite::VolumeRatio => "volume",
            Suite::MomentBounds => "moments",
            Suite::Scaling => "scaling",
        }
    }

    pub fn default_n_list(self) -> Vec<usize> {
        match self {
            Suite::Unbiasedness => vec![2, 4, 8],
            Suite::VarianceBounds => vec![8, 32],
            Suite::VolumeRatio => (2..=6).collect(),
            Suite::MomentBounds => vec![4, 16, 64],
            Suite::Scaling => vec![8, 32, 128],
        }
    }

    pub fn default_draws(self) -> usize {
        match self {
            Suite::Unbiasedness | Suite::VolumeRatio | Suite::MomentBounds => 1_000_000,
            Suite::VarianceBounds => 200_000,
            Suite::Scaling => 100_000,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown suite '{s}' (unbiasedness|variance|volume|moments|scaling)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub suite: Suite,
    pub check: String,
    pub measured: f64,
    pub threshold: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub n_list: Option<Vec<usize>>,
    pub seed: u64,
    pub draws: Option<usize>,
}

pub fn verify_suite(which: Suite, n_list: &[usize], seed: u64) -> Result<Vec<Check>> {
    verify_suite_with(
        which,
        &VerifyOptions {
            n_list: Some(n_list.to_vec()),
            seed,
            draws: None,
        },
    )
}

pub fn verify_suite_with(which: Suite, opts: &VerifyOptions) -> Result<Vec<Check>> {
    let ns = opts.n_list.clone().unwrap_or_else(|| which.default_n_list());
    for &n in &ns {
        check_dim(n)?;
    }
    let draws = opts.draws.unwrap_or_else(|| which.default_draws());
    if draws < 2 {
        return Err(Error::invalid("need at least two Monte-Carlo draws"));
    }
    let seed = opts.seed;
    match which {
        Suite::Unbiasedness => {
            let mut tasks = Vec::new();
            for &n in &ns {
                for scheme in [Scheme::L1Sphere, Scheme::L2Sphere] {
                    for delta in [0.0, 0.01] {
                        tasks.push((n, scheme, delta));
                    }
                }
            }
            collect(tasks.into_par_iter().enumerate().map(|(i, (n, scheme, delta))| {
                let ch = if delta == 0.0 {
                    NoiseChannel::none()
                } else {
                    NoiseChannel::uniform(delta)?
                };
                unbiasedness_check(scheme, n, ch, 0.1, draws, stream_seed(seed, i))
            }))
        }
        Suite::VarianceBounds => {
            let mut tasks: Vec<Box<dyn Fn() -> Result<Vec<Check>> + Send + Sync>> = Vec::new();
            for (i, &n) in ns.iter().enumerate() {
                let s = stream_seed(seed, 3 * i);
                tasks.push(Box::new(move || Ok(vec![hard_bound_check(n, 0.1, 0.05, draws, s)?])));
                let s = stream_seed(seed, 3 * i + 1);
                tasks.push(Box::new(move || Ok(second_moment_checks(n, 0.1, draws, s)?.to_vec())));
                let s = stream_seed(seed, 3 * i + 2);
                tasks.push(Box::new(move || {
                    ProblemKind::ALL
                        .iter()
                        .map(|&k| rademacher_check(k, n, draws, s))
                        .collect()
                }));
            }
            let nested: Result<Vec<Vec<Check>>> = tasks.into_par_iter().map(|t| t()).collect();
            Ok(nested?.into_iter().flatten().collect())
        }
        Suite::VolumeRatio => {
            let nested: Vec<Vec<Check>> = ns
                .par_iter()
                .enumerate()
                .map(|(i, &n)| volume_ratio_checks(n, draws, stream_seed(seed, i)))
                .collect();
            Ok(nested.into_iter().flatten().collect())
        }
        Suite::MomentBounds => {
            let nested: Vec<Vec<Check>> = ns
                .par_iter()
                .enumerate()
                .map(|(i, &n)| sphere_moment_checks(n, draws, stream_seed(seed, i)))
                .collect();
            Ok(nested.into_iter().flatten().collect())
        }
        Suite::Scaling => scaling_checks(&ns, draws, seed),
    }
}

fn collect<I: ParallelIterator<Item = Result<Check>>>(it: I) -> Result<Vec<Check>> {
    it.collect()
}

/// Seed of the `i`-th independent task of a suite.
fn stream_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1)
}

/// A point drawn uniformly from the simplex, pulled halfway to the centre.
fn interior_point(n: usize, rng: &mut RngStream) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| -rng.open01().ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v = 0.5 * *v / s + 0.5 / n as f64);
    w
}

fn mean_sq_norm(
    config: EstimatorConfig,
    problem: &StochasticProblem,
    channel: NoiseChannel,
    x: &[f64],
    draws: usize,
    rng: &mut RngStream,
) -> Result<(McEstimate, McEstimate)> {
    let mut oracle = Oracle::new(problem, channel, rng.fork(rng.stream_id() + 1));
    let mut est = Estimator::new(config, problem)?;
    let mut g = vec![0.0; problem.n()];
    let (mut l2, mut linf) = (Running::new(), Running::new());
    for _ in 0..draws {
        est.draw_into(&mut oracle, x, rng, &mut g)?;
        l2.push(norm2(&g).powi(2));
        linf.push(norm_inf(&g).powi(2));
    }
    Ok((l2.estimate(), linf.estimate()))
}

/// Mean of the smoothed two-point draw against a central-difference gradient of
/// the smoothed objective, on a random smooth quadratic.
///
/// `measured` is the largest componentwise `|difference| / combined SE`.
pub fn unbiasedness_check(scheme: Scheme, n: usize, channel: NoiseChannel, mu: f64, draws: usize, seed: u64) -> Result<Check> {
    let mut setup = RngStream::new(seed, 0);
    let problem = make_problem(ProblemKind::SmoothQuadratic, n, &mut setup)?;
    let x = interior_point(n, &mut setup);
    let ball = Ball::for_scheme(scheme)?;

    let mut rng = RngStream::new(seed, 1);
    let mut oracle = Oracle::new(&problem, channel, RngStream::new(seed, 2));
    let mut est = Estimator::new(EstimatorConfig::smoothed(scheme, mu), &problem)?;
    let mut acc = RunningVec::new(n);
    let mut g = vec![0.0; n];
    for _ in 0..draws {
        est.draw_into(&mut oracle, &x, &mut rng, &mut g)?;
        acc.push(&g);
    }
    let fd = smoothed_gradient_fd(&problem, &x, mu, ball, 1e-4, draws, &mut RngStream::new(seed, 3));
    let (mut worst, mut worst_se) = (0.0f64, 0.0f64);
    for (a, b) in acc.estimates().iter().zip(&fd) {
        let se = a.se.hypot(b.se);
        let z = (a.mean - b.mean).abs() / se;
        if z >= worst {
            worst = z;
            worst_se = se;
        }
    }
    Ok(Check {
        suite: Suite::Unbiasedness,
        check: format!(
            "{} n={n} delta={} mean vs grad f^mu",
            EstimatorConfig::smoothed(scheme, mu).label(),
            channel.delta
        ),
        measured: worst,
        threshold: 4.0,
        se: worst_se,
        pass: worst <= 4.0,
    })
}

/// Largest `||g||_inf` of l1-direction draws at random points against
/// `(M + 2 delta / mu) n`, with `M = 1` and worst-case sign noise.
pub fn hard_bound_check(n: usize, mu: f64, delta: f64, draws: usize, seed: u64) -> Result<Check> {
    let mut rng = RngStream::new(seed, 0);
    let base = make_problem(ProblemKind::NonsmoothDistL1, n, &mut rng)?;
    let problem = StochasticProblem::dist_l1(base.x_star().clone(), 0.0)?;
    let bound = (problem.m() + 2.0 * delta / mu) * n as f64;
    let mut oracle = Oracle::new(&problem, NoiseChannel::random_sign(delta)?, RngStream::new(seed, 1));
    let mut est = Estimator::new(EstimatorConfig::smoothed(Scheme::L1Sphere, mu), &problem)?;
    let mut g = vec![0.0; n];
    let mut worst = 0.0f64;
    let mut violations = 0u64;
    for _ in 0..draws {
        let x: Vec<f64> = {
            let mut w: Vec<f64> = (0..n).map(|_| -rng.open01().ln()).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            w
        };
        est.draw_into(&mut oracle, &x, &mut rng, &mut g)?;
        let v = norm_inf(&g);
        if v > bound * (1.0 + 1e-12) {
            violations += 1;
        }
        worst = worst.max(v);
    }
    Ok(Check {
        suite: Suite::VarianceBounds,
        check: format!("p1 n={n} max ||g||_inf vs (M + 2 delta/mu) n, {violations} violations"),
        measured: worst,
        threshold: bound,
        se: 0.0,
        pass: violations == 0,
    })
}

/// Second moments of the noisy l2-direction draw on a smooth quadratic, against
/// `3n M2^2 + 3/4 n^2 L2^2 mu^2 + 12 n^2 delta^2/mu^2` and
/// `4 ln n M2^2 + 3 n ln n L2^2 mu^2 + 48 n ln n delta^2/mu^2`, with 10% slack.
pub fn second_moment_checks(n: usize, mu: f64, draws: usize, seed: u64) -> Result<[Check; 2]> {
    let mut rng = RngStream::new(seed, 0);
    let problem = make_problem(ProblemKind::SmoothQuadratic, n, &mut rng)?;
    let c = problem.constants();
    let x = interior_point(n, &mut rng);
    let (nf, ln_n) = (n as f64, (n as f64).ln());
    let delta = c.m2 * mu / (96.0 * nf).sqrt();
    let (l2, linf) = mean_sq_norm(
        EstimatorConfig::smoothed(Scheme::L2Sphere, mu),
        &problem,
        NoiseChannel::random_sign(delta)?,
        &x,
        draws,
        &mut rng,
    )?;
    let r = delta * delta / (mu * mu);
    let b2 = 3.0 * nf * c.m2.powi(2) + 0.75 * nf * nf * c.l2.powi(2) * mu * mu + 12.0 * nf * nf * r;
    let binf = 4.0 * ln_n * c.m2.powi(2) + 3.0 * nf * ln_n * c.l2.powi(2) * mu * mu + 48.0 * nf * ln_n * r;
    let mk = |name: &str, e: McEstimate, b: f64| Check {
        suite: Suite::VarianceBounds,
        check: format!("p2 n={n} E||g||_{name}^2 vs bound (+10%)"),
        measured: e.mean,
        threshold: 1.1 * b,
        se: e.se,
        pass: e.mean <= 1.1 * b,
    };
    Ok([mk("2", l2, b2), mk("inf", linf, binf)])
}

/// `E ||<grad, Z> Z||_inf^2 <= M2^2` for Rademacher `Z`, within 3 SE.
pub fn rademacher_check(kind: ProblemKind, n: usize, draws: usize, seed: u64) -> Result<Check> {
    let mut rng = RngStream::new(seed, kind as u64);
    let problem = make_problem(kind, n, &mut rng)?;
    let x = interior_point(n, &mut rng);
    let (_, linf) = mean_sq_norm(
        EstimatorConfig::z_scheme(ZKind::Rademacher),
        &problem,
        NoiseChannel::none(),
        &x,
        draws,
        &mut rng,
    )?;
    let m2sq = problem.constants().m2.powi(2);
    Ok(Check {
        suite: Suite::VarianceBounds,
        check: format!("rademacher {kind} n={n} E||g||_inf^2 vs M2^2 (+3 SE)"),
        measured: linf.mean,
        threshold: m2sq,
        se: linf.se,
        pass: linf.mean <= m2sq + 3.0 * linf.se,
    })
}

/// The closed-form ratio against the measures of the l1 ball and sphere, and the
/// divergence identity `(n/mu) E_S[f(x + mu e) sign e] = E_B[grad f(x + mu u)]`
/// for `f(y) = sum_i exp(a_i y_i)`.
pub fn volume_ratio_checks(n: usize, draws: usize, seed: u64) -> Vec<Check> {
    let mu: f64 = 0.5;
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let nf = n as f64;
    let vol = (2.0 * mu).powi(n as i32) / fact(n);
    let area = 2f64.powi(n as i32) * nf.sqrt() * mu.powi(n as i32 - 1) / fact(n - 1);
    let ratio = l1_volume_ratio(n, mu);
    let closed = Check {
        suite: Suite::VolumeRatio,
        check: format!("n={n} mu={mu} ratio {ratio:.6} vs Vol(B)/Vol(S)"),
        measured: (ratio - vol / area).abs(),
        threshold: 1e-12,
        se: 0.0,
        pass: (ratio - vol / area).abs() <= 1e-12,
    };

    let a: Vec<f64> = (0..n).map(|i| 0.5 + i as f64 / n as f64).collect();
    let x = vec![1.0 / nf; n];
    let (mut e, mut y, mut term) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut lhs = RunningVec::new(n);
    let mut rng = RngStream::new(seed, 0);
    for _ in 0..draws {
        sample_into(Scheme::L1Sphere, &mut rng, &mut e);
        let f: f64 = x.iter().zip(&e).zip(&a).map(|((xi, ei), ai)| (ai * (xi + mu * ei)).exp()).sum();
        for (t, ei) in term.iter_mut().zip(&e) {
            *t = nf / mu * f * sign(*ei);
        }
        lhs.push(&term);
    }
    let mut rhs = RunningVec::new(n);
    let mut rng = RngStream::new(seed, 1);
    for _ in 0..draws {
        sample_into(Scheme::L1Ball, &mut rng, &mut e);
        for (((t, yi), xi), (ei, ai)) in term.iter_mut().zip(y.iter_mut()).zip(&x).zip(e.iter().zip(&a)) {
            *yi = xi + mu * ei;
            *t = ai * (ai * *yi).exp();
        }
        rhs.push(&term);
    }
    let (mut worst, mut worst_se) = (0.0f64, 0.0f64);
    for (l, r) in lhs.estimates().iter().zip(rhs.estimates()) {
        let se = l.se.hypot(r.se);
        let z = (l.mean - r.mean).abs() / se;
        if z >= worst {
            worst = z;
            worst_se = se;
        }
    }
    let identity = Check {
        suite: Suite::VolumeRatio,
        check: format!("n={n} mu={mu} sphere average vs ball gradient average (z)"),
        measured: worst,
        threshold: 4.0,
        se: worst_se,
        pass: worst <= 4.0,
    };
    vec![closed, identity]
}

/// `E ||e||_q^2 <= (q - 1) n^(2/q - 1)` for `q` in {2, 4} and `<= 4 ln n / n` for
/// `q = inf`, with `e` uniform on the l2 sphere.
pub fn sphere_moment_checks(n: usize, draws: usize, seed: u64) -> Vec<Check> {
    let mut rng = RngStream::new(seed, 0);
    let mut e = vec![0.0; n];
    let (mut q2, mut q4, mut qi) = (Running::new(), Running::new(), Running::new());
    for _ in 0..draws {
        sample_into(Scheme::L2Sphere, &mut rng, &mut e);
        q2.push(norm2(&e).powi(2));
        q4.push(e.iter().map(|v| v.powi(4)).sum::<f64>().sqrt());
        qi.push(norm_inf(&e).powi(2));
    }
    let nf = n as f64;
    [
        ("2", q2.estimate(), 1.0),
        ("4", q4.estimate(), 3.0 * nf.powf(-0.5)),
        ("inf", qi.estimate(), 4.0 * nf.ln() / nf),
    ]
    .into_iter()
    .map(|(q, est, bound)| Check {
        suite: Suite::MomentBounds,
        check: format!("l2 sphere n={n} E||e||_{q}^2"),
        measured: est.mean,
        threshold: bound,
        se: est.se,
        pass: est.mean <= bound * (1.0 + 1e-12),
    })
    .collect()
}

/// Predicted growth of `E ||g||_inf^2` in `n` for the directional estimators:
/// `(scheme, exponent, divide by ln n)`.
pub const SCALING_TARGETS: [(Scheme, f64, bool); 3] = [
    (Scheme::L1Sphere, 1.0, false),
    (Scheme::L2Sphere, 0.0, true),
    (Scheme::LInfSphere, 2.0, false),
];

/// Tolerance on the fitted exponent.
pub const SCALING_TOLERANCE: f64 = 0.35;

/// Fixture for the scaling fit: `1/2 ||x - u||^2` with `u` the centre, no
/// noise, evaluated at a vertex. Its gradient has l2 norm close to 1 for every `n`.
pub fn scaling_fixture(n: usize) -> Result<(StochasticProblem, Vec<f64>)> {
    let p = StochasticProblem::quadratic(SimplexPoint::uniform(n)?, 0.0)?;
    let x = SimplexPoint::vertex(n, 0)?.into_vec();
    Ok((p, x))
}

/// `E ||g||_inf^2` of the directional estimator for `scheme` on the scaling fixture.
pub fn directional_inf_moment(scheme: Scheme, n: usize, draws: usize, seed: u64) -> Result<McEstimate> {
    let (p, x) = scaling_fixture(n)?;
    let mut rng = RngStream::new(seed, n as u64);
    Ok(mean_sq_norm(EstimatorConfig::directional(scheme), &p, NoiseChannel::none(), &x, draws, &mut rng)?.1)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn scaling_checks(ns: &[usize], draws: usize, seed: u64) -> Result<Vec<Check>> {
    if ns.len() < 2 {
        return Err(Error::invalid("the scaling fit needs at least two dimensions"));
    }
    let tasks: Vec<(usize, usize)> = (0..SCALING_TARGETS.len())
        .flat_map(|s| ns.iter().map(move |&n| (s, n)))
        .collect();
    let moments: Vec<McEstimate> = tasks
        .par_iter()
        .map(|&(s, n)| directional_inf_moment(SCALING_TARGETS[s].0, n, draws, stream_seed(seed, s)))
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    Ok(SCALING_TARGETS
        .iter()
        .enumerate()
        .map(|(s, &(scheme, target, by_log))| {
            let part = &moments[s * ns.len()..(s + 1) * ns.len()];
            let ys: Vec<f64> = part
                .iter()
                .zip(ns)
                .map(|(m, &n)| if by_log { m.mean / (n as f64).ln() } else { m.mean })
                .collect();
            let slope = log_log_slope(&xs, &ys);
            // delta method on the log means
            let se = part.iter().map(|m| m.se / m.mean).fold(0.0f64, f64::max);
            let label = EstimatorConfig::directional(scheme).label();
            let values: Vec<String> = part.iter().map(|m| format!("{:.4}", m.mean)).collect();
            Check {
                suite: Suite::Scaling,
                check: format!(
                    "{label} slope of E||g||_inf^2{} vs n, target {target} (values {})",
                    if by_log { " / ln n" } else { "" },
                    values.join(" ")
                ),
                measured: slope,
                threshold: SCALING_TOLERANCE,
                se,
                pass: (slope - target).abs() <= SCALING_TOLERANCE,
            }
        })
        .collect())
}
