//! Entropic mirror descent on the simplex (dual averaging with exponential weights).
//!
//! The dual state keeps the running sum `s_t = g^1 + ... + g^t` and the next
//! iterate is `x^{t+1} = softmax(-s_t / beta_{t+1})`, starting from the uniform
//! point. Every schedule has the form `beta_t = K sqrt(t)`.

use std::time::Instant;

use serde::Serialize;

use crate::estimators::{Estimator, EstimatorConfig, Family};
use crate::oracle::{NoiseChannel, Oracle};
use crate::problems::StochasticProblem;
use crate::sampling::check_dim;
use crate::simplex::SimplexPoint;
use crate::{Error, Result, RngStream};

/// Step-size schedule `beta_t = K sqrt(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Schedule {
    /// Exact stochastic subgradients: `K = M / sqrt(ln n)`.
    Theorem1 { m: f64 },
    /// Two-point, nonsmooth: `K = 2 M n / sqrt(ln n)`.
    Theorem2 { m: f64 },
    /// Two-point, smooth, l2 directions: `K = M2 sqrt(5)`.
    Theorem3 { m2: f64 },
    /// `K = c`.
    Manual { c: f64 },
}

impl Schedule {
    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Theorem1 { .. } => "thm1",
            Schedule::Theorem2 { .. } => "thm2",
            Schedule::Theorem3 { .. } => "thm3",
            Schedule::Manual { .. } => "manual",
        }
    }

    /// The `K` in `beta_t = K sqrt(t)`.
    pub fn beta_const(&self, n: usize) -> f64 {
        let ln_n = (n as f64).ln();
        match *self {
            Schedule::Theorem1 { m } => m / ln_n.sqrt(),
            Schedule::Theorem2 { m } => 2.0 * m * n as f64 / ln_n.sqrt(),
            Schedule::Theorem3 { m2 } => m2 * 5f64.sqrt(),
            Schedule::Manual { c } => c,
        }
    }

    pub fn beta(&self, t: u64, n: usize) -> f64 {
        self.beta_const(n) * (t as f64).sqrt()
    }

    fn validate(&self, n: usize) -> Result<()> {
        let k = self.beta_const(n);
        if k.is_finite() && k > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("schedule {self:?} gives step constant {k}")))
        }
    }
}

/// Running gradient sum and the current primal point.
///
/// Each coordinate of `s` is held as an unevaluated pair `hi + lo`
/// (compensated summation), so long runs do not lose the small differences
/// between coordinates that decide the softmax.
#[derive(Clone, Debug)]
pub struct DualState {
    hi: Vec<f64>,
    lo: Vec<f64>,
    t: u64,
    schedule: Schedule,
    x: Vec<f64>,
}

impl DualState {
    pub fn new(n: usize, schedule: Schedule) -> Result<Self> {
        check_dim(n)?;
        schedule.validate(n)?;
        Ok(Self {
            hi: vec![0.0; n],
            lo: vec![0.0; n],
            t: 0,
            schedule,
            x: vec![1.0 / n as f64; n],
        })
    }

    /// Number of gradients absorbed.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// `s_t`, rounded to one float per coordinate.
    pub fn s(&self) -> Vec<f64> {
        self.hi.iter().zip(&self.lo).map(|(h, l)| h + l).collect()
    }

    /// The current iterate `x^{t+1}`.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn iterate(&self) -> SimplexPoint {
        SimplexPoint::from_vec_unchecked(self.x.clone())
    }

    /// Absorbs `g` and recomputes the iterate with `beta_{t+1}`.
    pub fn md_step(&mut self, g: &[f64]) -> Result<&[f64]> {
        if g.len() != self.n() {
            return Err(Error::InvalidDimension(g.len()));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        for ((h, l), &v) in self.hi.iter_mut().zip(self.lo.iter_mut()).zip(g) {
            // Neumaier's two-sum
            let s = *h + v;
            *l += if h.abs() >= v.abs() { (*h - s) + v } else { (v - s) + *h };
            *h = s;
        }
        self.t += 1;
        self.refresh();
        Ok(&self.x)
    }

    fn refresh(&mut self) {
        let beta = self.schedule.beta(self.t + 1, self.n());
        let k = self
            .hi
            .iter()
            .enumerate()
            .fold(0, |b, (i, v)| if *v < self.hi[b] { i } else { b });
        let (hk, lk) = (self.hi[k], self.lo[k]);
        let mut total = 0.0;
        for ((x, h), l) in self.x.iter_mut().zip(&self.hi).zip(&self.lo) {
            // shift by s_k so the largest weight is about exp(0)
            let d = (h - hk) + (l - lk);
            *x = (-d / beta).exp();
            total += *x;
        }
        self.x.iter_mut().for_each(|v| *v /= total);
    }
}

/// Parameters produced by the tuning rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tuning {
    pub mu: f64,
    pub delta_max: f64,
    pub n_iter: u64,
    pub beta_const: f64,
    pub schedule: Schedule,
}

/// Directions norm used to bound `E ||g||_inf^2` in the smooth tuning rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum QBar {
    Two,
    Inf,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("eps must be positive, got {eps}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn ceil_u64(v: f64) -> Result<u64> {
    if v.is_finite() && v < u64::MAX as f64 {
        Ok((v.ceil() as u64).max(1))
    } else {
        Err(Error::invalid(format!("iteration count {v} is out of range")))
    }
}

/// Iterations for the exact-subgradient rate `2 M sqrt(ln n / N) <= eps`.
pub fn theorem1_iterations(m: f64, n: usize, eps: f64) -> Result<u64> {
    check_dim(n)?;
    check_positive("M", m)?;
    check_eps(eps)?;
    ceil_u64(4.0 * m * m * (n as f64).ln() / (eps * eps))
}

/// Two-point tuning for Lipschitz objectives.
///
/// `mu = eps/(2M)`, `delta_max = eps/4`, `beta_t = 2Mn sqrt(t)/sqrt(ln n)`, and
/// `N = ceil(64 M^2 n^2 ln n / eps^2)`, or with a failure probability `sigma`,
/// `N = ceil(128 M^2 n^2 (ln n + 8 ln(1/sigma)) / eps^2)`.
pub fn tune_theorem2(m: f64, n: usize, eps: f64, sigma: Option<f64>, mu0: f64) -> Result<Tuning> {
    check_dim(n)?;
    check_positive("M", m)?;
    check_eps(eps)?;
    let mu = eps / (2.0 * m);
    if mu > mu0 {
        return Err(Error::RadiusTooLarge { mu, mu0 });
    }
    let (nf, ln_n) = (n as f64, (n as f64).ln());
    let n_iter = match sigma {
        None => ceil_u64(64.0 * m * m * nf * nf * ln_n / (eps * eps))?,
        Some(s) => {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::invalid(format!("sigma must lie in (0, 1), got {s}")));
            }
            ceil_u64(128.0 * m * m * nf * nf / (eps * eps) * (ln_n + 8.0 * (1.0 / s).ln()))?
        }
    };
    let schedule = Schedule::Theorem2 { m };
    Ok(Tuning {
        mu,
        delta_max: eps / 4.0,
        n_iter,
        beta_const: schedule.beta_const(n),
        schedule,
    })
}

/// Two-point tuning for smooth objectives with l2-sphere directions.
///
/// `mu = min{max{eps/(2 M2), sqrt(eps/L2)}, (M2/L2) sqrt(c/n)}` with
/// `c = 1/6` (`Inf`) or `4/3` (`Two`), further capped at `mu0`;
/// `delta_max = M2 mu / sqrt(96 n)` (`Inf`) or `M2 mu / sqrt(12 n)` (`Two`).
/// For `Inf`: `N = ceil(80 M2^2 ln^2 n / eps^2)`, `beta_t = M2 sqrt(5t)`.
/// For `Two` the l2 moment replaces `ln n` by `n`: `N = ceil(80 n M2^2 ln n / eps^2)`
/// with `beta_t = M2 sqrt(5 n t / ln n)`.
pub fn tune_theorem3(m2: f64, l2: f64, n: usize, eps: f64, qbar: QBar, mu0: f64) -> Result<Tuning> {
    check_dim(n)?;
    check_eps(eps)?;
    check_positive("M2", m2)?;
    if l2.is_infinite() {
        return Err(Error::NotSmooth);
    }
    if l2.is_nan() || l2 < 0.0 {
        return Err(Error::invalid(format!("L2 must be >= 0, got {l2}")));
    }
    let (nf, ln_n) = (n as f64, (n as f64).ln());
    let (cap, delta_den) = match qbar {
        QBar::Inf => (1.0 / 6.0, 96.0),
        QBar::Two => (4.0 / 3.0, 12.0),
    };
    // with L2 = 0 both terms are infinite and mu0 decides
    let lower = (eps / (2.0 * m2)).max((eps / l2).sqrt());
    let upper = m2 / l2 * (cap / nf).sqrt();
    let mu = lower.min(upper).min(mu0);
    let delta_max = m2 * mu / (delta_den * nf).sqrt();
    let (n_iter, schedule) = match qbar {
        QBar::Inf => (
            ceil_u64(80.0 * m2 * m2 * ln_n * ln_n / (eps * eps))?,
            Schedule::Theorem3 { m2 },
        ),
        QBar::Two => (
            ceil_u64(80.0 * nf * m2 * m2 * ln_n / (eps * eps))?,
            Schedule::Manual {
                c: m2 * (5.0 * nf / ln_n).sqrt(),
            },
        ),
    };
    Ok(Tuning {
        mu,
        delta_max,
        n_iter,
        beta_const: schedule.beta_const(n),
        schedule,
    })
}

/// One checkpoint of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    pub t: u64,
    /// `f(xbar_t) - f*`.
    pub gap: f64,
    /// `(1/t) sum_k f(x^k) - f*`; never below `gap` for convex `f`.
    pub mean_iterate_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfigEcho {
    pub problem: String,
    pub n: usize,
    pub estimator: EstimatorConfig,
    pub channel: NoiseChannel,
    pub schedule: Schedule,
    pub n_iter: u64,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub x_bar: SimplexPoint,
    pub gap_trace: Vec<TracePoint>,
    pub oracle_calls: u64,
    pub warnings: Vec<String>,
    pub config: RunConfigEcho,
    /// Seconds; the only nondeterministic field.
    pub wall_time: f64,
}

impl RunReport {
    pub fn final_gap(&self) -> f64 {
        self.gap_trace.last().map_or(f64::NAN, |p| p.gap)
    }
}

/// Checkpoints `1, 2, 5, 10, 20, 50, ...` below `n_iter`, then `n_iter` itself.
pub fn trace_grid(n_iter: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut decade = 1u64;
    'outer: loop {
        for m in [1, 2, 5] {
            let t = decade.saturating_mul(m);
            if t >= n_iter {
                break 'outer;
            }
            out.push(t);
        }
        decade = decade.saturating_mul(10);
    }
    out.push(n_iter);
    out
}

/// Noise level the schedule's tuning rule admits for the estimator, if it defines one.
pub fn admissible_delta(schedule: &Schedule, estimator: &EstimatorConfig, n: usize) -> Option<f64> {
    if estimator.family != Family::SmoothedTwoPoint {
        return None;
    }
    match *schedule {
        // mu = eps/(2M)  =>  eps/4 = M mu / 2
        Schedule::Theorem2 { m } => Some(m * estimator.mu / 2.0),
        Schedule::Theorem3 { m2 } => Some(m2 * estimator.mu / (96.0 * n as f64).sqrt()),
        _ => None,
    }
}

/// Stream id of the oracle's perturbations relative to the caller's stream.
const ORACLE_STREAM_OFFSET: u64 = 1 << 32;

/// Runs `n_iter` mirror-descent steps from the uniform point, one estimator draw per step.
///
/// Directions and realizations come from `rng`; oracle perturbations from a
/// fork of it. Gaps use the closed-form objective.
pub fn run(
    problem: &StochasticProblem,
    channel: NoiseChannel,
    estimator: &EstimatorConfig,
    schedule: Schedule,
    n_iter: u64,
    rng: &RngStream,
) -> Result<RunReport> {
    if n_iter == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let start = Instant::now();
    let n = problem.n();
    let mut warnings = Vec::new();
    if let Some(dmax) = admissible_delta(&schedule, estimator, n) {
        if channel.delta > dmax {
            warnings.push(format!(
                "noise level {} exceeds the admissible {} for the {} schedule",
                channel.delta,
                dmax,
                schedule.name()
            ));
        }
    }
    let mut state = DualState::new(n, schedule)?;
    let mut est = Estimator::new(*estimator, problem)?;
    let mut draws = rng.clone();
    let mut oracle = Oracle::new(problem, channel, rng.fork(rng.stream_id().wrapping_add(ORACLE_STREAM_OFFSET)));
    let grid = trace_grid(n_iter);
    let mut next = 0;
    let mut trace = Vec::with_capacity(grid.len());
    let mut sum_x = vec![0.0; n];
    let mut sum_f = 0.0;
    let mut xbar = vec![0.0; n];
    let mut g = vec![0.0; n];
    for k in 1..=n_iter {
        let x = state.x();
        for (a, v) in sum_x.iter_mut().zip(x) {
            *a += v;
        }
        sum_f += problem.value(x);
        if grid[next] == k {
            average(&sum_x, &mut xbar);
            trace.push(TracePoint {
                t: k,
                gap: problem.value(&xbar) - problem.f_star(),
                mean_iterate_gap: sum_f / k as f64 - problem.f_star(),
            });
            next += 1;
        }
        est.draw_into(&mut oracle, x, &mut draws, &mut g)?;
        state.md_step(&g)?;
    }
    Ok(RunReport {
        x_bar: SimplexPoint::from_vec_unchecked(xbar),
        gap_trace: trace,
        oracle_calls: oracle.call_count(),
        warnings,
        config: RunConfigEcho {
            problem: problem.label().to_string(),
            n,
            estimator: *estimator,
            channel,
            schedule,
            n_iter,
            seed: rng.seed(),
            stream: rng.stream_id(),
        },
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn average(sum: &[f64], out: &mut [f64]) {
    let total: f64 = sum.iter().sum();
    for (o, s) in out.iter_mut().zip(sum) {
        *o = s / total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_problem, ProblemKind};
    use crate::sampling::Scheme;
    use proptest::prelude::*;

    #[test]
    fn zero_gradients_keep_uniform() {
        let mut st = DualState::new(5, Schedule::Theorem1 { m: 1.0 }).unwrap();
        for _ in 0..100 {
            st.md_step(&[0.0; 5]).unwrap();
        }
        assert!(st.x().iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn two_point_softmax() {
        // after one step beta_2 = c sqrt(2); s = (0, beta_2 ln 3) gives weights 3:1
        let c = 1.7;
        let mut st = DualState::new(2, Schedule::Manual { c }).unwrap();
        let b2 = c * 2f64.sqrt();
        st.md_step(&[0.0, b2 * 3f64.ln()]).unwrap();
        assert!((st.x()[0] - 0.75).abs() < 1e-15);
        assert!((st.x()[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut st = DualState::new(3, Schedule::Manual { c: 1.0 }).unwrap();
        assert!(matches!(st.md_step(&[0.0, f64::NAN, 0.0]), Err(Error::NonFinite(1))));
        assert!(matches!(st.md_step(&[0.0, f64::INFINITY, 0.0]), Err(Error::NonFinite(1))));
        assert_eq!(st.t(), 0);
        assert!(DualState::new(3, Schedule::Manual { c: 0.0 }).is_err());
    }

    #[test]
    fn constant_gradient_concentrates_on_argmin() {
        let c = [0.5, 0.2, 0.9];
        let mut st = DualState::new(3, Schedule::Theorem1 { m: 0.9 }).unwrap();
        let mut prev = 0.0;
        for t in 0..10_000 {
            st.md_step(&c).unwrap();
            let x1 = st.x()[1];
            if t > 10 {
                assert!(x1 >= prev, "step {t}: {x1} < {prev}");
            }
            prev = x1;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn theorem2_tuning_values() {
        let t = tune_theorem2(1.0, 10, 0.1, None, 1.0).unwrap();
        assert_eq!(t.n_iter, 1_473_655);
        assert_eq!((t.mu, t.delta_max), (0.05, 0.025));
        assert_eq!(t.beta_const, 20.0 / 10f64.ln().sqrt());
        let hp = tune_theorem2(1.0, 10, 0.1, Some(0.05), 1.0).unwrap();
        let expect = (12800.0 * (10f64.ln() + 8.0 * 20f64.ln()) / 0.01f64).ceil() as u64;
        assert_eq!(hp.n_iter, expect);
        // mu exactly mu0 is allowed, beyond it is not
        assert_eq!(tune_theorem2(1.0, 10, 2.0, None, 1.0).unwrap().mu, 1.0);
        assert!(matches!(tune_theorem2(1.0, 10, 2.5, None, 1.0), Err(Error::RadiusTooLarge { .. })));
        assert!(tune_theorem2(1.0, 10, 0.0, None, 1.0).is_err());
        assert!(tune_theorem2(1.0, 10, 0.1, Some(1.5), 1.0).is_err());
    }

    #[test]
    fn theorem3_tuning_values() {
        let t = tune_theorem3(1.0, 1.0, 100, 0.01, QBar::Inf, 1.0).unwrap();
        assert!((t.mu - 0.040825).abs() < 1e-6);
        assert!((t.delta_max - 4.17e-4).abs() < 1e-6);
        assert_eq!(tune_theorem3(1.0, 1.0, 10, 0.1, QBar::Inf, 1.0).unwrap().n_iter, 42_416);
        assert_eq!(t.beta_const, 5f64.sqrt());
        assert!(matches!(
            tune_theorem3(1.0, f64::INFINITY, 10, 0.1, QBar::Inf, 1.0),
            Err(Error::NotSmooth)
        ));
        // a linear objective has L2 = 0: the radius falls back to mu0
        assert_eq!(tune_theorem3(1.0, 0.0, 10, 0.1, QBar::Inf, 1.0).unwrap().mu, 1.0);
        let two = tune_theorem3(1.0, 1.0, 100, 0.01, QBar::Two, 1.0).unwrap();
        assert!((two.mu - 0.1).abs() < 1e-15);
        assert!((two.delta_max - 0.1 / 1200f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn theorem1_iterations_value() {
        // 4 * ln 10 / 0.01 = 921.03...
        assert_eq!(theorem1_iterations(1.0, 10, 0.1).unwrap(), 922);
    }

    #[test]
    fn grid_shape() {
        assert_eq!(trace_grid(1), vec![1]);
        assert_eq!(trace_grid(100), vec![1, 2, 5, 10, 20, 50, 100]);
        assert_eq!(trace_grid(120), vec![1, 2, 5, 10, 20, 50, 100, 120]);
    }

    #[test]
    fn single_step_run_is_uniform() {
        let mut rng = RngStream::new(1, 0);
        let p = make_problem(ProblemKind::LinearNoisy, 4, &mut rng).unwrap();
        let r = run(
            &p,
            NoiseChannel::none(),
            &EstimatorConfig::subgradient(),
            Schedule::Theorem1 { m: p.m() },
            1,
            &rng,
        )
        .unwrap();
        assert_eq!(r.x_bar.coords(), &[0.25; 4]);
        let gap = p.value(&[0.25; 4]) - p.f_star();
        assert_eq!(r.final_gap(), gap);
        assert_eq!(r.oracle_calls, 0);
    }

    #[test]
    fn two_point_run_charges_two_calls_per_step() {
        let mut rng = RngStream::new(2, 0);
        let p = make_problem(ProblemKind::NonsmoothDistL1, 5, &mut rng).unwrap();
        let tune = tune_theorem2(p.m(), 5, 0.5, None, 1.0).unwrap();
        let est = EstimatorConfig::smoothed(Scheme::L1Sphere, tune.mu);
        let r = run(&p, NoiseChannel::uniform(0.01).unwrap(), &est, tune.schedule, 777, &rng).unwrap();
        assert_eq!(r.oracle_calls, 2 * 777);
        assert!(r.warnings.is_empty());
        let loud = run(&p, NoiseChannel::uniform(1.0).unwrap(), &est, tune.schedule, 10, &rng).unwrap();
        assert_eq!(loud.warnings.len(), 1);
    }

    #[test]
    fn runs_are_reproducible() {
        let mut rng = RngStream::new(3, 0);
        let p = make_problem(ProblemKind::SmoothQuadratic, 6, &mut rng).unwrap();
        let est = EstimatorConfig::smoothed(Scheme::L2Sphere, 0.2);
        let go = || run(&p, NoiseChannel::random_sign(0.01).unwrap(), &est, Schedule::Theorem3 { m2: 3.0 }, 2000, &RngStream::new(9, 0)).unwrap();
        let (a, b) = (go(), go());
        assert_eq!(a.x_bar, b.x_bar);
        assert_eq!(a.gap_trace, b.gap_trace);
    }

    #[test]
    fn averaged_gap_below_mean_iterate_gap() {
        for kind in ProblemKind::ALL {
            let mut rng = RngStream::new(4, 0);
            let p = make_problem(kind, 7, &mut rng).unwrap();
            let r = run(&p, NoiseChannel::none(), &EstimatorConfig::subgradient(), Schedule::Theorem1 { m: p.m() }, 5000, &rng).unwrap();
            for tp in &r.gap_trace {
                assert!(tp.gap >= -1e-9, "{kind}: {tp:?}");
                assert!(tp.gap <= tp.mean_iterate_gap + 1e-12, "{kind}: {tp:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn iterates_stay_feasible_and_shift_invariant(
            seed in any::<u64>(),
            shift in -50.0f64..50.0,
            n in 2usize..12,
        ) {
            let sched = Schedule::Manual { c: 0.7 };
            let mut a = DualState::new(n, sched).unwrap();
            let mut b = DualState::new(n, sched).unwrap();
            let mut rng = RngStream::new(seed, 0);
            let mut g = vec![0.0; n];
            for _ in 0..300 {
                g.iter_mut().for_each(|v| *v = 20.0 * rng.symmetric());
                a.md_step(&g).unwrap();
                g.iter_mut().for_each(|v| *v += shift);
                b.md_step(&g).unwrap();
                let sum: f64 = a.x().iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                prop_assert!(a.x().iter().all(|v| *v >= 0.0));
                for (u, v) in a.x().iter().zip(b.x()) {
                    prop_assert!((u - v).abs() <= 1e-12);
                }
            }
        }
    }
}
