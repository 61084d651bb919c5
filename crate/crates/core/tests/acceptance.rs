//! Acceptance criteria, one test each. Every test prints a single PASS/FAIL line.
//!
//! Tests hold a shared lock so the wall-clock limits are measured without
//! contention from each other.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use zomd::experiment::{run_experiment, to_csv_string, write_csv, ExperimentSpec, ScheduleKind, Setting};
use zomd::oracle::NoiseKind;
use zomd::problems::ProblemKind;
use zomd::solver::{tune_theorem2, tune_theorem3, DualState, QBar, Schedule};
use zomd::verify::{
    hard_bound_check, rademacher_check, scaling_checks, second_moment_checks, verify_suite_with, Check, Suite,
    VerifyOptions, SCALING_TARGETS, SCALING_TOLERANCE,
};
use zomd::RngStream;

static SERIAL: Mutex<()> = Mutex::new(());

const SEED: u64 = 20_240_601;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    // bypasses the test harness's output capture
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id:>2} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = out.flush();
}

fn checks_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

fn describe(checks: &[Check]) -> String {
    checks
        .iter()
        .map(|c| format!("{} = {:.4} (thr {:.4}, se {:.2e}, {})", c.check, c.measured, c.threshold, c.se, if c.pass { "ok" } else { "FAIL" }))
        .collect::<Vec<_>>()
        .join("; ")
}

#[test]
fn c01_theorem1_rate() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let limit = Duration::from_secs(60);
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [ProblemKind::LinearNoisy, ProblemKind::NonsmoothDistL1] {
        for n_iter in [1_000u64, 10_000, 100_000] {
            let spec = ExperimentSpec {
                id: format!("thm1-{kind}-{n_iter}"),
                problem: kind,
                n: 10,
                estimator: "subgradient".into(),
                schedule: ScheduleKind::Thm1,
                n_iter: Some(n_iter),
                reps: 50,
                seed: SEED,
                ..Default::default()
            };
            let rows = run_experiment(&spec).unwrap();
            let last = rows.last().unwrap();
            let bound = last.bound.unwrap();
            ok &= last.gap_mean <= bound;
            parts.push(format!("{kind} N={n_iter}: {:.5} <= {:.5}", last.gap_mean, bound));
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed < limit;
    report(1, "exact-subgradient rate 2M sqrt(ln n / N)", ok, &format!("{} [{:.1}s]", parts.join(", "), elapsed.as_secs_f64()));
    assert!(ok);
}

fn end_to_end(id: u32, name: &str, spec: ExperimentSpec, eps: f64, limit: Duration) {
    let start = Instant::now();
    let plan = spec.plan().unwrap();
    let rows = run_experiment(&spec).unwrap();
    let last = rows.last().unwrap();
    let elapsed = start.elapsed();
    let ok = last.gap_mean <= eps && elapsed < limit && last.n_iter == plan.n_iter;
    report(
        id,
        name,
        ok,
        &format!(
            "N={} mu={:.5} delta={:.5} gap {:.5} (se {:.1e}) <= eps {eps} [{:.1}s]",
            plan.n_iter,
            plan.estimator.mu,
            plan.channel.delta,
            last.gap_mean,
            last.gap_se,
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn c02_theorem2_end_to_end() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let spec = ExperimentSpec {
        id: "thm2".into(),
        problem: ProblemKind::NonsmoothDistL1,
        n: 5,
        estimator: "p1".into(),
        mu: Setting::Tuned,
        noise: NoiseKind::RandomSign,
        delta: Setting::Tuned,
        schedule: ScheduleKind::Thm2,
        eps: 0.3,
        n_iter: None,
        reps: 50,
        seed: SEED,
        ..Default::default()
    };
    end_to_end(2, "two-point nonsmooth, sign noise at eps/4", spec, 0.3, Duration::from_secs(300));
}

#[test]
fn c03_theorem3_end_to_end() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let spec = ExperimentSpec {
        id: "thm3".into(),
        problem: ProblemKind::SmoothQuadratic,
        n: 20,
        estimator: "p2".into(),
        mu: Setting::Tuned,
        noise: NoiseKind::RandomSign,
        delta: Setting::Tuned,
        schedule: ScheduleKind::Thm3,
        eps: 0.15,
        n_iter: None,
        reps: 50,
        seed: SEED,
        ..Default::default()
    };
    end_to_end(3, "two-point smooth, l2 directions", spec, 0.15, Duration::from_secs(300));
}

#[test]
fn c04_unbiasedness() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let checks = verify_suite_with(
        Suite::Unbiasedness,
        &VerifyOptions {
            n_list: Some(vec![2, 4, 8]),
            seed: SEED,
            draws: Some(1_000_000),
        },
    )
    .unwrap();
    let elapsed = start.elapsed();
    assert_eq!(checks.len(), 12);
    let ok = checks_pass(&checks) && elapsed < Duration::from_secs(120);
    let worst = checks.iter().map(|c| c.measured).fold(0.0, f64::max);
    report(4, "two-point mean equals grad f^mu", ok, &format!("12 configs, worst z {worst:.2} <= 4 [{:.1}s]", elapsed.as_secs_f64()));
    assert!(ok, "{}", describe(&checks));
}

#[test]
fn c05_hard_bound() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let checks: Vec<Check> = [3usize, 8, 32]
        .iter()
        .enumerate()
        .map(|(i, &n)| hard_bound_check(n, 0.1, 0.05, 100_000, SEED + i as u64).unwrap())
        .collect();
    let ok = checks_pass(&checks);
    report(5, "||g||_inf <= (M + 2 delta/mu) n on every draw", ok, &describe(&checks));
    assert!(ok);
}

#[test]
fn c06_second_moments() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut checks = Vec::new();
    for (i, n) in [8usize, 32].into_iter().enumerate() {
        checks.extend(second_moment_checks(n, 0.1, 200_000, SEED + i as u64).unwrap());
    }
    let ok = checks_pass(&checks);
    report(6, "second-moment bounds for noisy l2 draws", ok, &describe(&checks));
    assert!(ok);
}

#[test]
fn c07_variance_scaling() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let checks = scaling_checks(&[8, 32, 128], 200_000, SEED).unwrap();
    let ok = checks_pass(&checks);
    let summary = checks
        .iter()
        .zip(SCALING_TARGETS)
        .map(|(c, (s, target, _))| {
            format!("{s:?} slope {:.3} (target {target} +- {SCALING_TOLERANCE}, {})", c.measured, if c.pass { "ok" } else { "FAIL" })
        })
        .collect::<Vec<_>>()
        .join(", ");
    report(7, "growth of E||g||_inf^2 with n", ok, &summary);
    assert!(ok, "{}", describe(&checks));
}

#[test]
fn c08_rademacher_moment() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut checks = Vec::new();
    for n in [8usize, 32] {
        for kind in ProblemKind::ALL {
            checks.push(rademacher_check(kind, n, 200_000, SEED).unwrap());
        }
    }
    let ok = checks_pass(&checks);
    report(8, "Rademacher E||g||_inf^2 <= M2^2 + 3 SE", ok, &describe(&checks));
    assert!(ok);
}

#[test]
fn c09_tuning_formulas() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t2 = tune_theorem2(1.0, 10, 0.1, None, 1.0).unwrap();
    let t3 = tune_theorem3(1.0, 1.0, 100, 0.01, QBar::Inf, 1.0).unwrap();
    let ok = t2.n_iter == 1_473_655 && (t3.mu - 0.040825).abs() <= 1e-6 && (t3.delta_max - 4.17e-4).abs() <= 1e-6;
    report(
        9,
        "tuning arithmetic",
        ok,
        &format!("N = {}, mu = {:.7}, delta_max = {:.4e}", t2.n_iter, t3.mu, t3.delta_max),
    );
    assert!(ok);
}

#[test]
fn c10_softmax_invariants() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    const STEPS: u64 = 10_000_000;
    let n = 5;
    let mut worst_shift = 0.0f64;
    let mut worst_sum = 0.0f64;
    let mut negative = false;
    // pure sign noise at the hard-bound magnitude, then the same with a drift that
    // drives the iterate into a corner
    for (run, drift) in [[0.0; 5], [0.0, 0.3, 0.6, 0.9, 1.2]].into_iter().enumerate() {
        let schedule = Schedule::Theorem2 { m: 1.0 };
        let mut a = DualState::new(n, schedule).unwrap();
        let mut b = DualState::new(n, schedule).unwrap();
        let mut rng = RngStream::new(SEED, run as u64);
        let shift = 37.25;
        let mag = 2.0 * n as f64;
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        for _ in 0..STEPS {
            for i in 0..n {
                g[i] = drift[i] + mag * rng.sign();
                h[i] = g[i] + shift;
            }
            a.md_step(&g).unwrap();
            b.md_step(&h).unwrap();
            let mut sum = 0.0;
            for (u, v) in a.x().iter().zip(b.x()) {
                worst_shift = worst_shift.max((u - v).abs());
                negative |= *u < 0.0;
                sum += u;
            }
            worst_sum = worst_sum.max((sum - 1.0).abs());
        }
    }
    let ok = worst_shift <= 1e-12 && worst_sum <= 1e-12 && !negative;
    report(
        10,
        "shift invariance and feasibility over 1e7 steps",
        ok,
        &format!("max |x - x_shifted| = {worst_shift:.2e}, max |sum - 1| = {worst_sum:.2e}, negative entries: {negative}"),
    );
    assert!(ok);
}

#[test]
fn c11_determinism() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let spec = ExperimentSpec {
        id: "det".into(),
        problem: ProblemKind::MaxOfLinear,
        n: 6,
        estimator: "p1".into(),
        mu: Setting::Value(0.05),
        noise: NoiseKind::MantissaTruncate,
        bits: 10,
        schedule: ScheduleKind::Thm2,
        eps: 0.3,
        n_iter: Some(5_000),
        reps: 8,
        seed: SEED,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_csv(&run_experiment(&spec).unwrap(), &pa).unwrap();
    write_csv(&run_experiment(&spec).unwrap(), &pb).unwrap();
    let (a, b) = (std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    let in_memory = to_csv_string(&run_experiment(&spec).unwrap());
    let ok = a == b && a == in_memory.as_bytes();
    report(11, "byte-identical CSV", ok, &format!("{} bytes, identical: {ok}", a.len()));
    assert!(ok);
}
