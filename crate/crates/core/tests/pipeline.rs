use zomd::experiment::{run_experiment, run_experiments, to_csv_string, ExperimentSpec, ScheduleKind, Setting, CSV_HEADER};
use zomd::oracle::NoiseKind;
use zomd::problems::ProblemKind;
use zomd::verify::{verify_suite_with, Suite, VerifyOptions};

fn spec(id: &str) -> ExperimentSpec {
    ExperimentSpec {
        id: id.into(),
        problem: ProblemKind::SmoothQuadratic,
        n: 6,
        estimator: "p2".into(),
        noise: NoiseKind::UniformBounded,
        delta: Setting::Tuned,
        schedule: ScheduleKind::Thm3,
        eps: 0.5,
        n_iter: Some(3_000),
        reps: 4,
        seed: 42,
        ..Default::default()
    }
}

#[test]
fn rows_sorted_by_id_and_stable_within() {
    let rows = run_experiments(&[spec("zeta"), spec("alpha")]).unwrap();
    let ids: Vec<&str> = rows.iter().map(|r| r.experiment.as_str()).collect();
    let split = ids.iter().position(|i| *i == "zeta").unwrap();
    assert!(ids[..split].iter().all(|i| *i == "alpha"));
    let ts: Vec<u64> = rows[..split].iter().map(|r| r.n_iter).collect();
    assert!(ts.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn two_point_rows_count_calls() {
    let rows = run_experiment(&spec("q")).unwrap();
    for r in &rows {
        assert_eq!(r.oracle_calls, 2 * r.n_iter);
        assert_eq!(r.bound_ok, Some(r.gap_mean <= r.bound.unwrap()));
        assert!(r.gap_se >= 0.0);
    }
}

#[test]
fn seed_changes_output() {
    let a = to_csv_string(&run_experiment(&spec("s")).unwrap());
    let b = to_csv_string(&run_experiment(&ExperimentSpec { seed: 43, ..spec("s") }).unwrap());
    assert!(a.starts_with(CSV_HEADER));
    assert_ne!(a, b);
}

#[test]
fn timing_fills_only_the_last_row() {
    let rows = run_experiment(&ExperimentSpec { record_timing: true, ..spec("t") }).unwrap();
    let (last, rest) = rows.split_last().unwrap();
    assert!(last.seconds.is_some());
    assert!(rest.iter().all(|r| r.seconds.is_none()));
}

#[test]
fn verify_reports_are_reproducible() {
    let opts = VerifyOptions {
        n_list: Some(vec![4, 8]),
        seed: 9,
        draws: Some(20_000),
    };
    let a = verify_suite_with(Suite::MomentBounds, &opts).unwrap();
    let b = verify_suite_with(Suite::MomentBounds, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
}
