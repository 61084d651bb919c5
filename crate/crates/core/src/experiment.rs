//! Replicated runs and their tabular output.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::estimators::EstimatorConfig;
use crate::oracle::{NoiseChannel, NoiseKind};
use crate::problems::{make_problem, ProblemKind, StochasticProblem};
use crate::solver::{self, QBar, RunReport, Schedule};
use crate::stats::Running;
use crate::{Error, Result, RngStream};

/// Stream of the base seed that builds the problem instance shared by all replications.
const PROBLEM_STREAM: u64 = 7;

pub const CSV_HEADER: &str = "experiment,n,scheme,delta,N,gap_mean,gap_se,bound,bound_ok,oracle_calls,seconds";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Thm1,
    Thm2,
    Thm3,
    Manual,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thm1" => Ok(ScheduleKind::Thm1),
            "thm2" => Ok(ScheduleKind::Thm2),
            "thm3" => Ok(ScheduleKind::Thm3),
            "manual" => Ok(ScheduleKind::Manual),
            _ => Err(Error::invalid(format!("unknown schedule '{s}' (thm1|thm2|thm3|manual)"))),
        }
    }
}

/// A real parameter that may be left to the tuning rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Setting {
    /// `auto` for `mu` and `N`, `max` for `delta`.
    Tuned,
    Value(f64),
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" | "max" => Ok(Setting::Tuned),
            _ => s
                .parse::<f64>()
                .map(Setting::Value)
                .map_err(|_| Error::invalid(format!("expected a number, 'auto' or 'max', got '{s}'"))),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Tuned => f.write_str("auto"),
            Setting::Value(v) => write!(f, "{v}"),
        }
    }
}

/// Everything that determines an experiment's output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub problem: ProblemKind,
    pub n: usize,
    /// Estimator label, see [`EstimatorConfig::from_label`].
    pub estimator: String,
    pub mu: Setting,
    pub tau: f64,
    pub noise: NoiseKind,
    pub delta: Setting,
    pub bits: u32,
    pub schedule: ScheduleKind,
    pub eps: f64,
    /// `None` lets the schedule's rule pick `N`.
    pub n_iter: Option<u64>,
    /// Step constant for the manual schedule.
    pub beta: Option<f64>,
    pub reps: usize,
    pub seed: u64,
    pub record_timing: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            id: "run".into(),
            problem: ProblemKind::LinearNoisy,
            n: 10,
            estimator: "subgradient".into(),
            mu: Setting::Tuned,
            tau: 0.01,
            noise: NoiseKind::None,
            delta: Setting::Value(0.0),
            bits: 16,
            schedule: ScheduleKind::Thm1,
            eps: 0.1,
            n_iter: None,
            beta: None,
            reps: 50,
            seed: 0,
            record_timing: false,
        }
    }
}

/// A spec with the tuning rules applied.
#[derive(Clone, Debug)]
pub struct Plan {
    pub problem: StochasticProblem,
    pub estimator: EstimatorConfig,
    pub channel: NoiseChannel,
    pub schedule: Schedule,
    pub n_iter: u64,
    pub delta_max: Option<f64>,
}

impl Plan {
    /// Guaranteed gap after `t` steps under the schedule's theorem, if it has one.
    pub fn bound(&self, t: u64) -> Option<f64> {
        let p = &self.problem;
        let (nf, ln_n, tf) = (p.n() as f64, (p.n() as f64).ln(), t as f64);
        let c = p.constants();
        match self.schedule {
            Schedule::Theorem1 { m } => Some(2.0 * m * (ln_n / tf).sqrt()),
            Schedule::Theorem2 { m } => Some(4.0 * m * nf * (ln_n / tf).sqrt() + m * self.estimator.mu),
            Schedule::Theorem3 { m2 } => {
                Some(2.0 * 5f64.sqrt() * m2 * ln_n / tf.sqrt() + c.l2 * self.estimator.mu.powi(2) / 2.0)
            }
            Schedule::Manual { .. } => None,
        }
    }
}

impl ExperimentSpec {
    pub fn build_problem(&self) -> Result<StochasticProblem> {
        make_problem(self.problem, self.n, &mut RngStream::new(self.seed, PROBLEM_STREAM))
    }

    pub fn plan(&self) -> Result<Plan> {
        self.plan_for(self.build_problem()?)
    }

    /// Applies the tuning rules to a given problem instance.
    pub fn plan_for(&self, problem: StochasticProblem) -> Result<Plan> {
        if self.reps < 2 {
            return Err(Error::invalid("at least two replications are needed for a standard error"));
        }
        let n = problem.n();
        let m = problem.m();
        let mu0 = problem.mu0();
        let tuned: Option<solver::Tuning> = match self.schedule {
            ScheduleKind::Thm2 => Some(solver::tune_theorem2(m, n, self.eps, None, mu0)?),
            ScheduleKind::Thm3 => {
                let c = problem.constants();
                Some(solver::tune_theorem3(c.m2, c.l2, n, self.eps, QBar::Inf, mu0)?)
            }
            _ => None,
        };
        let schedule = match (self.schedule, &tuned) {
            (ScheduleKind::Thm1, _) => Schedule::Theorem1 { m },
            (ScheduleKind::Manual, _) => Schedule::Manual {
                c: self.beta.ok_or_else(|| Error::invalid("the manual schedule needs a step constant (beta)"))?,
            },
            (_, Some(t)) => t.schedule,
            _ => unreachable!(),
        };
        let mu = match (self.mu, &tuned) {
            (Setting::Value(v), _) => v,
            (Setting::Tuned, Some(t)) => t.mu,
            (Setting::Tuned, None) => (self.eps / (2.0 * m)).min(mu0),
        };
        let delta_max = tuned.map(|t| t.delta_max);
        let delta = match self.delta {
            Setting::Value(v) => v,
            Setting::Tuned => delta_max
                .ok_or_else(|| Error::invalid("delta = max needs the thm2 or thm3 schedule"))?,
        };
        let n_iter = match (self.n_iter, &tuned) {
            (Some(v), _) => v,
            (None, Some(t)) => t.n_iter,
            (None, None) if self.schedule == ScheduleKind::Thm1 => solver::theorem1_iterations(m, n, self.eps)?,
            (None, None) => return Err(Error::invalid("the manual schedule needs an explicit N")),
        };
        if n_iter == 0 {
            return Err(Error::invalid("N must be at least 1"));
        }
        let estimator = EstimatorConfig::from_label(&self.estimator, mu, self.tau)?;
        estimator.validate(&problem)?;
        Ok(Plan {
            channel: NoiseChannel::new(self.noise, delta, self.bits)?,
            problem,
            estimator,
            schedule,
            n_iter,
            delta_max,
        })
    }
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub n: usize,
    pub scheme: String,
    pub delta: f64,
    #[serde(rename = "N")]
    pub n_iter: u64,
    pub gap_mean: f64,
    pub gap_se: f64,
    pub bound: Option<f64>,
    pub bound_ok: Option<bool>,
    /// Per replication, up to this checkpoint.
    pub oracle_calls: u64,
    /// Mean seconds per replication; only on the final row and only when timing is on.
    pub seconds: Option<f64>,
}

/// Runs `spec.reps` replications with seeds `seed, seed + 1, ...` and returns one
/// row per trace checkpoint.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    let plan = spec.plan()?;
    let reports = replicate(&plan, spec.seed, spec.reps)?;
    Ok(summarize(spec, &plan, &reports))
}

/// Independent runs on a worker pool; the result order follows the seeds.
pub fn replicate(plan: &Plan, base_seed: u64, reps: usize) -> Result<Vec<RunReport>> {
    (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let rng = RngStream::new(base_seed.wrapping_add(r), 0);
            solver::run(&plan.problem, plan.channel, &plan.estimator, plan.schedule, plan.n_iter, &rng)
        })
        .collect()
}

fn summarize(spec: &ExperimentSpec, plan: &Plan, reports: &[RunReport]) -> Vec<ResultRow> {
    let points = reports[0].gap_trace.len();
    let calls_per_step = reports[0].oracle_calls / plan.n_iter;
    let seconds = reports.iter().map(|r| r.wall_time).sum::<f64>() / reports.len() as f64;
    (0..points)
        .map(|k| {
            let t = reports[0].gap_trace[k].t;
            let mut acc = Running::new();
            for r in reports {
                acc.push(r.gap_trace[k].gap);
            }
            let bound = plan.bound(t);
            ResultRow {
                experiment: spec.id.clone(),
                n: plan.problem.n(),
                scheme: plan.estimator.label(),
                delta: plan.channel.delta,
                n_iter: t,
                gap_mean: acc.mean(),
                gap_se: acc.std_error(),
                bound,
                bound_ok: bound.map(|b| acc.mean() <= b),
                oracle_calls: calls_per_step * t,
                seconds: (spec.record_timing && k + 1 == points).then_some(seconds),
            }
        })
        .collect()
}

/// Runs every spec and sorts the rows by experiment id (stable within an id).
pub fn run_experiments(specs: &[ExperimentSpec]) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for s in specs {
        rows.extend(run_experiment(s)?);
    }
    rows.sort_by(|a, b| a.experiment.cmp(&b.experiment));
    Ok(rows)
}

pub fn to_csv_string(rows: &[ResultRow]) -> String {
    let mut out = Vec::new();
    write_csv_to(rows, &mut out).expect("writing to memory cannot fail");
    String::from_utf8(out).expect("csv output is utf-8")
}

fn write_csv_to<W: Write>(rows: &[ResultRow], w: W) -> std::result::Result<(), csv::Error> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    wtr.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv_to(rows, BufWriter::new(file)).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_jsonl(rows: &[ResultRow], path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentSpec {
        ExperimentSpec {
            id: "small".into(),
            n: 4,
            n_iter: Some(200),
            reps: 3,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn settings_parse() {
        assert_eq!("auto".parse::<Setting>().unwrap(), Setting::Tuned);
        assert_eq!("max".parse::<Setting>().unwrap(), Setting::Tuned);
        assert_eq!("0.25".parse::<Setting>().unwrap(), Setting::Value(0.25));
        assert!("x".parse::<Setting>().is_err());
        assert_eq!("thm3".parse::<ScheduleKind>().unwrap(), ScheduleKind::Thm3);
    }

    #[test]
    fn header_matches_row_fields() {
        let rows = run_experiment(&small()).unwrap();
        let csv = to_csv_string(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 11);
        assert_eq!(first[0], "small");
        assert_eq!(first[10], "");
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn rows_follow_trace_grid() {
        let rows = run_experiment(&small()).unwrap();
        let ts: Vec<u64> = rows.iter().map(|r| r.n_iter).collect();
        assert_eq!(ts, vec![1, 2, 5, 10, 20, 50, 100, 200]);
        assert!(rows.iter().all(|r| r.oracle_calls == 0 && r.bound_ok.is_some()));
    }

    #[test]
    fn deterministic_output() {
        let a = to_csv_string(&run_experiment(&small()).unwrap());
        let b = to_csv_string(&run_experiment(&small()).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn one_replication_is_rejected() {
        let spec = ExperimentSpec { reps: 1, ..small() };
        assert!(run_experiment(&spec).is_err());
    }

    #[test]
    fn theorem2_plan_uses_tuned_values() {
        let spec = ExperimentSpec {
            problem: ProblemKind::NonsmoothDistL1,
            n: 5,
            estimator: "p1".into(),
            noise: NoiseKind::RandomSign,
            delta: Setting::Tuned,
            schedule: ScheduleKind::Thm2,
            eps: 0.3,
            ..small()
        };
        let mut spec = spec;
        spec.n_iter = None;
        let plan = spec.plan().unwrap();
        let m = plan.problem.m();
        assert_eq!(plan.estimator.mu, 0.3 / (2.0 * m));
        assert_eq!(plan.channel.delta, 0.075);
        let expect = (64.0 * m * m * 25.0 * 5f64.ln() / 0.09).ceil() as u64;
        assert_eq!(plan.n_iter, expect);
        // the bound at the tuned N is eps
        assert!((plan.bound(plan.n_iter).unwrap() - 0.3).abs() < 1e-3);
    }

    #[test]
    fn theorem3_bound_at_tuned_n_is_at_most_eps() {
        let spec = ExperimentSpec {
            problem: ProblemKind::SmoothQuadratic,
            n: 20,
            estimator: "p2".into(),
            schedule: ScheduleKind::Thm3,
            eps: 0.15,
            n_iter: None,
            ..small()
        };
        let plan = spec.plan().unwrap();
        assert!(plan.bound(plan.n_iter).unwrap() <= 0.15 + 1e-9);
    }

    #[test]
    fn manual_needs_beta_and_n() {
        let spec = ExperimentSpec {
            schedule: ScheduleKind::Manual,
            ..small()
        };
        assert!(spec.plan().is_err());
        let spec = ExperimentSpec {
            beta: Some(1.0),
            ..spec
        };
        let rows = run_experiment(&spec).unwrap();
        assert!(rows.iter().all(|r| r.bound.is_none() && r.bound_ok.is_none()));
    }

    #[test]
    fn writes_files() {
        let rows = run_experiment(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("out.csv");
        write_csv(&rows, &csv_path).unwrap();
        assert_eq!(std::fs::read_to_string(&csv_path).unwrap(), to_csv_string(&rows));
        let jl = dir.path().join("out.jsonl");
        write_jsonl(&rows, &jl).unwrap();
        let text = std::fs::read_to_string(&jl).unwrap();
        assert_eq!(text.lines().count(), rows.len());
        assert!(text.lines().next().unwrap().contains("\"N\":1"));
        let bad = dir.path().join("missing").join("out.csv");
        assert!(matches!(write_csv(&rows, &bad), Err(Error::Io { .. })));
    }
}
