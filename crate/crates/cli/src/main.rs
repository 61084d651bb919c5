//! `zomd`: run, sweep and verify gradient-free mirror descent experiments.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use zomd::experiment::{run_experiments, to_csv_string, write_csv, write_jsonl, ExperimentSpec, ResultRow, Setting};
use zomd::verify::{verify_suite_with, Check, Suite, VerifyOptions};

#[derive(Parser, Debug)]
#[command(name = "zomd", version, about = "Gradient-free mirror descent on the simplex")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Replicated runs of one configuration; one CSV row per trace checkpoint.
    Run(RunArgs),
    /// The same configuration over several dimensions and estimators.
    Sweep(SweepArgs),
    /// Monte-Carlo checks; exits non-zero if any check fails.
    Verify(VerifyArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML file with any of the long flag names as keys; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Experiment id written to the first column.
    #[arg(long)]
    id: Option<String>,
    /// linear | distl1 | quad | maxlin
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// none | uniform | sign | mantissa
    #[arg(long)]
    noise: Option<String>,
    /// Noise level, or `max` for the schedule's admissible level.
    #[arg(long)]
    delta: Option<String>,
    /// Kept bits for the mantissa channel.
    #[arg(long)]
    bits: Option<u32>,
    /// p1 | p2 | pinf | pinf-cube | rademacher | gaussian | coordinate | fd-<z> | directional-<p> | subgradient
    #[arg(long)]
    estimator: Option<String>,
    /// Smoothing radius or `auto`.
    #[arg(long)]
    mu: Option<String>,
    /// Finite-difference step for the fd-* estimators.
    #[arg(long)]
    tau: Option<f64>,
    /// thm1 | thm2 | thm3 | manual
    #[arg(long)]
    schedule: Option<String>,
    /// Step constant c in beta_t = c sqrt(t) for the manual schedule.
    #[arg(long)]
    beta: Option<f64>,
    /// Iterations, or `auto` for the schedule's rule.
    #[arg(long = "N", id = "N")]
    n_iter: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Fill the `seconds` column (makes output time-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',')]
    n_list: Vec<usize>,
    /// Comma-separated estimator labels (default: the single --estimator).
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// unbiasedness | variance | volume | moments | scaling | all
    #[arg(long, default_value = "all")]
    suite: String,
    /// Comma-separated dimensions (default: per suite).
    #[arg(long, value_delimiter = ',')]
    n_list: Vec<usize>,
    /// Monte-Carlo draws per check (default: per suite).
    #[arg(long)]
    draws: Option<usize>,
}

/// Key/value pairs from the config file, values rendered as strings.
#[derive(Default)]
struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
        let mut map = BTreeMap::new();
        for (k, v) in table {
            let s = match v {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                toml::Value::Array(a) => a
                    .iter()
                    .map(|x| match x {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => bail!("{}: unsupported value for '{k}': {other}", path.display()),
            };
            map.insert(k.replace('_', "-"), s);
        }
        Ok(Self(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|s| s.parse::<T>().map_err(|e| anyhow::anyhow!("config key '{key}': {e}")))
            .transpose()
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(Vec::new()),
            Some(s) => s
                .split(',')
                .map(|p| p.trim().parse::<T>().map_err(|e| anyhow::anyhow!("config key '{key}': {e}")))
                .collect(),
        }
    }
}

fn pick<T: FromStr>(flag: Option<T>, file: &FileConfig, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

fn parse<T: FromStr>(s: &str, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| anyhow::anyhow!("--{what}: {e}"))
}

fn build_spec(a: &RunArgs, file: &FileConfig) -> Result<ExperimentSpec> {
    let d = ExperimentSpec::default();
    let n_iter = match pick(a.n_iter.clone(), file, "N")? {
        None => d.n_iter,
        Some(s) if s == "auto" => None,
        Some(s) => Some(parse::<u64>(&s, "N")?),
    };
    Ok(ExperimentSpec {
        id: pick(a.id.clone(), file, "id")?.unwrap_or(d.id),
        problem: match pick(a.problem.clone(), file, "problem")? {
            Some(s) => parse(&s, "problem")?,
            None => d.problem,
        },
        n: pick(a.n, file, "n")?.unwrap_or(d.n),
        estimator: pick(a.estimator.clone(), file, "estimator")?.unwrap_or(d.estimator),
        mu: match pick(a.mu.clone(), file, "mu")? {
            Some(s) => parse::<Setting>(&s, "mu")?,
            None => d.mu,
        },
        tau: pick(a.tau, file, "tau")?.unwrap_or(d.tau),
        noise: match pick(a.noise.clone(), file, "noise")? {
            Some(s) => parse(&s, "noise")?,
            None => d.noise,
        },
        delta: match pick(a.delta.clone(), file, "delta")? {
            Some(s) => parse::<Setting>(&s, "delta")?,
            None => d.delta,
        },
        bits: pick(a.bits, file, "bits")?.unwrap_or(d.bits),
        schedule: match pick(a.schedule.clone(), file, "schedule")? {
            Some(s) => parse(&s, "schedule")?,
            None => d.schedule,
        },
        eps: pick(a.eps, file, "eps")?.unwrap_or(d.eps),
        n_iter,
        beta: pick(a.beta, file, "beta")?.or(d.beta),
        reps: pick(a.reps, file, "reps")?.unwrap_or(d.reps),
        seed: pick(a.common.seed, file, "seed")?.unwrap_or(d.seed),
        record_timing: a.timing || file.get::<bool>("timing")?.unwrap_or(false),
    })
}

struct Output {
    path: Option<PathBuf>,
    format: Format,
}

impl Output {
    fn from(common: &Common, file: &FileConfig) -> Result<Self> {
        let format = match common.format {
            Some(f) => f,
            None => match file.get::<String>("format")?.as_deref() {
                None | Some("csv") => Format::Csv,
                Some("jsonl") => Format::Jsonl,
                Some(other) => bail!("config key 'format': expected csv or jsonl, got '{other}'"),
            },
        };
        let path = common.out.clone().or(file.get::<PathBuf>("out")?);
        Ok(Self { path, format })
    }

    fn rows(&self, rows: &[ResultRow]) -> Result<()> {
        match (&self.path, self.format) {
            (Some(p), Format::Csv) => write_csv(rows, p)?,
            (Some(p), Format::Jsonl) => write_jsonl(rows, p)?,
            (None, Format::Csv) => std::io::stdout().write_all(to_csv_string(rows).as_bytes())?,
            (None, Format::Jsonl) => {
                let mut out = std::io::stdout().lock();
                for r in rows {
                    serde_json::to_writer(&mut out, r)?;
                    out.write_all(b"\n")?;
                }
            }
        }
        Ok(())
    }

    fn checks(&self, checks: &[Check]) -> Result<()> {
        let mut text = String::new();
        match self.format {
            Format::Csv => {
                let mut w = csv::WriterBuilder::new()
                    .terminator(csv::Terminator::Any(b'\n'))
                    .from_writer(Vec::new());
                for c in checks {
                    w.serialize(c)?;
                }
                text.push_str(std::str::from_utf8(&w.into_inner()?)?);
            }
            Format::Jsonl => {
                for c in checks {
                    text.push_str(&serde_json::to_string(c)?);
                    text.push('\n');
                }
            }
        }
        match &self.path {
            Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
            None => std::io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

fn set_threads(common: &Common, file: &FileConfig) -> Result<()> {
    if let Some(t) = pick(common.threads, file, "threads")? {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn warn_plan(spec: &ExperimentSpec) -> Result<()> {
    let plan = spec.plan()?;
    if let (Some(max), true) = (plan.delta_max, plan.channel.delta > 0.0) {
        if plan.channel.delta > max {
            eprintln!(
                "warning: {}: noise level {} exceeds the admissible {max} for this schedule",
                spec.id, plan.channel.delta
            );
        }
    }
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<ExitCode> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    set_threads(&a.common, &file)?;
    let spec = build_spec(a, &file)?;
    warn_plan(&spec)?;
    let rows = run_experiments(std::slice::from_ref(&spec))?;
    Output::from(&a.common, &file)?.rows(&rows)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(a: &SweepArgs) -> Result<ExitCode> {
    let file = FileConfig::load(a.run.common.config.as_deref())?;
    set_threads(&a.run.common, &file)?;
    let base = build_spec(&a.run, &file)?;
    let mut ns = a.n_list.clone();
    if ns.is_empty() {
        ns = file.list("n-list")?;
    }
    if ns.is_empty() {
        ns.push(base.n);
    }
    let mut ests = a.estimators.clone();
    if ests.is_empty() {
        ests = file.list("estimators")?;
    }
    if ests.is_empty() {
        ests.push(base.estimator.clone());
    }
    let mut specs = Vec::new();
    for e in &ests {
        for &n in &ns {
            let spec = ExperimentSpec {
                id: format!("{}-{e}-n{n:05}", base.id),
                n,
                estimator: e.clone(),
                ..base.clone()
            };
            warn_plan(&spec)?;
            specs.push(spec);
        }
    }
    let rows = run_experiments(&specs)?;
    Output::from(&a.run.common, &file)?.rows(&rows)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: &VerifyArgs) -> Result<ExitCode> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    set_threads(&a.common, &file)?;
    let suites: Vec<Suite> = if a.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        a.suite.split(',').map(|s| parse(s.trim(), "suite")).collect::<Result<_>>()?
    };
    let mut ns = a.n_list.clone();
    if ns.is_empty() {
        ns = file.list("n-list")?;
    }
    let opts = VerifyOptions {
        n_list: (!ns.is_empty()).then_some(ns),
        seed: pick(a.common.seed, &file, "seed")?.unwrap_or(0),
        draws: pick(a.draws, &file, "draws")?,
    };
    let mut checks = Vec::new();
    for s in suites {
        checks.extend(verify_suite_with(s, &opts)?);
    }
    Output::from(&a.common, &file)?.checks(&checks)?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", checks.len());
        Ok(ExitCode::FAILURE)
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
