//! Replication harness, summary statistics, published-solution replay and
//! report writers.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::{Breakdown, Evaluation, Headline, ObjectiveError, OpfProblem, ScenarioId};
use crate::wca::{run, write_trace_csv, Algorithm, Execution, OptimizerConfig, WcaError, EPS_END};

/// Relative tolerance used for the "iterations to converge" figure.
pub const CONVERGENCE_BAND: f64 = 0.005;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least one replication")]
    NoReplications,
    #[error(transparent)]
    Optimizer(#[from] WcaError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("published solution is malformed: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("published solution is for {found}, not {expected}")]
    WrongScenario { expected: ScenarioId, found: ScenarioId },
    #[error("published controls {found:?} do not match the control layout {expected:?}")]
    Layout { expected: Vec<String>, found: Vec<String> },
    #[error("unknown report format `{0}` (expected json, csv or markdown)")]
    UnknownFormat(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl Stats {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        // the float mean can drift one ulp outside [min, max] when all values agree
        Some(Self {
            min,
            mean: mean.clamp(min, max),
            max,
            std,
        })
    }
}

/// Median by sorting a copy; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub seed: u64,
    pub objective: f64,
    pub violation: f64,
    pub feasible: bool,
    pub breakdown: Breakdown,
    /// First iteration whose best fitness is within [`CONVERGENCE_BAND`] of the final one.
    pub converged_at: usize,
    pub evaluations: usize,
    pub wall_time: f64,
    pub controls: Vec<f64>,
    pub best_fitness_per_iteration: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub scenario: ScenarioId,
    pub algorithm: Algorithm,
    pub reps: usize,
    pub base_seed: u64,
    pub headline: Headline,
    pub feasible_reps: usize,
    /// Over feasible replications only; `None` if none was feasible.
    pub objective: Option<Stats>,
    pub headline_stats: Option<Stats>,
    pub wall_time: Stats,
    pub replications: Vec<Replication>,
}

impl BenchmarkResult {
    fn feasible_values(&self, f: impl Fn(&Replication) -> f64) -> Vec<f64> {
        self.replications.iter().filter(|r| r.feasible).map(f).collect()
    }

    pub fn headline_values(&self) -> Vec<f64> {
        let h = self.headline;
        self.feasible_values(|r| h.pick(&r.breakdown))
    }

    pub fn objective_values(&self) -> Vec<f64> {
        self.feasible_values(|r| r.objective)
    }

    pub fn converged_at(&self) -> Vec<usize> {
        self.replications.iter().map(|r| r.converged_at).collect()
    }
}

/// Runs `reps` replications with seeds `config.seed ..= config.seed + reps - 1`.
///
/// Replications run in parallel under `config.execution`, each one
/// evaluating its population sequentially. Results do not depend on the
/// execution mode. When `trace_dir` is given, one convergence CSV per
/// replication is written there.
pub fn run_benchmark(
    problem: &OpfProblem,
    config: &OptimizerConfig,
    reps: usize,
    trace_dir: Option<&Path>,
) -> Result<BenchmarkResult, BenchError> {
    if reps == 0 {
        return Err(BenchError::NoReplications);
    }
    config.validate(&problem.bounds)?;
    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let seeds: Vec<u64> = (0..reps as u64).map(|i| config.seed.wrapping_add(i)).collect();
    let inner = if reps > 1 {
        Execution::Sequential
    } else {
        config.execution
    };
    let outcomes = config
        .execution
        .map(&seeds, |&seed| -> Result<Replication, BenchError> {
            let cfg = OptimizerConfig {
                seed,
                execution: inner,
                ..config.clone()
            };
            let report = run(problem, &cfg)?;
            if let Some(dir) = trace_dir {
                let path = dir.join(trace_file_name(problem.id(), config.algorithm, seed));
                let file = File::create(&path).map_err(io_err(&path))?;
                write_trace_csv(&report, BufWriter::new(file))?;
            }
            let best = &report.best_individual;
            Ok(Replication {
                seed,
                objective: best.assessment.objective,
                violation: best.assessment.violation,
                feasible: report.is_feasible(),
                breakdown: best.assessment.detail,
                converged_at: report.iterations_to_within(CONVERGENCE_BAND),
                evaluations: report.evaluations_used,
                wall_time: report.wall_time,
                controls: best.position.clone(),
                best_fitness_per_iteration: report.best_fitness_per_iteration.clone(),
            })
        });
    let replications = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(problem.id(), config.algorithm, config.seed, replications))
}

/// Builds a result (and its statistics) from per-replication outcomes.
pub fn summarize(
    scenario: ScenarioId,
    algorithm: Algorithm,
    base_seed: u64,
    replications: Vec<Replication>,
) -> BenchmarkResult {
    let headline = scenario.headline();
    let feasible: Vec<&Replication> = replications.iter().filter(|r| r.feasible).collect();
    let objective = Stats::of(&feasible.iter().map(|r| r.objective).collect::<Vec<_>>());
    let headline_stats = Stats::of(&feasible.iter().map(|r| headline.pick(&r.breakdown)).collect::<Vec<_>>());
    let wall_time =
        Stats::of(&replications.iter().map(|r| r.wall_time).collect::<Vec<_>>()).expect("at least one replication");
    BenchmarkResult {
        scenario,
        algorithm,
        reps: replications.len(),
        base_seed,
        headline,
        feasible_reps: feasible.len(),
        objective,
        headline_stats,
        wall_time,
        replications,
    }
}

pub fn trace_file_name(scenario: ScenarioId, algorithm: Algorithm, seed: u64) -> String {
    format!(
        "trace_{}_{}_seed{seed}.csv",
        scenario.key(),
        algorithm.to_string().to_lowercase()
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Json => "json",
            Self::Csv => "csv",
            Self::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "md" | "markdown" | "markdown-table" => Ok(Self::Markdown),
            _ => Err(BenchError::UnknownFormat(s.to_string())),
        }
    }
}

/// Per-replication rows followed by `min`, `mean`, `max` and `std` footer rows
/// computed over the feasible replications.
pub fn write_csv<W: Write>(result: &BenchmarkResult, out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "seed",
        "feasible",
        "objective",
        "fuel",
        "emission",
        "loss",
        "vd",
        "violation",
        "converged_at",
        "wall_time",
    ])?;
    for r in &result.replications {
        let b = &r.breakdown;
        w.write_record([
            r.seed.to_string(),
            r.feasible.to_string(),
            r.objective.to_string(),
            b.fuel.to_string(),
            b.emission.to_string(),
            b.loss.to_string(),
            b.vd.to_string(),
            r.violation.to_string(),
            r.converged_at.to_string(),
            r.wall_time.to_string(),
        ])?;
    }
    let pick = |f: fn(&Stats) -> f64| {
        result
            .objective
            .as_ref()
            .map(f)
            .map(|v| v.to_string())
            .unwrap_or_default()
    };
    type Pick = fn(&Stats) -> f64;
    let footer: [(&str, Pick); 4] = [
        ("min", |s| s.min),
        ("mean", |s| s.mean),
        ("max", |s| s.max),
        ("std", |s| s.std),
    ];
    for (label, f) in footer {
        let wall = f(&result.wall_time).to_string();
        w.write_record([label, "", &pick(f), "", "", "", "", "", "", &wall])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// A comparison table with one row per result, in the order given.
pub fn markdown_table(results: &[BenchmarkResult]) -> String {
    let mut out = String::new();
    let label = results.first().map_or("objective", |r| r.headline.label());
    let _ = writeln!(
        out,
        "| Scenario | Algorithm | Runs | Feasible | Minimum {label} | Average {label} | Maximum {label} | Std | Mean time (s) |"
    );
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|---|");
    for r in results {
        let cells = match &r.headline_stats {
            Some(s) => format!("{:.4} | {:.4} | {:.4} | {:.2e}", s.min, s.mean, s.max, s.std),
            None => "- | - | - | -".to_string(),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {:.2} |",
            r.scenario, r.algorithm, r.reps, r.feasible_reps, cells, r.wall_time.mean
        );
    }
    out
}

/// Writes `result` to `path` in `format`.
pub fn emit_report(result: &BenchmarkResult, format: ReportFormat, path: &Path) -> Result<(), BenchError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, result)?;
            out.write_all(b"\n").map_err(io_err(path))?;
        }
        ReportFormat::Csv => write_csv(result, &mut out)?,
        ReportFormat::Markdown => out
            .write_all(markdown_table(std::slice::from_ref(result)).as_bytes())
            .map_err(io_err(path))?,
    }
    out.flush().map_err(io_err(path))
}

/// Default file name for a report: `<scenario>_<algorithm>.<ext>`.
pub fn report_path(dir: &Path, result: &BenchmarkResult, format: ReportFormat) -> PathBuf {
    dir.join(format!(
        "{}_{}.{}",
        result.scenario.key(),
        result.algorithm.to_string().to_lowercase(),
        format.extension()
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedControl {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedFigures {
    pub fuel: f64,
    #[serde(default)]
    pub emission: Option<f64>,
    pub loss: f64,
    #[serde(default)]
    pub vd: Option<f64>,
}

/// A printed control vector with the figures reported alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedSolution {
    pub scenario: ScenarioId,
    pub source: String,
    pub slack_p: f64,
    pub controls: Vec<NamedControl>,
    pub reference: PublishedFigures,
}

impl PublishedSolution {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn builtin(id: ScenarioId) -> Self {
        let text = match id {
            ScenarioId::C1 => include_str!("../data/published/c1.json"),
            ScenarioId::C2 => include_str!("../data/published/c2.json"),
            ScenarioId::C3 => include_str!("../data/published/c3.json"),
            ScenarioId::C4 => include_str!("../data/published/c4.json"),
            ScenarioId::C5 => include_str!("../data/published/c5.json"),
            ScenarioId::B57 => include_str!("../data/published/b57.json"),
        };
        Self::from_json(text).expect("bundled published solution parses")
    }

    pub fn values(&self) -> Vec<f64> {
        self.controls.iter().map(|c| c.value).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayRow {
    pub quantity: &'static str,
    pub computed: f64,
    pub published: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Replay {
    pub scenario: ScenarioId,
    pub rows: Vec<ReplayRow>,
    pub evaluation: Evaluation,
}

impl Replay {
    pub fn row(&self, quantity: &str) -> Option<&ReplayRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{} replay\n{:<10} {:>14} {:>14} {:>10}\n",
            self.scenario, "quantity", "computed", "published", "rel.err"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>14.4} {:>14.4} {:>9.3}%",
                r.quantity,
                r.computed,
                r.published,
                100.0 * r.rel_error
            );
        }
        let _ = writeln!(out, "violation  {:>14.4e}", self.evaluation.violation_total);
        out
    }
}

fn replay_row(quantity: &'static str, computed: f64, published: f64) -> ReplayRow {
    ReplayRow {
        quantity,
        computed,
        published,
        rel_error: ((computed - published) / published).abs(),
    }
}

/// Evaluates a printed control vector without running any optimizer.
pub fn replay(problem: &OpfProblem, published: &PublishedSolution) -> Result<Replay, BenchError> {
    if published.scenario != problem.id() {
        return Err(BenchError::WrongScenario {
            expected: problem.id(),
            found: published.scenario,
        });
    }
    let expected = problem.layout.labels(&problem.case);
    let found: Vec<String> = published.controls.iter().map(|c| c.name.clone()).collect();
    if expected != found {
        return Err(BenchError::Layout { expected, found });
    }
    let e = problem.evaluation(&published.values(), EPS_END);
    let r = &published.reference;
    let mut rows = vec![
        replay_row("slack_p", e.solution.slack_p, published.slack_p),
        replay_row("fuel", e.fuel_cost, r.fuel),
    ];
    if let Some(em) = r.emission {
        rows.push(replay_row("emission", e.emission, em));
    }
    rows.push(replay_row("loss", e.loss, r.loss));
    if let Some(vd) = r.vd {
        rows.push(replay_row("vd", e.vd, vd));
    }
    Ok(Replay {
        scenario: problem.id(),
        rows,
        evaluation: e,
    })
}

/// [`replay`] with the bundled solution for the problem's scenario.
pub fn replay_published(problem: &OpfProblem) -> Result<Replay, BenchError> {
    replay(problem, &PublishedSolution::builtin(problem.id()))
}
