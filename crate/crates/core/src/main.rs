use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wca_opf::bench::{emit_report, markdown_table, replay_published, report_path, run_benchmark, ReportFormat};
use wca_opf::grid::load_case;
use wca_opf::multiperiod::{run_multiperiod, HourlyProfile};
use wca_opf::objectives::{OpfProblem, ScenarioId, ScenarioSpec};
use wca_opf::powerflow::write_state_csv;
use wca_opf::wca::{Algorithm, Execution, OptimizerConfig};

#[derive(Parser)]
#[command(
    name = "opf",
    version,
    about = "WCA / FIWCA optimal power flow on the IEEE 30- and 57-bus systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run independent replications of an optimizer on one scenario.
    Run(RunArgs),
    /// Evaluate a bundled published control vector without optimizing.
    Replay(ReplayArgs),
    /// Solve a 24-hour profile with and without renewables.
    Multiperiod(MultiperiodArgs),
}

#[derive(Args)]
struct Target {
    /// Scenario: c1..c5 on ieee30, b57 on ieee57.
    #[arg(long, default_value = "c1")]
    scenario: ScenarioId,
    /// Builtin case name or path to a case JSON file; defaults to the scenario's case.
    #[arg(long)]
    case: Option<String>,
}

impl Target {
    fn problem(&self) -> Result<OpfProblem> {
        let spec = ScenarioSpec::builtin(self.scenario);
        let case = match &self.case {
            Some(name) => load_case(name).with_context(|| format!("loading case `{name}`"))?,
            None => spec.case()?,
        };
        Ok(OpfProblem::new(case, spec)?)
    }
}

#[derive(Args)]
struct Optimizer {
    #[arg(long, default_value = "fiwca")]
    algo: Algorithm,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    pop: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 5)]
    nsr: usize,
    /// Initial evaporation radius in bound-normalized units.
    #[arg(long)]
    dmax: Option<f64>,
    /// Divide FIWCA's summed pull by the number of informants.
    #[arg(long)]
    normalize_informants: bool,
    /// Evaluate on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

impl Optimizer {
    fn config(&self) -> OptimizerConfig {
        OptimizerConfig {
            n_pop: self.pop,
            n_sr: self.nsr,
            max_iter: self.iters,
            d_max_init: self.dmax,
            algorithm: self.algo,
            seed: self.seed,
            fiwca_normalize_informants: self.normalize_informants,
            execution: if self.sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            },
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    target: Target,
    #[command(flatten)]
    optimizer: Optimizer,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, env = "OPF_OUT_DIR", default_value = "results")]
    out: PathBuf,
    /// Skip the per-replication convergence CSVs.
    #[arg(long)]
    no_traces: bool,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    target: Target,
    /// Write bus voltages and branch flows of the replayed state to this CSV.
    #[arg(long)]
    dump_state: Option<PathBuf>,
    /// Print the replay as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct MultiperiodArgs {
    /// Profile JSON; defaults to the bundled synthetic day.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, default_value = "c1")]
    scenario: ScenarioId,
    #[command(flatten)]
    optimizer: Optimizer,
    #[arg(long, env = "OPF_OUT_DIR", default_value = "results")]
    out: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let problem = args.target.problem()?;
    create_dir(&args.out)?;
    let traces = args.out.join("traces");
    let trace_dir = (!args.no_traces).then_some(traces.as_path());
    let result = run_benchmark(&problem, &args.optimizer.config(), args.reps, trace_dir)?;
    for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
        emit_report(&result, format, &report_path(&args.out, &result, format))?;
    }
    print!("{}", markdown_table(std::slice::from_ref(&result)));
    if result.feasible_reps < result.reps {
        eprintln!(
            "{} of {} replications ended infeasible",
            result.reps - result.feasible_reps,
            result.reps
        );
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let problem = args.target.problem()?;
    let replay = replay_published(&problem)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&replay)?);
    } else {
        print!("{}", replay.to_table());
    }
    if let Some(path) = args.dump_state {
        let published = wca_opf::bench::PublishedSolution::builtin(problem.id());
        let inst = problem.instance(&published.values())?;
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_state_csv(BufWriter::new(file), &replay.evaluation.solution, &inst)?;
    }
    Ok(())
}

fn cmd_multiperiod(args: MultiperiodArgs) -> Result<()> {
    let spec = ScenarioSpec::builtin(args.scenario);
    if spec.case != "ieee30" {
        bail!(
            "multi-period runs use a 30-bus scenario (c1..c5), got {}",
            args.scenario
        );
    }
    let case = spec.case()?;
    let profile = match &args.profile {
        Some(path) => HourlyProfile::from_file(path)?,
        None => HourlyProfile::synthetic_day(&case),
    };
    let report = run_multiperiod(&case, &spec, &profile, &args.optimizer.config())?;
    create_dir(&args.out)?;
    let json = args.out.join("multiperiod.json");
    fs::write(&json, report.to_json() + "\n").with_context(|| format!("writing {}", json.display()))?;
    let csv = args.out.join("multiperiod.csv");
    let file = File::create(&csv).with_context(|| format!("creating {}", csv.display()))?;
    report.write_csv(BufWriter::new(file))?;

    let (a, b) = (&report.without_renewables.totals, &report.with_renewables.totals);
    println!(
        "{:<16} {:>12} {:>12} {:>12}",
        "", "fuel ($)", "loss (MWh)", "emission (t)"
    );
    println!(
        "{:<16} {:>12.2} {:>12.2} {:>12.4}",
        "no renewables", a.fuel, a.loss, a.emission
    );
    println!(
        "{:<16} {:>12.2} {:>12.2} {:>12.4}",
        "with renewables", b.fuel, b.loss, b.emission
    );
    let s = report.savings;
    println!(
        "{:<16} {:>11.1}% {:>11.1}% {:>11.1}%",
        "savings", s.fuel_pct, s.loss_pct, s.emission_pct
    );
    let flagged = report.with_renewables.infeasible_hours + report.without_renewables.infeasible_hours;
    if flagged > 0 {
        eprintln!("{flagged} hour(s) ended infeasible");
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Multiperiod(args) => cmd_multiperiod(args),
    }
}
