//! Water cycle algorithm (WCA) and its fully informed variant (FIWCA).
//!
//! The population is kept sorted under the feasibility rules: index 0 is the
//! sea, indices `1..n_sr` are rivers and the rest are streams. Each iteration
//! runs a stream phase, a river phase, evaporation/precipitation and a
//! re-sort. Within a phase every move is computed from the leaders' positions
//! at the start of the phase, the batch is evaluated (possibly in parallel),
//! and the results are merged in individual order, so the outcome does not
//! depend on how evaluation was scheduled.

mod exec;
mod moves;
mod rules;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::BoundsVector;

pub use exec::{evaluate_batch, Execution};
pub use moves::{
    assign_streams, decay_dmax, fiwca_river_update, fiwca_stream_update, move_toward, normalized_distance, precipitate,
    Scripted, UnitDraw,
};
pub use rules::{beats, feasibility_compare, rule3_threshold, Ranked, EPS_END, EPS_START};

/// Initial evaporation radius in bound-normalized coordinates, i.e. a tenth
/// of the widest (unit) range.
pub const DEFAULT_D_MAX: f64 = 0.1;

/// Probability that a river evaporates regardless of its distance to the sea.
pub const EVAPORATION_RATE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum WcaError {
    #[error("n_sr must satisfy 2 <= n_sr < n_pop (got n_sr = {n_sr}, n_pop = {n_pop})")]
    Population { n_pop: usize, n_sr: usize },
    #[error("c_coef must lie in (1, 2], got {0}")]
    Coefficient(f64),
    #[error("bounds are invalid in dimension {0}")]
    Bounds(usize),
    #[error("d_max_init must be nonnegative, got {0}")]
    DMax(f64),
    #[error("unknown algorithm `{0}` (expected wca or fiwca)")]
    UnknownAlgorithm(String),
}

/// Result of evaluating one position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment<D> {
    pub objective: f64,
    /// Normalized constraint violation, zero when every constraint holds.
    pub violation: f64,
    /// Objective plus penalty; used for stream assignment and the best-so-far series.
    pub fitness: f64,
    pub detail: D,
}

impl<D> Ranked for Assessment<D> {
    fn objective(&self) -> f64 {
        self.objective
    }
    fn violation(&self) -> f64 {
        self.violation
    }
}

/// An optimization problem over a box.
pub trait Problem: Sync {
    type Detail: Clone + Send + Sync + Default + fmt::Debug + Serialize;

    fn bounds(&self) -> &BoundsVector;

    fn evaluate(&self, x: &[f64]) -> Assessment<Self::Detail>;
}

/// Wraps an unconstrained objective function.
pub struct FnProblem<F> {
    bounds: BoundsVector,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnProblem<F> {
    pub fn new(bounds: BoundsVector, f: F) -> Self {
        Self { bounds, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Problem for FnProblem<F> {
    type Detail = ();

    fn bounds(&self) -> &BoundsVector {
        &self.bounds
    }

    fn evaluate(&self, x: &[f64]) -> Assessment<()> {
        let value = (self.f)(x);
        Assessment {
            objective: value,
            violation: 0.0,
            fitness: value,
            detail: (),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Wca,
    Fiwca,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Wca => "WCA",
            Algorithm::Fiwca => "FIWCA",
        })
    }
}

impl FromStr for Algorithm {
    type Err = WcaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wca" => Ok(Algorithm::Wca),
            "fiwca" => Ok(Algorithm::Fiwca),
            _ => Err(WcaError::UnknownAlgorithm(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub n_pop: usize,
    /// Sea plus rivers.
    pub n_sr: usize,
    pub max_iter: usize,
    pub c_coef: f64,
    /// Evaporation radius in bound-normalized coordinates; `None` uses [`DEFAULT_D_MAX`].
    pub d_max_init: Option<f64>,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub clamp_to_bounds: bool,
    /// Divide FIWCA's summed pull by the number of informants.
    pub fiwca_normalize_informants: bool,
    pub execution: Execution,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_pop: 200,
            n_sr: 5,
            max_iter: 100,
            c_coef: 2.0,
            d_max_init: None,
            algorithm: Algorithm::Fiwca,
            seed: 0,
            clamp_to_bounds: true,
            fiwca_normalize_informants: false,
            execution: Execution::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, bounds: &BoundsVector) -> Result<(), WcaError> {
        if self.n_sr < 2 || self.n_sr >= self.n_pop {
            return Err(WcaError::Population {
                n_pop: self.n_pop,
                n_sr: self.n_sr,
            });
        }
        if !(self.c_coef > 1.0 && self.c_coef <= 2.0) {
            return Err(WcaError::Coefficient(self.c_coef));
        }
        if let Some(d) = self.d_max_init {
            if !(d >= 0.0) {
                return Err(WcaError::DMax(d));
            }
        }
        for (i, (l, u)) in bounds.lb.iter().zip(&bounds.ub).enumerate() {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(WcaError::Bounds(i));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sea,
    River,
    Stream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual<D> {
    pub position: Vec<f64>,
    pub assessment: Assessment<D>,
    pub role: Role,
}

impl<D> Ranked for Individual<D> {
    fn objective(&self) -> f64 {
        self.assessment.objective
    }
    fn violation(&self) -> f64 {
        self.assessment.violation
    }
}

impl<D> Individual<D> {
    pub fn fitness(&self) -> f64 {
        self.assessment.fitness
    }
}

#[derive(Debug, Clone)]
pub struct RainPopulation<D> {
    /// Sorted under the feasibility rules: sea, rivers, streams.
    pub individuals: Vec<Individual<D>>,
    /// Streams per leader (sea first).
    pub ns: Vec<usize>,
    /// Leader slot of every individual; leaders point at themselves.
    pub leader: Vec<usize>,
    pub d_max: f64,
    pub iteration: usize,
}

impl<D> RainPopulation<D> {
    fn swap_members(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        let (lo, hi) = (i.min(j), i.max(j));
        let (left, right) = self.individuals.split_at_mut(hi);
        let (a, b) = (&mut left[lo], &mut right[0]);
        std::mem::swap(&mut a.position, &mut b.position);
        std::mem::swap(&mut a.assessment, &mut b.assessment);
    }

    pub fn sea(&self) -> &Individual<D> {
        &self.individuals[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow<D> {
    pub iteration: usize,
    /// Lowest penalized fitness evaluated so far.
    pub best_fitness: f64,
    /// Objective of the best candidate so far if it is feasible at the final tolerance.
    pub best_feasible_objective: Option<f64>,
    /// Violation of the best candidate so far.
    pub violation: f64,
    pub detail: D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport<D> {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// One entry per iteration, initial population included; non-increasing.
    pub best_fitness_per_iteration: Vec<f64>,
    pub trace: Vec<TraceRow<D>>,
    /// Best candidate evaluated during the run under the feasibility rules at [`EPS_END`].
    pub best_individual: Individual<D>,
    pub evaluations_used: usize,
    /// seconds
    pub wall_time: f64,
}

impl<D> RunReport<D> {
    pub fn is_feasible(&self) -> bool {
        self.best_individual.assessment.violation <= EPS_END
    }

    /// First iteration whose best fitness is within `rel` of the final value.
    pub fn iterations_to_within(&self, rel: f64) -> usize {
        let last = *self.best_fitness_per_iteration.last().expect("at least one entry");
        self.best_fitness_per_iteration
            .iter()
            .position(|&f| (f - last).abs() <= rel * last.abs())
            .expect("the final entry always qualifies")
    }
}

/// Writes the convergence trace as CSV.
pub fn write_trace_csv<D, W: Write>(report: &RunReport<D>, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "best_fitness", "best_feasible_objective", "violation"])?;
    for row in &report.trace {
        w.write_record([
            row.iteration.to_string(),
            format!("{}", row.best_fitness),
            row.best_feasible_objective.map(|o| o.to_string()).unwrap_or_default(),
            format!("{}", row.violation),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One run of the optimizer, exposed step by step.
pub struct Engine<'p, P: Problem, R: UnitDraw> {
    problem: &'p P,
    config: OptimizerConfig,
    rng: R,
    pub pop: RainPopulation<P::Detail>,
    archive: Individual<P::Detail>,
    best_fitness: f64,
    evaluations: usize,
    series: Vec<f64>,
    trace: Vec<TraceRow<P::Detail>>,
}

impl<'p, P: Problem, R: UnitDraw> Engine<'p, P, R> {
    /// Samples, evaluates, ranks and classifies the initial population.
    pub fn new(problem: &'p P, config: OptimizerConfig, mut rng: R) -> Result<Self, WcaError> {
        let bounds = problem.bounds();
        config.validate(bounds)?;
        let positions: Vec<Vec<f64>> = (0..config.n_pop)
            .map(|_| precipitate(&bounds.lb, &bounds.ub, &mut rng))
            .collect();
        let assessments = evaluate_batch(problem, &positions, config.execution);
        let individuals: Vec<Individual<P::Detail>> = positions
            .into_iter()
            .zip(assessments)
            .map(|(position, assessment)| Individual {
                position,
                assessment,
                role: Role::Stream,
            })
            .collect();
        let archive = individuals[0].clone();
        let mut engine = Self {
            problem,
            rng,
            pop: RainPopulation {
                individuals: Vec::new(),
                ns: Vec::new(),
                leader: Vec::new(),
                d_max: config.d_max_init.unwrap_or(DEFAULT_D_MAX),
                iteration: 0,
            },
            config,
            archive,
            best_fitness: f64::INFINITY,
            evaluations: 0,
            series: Vec::new(),
            trace: Vec::new(),
        };
        for ind in &individuals {
            engine.record(&ind.position, &ind.assessment);
        }
        engine.pop.individuals = individuals;
        engine.classify();
        engine.push_trace();
        Ok(engine)
    }

    /// Copy of the current state driven by a different source of randomness.
    pub fn clone_with<R2: UnitDraw>(&self, rng: R2) -> Engine<'p, P, R2> {
        Engine {
            problem: self.problem,
            config: self.config.clone(),
            rng,
            pop: self.pop.clone(),
            archive: self.archive.clone(),
            best_fitness: self.best_fitness,
            evaluations: self.evaluations,
            series: self.series.clone(),
            trace: self.trace.clone(),
        }
    }

    pub fn evaluations_used(&self) -> usize {
        self.evaluations
    }

    pub fn best_fitness(&self) -> f64 {
        self.best_fitness
    }

    pub fn archive(&self) -> &Individual<P::Detail> {
        &self.archive
    }

    fn eps(&self) -> f64 {
        rule3_threshold(self.pop.iteration, self.config.max_iter)
    }

    fn record(&mut self, position: &[f64], a: &Assessment<P::Detail>) {
        self.evaluations += 1;
        if a.fitness < self.best_fitness {
            self.best_fitness = a.fitness;
        }
        if self.evaluations == 1 || beats(a, &self.archive.assessment, EPS_END) {
            self.archive = Individual {
                position: position.to_vec(),
                assessment: a.clone(),
                role: Role::Sea,
            };
        }
    }

    fn evaluate_all(&mut self, positions: &[Vec<f64>]) -> Vec<Assessment<P::Detail>> {
        let out = evaluate_batch(self.problem, positions, self.config.execution);
        for (x, a) in positions.iter().zip(&out) {
            self.record(x, a);
        }
        out
    }

    /// Sorts under the feasibility rules, assigns roles and splits the streams.
    pub fn classify(&mut self) {
        let eps = self.eps();
        let n_sr = self.config.n_sr;
        let pop = &mut self.pop;
        pop.individuals.sort_by(|a, b| feasibility_compare(a, b, eps));
        for (i, ind) in pop.individuals.iter_mut().enumerate() {
            ind.role = match i {
                0 => Role::Sea,
                i if i < n_sr => Role::River,
                _ => Role::Stream,
            };
        }
        let costs: Vec<f64> = pop.individuals[..n_sr].iter().map(|i| i.fitness()).collect();
        let n_stream = pop.individuals.len() - n_sr;
        pop.ns = assign_streams(&costs, pop.individuals[n_sr].fitness(), n_stream);
        pop.leader = (0..n_sr).collect();
        for (l, &count) in pop.ns.iter().enumerate() {
            pop.leader.extend(std::iter::repeat_n(l, count));
        }
    }

    fn leader_positions(&self) -> Vec<Vec<f64>> {
        self.pop.individuals[..self.config.n_sr]
            .iter()
            .map(|i| i.position.clone())
            .collect()
    }

    fn finish_move(&self, mut x: Vec<f64>) -> Vec<f64> {
        if self.config.clamp_to_bounds {
            self.problem.bounds().clamp(&mut x);
        }
        x
    }

    /// Moves every stream toward its leader (or, under FIWCA, toward all
    /// rivers) and swaps any stream that overtakes its leader.
    pub fn stream_phase(&mut self) {
        let n_sr = self.config.n_sr;
        let c = self.config.c_coef;
        let snapshot = self.leader_positions();
        let rivers: Vec<&[f64]> = snapshot[1..].iter().map(Vec::as_slice).collect();
        let mut proposals = Vec::with_capacity(self.pop.individuals.len() - n_sr);
        for s in n_sr..self.pop.individuals.len() {
            let l = self.pop.leader[s];
            let x = &self.pop.individuals[s].position;
            let moved = if l == 0 || self.config.algorithm == Algorithm::Wca {
                move_toward(x, &snapshot[l], c, &mut self.rng)
            } else {
                fiwca_stream_update(x, &rivers, c, self.config.fiwca_normalize_informants, &mut self.rng)
            };
            proposals.push(self.finish_move(moved));
        }
        let assessments = self.evaluate_all(&proposals);
        let eps = self.eps();
        for (k, (position, assessment)) in proposals.into_iter().zip(assessments).enumerate() {
            let s = n_sr + k;
            self.pop.individuals[s].position = position;
            self.pop.individuals[s].assessment = assessment;
            let l = self.pop.leader[s];
            if beats(&self.pop.individuals[s], &self.pop.individuals[l], eps) {
                self.pop.swap_members(s, l);
                if l != 0 && beats(&self.pop.individuals[l], &self.pop.individuals[0], eps) {
                    self.pop.swap_members(l, 0);
                }
            }
        }
    }

    /// Moves every river toward the sea (and, under FIWCA, toward the other
    /// rivers); a river that overtakes the sea becomes the sea.
    pub fn river_phase(&mut self) {
        let n_sr = self.config.n_sr;
        let c = self.config.c_coef;
        let snapshot = self.leader_positions();
        let mut proposals = Vec::with_capacity(n_sr - 1);
        for r in 1..n_sr {
            let x = &snapshot[r];
            let moved = match self.config.algorithm {
                Algorithm::Wca => move_toward(x, &snapshot[0], c, &mut self.rng),
                Algorithm::Fiwca => {
                    let others: Vec<&[f64]> = (1..n_sr).filter(|&j| j != r).map(|j| snapshot[j].as_slice()).collect();
                    fiwca_river_update(
                        x,
                        &snapshot[0],
                        &others,
                        c,
                        self.config.fiwca_normalize_informants,
                        &mut self.rng,
                    )
                }
            };
            proposals.push(self.finish_move(moved));
        }
        let assessments = self.evaluate_all(&proposals);
        let eps = self.eps();
        for (k, (position, assessment)) in proposals.into_iter().zip(assessments).enumerate() {
            let r = 1 + k;
            self.pop.individuals[r].position = position;
            self.pop.individuals[r].assessment = assessment;
            if beats(&self.pop.individuals[r], &self.pop.individuals[0], eps) {
                self.pop.swap_members(r, 0);
            }
        }
    }

    /// Regenerates rivers that came too close to the sea (or lost the
    /// evaporation draw) together with their streams, and sea-bound streams
    /// within `d_max` of the sea.
    pub fn evaporate(&mut self) {
        let n_sr = self.config.n_sr;
        let n_pop = self.pop.individuals.len();
        let (lb, ub) = {
            let b = self.problem.bounds();
            (b.lb.clone(), b.ub.clone())
        };
        let d_max = self.pop.d_max;
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for r in 1..n_sr {
            let draw = self.rng.unit();
            let dist = normalized_distance(
                &self.pop.individuals[r].position,
                &self.pop.individuals[0].position,
                &lb,
                &ub,
            );
            if dist < d_max || draw < EVAPORATION_RATE {
                let mut slots = vec![r];
                slots.extend((n_sr..n_pop).filter(|&s| self.pop.leader[s] == r));
                groups.push(slots);
            }
        }
        let sea_bound: Vec<usize> = (n_sr..n_pop)
            .filter(|&s| {
                self.pop.leader[s] == 0
                    && normalized_distance(
                        &self.pop.individuals[s].position,
                        &self.pop.individuals[0].position,
                        &lb,
                        &ub,
                    ) < d_max
            })
            .collect();
        let slots: Vec<usize> = groups
            .iter()
            .flatten()
            .copied()
            .chain(sea_bound.iter().copied())
            .collect();
        if slots.is_empty() {
            return;
        }
        let positions: Vec<Vec<f64>> = slots.iter().map(|_| precipitate(&lb, &ub, &mut self.rng)).collect();
        let assessments = self.evaluate_all(&positions);
        for ((&slot, position), assessment) in slots.iter().zip(positions).zip(assessments) {
            self.pop.individuals[slot].position = position;
            self.pop.individuals[slot].assessment = assessment;
        }
        let eps = self.eps();
        for group in &groups {
            let best = group
                .iter()
                .copied()
                .reduce(|best, s| {
                    if beats(&self.pop.individuals[s], &self.pop.individuals[best], eps) {
                        s
                    } else {
                        best
                    }
                })
                .expect("group holds its river");
            let river = group[0];
            self.pop.swap_members(best, river);
            if beats(&self.pop.individuals[river], &self.pop.individuals[0], eps) {
                self.pop.swap_members(river, 0);
            }
        }
        for &s in &sea_bound {
            if beats(&self.pop.individuals[s], &self.pop.individuals[0], eps) {
                self.pop.swap_members(s, 0);
            }
        }
    }

    /// One full iteration: stream and river phases, evaporation, d_max decay, re-ranking.
    pub fn step(&mut self) {
        self.stream_phase();
        self.river_phase();
        self.evaporate();
        self.pop.d_max = decay_dmax(self.pop.d_max, self.config.max_iter);
        self.pop.iteration += 1;
        self.classify();
        self.push_trace();
    }

    fn push_trace(&mut self) {
        let a = &self.archive.assessment;
        self.series.push(self.best_fitness);
        self.trace.push(TraceRow {
            iteration: self.pop.iteration,
            best_fitness: self.best_fitness,
            best_feasible_objective: (a.violation <= EPS_END).then_some(a.objective),
            violation: a.violation,
            detail: a.detail.clone(),
        });
    }

    pub fn into_report(self, wall_time: f64) -> RunReport<P::Detail> {
        RunReport {
            algorithm: self.config.algorithm,
            seed: self.config.seed,
            best_fitness_per_iteration: self.series,
            trace: self.trace,
            best_individual: self.archive,
            evaluations_used: self.evaluations,
            wall_time,
        }
    }
}

/// Runs the configured algorithm for `max_iter` iterations from `config.seed`.
pub fn run<P: Problem>(problem: &P, config: &OptimizerConfig) -> Result<RunReport<P::Detail>, WcaError> {
    run_with(problem, config, ChaCha8Rng::seed_from_u64(config.seed))
}

/// Like [`run`] with an explicit source of randomness.
pub fn run_with<P: Problem, R: UnitDraw>(
    problem: &P,
    config: &OptimizerConfig,
    rng: R,
) -> Result<RunReport<P::Detail>, WcaError> {
    let start = Instant::now();
    let mut engine = Engine::new(problem, config.clone(), rng)?;
    for _ in 0..config.max_iter {
        engine.step();
    }
    Ok(engine.into_report(start.elapsed().as_secs_f64()))
}
