//! Cost, emission and voltage-deviation objectives plus the penalized fitness
//! used by the optimizers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{
    apply_controls, control_bounds, load_case, BoundOverrides, BoundsVector, BusKind, CaseInstance, ControlLayout,
    GridError, NetworkCase,
};
use crate::powerflow::{
    dependent_violations, solve_power_flow, PowerFlowSolution, ViolationReport, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE,
    NONCONVERGED_VIOLATION,
};
use crate::wca::{Assessment, Problem, EPS_END};

/// Multiplier applied to the normalized violation total.
pub const PENALTY: f64 = 1e7;

/// Fitness and objective assigned when the power flow does not converge.
pub const FITNESS_SENTINEL: f64 = PENALTY * NONCONVERGED_VIOLATION;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("unknown scenario `{0}` (expected one of c1, c2, c3, c4, c5, b57)")]
    UnknownScenario(String),
    #[error("scenario file is malformed: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("cannot read scenario file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario {scenario} targets case `{expected}` but `{got}` was supplied")]
    CaseMismatch {
        scenario: ScenarioId,
        expected: String,
        got: String,
    },
    #[error("scenario {0} has no cost entry for the generator at bus {1}")]
    MissingCost(ScenarioId, usize),
    #[error("scenario {0} lists a cost for bus {1}, which has no generator")]
    UnknownCostBus(ScenarioId, usize),
    #[error("P = {p} MW lies outside every cost segment")]
    OutsideSegments { p: f64 },
    #[error("piecewise segments must be ordered and contiguous")]
    BadSegments,
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    C1,
    C2,
    C3,
    C4,
    C5,
    B57,
}

/// The quantity a scenario is judged on in comparison tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Headline {
    FuelCost,
    VoltageDeviation,
    Emission,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 6] = [Self::C1, Self::C2, Self::C3, Self::C4, Self::C5, Self::B57];

    pub fn headline(self) -> Headline {
        match self {
            Self::C2 => Headline::VoltageDeviation,
            Self::C5 => Headline::Emission,
            _ => Headline::FuelCost,
        }
    }

    pub fn default_case(self) -> &'static str {
        match self {
            Self::B57 => "ieee57",
            _ => "ieee30",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Self::C1 => "c1",
            Self::C2 => "c2",
            Self::C3 => "c3",
            Self::C4 => "c4",
            Self::C5 => "c5",
            Self::B57 => "b57",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key().to_uppercase())
    }
}

impl FromStr for ScenarioId {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|id| id.key().eq_ignore_ascii_case(s))
            .ok_or_else(|| ObjectiveError::UnknownScenario(s.to_string()))
    }
}

impl Headline {
    pub fn label(self) -> &'static str {
        match self {
            Self::FuelCost => "fuel cost ($/h)",
            Self::VoltageDeviation => "voltage deviation (p.u.)",
            Self::Emission => "emission (ton/h)",
        }
    }

    pub fn pick(self, b: &Breakdown) -> f64 {
        match self {
            Self::FuelCost => b.fuel,
            Self::VoltageDeviation => b.vd,
            Self::Emission => b.emission,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl QuadraticCost {
    pub fn at(&self, p: f64) -> f64 {
        self.c0 + self.c1 * p + self.c2 * p * p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSegment {
    pub p_from: f64,
    pub p_to: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl CostSegment {
    fn at(&self, p: f64) -> f64 {
        self.c0 + self.c1 * p + self.c2 * p * p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseCost {
    pub segments: Vec<CostSegment>,
}

impl PiecewiseCost {
    fn check(&self) -> Result<(), ObjectiveError> {
        let ok = !self.segments.is_empty()
            && self.segments.iter().all(|s| s.p_from < s.p_to)
            && self.segments.windows(2).all(|w| w[0].p_to == w[1].p_from);
        if ok {
            Ok(())
        } else {
            Err(ObjectiveError::BadSegments)
        }
    }

    /// Cost on the segment holding `p`; a shared boundary belongs to the lower segment.
    pub fn at(&self, p: f64) -> Result<f64, ObjectiveError> {
        self.segments
            .iter()
            .find(|s| s.p_from <= p && p <= s.p_to)
            .map(|s| s.at(p))
            .ok_or(ObjectiveError::OutsideSegments { p })
    }

    /// Like [`Self::at`], but continues the first/last segment beyond the
    /// declared domain. The slack unit can land outside its limits during a
    /// search; that excess is already penalized as a violation.
    pub fn at_extended(&self, p: f64) -> f64 {
        match self.at(p) {
            Ok(c) => c,
            Err(_) => {
                let first = &self.segments[0];
                if p < first.p_from {
                    first.at(p)
                } else {
                    self.segments[self.segments.len() - 1].at(p)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValvePointCost {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// $/h
    pub d: f64,
    /// rad/MW
    pub e: f64,
    pub p_min: f64,
}

impl ValvePointCost {
    pub fn at(&self, p: f64) -> f64 {
        self.c0 + self.c1 * p + self.c2 * p * p + (self.d * (self.e * (self.p_min - p)).sin()).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitCost {
    Quadratic(QuadraticCost),
    Piecewise(PiecewiseCost),
    ValvePoint(ValvePointCost),
}

impl UnitCost {
    pub fn at(&self, p: f64) -> f64 {
        match self {
            Self::Quadratic(c) => c.at(p),
            Self::Piecewise(c) => c.at_extended(p),
            Self::ValvePoint(c) => c.at(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionCoeffs {
    pub sox0: f64,
    pub sox1: f64,
    pub sox2: f64,
    pub nox_d: f64,
    pub nox_e: f64,
}

impl EmissionCoeffs {
    /// ton/h at `p_pu` on the system base.
    pub fn at(&self, p_pu: f64) -> f64 {
        self.sox0 + self.sox1 * p_pu + self.sox2 * p_pu * p_pu + self.nox_d * (self.nox_e * p_pu).exp()
    }
}

pub fn fuel_cost_quadratic(p: &[f64], coeffs: &[QuadraticCost]) -> f64 {
    assert_eq!(p.len(), coeffs.len(), "one coefficient row per generator");
    p.iter().zip(coeffs).map(|(&p, c)| c.at(p)).sum()
}

/// Sum of piecewise costs; errors if any P falls outside its unit's segments.
pub fn fuel_cost_piecewise(p: &[f64], units: &[PiecewiseCost]) -> Result<f64, ObjectiveError> {
    assert_eq!(p.len(), units.len(), "one segment list per generator");
    p.iter().zip(units).map(|(&p, u)| u.at(p)).sum()
}

pub fn fuel_cost_valve_point(p: &[f64], coeffs: &[ValvePointCost]) -> f64 {
    assert_eq!(p.len(), coeffs.len(), "one coefficient row per generator");
    p.iter().zip(coeffs).map(|(&p, c)| c.at(p)).sum()
}

/// ton/h for MW outputs `p`, coefficients applied on a 100 MVA base.
pub fn emission(p: &[f64], model: &[EmissionCoeffs]) -> f64 {
    assert_eq!(p.len(), model.len(), "one emission row per generator");
    p.iter().zip(model).map(|(&p, c)| c.at(p / 100.0)).sum()
}

/// Σ |V − 1| over load buses.
pub fn voltage_deviation(solution: &PowerFlowSolution, case: &NetworkCase) -> f64 {
    case.buses
        .iter()
        .zip(&solution.v_mag)
        .filter(|(b, _)| b.kind == BusKind::Load)
        .map(|(_, v)| (v - 1.0).abs())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitCostEntry {
    pub bus: usize,
    pub cost: UnitCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionEntry {
    pub bus: usize,
    #[serde(flatten)]
    pub coeffs: EmissionCoeffs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    /// Name of the bundled case the coefficients belong to.
    pub case: String,
    pub description: String,
    pub units: Vec<UnitCostEntry>,
    /// Emission is reported whenever coefficients are present; `tau` decides
    /// whether it enters the objective.
    #[serde(default)]
    pub emission: Vec<EmissionEntry>,
    #[serde(default)]
    pub vd_weight: f64,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub overrides: BoundOverrides,
}

const SCENARIO_FILES: [(ScenarioId, &str); 6] = [
    (ScenarioId::C1, include_str!("../data/scenarios/c1.json")),
    (ScenarioId::C2, include_str!("../data/scenarios/c2.json")),
    (ScenarioId::C3, include_str!("../data/scenarios/c3.json")),
    (ScenarioId::C4, include_str!("../data/scenarios/c4.json")),
    (ScenarioId::C5, include_str!("../data/scenarios/c5.json")),
    (ScenarioId::B57, include_str!("../data/scenarios/b57.json")),
];

impl ScenarioSpec {
    pub fn builtin(id: ScenarioId) -> Self {
        let text = SCENARIO_FILES
            .iter()
            .find(|(k, _)| *k == id)
            .map(|(_, t)| *t)
            .expect("every scenario ships a data file");
        let spec: ScenarioSpec = serde_json::from_str(text).expect("bundled scenario parses");
        assert_eq!(spec.id, id);
        spec
    }

    pub fn from_json(text: &str) -> Result<Self, ObjectiveError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn case(&self) -> Result<NetworkCase, ObjectiveError> {
        Ok(load_case(&self.case)?)
    }
}

/// Quantities reported for every evaluated candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    /// $/h
    pub fuel: f64,
    /// ton/h
    pub emission: f64,
    /// MW
    pub loss: f64,
    /// p.u.
    pub vd: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub objective: f64,
    pub fitness: f64,
    pub fuel_cost: f64,
    pub emission: f64,
    pub loss: f64,
    pub vd: f64,
    pub violation_total: f64,
    pub feasible: bool,
    pub violations: ViolationReport,
    pub solution: PowerFlowSolution,
}

impl Evaluation {
    pub fn breakdown(&self) -> Breakdown {
        Breakdown {
            fuel: self.fuel_cost,
            emission: self.emission,
            loss: self.loss,
            vd: self.vd,
        }
    }
}

/// A scenario bound to a concrete network: layout, bounds and per-generator
/// coefficient rows resolved once.
#[derive(Debug, Clone)]
pub struct OpfProblem {
    pub case: NetworkCase,
    pub scenario: ScenarioSpec,
    pub layout: ControlLayout,
    pub bounds: BoundsVector,
    costs: Vec<UnitCost>,
    emission: Option<Vec<EmissionCoeffs>>,
}

impl OpfProblem {
    /// Binds `scenario` to `case`. The case name must match unless it is a
    /// modified copy (multi-period hours keep the base name).
    pub fn new(case: NetworkCase, scenario: ScenarioSpec) -> Result<Self, ObjectiveError> {
        if case.name != scenario.case {
            return Err(ObjectiveError::CaseMismatch {
                scenario: scenario.id,
                expected: scenario.case.clone(),
                got: case.name.clone(),
            });
        }
        let id = scenario.id;
        for entry in &scenario.units {
            if !case.generators.iter().any(|g| g.bus == entry.bus) {
                return Err(ObjectiveError::UnknownCostBus(id, entry.bus));
            }
            if let UnitCost::Piecewise(pw) = &entry.cost {
                pw.check()?;
            }
        }
        let costs = case
            .generators
            .iter()
            .map(|g| {
                scenario
                    .units
                    .iter()
                    .find(|u| u.bus == g.bus)
                    .map(|u| u.cost.clone())
                    .ok_or(ObjectiveError::MissingCost(id, g.bus))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let emission = if scenario.emission.is_empty() {
            None
        } else {
            Some(
                case.generators
                    .iter()
                    .map(|g| {
                        scenario
                            .emission
                            .iter()
                            .find(|e| e.bus == g.bus)
                            .map(|e| e.coeffs)
                            .ok_or(ObjectiveError::MissingCost(id, g.bus))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            )
        };
        let layout = ControlLayout::new(&case, &scenario.overrides);
        let bounds = control_bounds(&case, &layout, &scenario.overrides);
        Ok(Self {
            case,
            scenario,
            layout,
            bounds,
            costs,
            emission,
        })
    }

    pub fn builtin(id: ScenarioId) -> Result<Self, ObjectiveError> {
        let scenario = ScenarioSpec::builtin(id);
        Self::new(scenario.case()?, scenario)
    }

    pub fn id(&self) -> ScenarioId {
        self.scenario.id
    }

    pub fn fuel_cost(&self, gen_p: &[f64]) -> f64 {
        gen_p.iter().zip(&self.costs).map(|(&p, c)| c.at(p)).sum()
    }

    pub fn emission(&self, gen_p: &[f64]) -> f64 {
        self.emission.as_ref().map_or(0.0, |m| emission(gen_p, m))
    }

    pub fn objective(&self, b: &Breakdown) -> f64 {
        b.fuel + self.scenario.vd_weight * b.vd + self.scenario.tau * b.emission
    }

    pub fn instance<'a>(&'a self, u: &[f64]) -> Result<CaseInstance<'a>, GridError> {
        apply_controls(&self.case, &self.layout, &self.scenario.overrides, u)
    }

    /// Full evaluation of a control vector, including the solved state.
    ///
    /// Panics if `u` does not match the layout dimension.
    pub fn evaluation(&self, u: &[f64], rule3_threshold: f64) -> Evaluation {
        let inst = self.instance(u).expect("control vector matches layout");
        let solution = solve_power_flow(&inst, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)
            .expect("validated case has no degenerate branch");
        let violations = dependent_violations(&solution, &inst);
        let violation_total = violations.total;
        if !solution.converged {
            return Evaluation {
                objective: FITNESS_SENTINEL,
                fitness: FITNESS_SENTINEL,
                fuel_cost: f64::NAN,
                emission: f64::NAN,
                loss: f64::NAN,
                vd: f64::NAN,
                violation_total,
                feasible: false,
                violations,
                solution,
            };
        }
        let breakdown = Breakdown {
            fuel: self.fuel_cost(&solution.gen_p),
            emission: self.emission(&solution.gen_p),
            loss: solution.total_loss,
            vd: voltage_deviation(&solution, &self.case),
        };
        let objective = self.objective(&breakdown);
        Evaluation {
            objective,
            fitness: objective + PENALTY * violation_total,
            fuel_cost: breakdown.fuel,
            emission: breakdown.emission,
            loss: breakdown.loss,
            vd: breakdown.vd,
            violation_total,
            feasible: violation_total <= rule3_threshold,
            violations,
            solution,
        }
    }
}

impl Problem for OpfProblem {
    type Detail = Breakdown;

    fn bounds(&self) -> &BoundsVector {
        &self.bounds
    }

    fn evaluate(&self, x: &[f64]) -> Assessment<Breakdown> {
        let e = self.evaluation(x, EPS_END);
        Assessment {
            objective: e.objective,
            violation: e.violation_total,
            fitness: e.fitness,
            detail: e.breakdown(),
        }
    }
}

/// Evaluates `u` for a scenario on a case. Convenience wrapper around [`OpfProblem`].
pub fn evaluate(
    u: &[f64],
    scenario: &ScenarioSpec,
    case: &NetworkCase,
    rule3_threshold: f64,
) -> Result<Evaluation, ObjectiveError> {
    let problem = OpfProblem::new(case.clone(), scenario.clone())?;
    if u.len() != problem.layout.dimension() {
        return Err(GridError::DimensionMismatch {
            expected: problem.layout.dimension(),
            got: u.len(),
        }
        .into());
    }
    Ok(problem.evaluation(u, rule3_threshold))
}
