//! Day-long schedules: 24 independent single-period OPF runs with scaled
//! demand and renewable injections modeled as negative load.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::NetworkCase;
use crate::objectives::{Evaluation, ObjectiveError, OpfProblem, ScenarioId, ScenarioSpec};
use crate::wca::{run, OptimizerConfig, WcaError, EPS_END};

pub const HOURS: usize = 24;

/// Buses carrying the synthetic renewable injections.
pub const SYNTHETIC_RENEWABLE_BUSES: [usize; 5] = [7, 12, 19, 21, 30];

#[derive(Debug, Error)]
pub enum MultiPeriodError {
    #[error("profile needs {HOURS} demand multipliers and {HOURS} injection lists, got {scales} and {injections}")]
    Length { scales: usize, injections: usize },
    #[error("hour {hour}: demand multiplier {scale} must be positive and finite")]
    Scale { hour: usize, scale: f64 },
    #[error("hour {hour}: bus {bus} is not in the case")]
    UnknownBus { hour: usize, bus: usize },
    #[error("hour {hour}: injection of {mw} MW at bus {bus} is negative or exceeds the bus demand of {demand} MW")]
    Injection {
        hour: usize,
        bus: usize,
        mw: f64,
        demand: f64,
    },
    #[error("multi-period runs use the 30-bus system; scenario {0} targets another case")]
    NotIeee30(ScenarioId),
    #[error("cannot read profile {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("profile file is malformed: {0}")]
    Schema(#[from] serde_json::Error),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Optimizer(#[from] WcaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub bus: usize,
    pub mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyProfile {
    #[serde(default)]
    pub description: String,
    /// Multiplier on every bus's base P and Q demand, one per hour.
    pub demand_scale: Vec<f64>,
    /// Renewable output per hour, in MW at unity power factor.
    pub renewable_p: Vec<Vec<Injection>>,
}

impl HourlyProfile {
    pub fn from_json(text: &str) -> Result<Self, MultiPeriodError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, MultiPeriodError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MultiPeriodError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    /// Constant demand multiplier, no renewables.
    pub fn flat(scale: f64) -> Self {
        Self {
            description: format!("flat demand at {scale} x base, no renewables"),
            demand_scale: vec![scale; HOURS],
            renewable_p: vec![Vec::new(); HOURS],
        }
    }

    /// Synthetic day: demand swings sinusoidally between 0.7 and 1.1 of base
    /// (trough at 03:00, peak at 15:00) and a solar-shaped injection between
    /// 06:00 and 18:00 covers up to half of the demand at
    /// [`SYNTHETIC_RENEWABLE_BUSES`].
    pub fn synthetic_day(case: &NetworkCase) -> Self {
        let round = |x: f64| (x * 1e4).round() / 1e4;
        let mut demand_scale = Vec::with_capacity(HOURS);
        let mut renewable_p = Vec::with_capacity(HOURS);
        for h in 0..HOURS {
            let phase = 2.0 * std::f64::consts::PI * (h as f64 - 3.0) / HOURS as f64;
            let scale = round(0.9 - 0.2 * phase.cos());
            let sun = (std::f64::consts::PI * (h as f64 - 6.0) / 12.0).sin().max(0.0);
            let hour: Vec<Injection> = if sun > 0.0 {
                SYNTHETIC_RENEWABLE_BUSES
                    .iter()
                    .filter_map(|&bus| {
                        let i = case.bus_index(bus)?;
                        Some(Injection {
                            bus,
                            mw: round(0.5 * sun * scale * case.buses[i].demand_p),
                        })
                    })
                    .collect()
            } else {
                Vec::new()
            };
            demand_scale.push(scale);
            renewable_p.push(hour);
        }
        Self {
            description: "synthetic day: sinusoidal demand 0.7-1.1 of base, midday solar at five load buses".into(),
            demand_scale,
            renewable_p,
        }
    }

    /// Same demand, every injection removed.
    pub fn without_renewables(&self) -> Self {
        Self {
            description: format!("{} (renewables removed)", self.description),
            demand_scale: self.demand_scale.clone(),
            renewable_p: vec![Vec::new(); self.demand_scale.len()],
        }
    }

    pub fn renewable_mw(&self, hour: usize) -> f64 {
        self.renewable_p[hour].iter().map(|i| i.mw).sum()
    }

    pub fn validate(&self, case: &NetworkCase) -> Result<(), MultiPeriodError> {
        if self.demand_scale.len() != HOURS || self.renewable_p.len() != HOURS {
            return Err(MultiPeriodError::Length {
                scales: self.demand_scale.len(),
                injections: self.renewable_p.len(),
            });
        }
        for (hour, (&scale, injections)) in self.demand_scale.iter().zip(&self.renewable_p).enumerate() {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(MultiPeriodError::Scale { hour, scale });
            }
            for inj in injections {
                let i = case
                    .bus_index(inj.bus)
                    .ok_or(MultiPeriodError::UnknownBus { hour, bus: inj.bus })?;
                // several entries may target the same bus
                let at_bus: f64 = injections.iter().filter(|j| j.bus == inj.bus).map(|j| j.mw).sum();
                let demand = scale * case.buses[i].demand_p;
                if inj.mw < 0.0 || !inj.mw.is_finite() || at_bus > demand + 1e-9 {
                    return Err(MultiPeriodError::Injection {
                        hour,
                        bus: inj.bus,
                        mw: at_bus,
                        demand,
                    });
                }
            }
        }
        Ok(())
    }

    /// The network as seen in `hour`: scaled demand minus renewable output.
    pub fn hour_case(&self, case: &NetworkCase, hour: usize) -> NetworkCase {
        let scale = self.demand_scale[hour];
        let mut out = case.clone();
        for bus in &mut out.buses {
            bus.demand_p *= scale;
            bus.demand_q *= scale;
        }
        for inj in &self.renewable_p[hour] {
            let i = out.bus_index(inj.bus).expect("validated profile");
            out.buses[i].demand_p -= inj.mw;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HourOutcome {
    pub hour: usize,
    pub demand_scale: f64,
    /// MW, after scaling and before renewables
    pub demand_mw: f64,
    pub renewable_mw: f64,
    pub seed: u64,
    pub controls: Vec<f64>,
    pub evaluation: Evaluation,
}

impl HourOutcome {
    pub fn feasible(&self) -> bool {
        self.evaluation.violation_total <= EPS_END
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DayTotals {
    /// $
    pub fuel: f64,
    /// MWh
    pub loss: f64,
    /// ton
    pub emission: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Schedule {
    pub hours: Vec<HourOutcome>,
    pub totals: DayTotals,
    pub infeasible_hours: usize,
}

impl Schedule {
    fn from_hours(hours: Vec<HourOutcome>) -> Self {
        let mut totals = DayTotals::default();
        for h in &hours {
            totals.fuel += h.evaluation.fuel_cost;
            totals.loss += h.evaluation.loss;
            totals.emission += h.evaluation.emission;
        }
        let infeasible_hours = hours.iter().filter(|h| !h.feasible()).count();
        Self {
            hours,
            totals,
            infeasible_hours,
        }
    }
}

/// Percent reduction of the renewable run relative to the paired baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    pub fuel_pct: f64,
    pub loss_pct: f64,
    pub emission_pct: f64,
}

fn pct_drop(base: f64, with: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        100.0 * (base - with) / base
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleReport {
    pub scenario: ScenarioId,
    pub base_seed: u64,
    pub with_renewables: Schedule,
    pub without_renewables: Schedule,
    pub savings: Savings,
}

impl ScheduleReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per hour and run, followed by one totals row per run.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "run",
            "hour",
            "demand_mw",
            "renewable_mw",
            "fuel",
            "loss",
            "emission",
            "vd",
            "violation",
            "feasible",
        ])?;
        for (label, schedule) in [
            ("renewables", &self.with_renewables),
            ("baseline", &self.without_renewables),
        ] {
            for h in &schedule.hours {
                let e = &h.evaluation;
                w.write_record([
                    label.to_string(),
                    h.hour.to_string(),
                    h.demand_mw.to_string(),
                    h.renewable_mw.to_string(),
                    e.fuel_cost.to_string(),
                    e.loss.to_string(),
                    e.emission.to_string(),
                    e.vd.to_string(),
                    e.violation_total.to_string(),
                    h.feasible().to_string(),
                ])?;
            }
        }
        for (label, schedule) in [
            ("renewables", &self.with_renewables),
            ("baseline", &self.without_renewables),
        ] {
            let t = schedule.totals;
            w.write_record([
                label.to_string(),
                "total".to_string(),
                String::new(),
                String::new(),
                t.fuel.to_string(),
                t.loss.to_string(),
                t.emission.to_string(),
                String::new(),
                String::new(),
                (schedule.infeasible_hours == 0).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves every hour of `profile` with `config`; hour `h` uses seed `config.seed + h`.
pub fn run_schedule(
    case: &NetworkCase,
    scenario: &ScenarioSpec,
    profile: &HourlyProfile,
    config: &OptimizerConfig,
) -> Result<Schedule, MultiPeriodError> {
    profile.validate(case)?;
    let hours: Vec<usize> = (0..HOURS).collect();
    // each hour's optimizer already evaluates its population in parallel
    let results = config
        .execution
        .map(&hours, |&hour| -> Result<HourOutcome, MultiPeriodError> {
            let hour_case = profile.hour_case(case, hour);
            let problem = OpfProblem::new(hour_case, scenario.clone())?;
            let seed = config.seed.wrapping_add(hour as u64);
            let report = run(&problem, &OptimizerConfig { seed, ..config.clone() })?;
            let controls = report.best_individual.position;
            let evaluation = problem.evaluation(&controls, EPS_END);
            Ok(HourOutcome {
                hour,
                demand_scale: profile.demand_scale[hour],
                demand_mw: case.total_demand_p() * profile.demand_scale[hour],
                renewable_mw: profile.renewable_mw(hour),
                seed,
                controls,
                evaluation,
            })
        });
    Ok(Schedule::from_hours(results.into_iter().collect::<Result<_, _>>()?))
}

/// Runs `profile` and the same profile without renewables under identical seeds.
pub fn run_multiperiod(
    case: &NetworkCase,
    scenario: &ScenarioSpec,
    profile: &HourlyProfile,
    config: &OptimizerConfig,
) -> Result<ScheduleReport, MultiPeriodError> {
    if case.name != "ieee30" {
        return Err(MultiPeriodError::NotIeee30(scenario.id));
    }
    let with_renewables = run_schedule(case, scenario, profile, config)?;
    let without_renewables = run_schedule(case, scenario, &profile.without_renewables(), config)?;
    let (a, b) = (without_renewables.totals, with_renewables.totals);
    let savings = Savings {
        fuel_pct: pct_drop(a.fuel, b.fuel),
        loss_pct: pct_drop(a.loss, b.loss),
        emission_pct: pct_drop(a.emission, b.emission),
    };
    Ok(ScheduleReport {
        scenario: scenario.id,
        base_seed: config.seed,
        with_renewables,
        without_renewables,
        savings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_case;
    use crate::wca::Execution;

    fn tiny(seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            n_pop: 12,
            n_sr: 3,
            max_iter: 3,
            seed,
            execution: Execution::Sequential,
            ..Default::default()
        }
    }

    #[test]
    fn bundled_synthetic_day_matches_generator() {
        let case = load_case("ieee30").unwrap();
        let bundled = HourlyProfile::from_json(include_str!("../data/profiles/synthetic_day.json")).unwrap();
        assert_eq!(bundled, HourlyProfile::synthetic_day(&case));
        bundled.validate(&case).unwrap();
        let lo = bundled.demand_scale.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = bundled.demand_scale.iter().cloned().fold(0.0, f64::max);
        assert_eq!((lo, hi), (0.7, 1.1));
        assert_eq!(bundled.renewable_mw(0), 0.0);
        assert!(bundled.renewable_mw(12) > 0.0);
    }

    #[test]
    fn reverse_flow_is_rejected() {
        let case = load_case("ieee30").unwrap();
        let mut p = HourlyProfile::flat(1.0);
        p.renewable_p[5] = vec![Injection { bus: 7, mw: 22.9 }];
        assert!(matches!(
            p.validate(&case),
            Err(MultiPeriodError::Injection { hour: 5, bus: 7, .. })
        ));
        // split across two entries
        p.renewable_p[5] = vec![Injection { bus: 7, mw: 12.0 }, Injection { bus: 7, mw: 12.0 }];
        assert!(p.validate(&case).is_err());
        p.renewable_p[5] = vec![Injection { bus: 7, mw: 22.8 }];
        p.validate(&case).unwrap();
    }

    #[test]
    fn bad_profiles_are_rejected() {
        let case = load_case("ieee30").unwrap();
        let mut p = HourlyProfile::flat(1.0);
        p.demand_scale.pop();
        assert!(matches!(p.validate(&case), Err(MultiPeriodError::Length { .. })));
        let mut p = HourlyProfile::flat(1.0);
        p.demand_scale[3] = 0.0;
        assert!(matches!(
            p.validate(&case),
            Err(MultiPeriodError::Scale { hour: 3, .. })
        ));
        let mut p = HourlyProfile::flat(1.0);
        p.renewable_p[0] = vec![Injection { bus: 99, mw: 1.0 }];
        assert!(matches!(
            p.validate(&case),
            Err(MultiPeriodError::UnknownBus { bus: 99, .. })
        ));
    }

    #[test]
    fn hour_case_scales_then_subtracts() {
        let case = load_case("ieee30").unwrap();
        let mut p = HourlyProfile::flat(0.5);
        p.renewable_p[2] = vec![Injection { bus: 21, mw: 3.0 }];
        let h = p.hour_case(&case, 2);
        let i = case.bus_index(21).unwrap();
        assert!((h.buses[i].demand_p - (0.5 * 17.5 - 3.0)).abs() < 1e-12);
        assert!((h.buses[i].demand_q - 0.5 * case.buses[i].demand_q).abs() < 1e-12);
        assert!((h.total_demand_p() - (0.5 * 283.4 - 3.0)).abs() < 1e-9);
    }

    #[test]
    fn totals_are_hourly_sums() {
        let case = load_case("ieee30").unwrap();
        let scenario = ScenarioSpec::builtin(ScenarioId::C1);
        let profile = HourlyProfile::synthetic_day(&case);
        let report = run_multiperiod(&case, &scenario, &profile, &tiny(7)).unwrap();
        for s in [&report.with_renewables, &report.without_renewables] {
            assert_eq!(s.hours.len(), HOURS);
            let fuel: f64 = s.hours.iter().map(|h| h.evaluation.fuel_cost).sum();
            let loss: f64 = s.hours.iter().map(|h| h.evaluation.loss).sum();
            assert_eq!(s.totals.fuel, fuel);
            assert_eq!(s.totals.loss, loss);
        }
        let seeds: Vec<u64> = report.with_renewables.hours.iter().map(|h| h.seed).collect();
        assert_eq!(seeds, (7..7 + HOURS as u64).collect::<Vec<_>>());

        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * HOURS + 2);
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["with_renewables"]["hours"].as_array().unwrap().len(), HOURS);
    }

    #[test]
    fn rejects_57_bus() {
        let scenario = ScenarioSpec::builtin(ScenarioId::B57);
        let case = scenario.case().unwrap();
        let err = run_multiperiod(&case, &scenario, &HourlyProfile::flat(1.0), &tiny(0)).unwrap_err();
        assert!(matches!(err, MultiPeriodError::NotIeee30(ScenarioId::B57)));
    }
}
