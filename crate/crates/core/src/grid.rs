//! Grid data model, case-file loading and control-vector encoding.
//!
//! A [`NetworkCase`] is the static description of a transmission network.
//! Optimizers never touch it directly: they work on a flat [`ControlVector`]
//! whose entries are mapped onto the network by a [`ControlLayout`], and
//! [`apply_controls`] turns that vector into a [`CaseInstance`] that the
//! power-flow solver consumes.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const IEEE30_JSON: &str = include_str!("../data/cases/ieee30.json");
const IEEE57_JSON: &str = include_str!("../data/cases/ieee57.json");

/// Names accepted by [`load_case`] without touching the filesystem.
pub const BUILTIN_CASES: [&str; 2] = ["ieee30", "ieee57"];

#[derive(Debug, Error)]
pub enum GridError {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("case schema violation: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("network is disconnected: bus {0} cannot be reached from the slack bus")]
    Disconnected(usize),
    #[error("control vector has {got} entries, layout expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> GridError {
    GridError::InvalidField {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// MW
    pub demand_p: f64,
    /// MVAR
    pub demand_q: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Fixed shunt conductance, MW consumed at 1.0 p.u.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub gs: f64,
    /// Fixed shunt susceptance, MVAR injected at 1.0 p.u.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub bs: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapSpec {
    /// Off-nominal ratio of the archive operating point, applied at the from-bus side.
    pub ratio: f64,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub resistance: f64,
    pub reactance: f64,
    /// Total line-charging susceptance, p.u.
    pub line_charging_b: f64,
    /// Apparent power rating in MVA. `None` leaves the branch unconstrained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_limit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap: Option<TapSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Voltage set-point of the archive operating point.
    pub v_set: f64,
    /// Active-power set-point of the archive operating point. Ignored for the slack unit.
    #[serde(default)]
    pub p_set: f64,
    #[serde(skip)]
    pub is_slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuntCompensator {
    pub bus: usize,
    pub q_min: f64,
    pub q_max: f64,
    /// Installed MVAR of the archive operating point.
    #[serde(default)]
    pub q_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub shunts: Vec<ShuntCompensator>,
    #[serde(skip)]
    index: HashMap<usize, usize>,
}

impl NetworkCase {
    /// Parses and validates a case from its JSON text.
    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let mut case: NetworkCase = serde_json::from_str(text)?;
        case.finalize()?;
        Ok(case)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    /// Rebuilds derived lookups and runs every structural check.
    pub fn finalize(&mut self) -> Result<(), GridError> {
        self.index = self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        if self.index.len() != self.buses.len() {
            return Err(invalid("buses.id", "bus ids must be unique"));
        }
        let slack_ids: Vec<usize> = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .collect();
        for g in &mut self.generators {
            g.is_slack = slack_ids.contains(&g.bus);
        }
        self.validate()
    }

    fn validate(&self) -> Result<(), GridError> {
        if !(self.base_mva > 0.0) {
            return Err(invalid("base_mva", "must be positive"));
        }
        if self.buses.is_empty() {
            return Err(invalid("buses", "case has no buses"));
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return Err(invalid(
                "buses.kind",
                format!("exactly one slack bus required, found {slacks}"),
            ));
        }
        for b in &self.buses {
            if !(b.v_min < b.v_max) {
                return Err(invalid(format!("buses[{}].v_min", b.id), "v_min must be below v_max"));
            }
            if b.demand_p < 0.0 || b.demand_q < 0.0 {
                return Err(invalid(
                    format!("buses[{}].demand_p", b.id),
                    "demands must be nonnegative",
                ));
            }
        }
        for (k, br) in self.branches.iter().enumerate() {
            let field = |f: &str| format!("branches[{k}].{f}");
            for bus in [br.from_bus, br.to_bus] {
                if !self.index.contains_key(&bus) {
                    return Err(invalid(field("from_bus"), format!("unknown bus {bus}")));
                }
            }
            if br.from_bus == br.to_bus {
                return Err(invalid(field("to_bus"), "branch must join two buses"));
            }
            if br.reactance == 0.0 {
                return Err(invalid(field("reactance"), "must be nonzero"));
            }
            if let Some(limit) = br.flow_limit {
                if !(limit > 0.0) {
                    return Err(invalid(field("flow_limit"), "must be positive"));
                }
            }
            if let Some(tap) = br.tap {
                if !(0.0 < tap.t_min && tap.t_min < tap.t_max) {
                    return Err(invalid(field("tap"), "require 0 < t_min < t_max"));
                }
                if !(tap.ratio > 0.0) {
                    return Err(invalid(field("tap.ratio"), "must be positive"));
                }
            }
        }
        let mut gen_buses = Vec::new();
        for (k, g) in self.generators.iter().enumerate() {
            let field = |f: &str| format!("generators[{k}].{f}");
            let Some(&bi) = self.index.get(&g.bus) else {
                return Err(invalid(field("bus"), format!("unknown bus {}", g.bus)));
            };
            if self.buses[bi].kind == BusKind::Load {
                return Err(invalid(field("bus"), "generator sits on a load bus"));
            }
            if gen_buses.contains(&g.bus) {
                return Err(invalid(field("bus"), "one generator per bus"));
            }
            gen_buses.push(g.bus);
            if !(g.p_min < g.p_max) {
                return Err(invalid(field("p_min"), "p_min must be below p_max"));
            }
            if !(g.q_min < g.q_max) {
                return Err(invalid(field("q_min"), "q_min must be below q_max"));
            }
            if !(g.v_min < g.v_max) {
                return Err(invalid(field("v_min"), "v_min must be below v_max"));
            }
        }
        for b in &self.buses {
            if b.kind != BusKind::Load && !gen_buses.contains(&b.id) {
                return Err(invalid(
                    format!("buses[{}].kind", b.id),
                    "voltage-controlled bus has no generator",
                ));
            }
        }
        for (k, s) in self.shunts.iter().enumerate() {
            if !self.index.contains_key(&s.bus) {
                return Err(invalid(format!("shunts[{k}].bus"), format!("unknown bus {}", s.bus)));
            }
            if s.q_min > s.q_max {
                return Err(invalid(format!("shunts[{k}].q_min"), "q_min exceeds q_max"));
            }
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            let (f, t) = (self.index[&br.from_bus], self.index[&br.to_bus]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.slack_index()]);
        seen[self.slack_index()] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(GridError::Disconnected(self.buses[i].id)),
            None => Ok(()),
        }
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn slack_generator(&self) -> usize {
        self.generators
            .iter()
            .position(|g| g.is_slack)
            .expect("validated case has a slack generator")
    }

    pub fn total_demand_p(&self) -> f64 {
        self.buses.iter().map(|b| b.demand_p).sum()
    }

    pub fn total_demand_q(&self) -> f64 {
        self.buses.iter().map(|b| b.demand_q).sum()
    }

    pub fn tapped_branches(&self) -> impl Iterator<Item = (usize, &Branch)> {
        self.branches.iter().enumerate().filter(|(_, b)| b.tap.is_some())
    }
}

/// Loads a case from a bundled name (`ieee30`, `ieee57`) or a JSON file path.
pub fn load_case(path_or_builtin_name: &str) -> Result<NetworkCase, GridError> {
    match path_or_builtin_name {
        "ieee30" => NetworkCase::from_json(IEEE30_JSON),
        "ieee57" => NetworkCase::from_json(IEEE57_JSON),
        path => {
            let text = std::fs::read_to_string(Path::new(path)).map_err(|source| GridError::Io {
                path: path.to_string(),
                source,
            })?;
            NetworkCase::from_json(&text)
        }
    }
}

/// Scenario-specific adjustments to the control bounds and security limits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundOverrides {
    /// Caps every generator voltage set-point.
    #[serde(default)]
    pub gen_v_max: Option<f64>,
    /// Caps every load-bus voltage limit.
    #[serde(default)]
    pub load_v_max: Option<f64>,
    /// Drops the shunt compensators from the control vector; they inject nothing.
    #[serde(default)]
    pub without_shunts: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ControlSlot {
    /// Active power of a non-slack generator, MW.
    GenP(usize),
    /// Voltage set-point of a generator, p.u.
    GenV(usize),
    /// Off-nominal ratio of a tapped branch.
    Tap(usize),
    /// Shunt compensator output, MVAR.
    Shunt(usize),
}

/// Maps control-vector positions to physical controls.
///
/// Ordering is fixed: non-slack generator P by ascending bus id, generator V
/// by ascending bus id, taps in case branch order, shunts by ascending bus id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLayout {
    pub slots: Vec<ControlSlot>,
}

impl ControlLayout {
    pub fn new(case: &NetworkCase, overrides: &BoundOverrides) -> Self {
        let mut gens: Vec<usize> = (0..case.generators.len()).collect();
        gens.sort_by_key(|&g| case.generators[g].bus);
        let mut slots: Vec<ControlSlot> = gens
            .iter()
            .filter(|&&g| !case.generators[g].is_slack)
            .map(|&g| ControlSlot::GenP(g))
            .collect();
        slots.extend(gens.iter().map(|&g| ControlSlot::GenV(g)));
        slots.extend(case.tapped_branches().map(|(k, _)| ControlSlot::Tap(k)));
        if !overrides.without_shunts {
            let mut shunts: Vec<usize> = (0..case.shunts.len()).collect();
            shunts.sort_by_key(|&s| case.shunts[s].bus);
            slots.extend(shunts.into_iter().map(ControlSlot::Shunt));
        }
        Self { slots }
    }

    pub fn dimension(&self) -> usize {
        self.slots.len()
    }

    /// Human-readable label per slot, e.g. `P_G2`, `T_6-9`, `Q_C10`.
    pub fn labels(&self, case: &NetworkCase) -> Vec<String> {
        self.slots
            .iter()
            .map(|slot| match *slot {
                ControlSlot::GenP(g) => format!("P_G{}", case.generators[g].bus),
                ControlSlot::GenV(g) => format!("V_G{}", case.generators[g].bus),
                ControlSlot::Tap(k) => {
                    let b = &case.branches[k];
                    format!("T_{}-{}", b.from_bus, b.to_bus)
                }
                ControlSlot::Shunt(s) => format!("Q_C{}", case.shunts[s].bus),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    pub values: Vec<f64>,
}

impl ControlVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsVector {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl BoundsVector {
    pub fn new(lb: Vec<f64>, ub: Vec<f64>) -> Self {
        assert_eq!(lb.len(), ub.len(), "bound vectors differ in length");
        Self { lb, ub }
    }

    pub fn dimension(&self) -> usize {
        self.lb.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lb.iter().zip(&self.ub))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lb.iter().zip(&self.ub)) {
            *v = v.clamp(*l, *u);
        }
    }
}

/// Bounds in layout order with scenario overrides applied.
pub fn control_bounds(case: &NetworkCase, layout: &ControlLayout, overrides: &BoundOverrides) -> BoundsVector {
    let (lb, ub) = layout
        .slots
        .iter()
        .map(|slot| match *slot {
            ControlSlot::GenP(g) => (case.generators[g].p_min, case.generators[g].p_max),
            ControlSlot::GenV(g) => {
                let g = &case.generators[g];
                let hi = overrides.gen_v_max.map_or(g.v_max, |cap| g.v_max.min(cap));
                (g.v_min, hi)
            }
            ControlSlot::Tap(k) => {
                let tap = case.branches[k].tap.expect("tap slot on tapped branch");
                (tap.t_min, tap.t_max)
            }
            ControlSlot::Shunt(s) => (case.shunts[s].q_min, case.shunts[s].q_max),
        })
        .unzip();
    BoundsVector { lb, ub }
}

/// A network with concrete control settings installed.
#[derive(Debug, Clone)]
pub struct CaseInstance<'a> {
    pub case: &'a NetworkCase,
    /// MW per generator. The slack entry is a placeholder until a power flow fills it.
    pub gen_p: Vec<f64>,
    pub gen_v: Vec<f64>,
    /// Off-nominal ratio per branch (1.0 on untapped branches).
    pub taps: Vec<f64>,
    /// MVAR per shunt compensator.
    pub shunt_q: Vec<f64>,
    /// Optional override of the load-bus voltage ceiling used by security checks.
    pub load_v_max: Option<f64>,
}

impl<'a> CaseInstance<'a> {
    /// The archive operating point of the case.
    pub fn base(case: &'a NetworkCase) -> Self {
        Self {
            case,
            gen_p: case.generators.iter().map(|g| g.p_set).collect(),
            gen_v: case.generators.iter().map(|g| g.v_set).collect(),
            taps: case.branches.iter().map(|b| b.tap.map_or(1.0, |t| t.ratio)).collect(),
            shunt_q: case.shunts.iter().map(|s| s.q_set).collect(),
            load_v_max: None,
        }
    }

    /// Reads the layout's controls back out of the instance.
    pub fn encode(&self, layout: &ControlLayout) -> ControlVector {
        ControlVector::new(
            layout
                .slots
                .iter()
                .map(|slot| match *slot {
                    ControlSlot::GenP(g) => self.gen_p[g],
                    ControlSlot::GenV(g) => self.gen_v[g],
                    ControlSlot::Tap(k) => self.taps[k],
                    ControlSlot::Shunt(s) => self.shunt_q[s],
                })
                .collect(),
        )
    }
}

/// Installs `u` on top of the archive operating point. Out-of-bound entries pass through.
pub fn apply_controls<'a>(
    case: &'a NetworkCase,
    layout: &ControlLayout,
    overrides: &BoundOverrides,
    u: &[f64],
) -> Result<CaseInstance<'a>, GridError> {
    if u.len() != layout.dimension() {
        return Err(GridError::DimensionMismatch {
            expected: layout.dimension(),
            got: u.len(),
        });
    }
    let mut inst = CaseInstance::base(case);
    if overrides.without_shunts {
        inst.shunt_q.iter_mut().for_each(|q| *q = 0.0);
    }
    inst.load_v_max = overrides.load_v_max;
    for (slot, &v) in layout.slots.iter().zip(u) {
        match *slot {
            ControlSlot::GenP(g) => inst.gen_p[g] = v,
            ControlSlot::GenV(g) => inst.gen_v[g] = v,
            ControlSlot::Tap(k) => inst.taps[k] = v,
            ControlSlot::Shunt(s) => inst.shunt_q[s] = v,
        }
    }
    Ok(inst)
}
