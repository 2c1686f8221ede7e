//! Newton–Raphson AC power flow in polar coordinates.
//!
//! Every solve starts flat (V = 1, θ = 0, generator buses at their set-points)
//! and never switches bus types: generator reactive limits, slack limits,
//! load voltages and line ratings are measured afterwards by
//! [`dependent_violations`] so that an optimizer can penalize them.

mod lu;
mod ybus;

use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::grid::{BusKind, CaseInstance};

pub use ybus::{build_admittance, AdmittanceMatrix};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 50;

/// Violation total assigned to a power flow that did not converge.
pub const NONCONVERGED_VIOLATION: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum PowerFlowError {
    #[error("branch {0} has zero impedance")]
    ZeroImpedance(usize),
    #[error("branch {0} has non-positive tap ratio {1}")]
    BadTap(usize, f64),
}

/// The mismatch equations of one instance, with the unknowns ordered as
/// θ of every non-slack bus followed by |V| of every load bus.
#[derive(Debug, Clone)]
pub struct PowerFlowSystem {
    pub y: AdmittanceMatrix,
    /// Bus indices with unknown angle (generator buses then load buses, each ascending).
    pub angle_buses: Vec<usize>,
    /// Bus indices with unknown magnitude.
    pub load_buses: Vec<usize>,
    /// Specified net injection per bus, p.u.
    pub p_spec: Vec<f64>,
    pub q_spec: Vec<f64>,
}

impl PowerFlowSystem {
    pub fn new(inst: &CaseInstance) -> Result<Self, PowerFlowError> {
        let case = inst.case;
        let y = build_admittance(inst)?;
        let base = case.base_mva;
        let mut p_spec: Vec<f64> = case.buses.iter().map(|b| -b.demand_p / base).collect();
        let q_spec: Vec<f64> = case.buses.iter().map(|b| -b.demand_q / base).collect();
        for (g, gen) in case.generators.iter().enumerate() {
            if !gen.is_slack {
                p_spec[case.bus_index(gen.bus).expect("validated")] += inst.gen_p[g] / base;
            }
        }
        let of_kind = |kind: BusKind| {
            case.buses
                .iter()
                .enumerate()
                .filter(move |(_, b)| b.kind == kind)
                .map(|(i, _)| i)
        };
        let mut angle_buses: Vec<usize> = of_kind(BusKind::Generator).collect();
        let load_buses: Vec<usize> = of_kind(BusKind::Load).collect();
        angle_buses.extend(&load_buses);
        Ok(Self {
            y,
            angle_buses,
            load_buses,
            p_spec,
            q_spec,
        })
    }

    pub fn n_unknowns(&self) -> usize {
        self.angle_buses.len() + self.load_buses.len()
    }

    /// Flat start: V = 1 on load buses, generator set-points elsewhere, θ = 0.
    pub fn flat_start(&self, inst: &CaseInstance) -> (Vec<f64>, Vec<f64>) {
        let case = inst.case;
        let mut v = vec![1.0; case.buses.len()];
        for (g, gen) in case.generators.iter().enumerate() {
            v[case.bus_index(gen.bus).expect("validated")] = inst.gen_v[g];
        }
        (v, vec![0.0; case.buses.len()])
    }

    pub fn state(&self, v: &[f64], theta: &[f64]) -> Vec<f64> {
        self.angle_buses
            .iter()
            .map(|&i| theta[i])
            .chain(self.load_buses.iter().map(|&i| v[i]))
            .collect()
    }

    pub fn set_state(&self, x: &[f64], v: &mut [f64], theta: &mut [f64]) {
        let na = self.angle_buses.len();
        for (j, &i) in self.angle_buses.iter().enumerate() {
            theta[i] = x[j];
        }
        for (j, &i) in self.load_buses.iter().enumerate() {
            v[i] = x[na + j];
        }
    }

    /// Calculated injections P_i, Q_i (p.u.) at every bus.
    pub fn injections(&self, v: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.y.n;
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let (mut pi, mut qi) = (0.0, 0.0);
            for k in 0..n {
                let g = self.y.g[i * n + k];
                let b = self.y.b[i * n + k];
                if g == 0.0 && b == 0.0 {
                    continue;
                }
                let (s, c) = (theta[i] - theta[k]).sin_cos();
                pi += v[k] * (g * c + b * s);
                qi += v[k] * (g * s - b * c);
            }
            p[i] = v[i] * pi;
            q[i] = v[i] * qi;
        }
        (p, q)
    }

    /// Mismatch vector (calculated minus specified): ΔP of angle buses, then ΔQ of load buses.
    pub fn mismatch(&self, v: &[f64], theta: &[f64]) -> Vec<f64> {
        let (p, q) = self.injections(v, theta);
        self.angle_buses
            .iter()
            .map(|&i| p[i] - self.p_spec[i])
            .chain(self.load_buses.iter().map(|&i| q[i] - self.q_spec[i]))
            .collect()
    }

    /// Analytic Jacobian of [`Self::mismatch`] with respect to the state, row-major.
    pub fn jacobian(&self, v: &[f64], theta: &[f64]) -> Vec<f64> {
        let (p, q) = self.injections(v, theta);
        let n = self.y.n;
        let na = self.angle_buses.len();
        let m = self.n_unknowns();
        // column of each bus in the θ block and the V block
        let mut col_theta = vec![usize::MAX; n];
        let mut col_v = vec![usize::MAX; n];
        for (j, &i) in self.angle_buses.iter().enumerate() {
            col_theta[i] = j;
        }
        for (j, &i) in self.load_buses.iter().enumerate() {
            col_v[i] = na + j;
        }
        let mut jac = vec![0.0; m * m];
        let rows = self
            .angle_buses
            .iter()
            .map(|&i| (i, true))
            .chain(self.load_buses.iter().map(|&i| (i, false)));
        for (row, (i, is_p)) in rows.enumerate() {
            let out = &mut jac[row * m..(row + 1) * m];
            let gii = self.y.g[i * n + i];
            let bii = self.y.b[i * n + i];
            for k in 0..n {
                let g = self.y.g[i * n + k];
                let b = self.y.b[i * n + k];
                if k == i || (g == 0.0 && b == 0.0) {
                    continue;
                }
                let (s, c) = (theta[i] - theta[k]).sin_cos();
                let gs_bc = g * s - b * c;
                let gc_bs = g * c + b * s;
                if is_p {
                    if col_theta[k] != usize::MAX {
                        out[col_theta[k]] = v[i] * v[k] * gs_bc;
                    }
                    if col_v[k] != usize::MAX {
                        out[col_v[k]] = v[i] * gc_bs;
                    }
                } else {
                    if col_theta[k] != usize::MAX {
                        out[col_theta[k]] = -v[i] * v[k] * gc_bs;
                    }
                    if col_v[k] != usize::MAX {
                        out[col_v[k]] = v[i] * gs_bc;
                    }
                }
            }
            let vi = v[i];
            if is_p {
                out[col_theta[i]] = -q[i] - bii * vi * vi;
                if col_v[i] != usize::MAX {
                    out[col_v[i]] = p[i] / vi + gii * vi;
                }
            } else {
                out[col_theta[i]] = p[i] - gii * vi * vi;
                out[col_v[i]] = q[i] / vi - bii * vi;
            }
        }
        jac
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    /// radians
    pub v_ang: Vec<f64>,
    /// MW, the slack unit's output.
    pub slack_p: f64,
    /// MW per generator, slack included.
    pub gen_p: Vec<f64>,
    /// MVAR per generator.
    pub gen_q: Vec<f64>,
    /// MVA per branch, larger of the two ends.
    pub branch_s: Vec<f64>,
    /// MW
    pub total_loss: f64,
    pub converged: bool,
    pub iterations: usize,
    /// p.u.
    pub max_mismatch: f64,
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter()
        .fold(0.0_f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Solves the instance from a flat start.
pub fn solve_power_flow(inst: &CaseInstance, tol: f64, max_iter: usize) -> Result<PowerFlowSolution, PowerFlowError> {
    let system = PowerFlowSystem::new(inst)?;
    let (mut v, mut theta) = system.flat_start(inst);
    let mut iterations = 0;
    let mut f = system.mismatch(&v, &theta);
    let mut worst = max_abs(&f);
    let mut converged = worst < tol;
    while !converged && iterations < max_iter && worst.is_finite() {
        let mut jac = system.jacobian(&v, &theta);
        let mut dx: Vec<f64> = f.iter().map(|x| -x).collect();
        if lu::solve_in_place(&mut jac, &mut dx).is_err() {
            break;
        }
        let mut x = system.state(&v, &theta);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        system.set_state(&x, &mut v, &mut theta);
        iterations += 1;
        f = system.mismatch(&v, &theta);
        worst = max_abs(&f);
        converged = worst < tol;
    }
    Ok(finish(inst, &system, v, theta, converged, iterations, worst))
}

fn finish(
    inst: &CaseInstance,
    system: &PowerFlowSystem,
    v_mag: Vec<f64>,
    v_ang: Vec<f64>,
    converged: bool,
    iterations: usize,
    max_mismatch: f64,
) -> PowerFlowSolution {
    let case = inst.case;
    let base = case.base_mva;
    let (p, q) = system.injections(&v_mag, &v_ang);
    let mut gen_p = inst.gen_p.clone();
    let gen_q: Vec<f64> = case
        .generators
        .iter()
        .map(|g| {
            let i = case.bus_index(g.bus).expect("validated");
            q[i] * base + case.buses[i].demand_q
        })
        .collect();
    let slack = case.slack_generator();
    let si = case.slack_index();
    let slack_p = p[si] * base + case.buses[si].demand_p;
    gen_p[slack] = slack_p;
    let total_loss = gen_p.iter().sum::<f64>() - case.total_demand_p();
    let branch_s = branch_flows_from(inst, &v_mag, &v_ang)
        .iter()
        .map(|f| f.s_from.norm().max(f.s_to.norm()))
        .collect();
    PowerFlowSolution {
        v_mag,
        v_ang,
        slack_p,
        gen_p,
        gen_q,
        branch_s,
        total_loss,
        converged: converged && max_mismatch.is_finite(),
        iterations,
        max_mismatch,
    }
}

/// Complex power entering a branch at each end, MVA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchFlow {
    pub s_from: Complex64,
    pub s_to: Complex64,
}

impl BranchFlow {
    pub fn magnitude(&self) -> f64 {
        self.s_from.norm().max(self.s_to.norm())
    }

    pub fn loss(&self) -> Complex64 {
        self.s_from + self.s_to
    }
}

/// Per-branch flows of a solved state.
pub fn branch_flows(solution: &PowerFlowSolution, inst: &CaseInstance) -> Vec<BranchFlow> {
    branch_flows_from(inst, &solution.v_mag, &solution.v_ang)
}

fn branch_flows_from(inst: &CaseInstance, v: &[f64], theta: &[f64]) -> Vec<BranchFlow> {
    let case = inst.case;
    case.branches
        .iter()
        .enumerate()
        .map(|(k, br)| {
            let f = case.bus_index(br.from_bus).expect("validated");
            let t = case.bus_index(br.to_bus).expect("validated");
            let vf = Complex64::from_polar(v[f], theta[f]);
            let vt = Complex64::from_polar(v[t], theta[t]);
            let (yff, yft, ytf, ytt) =
                ybus::branch_two_port(br.resistance, br.reactance, br.line_charging_b, inst.taps[k]);
            let i_from = yff * vf + yft * vt;
            let i_to = ytf * vf + ytt * vt;
            BranchFlow {
                s_from: vf * i_from.conj() * case.base_mva,
                s_to: vt * i_to.conj() * case.base_mva,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ViolationReport {
    /// Normalized excess of the slack unit's P.
    pub slack_p: f64,
    /// Normalized excess per generator Q.
    pub gen_q: Vec<f64>,
    /// Normalized excess per bus voltage; zero on voltage-controlled buses.
    pub load_v: Vec<f64>,
    /// Relative overload per branch.
    pub branch_s: Vec<f64>,
    pub total: f64,
}

impl ViolationReport {
    pub fn is_clear(&self) -> bool {
        self.total == 0.0
    }
}

fn excess(value: f64, lo: f64, hi: f64) -> f64 {
    let range = hi - lo;
    if value < lo {
        (lo - value) / range
    } else if value > hi {
        (value - hi) / range
    } else {
        0.0
    }
}

/// Measures every dependent constraint of the solved state.
///
/// Each excess is divided by the width of its band so that quantities of
/// different units add up on one dimensionless scale. Line overloads are
/// relative to the rating.
pub fn dependent_violations(solution: &PowerFlowSolution, inst: &CaseInstance) -> ViolationReport {
    let case = inst.case;
    if !solution.converged {
        return ViolationReport {
            total: NONCONVERGED_VIOLATION,
            ..Default::default()
        };
    }
    let slack_gen = &case.generators[case.slack_generator()];
    let slack_p = excess(solution.slack_p, slack_gen.p_min, slack_gen.p_max);
    let gen_q: Vec<f64> = case
        .generators
        .iter()
        .zip(&solution.gen_q)
        .map(|(g, &q)| excess(q, g.q_min, g.q_max))
        .collect();
    let load_v: Vec<f64> = case
        .buses
        .iter()
        .zip(&solution.v_mag)
        .map(|(b, &v)| {
            if b.kind != BusKind::Load {
                return 0.0;
            }
            let hi = inst.load_v_max.map_or(b.v_max, |cap| b.v_max.min(cap));
            let range = b.v_max - b.v_min;
            if v < b.v_min {
                (b.v_min - v) / range
            } else if v > hi {
                (v - hi) / range
            } else {
                0.0
            }
        })
        .collect();
    let branch_s: Vec<f64> = case
        .branches
        .iter()
        .zip(&solution.branch_s)
        .map(|(br, &s)| match br.flow_limit {
            Some(limit) if s > limit => (s - limit) / limit,
            _ => 0.0,
        })
        .collect();
    let total = slack_p + gen_q.iter().sum::<f64>() + load_v.iter().sum::<f64>() + branch_s.iter().sum::<f64>();
    ViolationReport {
        slack_p,
        gen_q,
        load_v,
        branch_s,
        total,
    }
}

/// Writes the solved state as two CSV tables: per-bus V/θ, then per-branch flows.
pub fn write_state_csv<W: Write>(out: W, solution: &PowerFlowSolution, inst: &CaseInstance) -> std::io::Result<()> {
    let case = inst.case;
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["bus", "v_pu", "theta_deg"])?;
    for (i, bus) in case.buses.iter().enumerate() {
        w.write_record([
            bus.id.to_string(),
            format!("{:.6}", solution.v_mag[i]),
            format!("{:.6}", solution.v_ang[i].to_degrees()),
        ])?;
    }
    w.write_record([
        "from_bus",
        "to_bus",
        "p_from_mw",
        "q_from_mvar",
        "p_to_mw",
        "q_to_mvar",
        "s_mva",
    ])?;
    for (br, flow) in case.branches.iter().zip(branch_flows(solution, inst)) {
        w.write_record([
            br.from_bus.to_string(),
            br.to_bus.to_string(),
            format!("{:.6}", flow.s_from.re),
            format!("{:.6}", flow.s_from.im),
            format!("{:.6}", flow.s_to.re),
            format!("{:.6}", flow.s_to.im),
            format!("{:.6}", flow.magnitude()),
        ])?;
    }
    w.flush()
}
