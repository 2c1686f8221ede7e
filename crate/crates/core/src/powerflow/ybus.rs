use num_complex::Complex64;

use crate::grid::CaseInstance;

use super::PowerFlowError;

/// Dense bus admittance matrix, stored as separate G and B row-major arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub n: usize,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
}

impl AdmittanceMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            g: vec![0.0; n * n],
            b: vec![0.0; n * n],
        }
    }

    pub fn get(&self, i: usize, k: usize) -> Complex64 {
        Complex64::new(self.g[i * self.n + k], self.b[i * self.n + k])
    }

    fn add(&mut self, i: usize, k: usize, y: Complex64) {
        self.g[i * self.n + k] += y.re;
        self.b[i * self.n + k] += y.im;
    }
}

/// Two-port admittances of one branch: (Y_ff, Y_ft, Y_tf, Y_tt).
pub(crate) fn branch_two_port(r: f64, x: f64, charging: f64, tap: f64) -> (Complex64, Complex64, Complex64, Complex64) {
    let y = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
    let half = Complex64::new(0.0, charging / 2.0);
    let yff = (y + half) / (tap * tap);
    let ytt = y + half;
    let yft = -y / tap;
    (yff, yft, yft, ytt)
}

/// Builds Y-bus for an instance. The tap sits on the from-bus side; shunt
/// compensator MVAR becomes susceptance on the system base.
pub fn build_admittance(inst: &CaseInstance) -> Result<AdmittanceMatrix, PowerFlowError> {
    let case = inst.case;
    let mut y = AdmittanceMatrix::zeros(case.buses.len());
    for (k, br) in case.branches.iter().enumerate() {
        if br.resistance == 0.0 && br.reactance == 0.0 {
            return Err(PowerFlowError::ZeroImpedance(k));
        }
        let tap = inst.taps[k];
        if !(tap > 0.0) {
            return Err(PowerFlowError::BadTap(k, tap));
        }
        let f = case.bus_index(br.from_bus).expect("validated branch");
        let t = case.bus_index(br.to_bus).expect("validated branch");
        let (yff, yft, ytf, ytt) = branch_two_port(br.resistance, br.reactance, br.line_charging_b, tap);
        y.add(f, f, yff);
        y.add(f, t, yft);
        y.add(t, f, ytf);
        y.add(t, t, ytt);
    }
    for (i, bus) in case.buses.iter().enumerate() {
        if bus.gs != 0.0 || bus.bs != 0.0 {
            y.add(i, i, Complex64::new(bus.gs, bus.bs) / case.base_mva);
        }
    }
    for (s, shunt) in case.shunts.iter().enumerate() {
        let i = case.bus_index(shunt.bus).expect("validated shunt");
        y.add(i, i, Complex64::new(0.0, inst.shunt_q[s] / case.base_mva));
    }
    Ok(y)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grid::{load_case, NetworkCase};

    pub(crate) fn two_bus(x: f64) -> NetworkCase {
        NetworkCase::from_json(&format!(
            r#"{{
                "name": "two-bus", "base_mva": 100,
                "buses": [
                    {{"id": 1, "kind": "slack", "demand_p": 0, "demand_q": 0, "v_min": 0.9, "v_max": 1.1}},
                    {{"id": 2, "kind": "load", "demand_p": 0, "demand_q": 0, "v_min": 0.9, "v_max": 1.1}}
                ],
                "branches": [{{"from_bus": 1, "to_bus": 2, "resistance": 0, "reactance": {x}, "line_charging_b": 0}}],
                "generators": [{{"bus": 1, "p_min": 0, "p_max": 100, "q_min": -50, "q_max": 50,
                                 "v_min": 0.9, "v_max": 1.1, "v_set": 1.0}}],
                "shunts": [{{"bus": 2, "q_min": 0, "q_max": 10}}]
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn two_bus_series_reactance() {
        let case = two_bus(0.1);
        let y = build_admittance(&CaseInstance::base(&case)).unwrap();
        assert!((y.get(0, 1).im - 10.0).abs() < 1e-12);
        assert_eq!(y.get(0, 1).re, 0.0);
        assert!((y.get(0, 0).im + 10.0).abs() < 1e-12);
    }

    #[test]
    fn shunt_adds_susceptance_on_base() {
        let case = two_bus(0.1);
        let mut inst = CaseInstance::base(&case);
        let before = build_admittance(&inst).unwrap();
        inst.shunt_q[0] = 5.0;
        let after = build_admittance(&inst).unwrap();
        assert!((after.get(1, 1).im - before.get(1, 1).im - 0.05).abs() < 1e-12);
        assert_eq!(after.get(0, 0), before.get(0, 0));
    }

    #[test]
    fn unit_taps_match_untapped_construction() {
        let case = load_case("ieee30").unwrap();
        let mut inst = CaseInstance::base(&case);
        inst.taps.iter_mut().for_each(|t| *t = 1.0);
        let y = build_admittance(&inst).unwrap();

        // naive pi-model stamp without any tap handling
        let n = case.buses.len();
        let mut naive = AdmittanceMatrix::zeros(n);
        for br in &case.branches {
            let f = case.bus_index(br.from_bus).unwrap();
            let t = case.bus_index(br.to_bus).unwrap();
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.resistance, br.reactance);
            let sh = Complex64::new(0.0, br.line_charging_b / 2.0);
            naive.add(f, f, ys + sh);
            naive.add(t, t, ys + sh);
            naive.add(f, t, -ys);
            naive.add(t, f, -ys);
        }
        for (a, b) in y.g.iter().zip(&naive.g).chain(y.b.iter().zip(&naive.b)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tapped_matrix_is_symmetric() {
        let case = load_case("ieee57").unwrap();
        let y = build_admittance(&CaseInstance::base(&case)).unwrap();
        for i in 0..y.n {
            for k in 0..y.n {
                assert_eq!(y.get(i, k), y.get(k, i));
            }
        }
    }

    #[test]
    fn zero_impedance_is_an_error() {
        let case = two_bus(0.1);
        let mut broken = case.clone();
        broken.branches[0].reactance = 0.0;
        let inst = CaseInstance::base(&broken);
        assert!(matches!(build_admittance(&inst), Err(PowerFlowError::ZeroImpedance(0))));
    }
}
