//! Feasibility rules for ranking constrained candidates.

use std::cmp::Ordering;

/// Rule-3 tolerance at the start and the end of a run.
pub const EPS_START: f64 = 0.01;
pub const EPS_END: f64 = 0.001;

/// Anything carrying an objective value and a violation total.
pub trait Ranked {
    fn objective(&self) -> f64;
    fn violation(&self) -> f64;
}

/// Orders `a` against `b`; `Less` means `a` is preferred.
///
/// A candidate counts as feasible when its violation does not exceed
/// `eps`. Two feasible candidates compare by objective, a feasible one beats
/// an infeasible one, and two infeasible ones compare by violation. `Equal`
/// means neither wins, in which case callers keep the incumbent.
pub fn feasibility_compare<T: Ranked + ?Sized>(a: &T, b: &T, eps: f64) -> Ordering {
    let fa = a.violation() <= eps;
    let fb = b.violation() <= eps;
    match (fa, fb) {
        (true, true) => a.objective().total_cmp(&b.objective()),
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        (false, false) => a.violation().total_cmp(&b.violation()),
    }
}

/// True when `challenger` strictly beats `incumbent`.
pub fn beats<T: Ranked + ?Sized>(challenger: &T, incumbent: &T, eps: f64) -> bool {
    feasibility_compare(challenger, incumbent, eps) == Ordering::Less
}

/// Tolerance at `iteration` of `max_iter`: linear from [`EPS_START`] at
/// iteration 0 to [`EPS_END`] at the last iteration.
pub fn rule3_threshold(iteration: usize, max_iter: usize) -> f64 {
    if max_iter == 0 {
        return EPS_END;
    }
    let t = (iteration.min(max_iter)) as f64 / max_iter as f64;
    EPS_START + (EPS_END - EPS_START) * t
}

#[cfg(test)]
mod tests {
    use super::*;

    struct E(f64, f64);

    impl Ranked for E {
        fn objective(&self) -> f64 {
            self.0
        }
        fn violation(&self) -> f64 {
            self.1
        }
    }

    #[test]
    fn feasible_beats_infeasible() {
        assert_eq!(feasibility_compare(&E(5.0, 0.0), &E(4.0, 0.5), 0.01), Ordering::Less);
    }

    #[test]
    fn tolerance_admits_small_violation() {
        assert_eq!(feasibility_compare(&E(5.0, 0.005), &E(6.0, 0.0), 0.01), Ordering::Less);
        // same pair once the tolerance has tightened
        assert_eq!(
            feasibility_compare(&E(5.0, 0.005), &E(6.0, 0.0), 0.001),
            Ordering::Greater
        );
    }

    #[test]
    fn infeasible_pair_compares_violation() {
        assert_eq!(feasibility_compare(&E(1.0, 0.9), &E(9.0, 0.2), 0.01), Ordering::Greater);
    }

    #[test]
    fn ties_do_not_displace() {
        assert!(!beats(&E(3.0, 0.0), &E(3.0, 0.0), 0.01));
        assert!(!beats(&E(1.0, 0.4), &E(7.0, 0.4), 0.01));
    }

    #[test]
    fn threshold_schedule() {
        assert_eq!(rule3_threshold(0, 100), 0.01);
        assert!((rule3_threshold(100, 100) - 0.001).abs() < 1e-15);
        assert!((rule3_threshold(50, 100) - 0.0055).abs() < 1e-15);
        assert_eq!(rule3_threshold(0, 0), 0.001);
    }
}
