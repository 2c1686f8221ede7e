//! Position updates, stream assignment and the evaporation schedule.

use rand::RngCore;

/// Source of uniform draws in [0, 1].
///
/// Every random decision of the engine goes through this trait so tests can
/// script the exact sequence of draws.
pub trait UnitDraw {
    fn unit(&mut self) -> f64;
}

impl<R: RngCore> UnitDraw for R {
    fn unit(&mut self) -> f64 {
        rand::Rng::gen::<f64>(self)
    }
}

/// Replays a fixed list of draws, cycling when exhausted.
#[derive(Debug, Clone)]
pub struct Scripted {
    draws: Vec<f64>,
    next: usize,
}

impl Scripted {
    pub fn new(draws: Vec<f64>) -> Self {
        assert!(!draws.is_empty(), "scripted source needs at least one draw");
        Self { draws, next: 0 }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(vec![value])
    }

    pub fn consumed(&self) -> usize {
        self.next
    }
}

impl UnitDraw for Scripted {
    fn unit(&mut self) -> f64 {
        let v = self.draws[self.next % self.draws.len()];
        self.next += 1;
        v
    }
}

fn add_pull(out: &mut [f64], x: &[f64], target: &[f64], weight: f64) {
    for ((o, xi), ti) in out.iter_mut().zip(x).zip(target) {
        *o += weight * (ti - xi);
    }
}

/// x + r·C·(target − x) with one scalar draw r for the whole vector.
pub fn move_toward(x: &[f64], target: &[f64], c_coef: f64, rng: &mut impl UnitDraw) -> Vec<f64> {
    assert_eq!(x.len(), target.len());
    let r = rng.unit();
    let mut out = x.to_vec();
    add_pull(&mut out, x, target, r * c_coef);
    out
}

/// Stream pulled by every river at once, one draw per river.
/// With `normalize` the summed pull is divided by the number of rivers.
pub fn fiwca_stream_update(
    x: &[f64],
    rivers: &[&[f64]],
    c_coef: f64,
    normalize: bool,
    rng: &mut impl UnitDraw,
) -> Vec<f64> {
    assert!(!rivers.is_empty(), "a stream needs at least one informant");
    let scale = if normalize { 1.0 / rivers.len() as f64 } else { 1.0 };
    let mut out = x.to_vec();
    for river in rivers {
        let r = rng.unit();
        add_pull(&mut out, x, river, r * c_coef * scale);
    }
    out
}

/// River pulled by the sea (first draw) and by every other river.
pub fn fiwca_river_update(
    x: &[f64],
    sea: &[f64],
    other_rivers: &[&[f64]],
    c_coef: f64,
    normalize: bool,
    rng: &mut impl UnitDraw,
) -> Vec<f64> {
    let scale = if normalize {
        1.0 / (1 + other_rivers.len()) as f64
    } else {
        1.0
    };
    let mut out = x.to_vec();
    let r = rng.unit();
    add_pull(&mut out, x, sea, r * c_coef * scale);
    for river in other_rivers {
        let r = rng.unit();
        add_pull(&mut out, x, river, r * c_coef * scale);
    }
    out
}

/// Splits `n_stream` streams across the sea and rivers.
///
/// `costs` holds the sea and river costs in rank order, `best_stream_cost` the
/// cost of the best stream. Each leader's share is proportional to
/// |cost − best_stream_cost|; the rounding residual goes to the sea. If every
/// difference is zero (or not finite) the split is uniform.
pub fn assign_streams(costs: &[f64], best_stream_cost: f64, n_stream: usize) -> Vec<usize> {
    let n_sr = costs.len();
    assert!(n_sr > 0, "need at least the sea");
    let diffs: Vec<f64> = costs.iter().map(|c| (c - best_stream_cost).abs()).collect();
    let total: f64 = diffs.iter().sum();
    let mut ns: Vec<i64> = if total > 0.0 && total.is_finite() {
        diffs
            .iter()
            .map(|d| ((d / total) * n_stream as f64).round() as i64)
            .collect()
    } else {
        vec![(n_stream / n_sr) as i64; n_sr]
    };
    for n in &mut ns {
        *n = (*n).max(0);
    }
    let residual = n_stream as i64 - ns.iter().sum::<i64>();
    ns[0] += residual;
    if ns[0] < 0 {
        // rounding overshot and the sea cannot absorb it: trim the largest shares
        let mut deficit = -ns[0];
        ns[0] = 0;
        while deficit > 0 {
            let largest = (1..n_sr)
                .max_by_key(|&i| (ns[i], std::cmp::Reverse(i)))
                .expect("n_sr > 1 here");
            ns[largest] -= 1;
            deficit -= 1;
        }
    }
    ns.into_iter().map(|n| n as usize).collect()
}

/// d_max − d_max / max_iter.
pub fn decay_dmax(d_max: f64, max_iter: usize) -> f64 {
    if max_iter == 0 {
        return d_max;
    }
    d_max - d_max / max_iter as f64
}

/// Uniform sample in the box; a draw of 0 gives `lb`, 1 gives `ub`.
pub fn precipitate(lb: &[f64], ub: &[f64], rng: &mut impl UnitDraw) -> Vec<f64> {
    lb.iter()
        .zip(ub)
        .map(|(&l, &u)| if l == u { l } else { l + rng.unit() * (u - l) })
        .collect()
}

/// Euclidean distance after scaling every coordinate by its bound width.
pub fn normalized_distance(a: &[f64], b: &[f64], lb: &[f64], ub: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(lb.iter().zip(ub))
        .map(|((x, y), (l, u))| {
            let w = u - l;
            if w > 0.0 {
                ((x - y) / w).powi(2)
            } else {
                0.0
            }
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn move_toward_examples() {
        assert_eq!(
            move_toward(&[0.0], &[1.0], 2.0, &mut Scripted::constant(1.0)),
            vec![2.0]
        );
        assert_eq!(
            move_toward(&[0.3, -1.0], &[1.0, 4.0], 2.0, &mut Scripted::constant(0.0)),
            vec![0.3, -1.0]
        );
        let x = [0.25, 7.0];
        assert_eq!(move_toward(&x, &x, 2.0, &mut Scripted::constant(0.7)), x.to_vec());
    }

    #[test]
    fn one_draw_per_move() {
        let mut rng = Scripted::new(vec![0.5, 0.25]);
        let out = move_toward(&[0.0, 0.0], &[1.0, 2.0], 2.0, &mut rng);
        assert_eq!(out, vec![1.0, 2.0]);
        assert_eq!(rng.consumed(), 1);
    }

    #[test]
    fn fiwca_stream_examples() {
        let mut rng = Scripted::new(vec![1.0, 1.0]);
        let out = fiwca_stream_update(&[0.0], &[&[1.0], &[3.0]], 2.0, false, &mut rng);
        assert_eq!(out, vec![8.0]);

        let single = fiwca_stream_update(&[0.5], &[&[2.0]], 2.0, false, &mut Scripted::constant(0.3));
        assert_eq!(single, move_toward(&[0.5], &[2.0], 2.0, &mut Scripted::constant(0.3)));

        let sym = fiwca_stream_update(&[1.0], &[&[0.0], &[2.0]], 2.0, false, &mut Scripted::constant(0.4));
        assert_eq!(sym, vec![1.0]);

        let norm = fiwca_stream_update(&[0.0], &[&[1.0], &[3.0]], 2.0, true, &mut Scripted::constant(1.0));
        assert_eq!(norm, vec![4.0]);
    }

    #[test]
    fn fiwca_river_examples() {
        let out = fiwca_river_update(&[0.0], &[1.0], &[&[2.0]], 2.0, false, &mut Scripted::constant(1.0));
        assert_eq!(out, vec![6.0]);

        let x = [0.4, 0.6];
        let fixed = fiwca_river_update(&x, &x, &[&x, &x], 2.0, false, &mut Scripted::constant(0.9));
        assert_eq!(fixed, x.to_vec());

        let alone = fiwca_river_update(&[0.1], &[0.9], &[], 2.0, false, &mut Scripted::constant(0.6));
        assert_eq!(alone, move_toward(&[0.1], &[0.9], 2.0, &mut Scripted::constant(0.6)));
    }

    #[test]
    fn assign_streams_examples() {
        assert_eq!(assign_streams(&[1.0, 2.0], 4.0, 10), vec![6, 4]);
        assert_eq!(assign_streams(&[3.0, 3.0, 3.0], 3.0, 10), vec![4, 3, 3]);
        // |C| weights 0.5, 0.3, 0.2
        assert_eq!(assign_streams(&[-4.0, -2.0, -1.0], 1.0, 7), vec![4, 2, 1]);
    }

    #[test]
    fn assign_streams_repairs_overshoot() {
        // two halves both round up: 3 + 3 > 5
        let ns = assign_streams(&[0.0, 2.0], 1.0, 5);
        assert_eq!(ns.iter().sum::<usize>(), 5);
        // sea share rounds to zero while rivers round up
        assert_eq!(assign_streams(&[1.0, 0.0, 0.0], 1.0, 5), vec![0, 2, 3]);
    }

    #[test]
    fn decay_examples() {
        assert!((decay_dmax(1.0, 100) - 0.99).abs() < 1e-15);
        let mut d = 1.0;
        for _ in 0..100 {
            d = decay_dmax(d, 100);
        }
        assert!((d - 0.99_f64.powi(100)).abs() < 1e-12);
        assert!((d - 0.366).abs() < 1e-3);
        assert_eq!(decay_dmax(0.0, 100), 0.0);
    }

    #[test]
    fn precipitation_endpoints() {
        let lb = [-1.0, 2.0, 5.0];
        let ub = [1.0, 3.0, 5.0];
        assert_eq!(precipitate(&lb, &ub, &mut Scripted::constant(0.0)), lb.to_vec());
        assert_eq!(precipitate(&lb, &ub, &mut Scripted::constant(1.0)), ub.to_vec());
    }

    #[test]
    fn normalized_distance_ignores_degenerate_axes() {
        let d = normalized_distance(&[0.0, 5.0, 1.0], &[10.0, 5.0, 2.0], &[0.0, 5.0, 0.0], &[10.0, 5.0, 2.0]);
        assert!((d - (1.0_f64 + 0.25).sqrt()).abs() < 1e-15);
    }
}
