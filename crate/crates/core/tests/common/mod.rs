#![allow(dead_code)]

use metricdeform::space::{PointId, Space, SpaceFlags};
use rand::Rng;

pub fn ids(n: usize) -> Vec<PointId> {
    (0..n).map(PointId::from).collect()
}

pub fn line(points: &[f64], masses: Vec<f64>, flags: SpaceFlags) -> Space {
    let coords: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
    Space::from_coords(ids(points.len()), &coords, masses, 0, flags).unwrap()
}

pub const UNBOUNDED: SpaceFlags = SpaceFlags { unbounded: true, punctured: false };

/// Random planar point set with positive masses, base at index 0.
pub fn random_planar<R: Rng>(rng: &mut R, n: usize, flags: SpaceFlags) -> Space {
    loop {
        let coords: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
        if let Ok(s) = Space::from_coords(ids(n), &coords, masses, 0, flags) {
            return s;
        }
    }
}

/// Random non-Euclidean metric: shortest-path closure of random weights.
pub fn random_graph_metric<R: Rng>(rng: &mut R, n: usize, flags: SpaceFlags) -> Space {
    let w: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.2..4.0)).collect();
    let dist = metricdeform::apsp::shortest_path_closure(n, |i, j| w[i * n + j]);
    let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
    Space::build(ids(n), dist, masses, 0, flags).unwrap()
}

/// Infimum over every simple chain from `s` to `t`, by exhaustive search.
/// `rho` and the returned distances are indexed by position in `points`.
pub fn chain_oracle(space: &Space, points: &[usize], rho: &[f64], s: usize, t: usize) -> f64 {
    fn walk(
        space: &Space,
        points: &[usize],
        rho: &[f64],
        at: usize,
        t: usize,
        used: &mut Vec<bool>,
        acc: f64,
        best: &mut f64,
    ) {
        if at == t {
            *best = best.min(acc);
            return;
        }
        for next in 0..points.len() {
            if used[next] {
                continue;
            }
            let w = (rho[at] + rho[next]) * space.dist(points[at], points[next]);
            used[next] = true;
            walk(space, points, rho, next, t, used, acc + w, best);
            used[next] = false;
        }
    }
    if s == t {
        return 0.0;
    }
    let mut used = vec![false; points.len()];
    used[s] = true;
    let mut best = f64::INFINITY;
    walk(space, points, rho, s, t, &mut used, 0.0, &mut best);
    best
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
