//! Discrete Besov energies
//! `[u]^p = Σ_x Σ_{y≠x} |u(x)−u(y)|^p / d(x,y)^{θp} · ν({x})ν({y}) / ν(B(x, d(x,y)))`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::BesovError;
use crate::space::Space;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BesovParams {
    pub p: f64,
    pub theta: f64,
    /// Always `p·θ`.
    pub sigma: f64,
}

impl BesovParams {
    pub fn new(p: f64, theta: f64) -> Result<Self, BesovError> {
        if !(p >= 1.0 && p.is_finite() && theta > 0.0 && theta.is_finite()) {
            return Err(BesovError::BadParams { p, theta });
        }
        Ok(BesovParams { p, theta, sigma: p * theta })
    }
}

/// Which ball sits in the denominator of the pair `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Denominator {
    /// `ν(B(x, d(x,y)))`
    Center,
    /// `ν(B(y, d(x,y)))`
    Partner,
}

/// Energy with both the `p`-th power and its root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub params: BesovParams,
    pub energy: f64,
    pub seminorm: f64,
    pub lp_norm: f64,
    pub norm: f64,
}

/// Pairwise (cascade) summation. The split points depend only on the length,
/// so the result is reproducible.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `ν(B(x, d(x,y)))` for every `y`, accumulated in the space's canonical
/// ball order.
pub fn pair_ball_masses(space: &Space, x: usize) -> Vec<f64> {
    let row = space.row(x);
    let order = space.sorted_from(x);
    let mut out = vec![0.0; space.len()];
    let mut below = 0.0;
    let mut k = 0;
    while k < order.len() {
        let r = row[order[k]];
        let mut end = k;
        while end < order.len() && row[order[end]] == r {
            out[order[end]] = below;
            end += 1;
        }
        for &i in &order[k..end] {
            below += space.mass(i);
        }
        k = end;
    }
    out
}

fn check_field(space: &Space, u: &[f64]) -> Result<(), BesovError> {
    if u.len() != space.len() {
        return Err(BesovError::DomainMismatch { expected: space.len(), got: u.len() });
    }
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(BesovError::NonFinite(i));
    }
    Ok(())
}

/// One ordered pair's term, given the denominator ball mass.
#[inline]
pub fn pair_term(space: &Space, u: &[f64], params: BesovParams, x: usize, y: usize, ball: f64) -> f64 {
    let d = space.dist(x, y);
    let du = (u[x] - u[y]).abs();
    if du == 0.0 || d == 0.0 {
        return 0.0;
    }
    du.powf(params.p) / d.powf(params.sigma) * space.mass(x) * space.mass(y) / ball
}

/// Per-center row sums of the energy with the chosen denominator.
pub fn energy_rows(
    space: &Space,
    u: &[f64],
    params: BesovParams,
    denominator: Denominator,
) -> Result<Vec<f64>, BesovError> {
    check_field(space, u)?;
    let n = space.len();
    let balls: Option<Vec<Vec<f64>>> = match denominator {
        Denominator::Center => None,
        Denominator::Partner => Some((0..n).into_par_iter().map(|y| pair_ball_masses(space, y)).collect()),
    };
    (0..n)
        .into_par_iter()
        .map(|x| {
            let own = match denominator {
                Denominator::Center => Some(pair_ball_masses(space, x)),
                Denominator::Partner => None,
            };
            let mut terms = Vec::with_capacity(n);
            for y in (0..n).filter(|&y| y != x) {
                let ball = match (&own, &balls) {
                    (Some(b), _) => b[y],
                    (None, Some(all)) => all[y][x],
                    (None, None) => unreachable!(),
                };
                let t = pair_term(space, u, params, x, y, ball);
                if t > 0.0 && ball <= 0.0 {
                    return Err(BesovError::ZeroDenominator { x, y });
                }
                terms.push(t);
            }
            Ok(pairwise_sum(&terms))
        })
        .collect()
}

/// `[u]^p` (the `p`-th power of the seminorm).
pub fn besov_energy(space: &Space, u: &[f64], params: BesovParams) -> Result<f64, BesovError> {
    Ok(pairwise_sum(&energy_rows(space, u, params, Denominator::Center)?))
}

/// The energy with `ν(B(y, d(x,y)))` in the denominator instead.
pub fn besov_energy_swapped(space: &Space, u: &[f64], params: BesovParams) -> Result<f64, BesovError> {
    Ok(pairwise_sum(&energy_rows(space, u, params, Denominator::Partner)?))
}

/// `‖u‖_{L^p(ν)}`.
pub fn lp_norm(space: &Space, u: &[f64], p: f64) -> Result<f64, BesovError> {
    check_field(space, u)?;
    let terms: Vec<f64> = u.iter().zip(space.masses()).map(|(v, m)| v.abs().powf(p) * m).collect();
    Ok(pairwise_sum(&terms).powf(1.0 / p))
}

/// `[u]_{θ,p} + ‖u‖_{L^p}`.
pub fn besov_norm(space: &Space, u: &[f64], params: BesovParams) -> Result<f64, BesovError> {
    Ok(energy_report(space, u, params)?.norm)
}

pub fn energy_report(space: &Space, u: &[f64], params: BesovParams) -> Result<EnergyReport, BesovError> {
    let energy = besov_energy(space, u, params)?;
    let seminorm = energy.powf(1.0 / params.p);
    let lp = lp_norm(space, u, params.p)?;
    Ok(EnergyReport { params, energy, seminorm, lp_norm: lp, norm: seminorm + lp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{PointId, SpaceFlags};

    fn line(points: &[f64], mass: Vec<f64>) -> Space {
        let coords: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
        Space::from_coords((0..points.len()).map(PointId::from).collect(), &coords, mass, 0, SpaceFlags::default())
            .unwrap()
    }

    /// Direct double loop with an explicit ball scan per pair.
    fn naive(space: &Space, u: &[f64], p: f64, theta: f64) -> f64 {
        let n = space.len();
        let mut total = 0.0;
        for x in 0..n {
            for y in 0..n {
                if x == y {
                    continue;
                }
                let d = space.dist(x, y);
                let ball: f64 = (0..n).filter(|&z| space.dist(x, z) < d).map(|z| space.mass(z)).sum();
                total += (u[x] - u[y]).abs().powf(p) / d.powf(theta * p) * space.mass(x) * space.mass(y) / ball;
            }
        }
        total
    }

    #[test]
    fn two_point_example() {
        let s = line(&[0.0, 1.0], vec![1.0, 1.0]);
        let params = BesovParams::new(2.0, 0.5).unwrap();
        assert_eq!(besov_energy(&s, &[0.0, 1.0], params).unwrap(), 2.0);
        let norm = besov_norm(&s, &[0.0, 1.0], params).unwrap();
        assert!((norm - (2f64.sqrt() + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn constant_and_zero_fields() {
        let s = line(&[0.0, 1.0, 3.0, 4.5], vec![1.0, 0.5, 2.0, 1.5]);
        let params = BesovParams::new(1.5, 0.7).unwrap();
        assert_eq!(besov_energy(&s, &[2.0; 4], params).unwrap(), 0.0);
        assert_eq!(besov_norm(&s, &[0.0; 4], params).unwrap(), 0.0);
        let norm = besov_norm(&s, &[-3.0; 4], params).unwrap();
        assert!((norm - 3.0 * 5f64.powf(1.0 / 1.5)).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_sum_and_is_homogeneous() {
        let s = line(&[0.0, 0.3, 1.0, 1.1, 2.5, 4.0, 4.2], vec![1.0, 0.2, 0.7, 1.3, 0.4, 2.0, 0.9]);
        let u = [0.1, -1.0, 0.4, 2.0, 0.0, 1.5, -0.3];
        for (p, theta) in [(1.0, 0.5), (2.0, 0.25), (3.0, 1.2)] {
            let params = BesovParams::new(p, theta).unwrap();
            let e = besov_energy(&s, &u, params).unwrap();
            let oracle = naive(&s, &u, p, theta);
            assert!((e - oracle).abs() <= 1e-12 * oracle);
            let scaled: Vec<f64> = u.iter().map(|v| -2.5 * v).collect();
            let es = besov_energy(&s, &scaled, params).unwrap();
            assert!((es - 2.5f64.powf(p) * e).abs() <= 1e-12 * es);
        }
    }

    #[test]
    fn ties_use_the_open_ball() {
        // equidistant neighbours: the ball at distance 1 from 1 holds only {1}
        let s = line(&[0.0, 1.0, 2.0], vec![1.0, 1.0, 1.0]);
        let b = pair_ball_masses(&s, 1);
        assert_eq!(b, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn errors() {
        let s = line(&[0.0, 1.0], vec![1.0, 1.0]);
        let params = BesovParams::new(2.0, 0.5).unwrap();
        assert!(matches!(besov_energy(&s, &[0.0], params), Err(BesovError::DomainMismatch { .. })));
        assert!(matches!(besov_energy(&s, &[0.0, f64::NAN], params), Err(BesovError::NonFinite(1))));
        assert!(BesovParams::new(0.5, 1.0).is_err());
        assert!(BesovParams::new(2.0, 0.0).is_err());
    }

    #[test]
    fn swapped_denominators_stay_comparable() {
        let s = line(&[0.0, 0.1, 0.15, 2.0, 5.0], vec![3.0, 0.1, 0.5, 1.0, 0.2]);
        let params = BesovParams::new(2.0, 0.5).unwrap();
        let u = [0.0, 1.0, -1.0, 0.5, 2.0];
        let a = besov_energy(&s, &u, params).unwrap();
        let b = besov_energy_swapped(&s, &u, params).unwrap();
        let c_nu = crate::analysis::doubling_constant(&s).unwrap().c_nu;
        assert!(a / b >= 1.0 / c_nu && a / b <= c_nu);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|k| k as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }
}
