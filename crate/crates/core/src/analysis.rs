//! Estimators for the geometric hypotheses: doubling constant, uniform
//! perfectness at the base point, reverse doubling and the measure inverse.
//!
//! Ball masses are step functions of the radius, so every supremum or
//! infimum below is evaluated exactly on the finite set of jump locations and
//! the midpoints between consecutive jumps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::space::{RadialProfile, Space};

/// Slack applied to the minimal grid value of `κ` so that annuli are
/// strictly nonempty under floating point.
pub const KAPPA_SLACK: f64 = 1e-9;

/// Closed range of radii over which an estimator is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusRange {
    pub lo: f64,
    pub hi: f64,
}

impl RadiusRange {
    pub fn full() -> Self {
        RadiusRange { lo: 0.0, hi: f64::INFINITY }
    }

    /// Default valid annulus: from the smallest positive distance to the base
    /// up to `R_∞/4` on truncations of unbounded spaces, `R_∞` otherwise.
    pub fn default_for(space: &Space) -> Self {
        let radii = space.critical_radii(space.base());
        let lo = radii.get(1).copied().unwrap_or(0.0);
        let r_inf = space.r_infinity();
        let hi = if space.flags().unbounded { r_inf / 4.0 } else { r_inf };
        RadiusRange { lo, hi }
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.lo && r <= self.hi
    }
}

impl Default for RadiusRange {
    fn default() -> Self {
        Self::full()
    }
}

/// Sorted, deduplicated positive breakpoints plus the midpoints between them
/// and one point beyond the last, clipped to `range` (whose finite positive
/// endpoints are included).
pub(crate) fn evaluation_points(mut breaks: Vec<f64>, range: RadiusRange) -> Vec<f64> {
    breaks.retain(|r| *r > 0.0 && r.is_finite());
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut pts = Vec::with_capacity(2 * breaks.len() + 3);
    for w in breaks.windows(2) {
        pts.push(w[0]);
        pts.push(0.5 * (w[0] + w[1]));
    }
    if let Some(&last) = breaks.last() {
        pts.push(last);
        pts.push(2.0 * last);
    }
    if let Some(&first) = breaks.first() {
        pts.push(0.5 * first);
    }
    pts.retain(|r| range.contains(*r));
    for end in [range.lo, range.hi] {
        if end > 0.0 && end.is_finite() {
            pts.push(end);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoublingEstimate {
    #[serde(rename = "C_nu")]
    pub c_nu: f64,
    pub witness_point: usize,
    pub witness_radius: f64,
    pub range: RadiusRange,
}

/// Exact doubling constant over every center and every radius.
pub fn doubling_constant(space: &Space) -> Result<DoublingEstimate, AnalysisError> {
    doubling_constant_in(space, RadiusRange::full())
}

/// Exact `sup ν(B(x,2r))/ν(B(x,r))` over all centers and all `r` in `range`,
/// taken where the smaller ball has positive mass.
pub fn doubling_constant_in(space: &Space, range: RadiusRange) -> Result<DoublingEstimate, AnalysisError> {
    let index = space.ball_index();
    let best = (0..space.len())
        .into_par_iter()
        .map(|x| {
            let dists = index.sorted_distances(x);
            let mut breaks: Vec<f64> = dists.to_vec();
            breaks.extend(dists.iter().map(|d| 0.5 * d));
            let mut best: Option<(f64, usize, f64)> = None;
            for r in evaluation_points(breaks, range) {
                let small = index.mass(x, r);
                if small <= 0.0 {
                    continue;
                }
                let ratio = index.mass(x, 2.0 * r) / small;
                if best.is_none_or(|b| ratio > b.0) {
                    best = Some((ratio, x, r));
                }
            }
            best
        })
        .collect::<Vec<_>>();
    // sequential reduction keeps the witness independent of thread count
    let mut out: Option<(f64, usize, f64)> = None;
    for b in best.into_iter().flatten() {
        if out.is_none_or(|o| b.0 > o.0) {
            out = Some(b);
        }
    }
    let (c_nu, witness_point, witness_radius) = out.ok_or(AnalysisError::DegenerateMeasure)?;
    Ok(DoublingEstimate { c_nu, witness_point, witness_radius, range })
}

/// Uniform-perfectness constant, or `Infinite` when no finite value works.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Finite(f64),
    Infinite,
}

impl Kappa {
    pub fn value(self) -> f64 {
        match self {
            Kappa::Finite(k) => k,
            Kappa::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Kappa::Finite(_))
    }
}

impl Serialize for Kappa {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Kappa::Finite(k) => s.serialize_f64(*k),
            Kappa::Infinite => s.serialize_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfectnessEstimate {
    pub kappa: Kappa,
    pub m0: f64,
    pub center: usize,
    /// Radius of the worst annulus (just above this value), if any was tested.
    pub witness_radius: Option<f64>,
}

/// Minimal `κ` such that `B(b,κr) ∖ B(b,r) ≠ ∅` for every grid radius
/// `r ≥ m0` with `B(b,r) ≠ Z`.
///
/// The grid is "just above each positive critical radius" plus `r = m0`
/// itself when `m0 > 0`. Scales below the smallest positive distance are not
/// tested: a finite space is never perfect as `r → 0`.
pub fn uniform_perfectness(space: &Space, m0: f64) -> Result<PerfectnessEstimate, AnalysisError> {
    check_gauge(m0)?;
    Ok(perfectness_at(space, space.base(), m0, f64::INFINITY))
}

/// Same estimator at an arbitrary center, restricted to grid radii `≤ r_max`.
pub fn perfectness_at(space: &Space, center: usize, m0: f64, r_max: f64) -> PerfectnessEstimate {
    let radii = space.critical_radii(center);
    let mut worst: Option<(f64, f64)> = None;
    let mut consider = |ratio: f64, r: f64| {
        if worst.is_none_or(|w| ratio > w.0) {
            worst = Some((ratio, r));
        }
    };
    let last = radii.len() - 1;
    for i in 0..last {
        let c = radii[i];
        if c > 0.0 && c >= m0 && c <= r_max {
            consider(radii[i + 1] / c, c);
        }
    }
    if m0 > 0.0 && m0 <= r_max && radii[last] >= m0 {
        let next = radii[radii.partition_point(|&c| c < m0)];
        consider(next / m0, m0);
    }
    let kappa = match worst {
        Some((ratio, _)) if !ratio.is_finite() => Kappa::Infinite,
        Some((ratio, _)) => Kappa::Finite(ratio.max(1.0) * (1.0 + KAPPA_SLACK)),
        None => Kappa::Finite(1.0 + KAPPA_SLACK),
    };
    PerfectnessEstimate { kappa, m0, center, witness_radius: worst.map(|w| w.1) }
}

fn check_gauge(m0: f64) -> Result<(), AnalysisError> {
    if m0 == 0.0 || m0 == 1.0 {
        Ok(())
    } else {
        Err(AnalysisError::BadGauge(m0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReverseDoublingFit {
    pub alpha: f64,
    #[serde(rename = "Lambda")]
    pub lambda: f64,
    /// Smallest growth factor `ν(B_{4κt})/ν(B_t)` over the sampled scales.
    pub growth: f64,
    /// Least-squares slope of `log ν(B_r)` against `log r`.
    pub alpha_slope: f64,
    /// Constant certifying the inequality with exponent `alpha_slope`.
    pub lambda_slope: f64,
    /// Certified radii: `r_min ≤ r < R < r_max`.
    pub r_min: f64,
    pub r_max: f64,
    pub witness: (f64, f64),
}

/// Fits `ν(B_r)/ν(B_R) ≤ Λ (r/R)^α` for `m0 ≤ r < R < 2R_∞`.
///
/// `α = log Λ′ / log 4κ` where `Λ′` is the smallest observed growth factor
/// across scales `4κ` apart; `Λ` is then the exact smallest constant that
/// certifies every pair. On a finite space the lower end of the radius range
/// is raised to the smallest positive distance to `b`.
pub fn reverse_doubling_fit(space: &Space, m0: f64, kappa: Kappa) -> Result<ReverseDoublingFit, AnalysisError> {
    check_gauge(m0)?;
    let Kappa::Finite(kappa) = kappa else {
        return Err(AnalysisError::FitFailed { growth: f64::NAN });
    };
    let profile = space.base_profile();
    let r_inf = profile.max_radius();
    let r_min = m0.max(profile.radii.get(1).copied().unwrap_or(r_inf));
    let r_max = 2.0 * r_inf;

    let (alpha, growth) = if r_inf <= 2.0 * m0 {
        (1.0, f64::NAN)
    } else {
        let step = 4.0 * kappa;
        let mut breaks = profile.radii.clone();
        breaks.extend(profile.radii.iter().map(|c| c / step));
        let range = RadiusRange { lo: r_min, hi: 0.5 * r_inf };
        let mut growth = f64::INFINITY;
        for t in evaluation_points(breaks, range) {
            if t >= 0.5 * r_inf {
                continue;
            }
            let small = profile.mass_below(t);
            if small > 0.0 {
                growth = growth.min(profile.mass_below(step * t) / small);
            }
        }
        if !(growth > 1.0) || !growth.is_finite() {
            return Err(AnalysisError::FitFailed { growth });
        }
        (growth.ln() / step.ln(), growth)
    };
    let (lambda, witness) = certify_reverse_doubling(&profile, alpha, r_min, r_max);
    let alpha_slope = log_log_slope(&profile, r_min);
    let (lambda_slope, _) = certify_reverse_doubling(&profile, alpha_slope, r_min, r_max);
    Ok(ReverseDoublingFit { alpha, lambda, growth, alpha_slope, lambda_slope, r_min, r_max, witness })
}

/// Smallest `Λ ≥ 1` with `ν(B_r)/ν(B_R) ≤ Λ (r/R)^α` for all
/// `r_min ≤ r < R < r_max`, with the pair attaining it.
pub fn certify_reverse_doubling(profile: &RadialProfile, alpha: f64, r_min: f64, r_max: f64) -> (f64, (f64, f64)) {
    // ν(B_r) = cum[i] on the piece (radii[i], radii[i+1]]
    let k = profile.radii.len();
    let piece_hi = |i: usize| if i + 1 < k { profile.radii[i + 1] } else { f64::INFINITY };
    let mut best = (1.0, (r_min, r_min));
    for i in 0..k {
        if piece_hi(i) < r_min {
            continue;
        }
        let r = profile.radii[i].max(r_min);
        if r <= 0.0 || r >= r_max {
            continue;
        }
        let num = profile.cum[i];
        for j in i..k {
            let big = piece_hi(j).min(r_max);
            if big <= r {
                continue;
            }
            let val = num / profile.cum[j] * (big / r).powf(alpha);
            if val > best.0 {
                best = (val, (r, big));
            }
            if piece_hi(j) >= r_max {
                break;
            }
        }
    }
    best
}

fn log_log_slope(profile: &RadialProfile, r_min: f64) -> f64 {
    let pts: Vec<(f64, f64)> = profile
        .radii
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &r)| r >= r_min)
        .map(|(i, &r)| (r.ln(), profile.cum[i - 1].max(f64::MIN_POSITIVE).ln()))
        .filter(|(_, m)| m.is_finite() && *m > f64::MIN_POSITIVE.ln())
        .collect();
    if pts.len() < 2 {
        return 1.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        1.0
    }
}

/// `ν⁻¹(t) = sup{r ≥ 0 : ν(B_r) ≤ t}`, attained on finite spaces.
pub fn measure_inverse(space: &Space, t: f64) -> Result<f64, AnalysisError> {
    measure_inverse_profile(&space.base_profile(), t)
}

/// [`measure_inverse`] against a precomputed base profile.
pub fn measure_inverse_profile(profile: &RadialProfile, t: f64) -> Result<f64, AnalysisError> {
    let total = profile.total();
    if !(t >= 0.0 && t < total) {
        return Err(AnalysisError::OutOfRange { t, total });
    }
    // ν(B_r) ≤ t exactly for r ≤ radii[j], j the first closed ball heavier than t
    let j = profile.cum.partition_point(|&c| c <= t);
    Ok(profile.radii[j])
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

    fn grid(n: usize) -> Space {
        let pts: Vec<f64> = (0..n).map(|k| k as f64).collect();
        line(&pts, vec![1.0; n])
    }

    /// Brute force over a fine radius grid; only a lower bound for the
    /// supremum, but it must never exceed the exact value.
    fn doubling_brute(space: &Space) -> f64 {
        let mut best: f64 = 0.0;
        let diam = space.matrix().iter().copied().fold(0.0, f64::max);
        for x in 0..space.len() {
            for k in 1..4000 {
                let r = diam * k as f64 / 2000.0;
                let small = space.ball(x, r).mass;
                if small > 0.0 {
                    best = best.max(space.ball(x, 2.0 * r).mass / small);
                }
            }
        }
        best
    }

    #[test]
    fn two_point_doubling_is_two() {
        let s = line(&[0.0, 1.0], vec![1.0, 1.0]);
        assert_eq!(doubling_constant(&s).unwrap().c_nu, 2.0);
    }

    #[test]
    fn grid_doubling_is_three() {
        let g = grid(10);
        let est = doubling_constant(&g).unwrap();
        assert_eq!(est.c_nu, 3.0);
        assert!(doubling_brute(&g) <= est.c_nu);
        let w = est.witness_point;
        let r = est.witness_radius;
        assert_eq!(g.ball(w, 2.0 * r).mass / g.ball(w, r).mass, est.c_nu);
    }

    #[test]
    fn exact_value_dominates_brute_force() {
        let s = line(&[0.0, 0.1, 0.45, 1.0, 1.7, 4.0, 4.2], vec![1.0, 0.5, 2.0, 1.0, 0.3, 0.9, 1.1]);
        let exact = doubling_constant(&s).unwrap().c_nu;
        let brute = doubling_brute(&s);
        assert!(brute <= exact);
        assert!(brute >= 0.999 * exact, "brute {brute} exact {exact}");
    }

    #[test]
    fn perfectness_grid_is_two() {
        let est = uniform_perfectness(&grid(20), 1.0).unwrap();
        assert!((est.kappa.value() - 2.0).abs() < 1e-8);
        assert!(est.kappa.value() > 2.0);
    }

    #[test]
    fn perfectness_gap_gives_large_kappa() {
        let s = line(&[0.0, 1.0, 100.0], vec![1.0; 3]);
        let est = uniform_perfectness(&s, 0.0).unwrap();
        assert!(est.kappa.value() >= 100.0);
        assert_eq!(est.witness_radius, Some(1.0));
    }

    #[test]
    fn perfectness_two_points_just_above_one() {
        let s = line(&[0.0, 1.0], vec![1.0, 1.0]);
        let k = uniform_perfectness(&s, 0.0).unwrap().kappa.value();
        assert!(k > 1.0 && k < 1.0 + 1e-6);
    }

    #[test]
    fn perfectness_includes_r_equal_m0() {
        let s = line(&[0.0, 0.5, 3.0], vec![1.0; 3]);
        let est = uniform_perfectness(&s, 1.0).unwrap();
        assert!(est.kappa.value() >= 3.0);
        assert_eq!(est.witness_radius, Some(1.0));
    }

    #[test]
    fn bad_gauge_rejected() {
        assert_eq!(uniform_perfectness(&grid(3), 0.5).unwrap_err(), AnalysisError::BadGauge(0.5));
    }

    #[test]
    fn measure_inverse_examples() {
        let g = grid(10);
        assert_eq!(measure_inverse(&g, 2.5).unwrap(), 2.0);
        assert_eq!(measure_inverse(&g, 0.0).unwrap(), 0.0);
        assert!(matches!(measure_inverse(&g, 10.0), Err(AnalysisError::OutOfRange { .. })));
        let punctured = Space::from_coords(
            (0..3).map(PointId::from).collect(),
            &[vec![0.0], vec![0.5], vec![2.0]],
            vec![0.0, 1.0, 1.0],
            0,
            SpaceFlags { punctured: true, unbounded: false },
        )
        .unwrap();
        assert_eq!(measure_inverse(&punctured, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn reverse_doubling_on_grid_is_near_one() {
        let g = grid(200);
        let kappa = uniform_perfectness(&g, 1.0).unwrap().kappa;
        let fit = reverse_doubling_fit(&g, 1.0, kappa).unwrap();
        assert!(fit.alpha > 0.0 && fit.alpha <= 1.0 + 1e-9);
        assert!((fit.alpha_slope - 1.0).abs() < 0.1, "slope {}", fit.alpha_slope);
        // the certified pair holds on a brute-force grid
        let p = g.base_profile();
        for i in 1..40 {
            for j in (i + 1)..60 {
                let (r, big) = (i as f64 * 3.3, j as f64 * 3.3);
                if big < 2.0 * 199.0 {
                    assert!(p.mass_below(r) / p.mass_below(big) <= fit.lambda * (r / big).powf(fit.alpha) * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn reverse_doubling_single_scale_is_vacuous() {
        let s = line(&[0.0, 1.0], vec![1.0, 1.0]);
        let fit = reverse_doubling_fit(&s, 1.0, Kappa::Finite(1.0 + 1e-9)).unwrap();
        assert_eq!(fit.alpha, 1.0);
        assert!(fit.lambda >= 1.0);
    }
}
