//! Finite metric measure spaces: validated storage, open balls and radial profiles.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{SpaceError, Violation};

/// Relative slack allowed in the triangle inequality, measured against the
/// largest side of the triple.
pub const TRIANGLE_REL_TOL: f64 = 1e-12;

/// Opaque point identifier. JSON inputs may use integers or strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointId {
    Int(i64),
    Str(String),
}

impl fmt::Display for PointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointId::Int(i) => write!(f, "{i}"),
            PointId::Str(s) => f.write_str(s),
        }
    }
}

impl From<usize> for PointId {
    fn from(i: usize) -> Self {
        PointId::Int(i as i64)
    }
}

/// Role flags consumed by the transform preconditions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceFlags {
    /// The space is a finite truncation of an unbounded space.
    #[serde(default)]
    pub unbounded: bool,
    /// The base point is a puncture: its mass may be zero.
    #[serde(default)]
    pub punctured: bool,
}

/// A finite metric measure space `(Z, d, ν)` with a base point `b`.
///
/// Immutable once built; every constructor validates the metric axioms.
#[derive(Debug, Clone, PartialEq)]
pub struct Space {
    ids: Vec<PointId>,
    dist: Vec<f64>,
    mass: Vec<f64>,
    base: usize,
    flags: SpaceFlags,
}

/// Result of an open-ball query `B(center, radius) = {y : d(center, y) < radius}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallQueryResult {
    pub center: usize,
    pub radius: f64,
    pub members: Vec<usize>,
    pub mass: f64,
}

impl Space {
    /// Validates and builds a space from a row-major distance matrix.
    pub fn build(
        ids: Vec<PointId>,
        dist: Vec<f64>,
        mass: Vec<f64>,
        base: usize,
        flags: SpaceFlags,
    ) -> Result<Self, SpaceError> {
        Self::build_inner(ids, dist, mass, base, flags, true)
    }

    /// Builds a space whose matrix is a metric by construction (Euclidean
    /// coordinates, shortest-path closures). Everything except the O(n³)
    /// triangle scan is still validated.
    pub fn build_metric_by_construction(
        ids: Vec<PointId>,
        dist: Vec<f64>,
        mass: Vec<f64>,
        base: usize,
        flags: SpaceFlags,
    ) -> Result<Self, SpaceError> {
        Self::build_inner(ids, dist, mass, base, flags, false)
    }

    /// Builds a space from Euclidean coordinates (one row per point).
    pub fn from_coords(
        ids: Vec<PointId>,
        coords: &[Vec<f64>],
        mass: Vec<f64>,
        base: usize,
        flags: SpaceFlags,
    ) -> Result<Self, SpaceError> {
        let n = coords.len();
        if let Some(dim) = coords.first().map(Vec::len) {
            if coords.iter().any(|c| c.len() != dim) {
                return Err(SpaceError::Shape("coordinate rows differ in dimension".into()));
            }
        }
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = coords[i]
                    .iter()
                    .zip(&coords[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        Self::build_inner(ids, dist, mass, base, flags, false)
    }

    fn build_inner(
        ids: Vec<PointId>,
        dist: Vec<f64>,
        mass: Vec<f64>,
        base: usize,
        flags: SpaceFlags,
        check_triangle: bool,
    ) -> Result<Self, SpaceError> {
        let n = ids.len();
        if mass.len() != n || dist.len() != n * n {
            return Err(SpaceError::Shape(format!(
                "{} ids, {} masses, {} distance entries (expected {})",
                n,
                mass.len(),
                dist.len(),
                n * n
            )));
        }
        if base >= n && n > 0 {
            return Err(SpaceError::Shape(format!("base index {base} out of range for {n} points")));
        }

        let mut violations = Vec::new();
        if n < 2 {
            violations.push(Violation::TooFewPoints { n });
        }
        if let Some(i) = dist.iter().position(|d| !d.is_finite() || *d < 0.0) {
            violations.push(Violation::InvalidDistance { i: i / n.max(1), j: i % n.max(1), value: dist[i] });
        }
        if let Some(i) = (0..n).find(|&i| dist[i * n + i] != 0.0) {
            violations.push(Violation::NonZeroDiagonal { i, value: dist[i * n + i] });
        }
        if let Some((i, j)) = upper_pairs(n).find(|&(i, j)| dist[i * n + j] != dist[j * n + i]) {
            violations.push(Violation::NonSymmetric { i, j, dij: dist[i * n + j], dji: dist[j * n + i] });
        }
        if let Some((i, j)) = upper_pairs(n).find(|&(i, j)| dist[i * n + j] == 0.0) {
            violations.push(Violation::ZeroDistanceDistinctPoints { i, j });
        }
        if let Some(i) = mass.iter().position(|m| !m.is_finite() || *m < 0.0) {
            violations.push(Violation::NegativeMass { i, value: mass[i] });
        } else if let Some(i) = (0..n).find(|&i| mass[i] == 0.0 && !(i == base && flags.punctured)) {
            violations.push(Violation::ZeroMass { i, base: i == base });
        }
        if check_triangle && violations.is_empty() {
            if let Some(v) = worst_triangle_violation(&dist, n) {
                violations.push(v);
            }
        }
        if !violations.is_empty() {
            return Err(SpaceError::Invalid(violations));
        }
        Ok(Space { ids, dist, mass, base, flags })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[PointId] {
        &self.ids
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn flags(&self) -> SpaceFlags {
        self.flags
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.mass[i]
    }

    /// Row-major distance matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.dist
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.dist[i * n..(i + 1) * n]
    }

    /// `|x| = d(x, b)`.
    pub fn radius_of(&self, x: usize) -> f64 {
        self.dist(x, self.base)
    }

    /// `R_∞ = max |x|`.
    pub fn r_infinity(&self) -> f64 {
        self.row(self.base).iter().copied().fold(0.0, f64::max)
    }

    pub fn total_mass(&self) -> f64 {
        self.sorted_from(self.base).iter().map(|&i| self.mass[i]).sum()
    }

    /// Indices ordered by `(d(center, ·), index)`. All mass sums over balls
    /// accumulate in this order so that ball queries and profiles agree bit
    /// for bit.
    pub fn sorted_from(&self, center: usize) -> Vec<usize> {
        let row = self.row(center);
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        order
    }

    /// Open ball query. Radius 0 gives the empty ball.
    pub fn ball(&self, center: usize, radius: f64) -> BallQueryResult {
        let row = self.row(center);
        let mut mass = 0.0;
        for &i in self.sorted_from(center).iter().take_while(|&&i| row[i] < radius) {
            mass += self.mass[i];
        }
        let members = (0..self.len()).filter(|&i| row[i] < radius).collect();
        BallQueryResult { center, radius, members, mass }
    }

    /// Distinct values of `d(center, ·)`, ascending (always starts with 0).
    pub fn critical_radii(&self, center: usize) -> Vec<f64> {
        let mut radii: Vec<f64> = self.row(center).to_vec();
        radii.sort_by(f64::total_cmp);
        radii.dedup();
        radii
    }

    /// Ball-measure step function `r ↦ ν(B(center, r))`.
    pub fn profile(&self, center: usize) -> RadialProfile {
        RadialProfile::new(self, center)
    }

    /// Ball-measure profile around the base point, `r ↦ ν(B_r)`.
    pub fn base_profile(&self) -> RadialProfile {
        self.profile(self.base)
    }

    /// Every center's profile; `ν(B(x, r))` in `O(log n)`.
    pub fn ball_index(&self) -> BallIndex {
        BallIndex::new(self)
    }

    /// Same points, masses multiplied by `factor`.
    pub fn scale_masses(&self, factor: f64) -> Result<Space, SpaceError> {
        let mass = self.mass.iter().map(|m| m * factor).collect();
        Space::build_metric_by_construction(self.ids.clone(), self.dist.clone(), mass, self.base, self.flags)
    }

    /// Same points, distances multiplied by `factor`.
    pub fn scale_distances(&self, factor: f64) -> Result<Space, SpaceError> {
        let dist = self.dist.iter().map(|d| d * factor).collect();
        Space::build_metric_by_construction(self.ids.clone(), dist, self.mass.clone(), self.base, self.flags)
    }

    /// Copy with different role flags (revalidates the base mass rule).
    pub fn with_flags(&self, flags: SpaceFlags) -> Result<Space, SpaceError> {
        Space::build_metric_by_construction(self.ids.clone(), self.dist.clone(), self.mass.clone(), self.base, flags)
    }

    /// Copy with a different base point.
    pub fn with_base(&self, base: usize) -> Result<Space, SpaceError> {
        Space::build_metric_by_construction(self.ids.clone(), self.dist.clone(), self.mass.clone(), base, self.flags)
    }

    /// Restriction to `keep` (in the given order). The base must be kept
    /// unless `new_base` names another retained index.
    pub fn restrict(&self, keep: &[usize], new_base: usize, flags: SpaceFlags) -> Result<Space, SpaceError> {
        let n = self.len();
        let m = keep.len();
        let mut dist = vec![0.0; m * m];
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                dist[a * m + b] = self.dist[i * n + j];
            }
        }
        let base = keep
            .iter()
            .position(|&i| i == new_base)
            .ok_or_else(|| SpaceError::Shape(format!("base {new_base} not among retained points")))?;
        Space::build_metric_by_construction(
            keep.iter().map(|&i| self.ids[i].clone()).collect(),
            dist,
            keep.iter().map(|&i| self.mass[i]).collect(),
            base,
            flags,
        )
    }
}

fn upper_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j)))
}

/// Scans all triples; returns the triple `(i, j, k)` maximizing the relative
/// excess of `d(i,k)` over the detour `d(i,j) + d(j,k)`.
fn worst_triangle_violation(dist: &[f64], n: usize) -> Option<Violation> {
    use rayon::prelude::*;
    let worst = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best: Option<(f64, usize, usize, usize)> = None;
            for k in (i + 1)..n {
                let dik = dist[i * n + k];
                for j in 0..n {
                    if j == i || j == k {
                        continue;
                    }
                    let dij = dist[i * n + j];
                    let djk = dist[j * n + k];
                    let largest = dik.max(dij).max(djk);
                    let excess = dik - (dij + djk);
                    if excess > TRIANGLE_REL_TOL * largest {
                        let rel = excess / largest;
                        if best.is_none_or(|b| rel > b.0) {
                            best = Some((rel, i, j, k));
                        }
                    }
                }
            }
            best
        })
        .reduce(
            || None,
            |a, b| match (a, b) {
                (Some(x), Some(y)) => Some(if y.0 > x.0 || (y.0 == x.0 && (y.1, y.2, y.3) < (x.1, x.2, x.3)) { y } else { x }),
                (x, None) => x,
                (None, y) => y,
            },
        );
    worst.map(|(rel, i, j, k)| Violation::TriangleViolation { i, j, k, relative_excess: rel })
}

/// The step function `r ↦ ν(B(center, r))` of an open ball.
///
/// `radii` are the distinct distances from the center; `cum[i]` is the mass
/// of the closed ball of radius `radii[i]`, so the open ball of radius `r`
/// has mass `cum[i]` for `r ∈ (radii[i], radii[i+1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub radii: Vec<f64>,
    pub cum: Vec<f64>,
}

impl RadialProfile {
    pub fn new(space: &Space, center: usize) -> Self {
        let row = space.row(center);
        let mut radii = Vec::new();
        let mut cum: Vec<f64> = Vec::new();
        let mut acc = 0.0;
        for i in space.sorted_from(center) {
            acc += space.mass(i);
            if radii.last() == Some(&row[i]) {
                *cum.last_mut().unwrap() = acc;
            } else {
                radii.push(row[i]);
                cum.push(acc);
            }
        }
        RadialProfile { radii, cum }
    }

    /// `ν(B(center, r))` for the open ball.
    pub fn mass_below(&self, r: f64) -> f64 {
        let k = self.radii.partition_point(|&c| c < r);
        if k == 0 {
            0.0
        } else {
            self.cum[k - 1]
        }
    }

    pub fn total(&self) -> f64 {
        *self.cum.last().unwrap_or(&0.0)
    }

    pub fn max_radius(&self) -> f64 {
        *self.radii.last().unwrap_or(&0.0)
    }
}

/// Sorted neighbour lists and prefix masses for every center.
#[derive(Debug, Clone)]
pub struct BallIndex {
    n: usize,
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl BallIndex {
    pub fn new(space: &Space) -> Self {
        let n = space.len();
        let mut sorted = Vec::with_capacity(n * n);
        let mut prefix = Vec::with_capacity(n * (n + 1));
        for c in 0..n {
            let row = space.row(c);
            let order = space.sorted_from(c);
            let mut acc = 0.0;
            prefix.push(0.0);
            for &i in &order {
                sorted.push(row[i]);
                acc += space.mass(i);
                prefix.push(acc);
            }
        }
        BallIndex { n, sorted, prefix }
    }

    /// `ν(B(center, r))` for the open ball.
    #[inline]
    pub fn mass(&self, center: usize, r: f64) -> f64 {
        let row = &self.sorted[center * self.n..(center + 1) * self.n];
        let k = row.partition_point(|&d| d < r);
        self.prefix[center * (self.n + 1) + k]
    }

    /// Number of points in the open ball.
    #[inline]
    pub fn count(&self, center: usize, r: f64) -> usize {
        let row = &self.sorted[center * self.n..(center + 1) * self.n];
        row.partition_point(|&d| d < r)
    }

    /// Distances from `center`, ascending.
    pub fn sorted_distances(&self, center: usize) -> &[f64] {
        &self.sorted[center * self.n..(center + 1) * self.n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64], mass: Vec<f64>) -> Space {
        let coords: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
        let ids = (0..points.len()).map(PointId::from).collect();
        Space::from_coords(ids, &coords, mass, 0, SpaceFlags::default()).unwrap()
    }

    fn grid(n: usize) -> Space {
        let pts: Vec<f64> = (0..n).map(|k| k as f64).collect();
        line(&pts, vec![1.0; n])
    }

    #[test]
    fn smallest_legal_space() {
        let s = Space::build(vec![0.into(), 1.into()], vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 1.0], 0, SpaceFlags::default())
            .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.critical_radii(0), vec![0.0, 1.0]);
    }

    #[test]
    fn triangle_violation_names_triple() {
        let d = vec![0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0];
        let err = Space::build((0..3).map(PointId::from).collect(), d, vec![1.0; 3], 0, SpaceFlags::default())
            .unwrap_err();
        let SpaceError::Invalid(v) = err else { panic!("expected validation failure") };
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::TriangleViolation { i, j, k, .. } => assert_eq!((*i, *j, *k), (0, 1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_lists_every_axiom() {
        let d = vec![0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let err = Space::build((0..3).map(PointId::from).collect(), d, vec![1.0, -1.0, 1.0], 0, SpaceFlags::default())
            .unwrap_err();
        let SpaceError::Invalid(v) = err else { panic!() };
        assert!(v.iter().any(|v| matches!(v, Violation::NonSymmetric { .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::ZeroDistanceDistinctPoints { .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::NegativeMass { i: 1, .. })));
    }

    #[test]
    fn too_few_points() {
        let err = Space::build(vec![0.into()], vec![0.0], vec![1.0], 0, SpaceFlags::default()).unwrap_err();
        assert!(matches!(err, SpaceError::Invalid(ref v) if matches!(v[0], Violation::TooFewPoints { n: 1 })));
    }

    #[test]
    fn zero_base_mass_needs_puncture_flag() {
        let ids: Vec<PointId> = (0..2).map(PointId::from).collect();
        let d = vec![0.0, 1.0, 1.0, 0.0];
        assert!(Space::build(ids.clone(), d.clone(), vec![0.0, 1.0], 0, SpaceFlags::default()).is_err());
        let flags = SpaceFlags { punctured: true, ..Default::default() };
        assert!(Space::build(ids.clone(), d.clone(), vec![0.0, 1.0], 0, flags).is_ok());
        // only the base may carry zero mass
        assert!(Space::build(ids, d, vec![1.0, 0.0], 0, flags).is_err());
    }

    #[test]
    fn grid_ball_and_radius() {
        let g = grid(10);
        let b = g.ball(0, 3.0);
        assert_eq!(b.members, vec![0, 1, 2]);
        assert_eq!(b.mass, 3.0);
        assert_eq!(g.radius_of(7), 7.0);
        assert_eq!(g.radius_of(g.base()), 0.0);
        assert!(g.ball(4, 0.0).members.is_empty());
        assert_eq!(g.ball(4, 0.0).mass, 0.0);
        assert_eq!(grid(4).critical_radii(0), vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn open_ball_excludes_the_boundary() {
        let s = line(&[0.0, 1.0], vec![1.0, 2.5]);
        let b = s.ball(1, 1.0);
        assert_eq!(b.members, vec![1]);
        assert_eq!(b.mass, 2.5);
    }

    #[test]
    fn profile_matches_ball_queries_exactly() {
        let s = line(&[0.0, 0.3, 0.7, 1.1, 2.9, 3.0], vec![0.1, 0.7, 0.3, 0.2, 0.9, 1.3]);
        let p = s.base_profile();
        let idx = s.ball_index();
        for r in [0.0, 0.1, 0.3, 0.31, 0.7, 1.1, 2.0, 3.0, 3.5] {
            assert_eq!(p.mass_below(r), s.ball(0, r).mass);
            assert_eq!(idx.mass(0, r), s.ball(0, r).mass);
        }
    }
}
