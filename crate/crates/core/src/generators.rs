//! Deterministic test spaces and test fields.
//!
//! Every family places the base point (id 0) at the geometric origin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GeneratorError;
use crate::space::{PointId, Space, SpaceFlags};

pub const MAX_DEPTH: u32 = 12;
pub const MAX_POINTS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `{0, s, 2s, …, (n−1)s}` on a half-line.
    GridSegment { n: usize, spacing: f64 },
    /// Midpoints of the `2^depth` surviving intervals of the middle-cut
    /// construction on `[0,1]` (each step keeps two intervals of relative
    /// length `ratio`), translated so the leftmost point is 0.
    Cantor { depth: u32, ratio: f64 },
    /// `{0, 1, …, n−1}` with `ν(B_r) = ⌈r⌉^w`.
    WeightedHalfLine { n: usize, w: f64 },
    /// The lattice `{0, …, side−1}²` with the base at a corner.
    GridPatch2D { side: usize },
    /// `{0, 1, gap, gap+1}`: not uniformly perfect at the base.
    ClusterCounterexample { gap: f64 },
    /// `{0} ∪ {2^{-k} : 1 ≤ k ≤ levels} ∪ {1, …, n}`, points accumulating at
    /// the base, with masses matching the local spacing.
    AccumulatingGrid { n: usize, levels: u32 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MassPolicy {
    /// Equal masses summing to 1 for the Cantor family, unit masses otherwise.
    Uniform,
    /// The family's own mass profile.
    #[default]
    Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub family: Family,
    #[serde(default)]
    pub mass: MassPolicy,
    /// Only used for randomized test fields.
    #[serde(default)]
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(family: Family) -> Self {
        GeneratorSpec { family, mass: MassPolicy::Profile, seed: 0 }
    }
}

impl Family {
    pub fn grid(n: usize) -> Self {
        Family::GridSegment { n, spacing: 1.0 }
    }

    pub fn cantor(depth: u32) -> Self {
        Family::Cantor { depth, ratio: 1.0 / 3.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::GridSegment { .. } => "grid",
            Family::Cantor { .. } => "cantor",
            Family::WeightedHalfLine { .. } => "weighted_half_line",
            Family::GridPatch2D { .. } => "grid2d",
            Family::ClusterCounterexample { .. } => "cluster",
            Family::AccumulatingGrid { .. } => "accumulating_grid",
        }
    }

    /// The refinement parameter (depth or size).
    pub fn level(&self) -> f64 {
        match *self {
            Family::GridSegment { n, .. } | Family::WeightedHalfLine { n, .. } => n as f64,
            Family::Cantor { depth, .. } => depth as f64,
            Family::GridPatch2D { side } => side as f64,
            Family::ClusterCounterexample { gap } => gap,
            Family::AccumulatingGrid { levels, .. } => levels as f64,
        }
    }
}

fn out_of_range(msg: String) -> GeneratorError {
    GeneratorError::ParamOutOfRange(msg)
}

fn check_count(n: usize, min: usize) -> Result<(), GeneratorError> {
    if n < min || n > MAX_POINTS {
        return Err(out_of_range(format!("{n} points; allowed {min}..={MAX_POINTS}")));
    }
    Ok(())
}

/// Coordinates, masses and flags of a family.
fn layout(spec: &GeneratorSpec) -> Result<(Vec<Vec<f64>>, Vec<f64>, SpaceFlags), GeneratorError> {
    let unbounded = SpaceFlags { unbounded: true, punctured: false };
    let uniform = spec.mass == MassPolicy::Uniform;
    Ok(match spec.family {
        Family::GridSegment { n, spacing } => {
            check_count(n, 2)?;
            if !(spacing > 0.0 && spacing.is_finite()) {
                return Err(out_of_range(format!("spacing {spacing}")));
            }
            ((0..n).map(|k| vec![k as f64 * spacing]).collect(), vec![1.0; n], unbounded)
        }
        Family::Cantor { depth, ratio } => {
            if !(1..=MAX_DEPTH).contains(&depth) {
                return Err(out_of_range(format!("depth {depth}; allowed 1..={MAX_DEPTH}")));
            }
            if !(ratio > 0.0 && ratio < 0.5) {
                return Err(out_of_range(format!("ratio {ratio}; allowed (0, 1/2)")));
            }
            let mut lefts = vec![0.0];
            let mut len = 1.0;
            for _ in 0..depth {
                let child = len * ratio;
                lefts = lefts.iter().flat_map(|&a| [a, a + len - child]).collect();
                len = child;
            }
            let shift = lefts[0] + 0.5 * len;
            let n = lefts.len();
            let coords = lefts.iter().map(|&a| vec![a + 0.5 * len - shift]).collect();
            (coords, vec![1.0 / n as f64; n], SpaceFlags::default())
        }
        Family::WeightedHalfLine { n, w } => {
            check_count(n, 2)?;
            if !(w > 0.0 && w.is_finite()) {
                return Err(out_of_range(format!("exponent {w}")));
            }
            let mass = if uniform {
                vec![1.0; n]
            } else {
                (0..n).map(|k| if k == 0 { 1.0 } else { ((k + 1) as f64).powf(w) - (k as f64).powf(w) }).collect()
            };
            ((0..n).map(|k| vec![k as f64]).collect(), mass, unbounded)
        }
        Family::GridPatch2D { side } => {
            if side < 2 || side * side > MAX_POINTS {
                return Err(out_of_range(format!("side {side}; at most {MAX_POINTS} points")));
            }
            let coords = (0..side * side).map(|k| vec![(k % side) as f64, (k / side) as f64]).collect();
            (coords, vec![1.0; side * side], unbounded)
        }
        Family::ClusterCounterexample { gap } => {
            if !(gap >= 2.0 && gap.is_finite()) {
                return Err(out_of_range(format!("gap {gap}; must be at least 2")));
            }
            (vec![vec![0.0], vec![1.0], vec![gap], vec![gap + 1.0]], vec![1.0; 4], SpaceFlags::default())
        }
        Family::AccumulatingGrid { n, levels } => {
            check_count(n + levels as usize + 1, 3)?;
            if n == 0 || levels == 0 || levels > 60 {
                return Err(out_of_range(format!("n {n}, levels {levels}")));
            }
            let mut coords = vec![vec![0.0]];
            let mut mass = vec![0.5f64.powi(levels as i32)];
            for k in (1..=levels).rev() {
                let x = 0.5f64.powi(k as i32);
                coords.push(vec![x]);
                mass.push(x);
            }
            for k in 1..=n {
                coords.push(vec![k as f64]);
                mass.push(1.0);
            }
            if uniform {
                mass = vec![1.0; coords.len()];
            }
            (coords, mass, SpaceFlags { unbounded: true, punctured: true })
        }
    })
}

/// Builds the space of a spec; fully validated.
pub fn generate(spec: &GeneratorSpec) -> Result<Space, GeneratorError> {
    let (coords, mass, flags) = layout(spec)?;
    let ids = (0..coords.len()).map(PointId::from).collect();
    Ok(Space::from_coords(ids, &coords, mass, 0, flags)?)
}

/// Coordinates of the generated points (row per point).
pub fn coordinates(spec: &GeneratorSpec) -> Result<Vec<Vec<f64>>, GeneratorError> {
    Ok(layout(spec)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    Constant { value: f64 },
    /// `|x| = d(x, b)`, the coordinate on half-line families.
    Radius,
    /// `min(|x|, cap)`.
    CappedRadius { cap: f64 },
    /// Indicator of the points strictly closer to the farthest point from
    /// `b` than to `b`.
    HalfIndicator,
    /// A random 1-Lipschitz field.
    RandomLipschitz { seed: u64 },
}

impl FieldKind {
    pub fn label(&self) -> String {
        match self {
            FieldKind::Constant { value } => format!("constant({value})"),
            FieldKind::Radius => "radius".into(),
            FieldKind::CappedRadius { cap } => format!("capped_radius({cap})"),
            FieldKind::HalfIndicator => "half_indicator".into(),
            FieldKind::RandomLipschitz { seed } => format!("random_lipschitz({seed})"),
        }
    }
}

/// The four standard fields used by the energy checks.
pub fn standard_fields(space: &Space, seed: u64) -> Vec<FieldKind> {
    let cap = space.r_infinity() / 4.0;
    vec![
        FieldKind::Radius,
        FieldKind::CappedRadius { cap: if cap > 0.0 { cap } else { 1.0 } },
        FieldKind::HalfIndicator,
        FieldKind::RandomLipschitz { seed },
    ]
}

pub fn test_field(space: &Space, kind: FieldKind) -> Vec<f64> {
    let n = space.len();
    match kind {
        FieldKind::Constant { value } => vec![value; n],
        FieldKind::Radius => (0..n).map(|i| space.radius_of(i)).collect(),
        FieldKind::CappedRadius { cap } => (0..n).map(|i| space.radius_of(i).min(cap)).collect(),
        FieldKind::HalfIndicator => {
            let far = crate::deform::farthest_from(space, space.base());
            let b = space.base();
            (0..n).map(|i| if space.dist(i, far) < space.dist(i, b) { 1.0 } else { 0.0 }).collect()
        }
        FieldKind::RandomLipschitz { seed } => random_lipschitz(space, seed),
    }
}

pub fn test_fields(space: &Space, kinds: &[FieldKind]) -> Vec<Vec<f64>> {
    kinds.iter().map(|&k| test_field(space, k)).collect()
}

/// Greedy extension: each point draws uniformly from the interval of values
/// compatible with the points already assigned, which is never empty.
fn random_lipschitz(space: &Space, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = space.len();
    let mut u = Vec::with_capacity(n);
    for x in 0..n {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (y, &uy) in u.iter().enumerate() {
            let d = space.dist(x, y);
            lo = lo.max(uy - d);
            hi = hi.min(uy + d);
        }
        let v = if x == 0 {
            rng.gen_range(0.0..1.0)
        } else if hi > lo {
            lo + (hi - lo) * rng.gen_range(0.0..1.0)
        } else {
            0.5 * (lo + hi)
        };
        u.push(v);
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::uniform_perfectness;

    #[test]
    fn grid_segment() {
        let s = generate(&GeneratorSpec::new(Family::GridSegment { n: 4, spacing: 1.0 })).unwrap();
        assert_eq!(s.row(0), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(s.masses(), &[1.0; 4]);
        assert!(s.flags().unbounded);
    }

    #[test]
    fn cantor_midpoints() {
        let s = generate(&GeneratorSpec::new(Family::cantor(1))).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.dist(0, 1) - 2.0 / 3.0).abs() < 1e-15);
        let s = generate(&GeneratorSpec::new(Family::cantor(2))).unwrap();
        let expected = [0.0, 2.0 / 9.0, 6.0 / 9.0, 8.0 / 9.0];
        for (i, e) in expected.iter().enumerate() {
            assert!((s.radius_of(i) - e).abs() < 1e-15);
        }
        assert_eq!(s.masses(), &[0.25; 4]);
    }

    #[test]
    fn cluster_is_not_perfect() {
        let s = generate(&GeneratorSpec::new(Family::ClusterCounterexample { gap: 100.0 })).unwrap();
        assert!(uniform_perfectness(&s, 0.0).unwrap().kappa.value() >= 100.0);
    }

    #[test]
    fn weighted_half_line_profile() {
        let s = generate(&GeneratorSpec::new(Family::WeightedHalfLine { n: 50, w: 2.0 })).unwrap();
        for k in 1..50 {
            let m = s.ball(0, k as f64 + 0.5).mass;
            assert!((m - ((k + 1) * (k + 1)) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn ranges_are_enforced() {
        for fam in [
            Family::cantor(0),
            Family::cantor(13),
            Family::grid(5000),
            Family::grid(1),
            Family::GridPatch2D { side: 65 },
            Family::ClusterCounterexample { gap: 1.0 },
            Family::Cantor { depth: 3, ratio: 0.5 },
        ] {
            assert!(matches!(generate(&GeneratorSpec::new(fam)), Err(GeneratorError::ParamOutOfRange(_))), "{fam:?}");
        }
    }

    #[test]
    fn fields() {
        let two = generate(&GeneratorSpec::new(Family::grid(2))).unwrap();
        assert_eq!(test_field(&two, FieldKind::HalfIndicator), vec![0.0, 1.0]);
        assert_eq!(test_field(&two, FieldKind::Constant { value: 3.0 }), vec![3.0, 3.0]);
        let c = generate(&GeneratorSpec::new(Family::cantor(5))).unwrap();
        let u = test_field(&c, FieldKind::RandomLipschitz { seed: 7 });
        for x in 0..c.len() {
            for y in 0..c.len() {
                assert!((u[x] - u[y]).abs() <= c.dist(x, y) * (1.0 + 1e-12));
            }
        }
        assert_eq!(u, test_field(&c, FieldKind::RandomLipschitz { seed: 7 }));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = GeneratorSpec::new(Family::WeightedHalfLine { n: 10, w: 0.5 });
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"family\":\"weighted_half_line\""));
        let back: GeneratorSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
