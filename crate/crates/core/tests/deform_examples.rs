mod common;

use common::{chain_oracle, line, rel_err, UNBOUNDED};
use metricdeform::deform::{self, TransformOptions};
use metricdeform::density::{canonical_density, MetricDensity, TabulatedDensity};
use metricdeform::error::DeformError;
use metricdeform::generators::{generate, Family, GeneratorSpec};
use metricdeform::space::SpaceFlags;
use metricdeform::verify::check_sandwich_and_bounds;

fn grid(n: usize) -> metricdeform::space::Space {
    generate(&GeneratorSpec::new(Family::grid(n))).unwrap()
}

fn cantor(depth: u32) -> metricdeform::space::Space {
    generate(&GeneratorSpec::new(Family::cantor(depth))).unwrap()
}

#[test]
fn grid_density_values() {
    let g = grid(10);
    let rho = canonical_density(&g, 1.0, 1.0).unwrap();
    for k in 0..10 {
        let expect = 1.0 / ((k + 1) * (k + 1)) as f64;
        assert!(rel_err(rho.eval(k as f64), expect) < 1e-15);
    }
    assert!(canonical_density(&g, 0.0, 1.0).unwrap().value_at_zero().is_infinite());
}

#[test]
fn two_point_sigma_two() {
    let s = line(&[0.0, 1.0], vec![1.0, 1.0], SpaceFlags::default());
    let rho = canonical_density(&s, 1.0, 2.0).unwrap();
    assert!(rel_err(rho.eval(1.0), 1.0 / (2.0 * 2f64.sqrt())) < 1e-15);
}

#[test]
fn grid_first_edge_matches_chain_enumeration() {
    let g = grid(8);
    let sph = deform::sphericalize(&g, 1.0, TransformOptions::default()).unwrap();
    assert_eq!(sph.dhat(0, 1), 1.25);
    let pts: Vec<usize> = (0..8).collect();
    for a in 0..8 {
        assert_eq!(sph.dhat(a, a), 0.0);
        for b in 0..8 {
            let oracle = chain_oracle(&g, &pts, sph.rho(), a, b);
            assert!(rel_err(sph.dhat(a, b), oracle) <= 1e-12);
        }
    }
    for k in 0..8 {
        let expect = 1.0 / ((k + 1) * (k + 1)) as f64;
        assert!(rel_err(sph.space().mass(k), expect) < 1e-15);
    }
}

#[test]
fn constant_density_is_a_rescaling() {
    let s = cantor(3);
    let c = 0.75;
    let d = deform::deform(&s, MetricDensity::Tabulated(TabulatedDensity::constant(c).unwrap()), 1.0).unwrap();
    for a in 0..s.len() {
        for b in 0..s.len() {
            assert!((d.dhat(a, b) - 2.0 * c * s.dist(a, b)).abs() <= 1e-14 * s.dist(a, b));
        }
    }
    let unit = deform::deform(&s, MetricDensity::Tabulated(TabulatedDensity::constant(1.0).unwrap()), 2.5).unwrap();
    assert_eq!(unit.space().masses(), s.masses());
}

#[test]
fn flattened_cantor_mass_and_diameter_grow() {
    let mut masses = Vec::new();
    let mut far = Vec::new();
    for depth in 3..=7 {
        let f = deform::flatten(&cantor(depth), 1.0, TransformOptions::default()).unwrap();
        assert_eq!(f.len(), (1 << depth) - 1);
        masses.push(f.space().total_mass());
        let b0 = f.space().base();
        far.push((0..f.len()).map(|x| f.dhat(b0, x)).fold(0.0, f64::max));
    }
    assert!(masses.windows(2).all(|w| w[1] > w[0]), "{masses:?}");
    assert!(far.windows(2).all(|w| w[1] > w[0]), "{far:?}");
}

#[test]
fn sphericalized_grid_diameter_stabilizes() {
    let mut diam = Vec::new();
    for e in 4..=8 {
        let s = deform::sphericalize(&grid((1 << e) + 1), 1.0, TransformOptions::default()).unwrap();
        let n = s.len();
        diam.push((0..n).flat_map(|a| (0..n).map(move |b| (a, b))).map(|(a, b)| s.dhat(a, b)).fold(0.0, f64::max));
    }
    let steps: Vec<f64> = diam.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(steps.iter().all(|&s| s > 0.0));
    assert!(steps.windows(2).all(|w| w[1] < w[0]), "{steps:?}");
}

#[test]
fn preconditions() {
    let two = line(&[0.0, 1.0], vec![1.0, 1.0], UNBOUNDED);
    assert!(matches!(
        deform::sphericalize(&two, 1.0, TransformOptions::default()),
        Err(DeformError::EmptyFarAnnulus)
    ));
    let bounded = cantor(3);
    assert!(matches!(
        deform::sphericalize(&bounded, 1.0, TransformOptions::default()),
        Err(DeformError::Precondition(_))
    ));
    let isolated = generate(&GeneratorSpec::new(Family::ClusterCounterexample { gap: 100.0 })).unwrap();
    assert!(matches!(
        deform::flatten(&isolated, 1.0, TransformOptions::default()),
        Err(DeformError::NotPerfectAtBase { .. })
    ));
    assert!(matches!(
        deform::transform(&grid(8), deform::TransformKind::Sphericalize, 0.0, 1.0, TransformOptions::default()),
        Err(DeformError::Precondition(_))
    ));
}

#[test]
fn inversion_of_accumulating_grid() {
    let s = generate(&GeneratorSpec::new(Family::AccumulatingGrid { n: 32, levels: 6 })).unwrap();
    let inv = deform::invert(&s, 1.0, TransformOptions::default()).unwrap();
    assert_eq!(inv.len(), s.len() - 1);
    // points near b move far from the new base, far points cluster
    let b0 = inv.space().base();
    let near_b = inv.deformed_index(s.len() - 1).unwrap_or(0);
    let radius_order: Vec<usize> = {
        let mut v: Vec<usize> = (0..inv.len()).collect();
        v.sort_by(|&a, &b| inv.source_radius(a).total_cmp(&inv.source_radius(b)));
        v
    };
    let closest = radius_order[0];
    assert!(inv.dhat(b0, closest) > inv.dhat(b0, near_b) || closest == b0);
    let reports = check_sandwich_and_bounds(&inv).unwrap();
    for name in ["integral_lower_bound", "far_pair_upper", "sandwich_lower", "sandwich_upper"] {
        let r = reports.iter().find(|r| r.statement == name).unwrap();
        assert!(r.passed && r.violations == 0, "{name}: {r:?}");
    }
}

#[test]
fn sigma_monotonicity_is_pointwise() {
    let s = generate(&GeneratorSpec::new(Family::WeightedHalfLine { n: 40, w: 1.5 })).unwrap();
    let lo = canonical_density(&s, 1.0, 1.0).unwrap();
    let hi = canonical_density(&s, 1.0, 2.0).unwrap();
    let profile = s.base_profile();
    for x in 0..s.len() {
        let r = s.radius_of(x);
        let ball = profile.mass_below(r + 1.0);
        let (a, b) = (lo.eval(r), hi.eval(r));
        if ball > 1.0 {
            assert!(b > a);
        } else if ball < 1.0 {
            assert!(b < a);
        } else {
            assert_eq!(a, b);
        }
    }
    let d1 = deform::deform(&s, lo.clone(), 1.0).unwrap();
    let d3 = deform::deform(&s, lo, 3.0).unwrap();
    for x in 0..s.len() {
        let rho = d1.rho()[x];
        assert!(rel_err(d3.space().mass(x), rho.powi(3) * s.mass(x)) < 1e-14);
    }
}

#[test]
fn infinity_interval_endpoints() {
    let g = grid(65);
    let sph = deform::sphericalize(&g, 1.0, TransformOptions::default()).unwrap();
    let inf = sph.infinity().unwrap();
    let far = inf.far_point;
    assert_eq!(inf.intervals[far].lower, 0.0);
    assert_eq!(inf.intervals[far].upper, inf.spread);
    assert!(inf.intervals.iter().all(|iv| iv.lower <= iv.upper));
    // the tail integral from 0 converges as the truncation grows
    let l0: Vec<f64> = [17, 33, 65, 129]
        .iter()
        .map(|&n| {
            let s = deform::sphericalize(&grid(n), 1.0, TransformOptions::default()).unwrap();
            s.infinity().unwrap().intervals[0].lower
        })
        .collect();
    assert!(l0.windows(2).all(|w| w[1] > w[0]));
    let steps: Vec<f64> = l0.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(steps.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn product_demo_examples() {
    let mut decay = Vec::new();
    for n in [16, 64, 256] {
        let g = grid(n + 1);
        let r = deform::product_deform_demo(&g, |t| (1.0 + t).powi(-2), 0, 1, true).unwrap();
        assert!(r.d_tilde.unwrap() <= r.two_hop_chain + 1e-15);
        decay.push(r.two_hop_chain);
    }
    assert!(decay.windows(2).all(|w| w[1] < w[0]));
    let c = 0.5;
    let g = grid(20);
    let r = deform::product_deform_demo(&g, |_| c, 3, 7, true).unwrap();
    assert!(rel_err(r.d_tilde.unwrap(), c * c * 4.0) < 1e-14);
}
