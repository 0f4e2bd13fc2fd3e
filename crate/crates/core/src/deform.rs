//! Metric and measure deformation by a radial density.
//!
//! The deformed distance is the chain infimum
//! `d̂(x,y) = inf Σ (ρ(x_j) + ρ(x_{j-1})) d(x_j, x_{j-1})`, which on a finite
//! space is the shortest-path metric of the complete graph with edge weights
//! `(ρ(x) + ρ(y)) d(x,y)`. The deformed measure is `ν̂({x}) = ρ(x)^σ ν({x})`.

use serde::Serialize;
use serde_json::json;

use crate::analysis::{self, Kappa, RadiusRange};
use crate::apsp::shortest_path_closure;
use crate::density::{canonical_density, MetricDensity};
use crate::error::DeformError;
use crate::io::SpaceFile;
use crate::space::{Space, SpaceFlags};

/// Largest uniform-perfectness constant accepted by the transform
/// preconditions unless overridden.
pub const DEFAULT_MAX_KAPPA: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Sphericalize,
    Flatten,
    Invert,
    /// Any user-supplied density.
    Custom,
}

impl TransformKind {
    pub fn gauge(self) -> Option<f64> {
        match self {
            TransformKind::Sphericalize => Some(1.0),
            TransformKind::Flatten | TransformKind::Invert => Some(0.0),
            TransformKind::Custom => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformOptions {
    pub max_kappa: f64,
    /// Turn the large-scale perfectness warning of `sphericalize` into an error.
    pub strict_large_scales: bool,
    /// Valid-annulus override (radii `|x|` in the source space).
    pub range: Option<RadiusRange>,
}

impl Default for TransformOptions {
    fn default() -> Self {
        TransformOptions { max_kappa: DEFAULT_MAX_KAPPA, strict_large_scales: false, range: None }
    }
}

/// Metric part of a deformation: retained indices, `ρ` on them and `d̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricPart {
    pub retained: Vec<usize>,
    pub rho: Vec<f64>,
    pub dhat: Vec<f64>,
}

/// `Z′`: the base is dropped iff `ρ(0) = ∞`.
pub fn retained_points(space: &Space, density: &MetricDensity) -> Vec<usize> {
    let drop_base = density.value_at_zero().is_infinite();
    (0..space.len()).filter(|&i| !(drop_base && i == space.base())).collect()
}

/// Chain metric for per-point densities `rho` (indexed like `space`).
pub fn chain_metric(space: &Space, rho: &[f64]) -> Vec<f64> {
    shortest_path_closure(space.len(), |i, j| (rho[i] + rho[j]) * space.dist(i, j))
}

/// `d̂` on `Z′` as all-pairs shortest paths.
pub fn deform_metric(space: &Space, density: &MetricDensity) -> Result<MetricPart, DeformError> {
    let retained = retained_points(space, density);
    let rho: Vec<f64> = retained.iter().map(|&i| density.eval(space.radius_of(i))).collect();
    if let Some(k) = rho.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(DeformError::BadDensity(format!("rho({}) = {} on a retained point", retained[k], rho[k])));
    }
    let m = retained.len();
    let dhat = shortest_path_closure(m, |a, b| (rho[a] + rho[b]) * space.dist(retained[a], retained[b]));
    Ok(MetricPart { retained, rho, dhat })
}

/// `ν̂({x}) = ρ(x)^σ ν({x})` on `Z′`.
pub fn deform_measure(space: &Space, density: &MetricDensity, sigma: f64) -> Result<Vec<f64>, DeformError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(DeformError::BadSigma(sigma));
    }
    Ok(retained_points(space, density)
        .into_iter()
        .map(|i| density.eval(space.radius_of(i)).powf(sigma) * space.mass(i))
        .collect())
}

/// Interval `[lower, upper]` containing the distance to the virtual point `∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfinityEstimates {
    /// Indexed like the deformed space.
    pub intervals: Vec<Interval>,
    /// Deformed index of the point farthest from `b`.
    pub far_point: usize,
    pub spread: f64,
    /// No point besides `far_point` had `|y| ≥ |far|/κ`; the spread then
    /// comes from the two farthest points.
    pub far_annulus_empty: bool,
}

/// A certified empirical constant with the pair that attains it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certified {
    pub value: f64,
    /// Deformed indices.
    pub witness: (usize, usize),
}

/// Empirical constants of the ball-shape, two-regime and large-ball
/// estimates, each certified over the valid annulus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsLedger {
    /// Largest `c0` such that `d̂(x,y) < c0 ν(B_{m(x)})^{-1/σ}` forces
    /// `m(x)/2 ≤ m(y) ≤ 2m(x)`.
    pub c0: Certified,
    /// `B(x, a1 r/ρ(x)) ⊆ B̂(x,r)` for `r ≤ c0 ν(B_{m(x)})^{-1/σ}`.
    pub a1: Certified,
    /// `B̂(x,r) ⊆ B(x, a2 r/ρ(x))` in the same range.
    pub a2: Certified,
    /// `c1 ρ(x) d ≤ d̂ ≤ C1 ρ(x) d` when `m(x)/2 ≤ m(y) ≤ 2m(x)`.
    pub c1: Option<Certified>,
    #[serde(rename = "C1")]
    pub c1_upper: Option<Certified>,
    /// `c2 λ(x) ≤ d̂(x,y) ≤ C2 λ(x)` when `m(y) ≥ 2m(x)`, `λ(x) = ν(B_{m(x)})^{-1/σ}`.
    pub c2: Option<Certified>,
    #[serde(rename = "C2")]
    pub c2_upper: Option<Certified>,
    /// `C′ = max(C2 C_ν^{1/σ}, 3 C1)`.
    #[serde(rename = "C_prime")]
    pub c_prime: f64,
    #[serde(rename = "C_nu")]
    pub c_nu: f64,
    pub range: RadiusRange,
    /// Deformed indices inside the valid annulus.
    pub valid_points: usize,
    pub excluded_points: usize,
}

/// `(Z′, d̂, ν̂)` together with its provenance.
#[derive(Debug, Clone)]
pub struct DeformedSpace {
    source: Space,
    space: Space,
    retained: Vec<usize>,
    rho: Vec<f64>,
    density: MetricDensity,
    sigma: f64,
    kind: TransformKind,
    kappa: Option<Kappa>,
    range: RadiusRange,
    infinity: Option<InfinityEstimates>,
    ledger: Option<ConstantsLedger>,
}

impl DeformedSpace {
    /// The deformed space `(Z′, d̂, ν̂)`.
    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn source(&self) -> &Space {
        &self.source
    }

    /// Source index of each deformed point.
    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    /// Deformed index of a source index, if retained.
    pub fn deformed_index(&self, source_index: usize) -> Option<usize> {
        self.retained.iter().position(|&i| i == source_index)
    }

    /// `ρ(x)` per deformed point.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn density(&self) -> &MetricDensity {
        &self.density
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn m0(&self) -> Option<f64> {
        match &self.density {
            MetricDensity::Canonical(c) => Some(c.m0),
            MetricDensity::Tabulated(_) => None,
        }
    }

    pub fn kappa(&self) -> Option<Kappa> {
        self.kappa
    }

    /// Valid annulus, in source radii.
    pub fn range(&self) -> RadiusRange {
        self.range
    }

    pub fn infinity(&self) -> Option<&InfinityEstimates> {
        self.infinity.as_ref()
    }

    pub fn ledger(&self) -> Option<&ConstantsLedger> {
        self.ledger.as_ref()
    }

    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }

    pub fn dhat(&self, a: usize, b: usize) -> f64 {
        self.space.dist(a, b)
    }

    /// Source distance between deformed points.
    pub fn d(&self, a: usize, b: usize) -> f64 {
        self.source.dist(self.retained[a], self.retained[b])
    }

    /// `|x|` in the source space.
    pub fn source_radius(&self, a: usize) -> f64 {
        self.source.radius_of(self.retained[a])
    }

    /// `m(x) = |x| + m0` (gauge 0 for custom densities).
    pub fn gauge(&self, a: usize) -> f64 {
        self.source_radius(a) + self.m0().unwrap_or(0.0)
    }

    /// `λ(x) = ν(B_{m(x)})^{-1/σ} = ρ(x) m(x)` for canonical densities.
    pub fn lambda(&self, a: usize) -> f64 {
        self.rho[a] * self.gauge(a)
    }

    /// Deformed indices whose source radius lies in the valid annulus.
    pub fn valid_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|a| self.range.contains(self.source_radius(a))).collect()
    }

    /// Serializable file: the deformed space plus a `"transform"` block.
    pub fn to_file(&self) -> SpaceFile {
        let mut file = SpaceFile::from_space(&self.space);
        file.transform = Some(json!({
            "kind": self.kind,
            "m0": self.m0(),
            "sigma": self.sigma,
            "density_kind": self.density.kind(),
            "source_base": self.source.ids()[self.source.base()],
            "rho": self.rho,
            "kappa": self.kappa,
            "range": self.range,
            "ledger": self.ledger,
            "infinity_estimates": self.infinity,
        }));
        file
    }
}

/// Builds `(Z′, d̂, ν̂)` for any density. The deformed base is `b` when
/// retained, otherwise the point farthest from `b` (lowest index on ties).
pub fn deform(space: &Space, density: MetricDensity, sigma: f64) -> Result<DeformedSpace, DeformError> {
    deform_as(space, density, sigma, TransformKind::Custom, None, TransformOptions::default())
}

fn deform_as(
    space: &Space,
    density: MetricDensity,
    sigma: f64,
    kind: TransformKind,
    kappa: Option<Kappa>,
    opts: TransformOptions,
) -> Result<DeformedSpace, DeformError> {
    let metric = deform_metric(space, &density)?;
    let nuhat = deform_measure(space, &density, sigma)?;
    let base = space.base();
    let new_base = if metric.retained.contains(&base) { base } else { farthest_from(space, base) };
    let deformed_base = metric.retained.iter().position(|&i| i == new_base).expect("base retained");
    let flags = match kind {
        TransformKind::Sphericalize => SpaceFlags::default(),
        TransformKind::Flatten | TransformKind::Invert => SpaceFlags { unbounded: true, punctured: false },
        TransformKind::Custom => SpaceFlags { punctured: false, ..space.flags() },
    };
    let ids = metric.retained.iter().map(|&i| space.ids()[i].clone()).collect();
    let deformed = Space::build_metric_by_construction(ids, metric.dhat, nuhat, deformed_base, flags)?;
    let range = opts.range.unwrap_or_else(|| RadiusRange::default_for(space));
    let mut out = DeformedSpace {
        source: space.clone(),
        space: deformed,
        retained: metric.retained,
        rho: metric.rho,
        density,
        sigma,
        kind,
        kappa,
        range,
        infinity: None,
        ledger: None,
    };
    if matches!(out.density, MetricDensity::Canonical(_)) {
        out.ledger = Some(certify_ledger(&out)?);
        if out.m0() == Some(1.0) {
            if let Some(k) = kappa {
                out.infinity = Some(infinity_estimates_with(&out, k));
            }
        }
    }
    Ok(out)
}

pub(crate) fn farthest_from(space: &Space, center: usize) -> usize {
    let row = space.row(center);
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

fn check_sigma(sigma: f64) -> Result<(), DeformError> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(DeformError::BadSigma(sigma))
    }
}

/// Sphericalization: canonical density with `m0 = 1` on a truncation of an
/// unbounded space.
pub fn sphericalize(space: &Space, sigma: f64, opts: TransformOptions) -> Result<DeformedSpace, DeformError> {
    check_sigma(sigma)?;
    if !space.flags().unbounded {
        return Err(DeformError::Precondition(
            "sphericalization needs a space flagged as a truncation of an unbounded space".into(),
        ));
    }
    let kappa = analysis::uniform_perfectness(space, 1.0)?.kappa;
    if kappa.value() > opts.max_kappa {
        if opts.strict_large_scales {
            return Err(DeformError::NotPerfectAtLargeScales { kappa: kappa.value() });
        }
        log::warn!("space is not uniformly perfect at large scales (kappa = {:?})", kappa);
    }
    let density = canonical_density(space, 1.0, sigma)?;
    let out = deform_as(space, density, sigma, TransformKind::Sphericalize, Some(kappa), opts)?;
    // without a second far point the distance to infinity cannot be bracketed
    if out.infinity.as_ref().is_some_and(|e| e.far_annulus_empty) {
        return Err(DeformError::EmptyFarAnnulus);
    }
    Ok(out)
}

/// Flattening: canonical density with `m0 = 0` on a bounded space; the base
/// point is removed and sent to infinity.
pub fn flatten(space: &Space, sigma: f64, opts: TransformOptions) -> Result<DeformedSpace, DeformError> {
    check_sigma(sigma)?;
    if space.flags().unbounded {
        return Err(DeformError::Precondition("flattening needs a bounded space".into()));
    }
    let kappa = perfect_at_base(space, opts)?;
    let density = canonical_density(space, 0.0, sigma)?;
    deform_as(space, density, sigma, TransformKind::Flatten, Some(kappa), opts)
}

/// Inversion: canonical density with `m0 = 0` on a truncation of an
/// unbounded space, exchanging the base point and infinity.
pub fn invert(space: &Space, sigma: f64, opts: TransformOptions) -> Result<DeformedSpace, DeformError> {
    check_sigma(sigma)?;
    if !space.flags().unbounded {
        return Err(DeformError::Precondition(
            "inversion needs a space flagged as a truncation of an unbounded space".into(),
        ));
    }
    let kappa = perfect_at_base(space, opts)?;
    let density = canonical_density(space, 0.0, sigma)?;
    deform_as(space, density, sigma, TransformKind::Invert, Some(kappa), opts)
}

/// Dispatch by kind, checking that the requested gauge matches.
pub fn transform(
    space: &Space,
    kind: TransformKind,
    m0: f64,
    sigma: f64,
    opts: TransformOptions,
) -> Result<DeformedSpace, DeformError> {
    if kind.gauge().is_some_and(|g| g != m0) {
        return Err(DeformError::Precondition(format!("{kind:?} uses m0 = {}, got {m0}", kind.gauge().unwrap())));
    }
    match kind {
        TransformKind::Sphericalize => sphericalize(space, sigma, opts),
        TransformKind::Flatten => flatten(space, sigma, opts),
        TransformKind::Invert => invert(space, sigma, opts),
        TransformKind::Custom => {
            let density = canonical_density(space, m0, sigma)?;
            deform_as(space, density, sigma, kind, None, opts)
        }
    }
}

fn perfect_at_base(space: &Space, opts: TransformOptions) -> Result<Kappa, DeformError> {
    let kappa = analysis::uniform_perfectness(space, 0.0)?.kappa;
    if kappa.value() > opts.max_kappa {
        return Err(DeformError::NotPerfectAtBase { kappa: kappa.value() });
    }
    Ok(kappa)
}

/// Intervals `[L(x), U(x)]` for `d̂(x, ∞)` on a sphericalization.
///
/// `L(x) = ∫_{|x|}^{R_∞} ρ dt`; `U(x) = d̂(x, x_far) + spread` with
/// `spread = max d̂(x_far, y)` over `|y| ≥ |x_far|/κ`.
pub fn infinity_estimates(deformed: &DeformedSpace, kappa: Kappa) -> Result<InfinityEstimates, DeformError> {
    if deformed.m0() != Some(1.0) {
        return Err(DeformError::Precondition("distances to infinity need m0 = 1".into()));
    }
    let est = infinity_estimates_with(deformed, kappa);
    if est.far_annulus_empty {
        return Err(DeformError::EmptyFarAnnulus);
    }
    Ok(est)
}

fn infinity_estimates_with(deformed: &DeformedSpace, kappa: Kappa) -> InfinityEstimates {
    let n = deformed.len();
    let radii: Vec<f64> = (0..n).map(|a| deformed.source_radius(a)).collect();
    let mut far = 0;
    for a in 1..n {
        if radii[a] > radii[far] {
            far = a;
        }
    }
    let r_far = radii[far];
    let threshold = r_far / kappa.value();
    let mut spread: f64 = 0.0;
    let mut found = false;
    for a in 0..n {
        if a != far && radii[a] >= threshold {
            spread = spread.max(deformed.dhat(far, a));
            found = true;
        }
    }
    if !found {
        let mut second: Option<usize> = None;
        for a in 0..n {
            if a != far && second.is_none_or(|s| radii[a] > radii[s]) {
                second = Some(a);
            }
        }
        spread = second.map_or(0.0, |s| deformed.dhat(far, s));
    }
    let intervals = (0..n)
        .map(|a| Interval {
            lower: deformed.density().integral(radii[a], r_far),
            upper: deformed.dhat(a, far) + spread,
        })
        .collect();
    InfinityEstimates { intervals, far_point: far, spread, far_annulus_empty: !found }
}

struct Extremes {
    min: Option<Certified>,
    max: Option<Certified>,
}

impl Extremes {
    fn new() -> Self {
        Extremes { min: None, max: None }
    }

    fn push(&mut self, value: f64, witness: (usize, usize)) {
        if self.min.is_none_or(|c| value < c.value) {
            self.min = Some(Certified { value, witness });
        }
        if self.max.is_none_or(|c| value > c.value) {
            self.max = Some(Certified { value, witness });
        }
    }
}

/// Certifies the ledger constants: centers `x` range over the valid annulus,
/// partners `y` over all of `Z′`.
pub fn certify_ledger(deformed: &DeformedSpace) -> Result<ConstantsLedger, DeformError> {
    let n = deformed.len();
    let valid = deformed.valid_mask();
    let lambda: Vec<f64> = (0..n).map(|a| deformed.lambda(a)).collect();
    let gauge: Vec<f64> = (0..n).map(|a| deformed.gauge(a)).collect();

    // c0: smallest d̂/λ(x) over pairs that leave the comparable band
    let mut c0: Option<Certified> = None;
    let mut near = Extremes::new();
    let mut far = Extremes::new();
    for x in (0..n).filter(|&x| valid[x]) {
        for y in (0..n).filter(|&y| y != x) {
            let dh = deformed.dhat(x, y);
            let comparable = 0.5 * gauge[x] <= gauge[y] && gauge[y] <= 2.0 * gauge[x];
            if !comparable {
                let v = dh / lambda[x];
                if c0.is_none_or(|c| v < c.value) {
                    c0 = Some(Certified { value: v, witness: (x, y) });
                }
            }
            if comparable {
                near.push(dh / (deformed.rho[x] * deformed.d(x, y)), (x, y));
            } else if gauge[y] >= 2.0 * gauge[x] {
                far.push(dh / lambda[x], (x, y));
            }
        }
    }
    // every pair stays comparable: the whole space is one band
    let c0 = c0.unwrap_or(Certified { value: f64::INFINITY, witness: (0, 0) });

    let mut a1: Option<Certified> = None;
    let mut a2: Option<Certified> = None;
    for x in (0..n).filter(|&x| valid[x]) {
        let cap = c0.value * lambda[x];
        for y in (0..n).filter(|&y| y != x) {
            let dh = deformed.dhat(x, y);
            let scaled = deformed.rho[x] * deformed.d(x, y);
            let v1 = scaled / dh.min(cap);
            if a1.is_none_or(|c| v1 < c.value) {
                a1 = Some(Certified { value: v1, witness: (x, y) });
            }
            if dh < cap {
                let v2 = scaled / dh;
                if a2.is_none_or(|c| v2 > c.value) {
                    a2 = Some(Certified { value: v2, witness: (x, y) });
                }
            }
        }
    }
    let a1 = a1.unwrap_or(Certified { value: f64::INFINITY, witness: (0, 0) });
    let a2 = a2.unwrap_or(Certified { value: a1.value, witness: (0, 0) });

    let c_nu = analysis::doubling_constant_in(deformed.source(), deformed.range())?.c_nu;
    // normalized so that c2 ≤ 1 ≤ C2
    let c2u = far.max.map_or(1.0, |c| c.value.max(1.0));
    let c1u = near.max.map_or(0.0, |c| c.value);
    let c_prime = (c2u * c_nu.powf(1.0 / deformed.sigma)).max(3.0 * c1u);
    let valid_points = valid.iter().filter(|v| **v).count();
    Ok(ConstantsLedger {
        c0,
        a1,
        a2,
        c1: near.min,
        c1_upper: near.max,
        c2: far.min,
        c2_upper: far.max,
        c_prime,
        c_nu,
        range: deformed.range(),
        valid_points,
        excluded_points: n - valid_points,
    })
}

/// Outcome of evaluating the product-type chain metric
/// `d̃ = inf Σ ρ̃(x_j) ρ̃(x_{j-1}) d(x_j, x_{j-1})` on one truncation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductDemoReport {
    pub n: usize,
    pub z1: usize,
    pub z2: usize,
    pub far_point: usize,
    pub far_radius: f64,
    /// `ρ̃(z1)ρ̃(y)d(y,z1) + ρ̃(z2)ρ̃(y)d(y,z2)` through the far point `y`.
    pub two_hop_chain: f64,
    /// `2(ρ̃(z1) + ρ̃(z2)) ρ̃(y) |y|`.
    pub upper_bound: f64,
    /// Full shortest-path value, when requested.
    pub d_tilde: Option<f64>,
}

/// Evaluates the two-hop chain through the farthest point, which bounds the
/// product-type metric between `z1` and `z2` from above.
pub fn product_deform_demo<F: Fn(f64) -> f64 + Sync>(
    space: &Space,
    rho_tilde: F,
    z1: usize,
    z2: usize,
    with_metric: bool,
) -> Result<ProductDemoReport, DeformError> {
    if !space.flags().unbounded {
        return Err(DeformError::Precondition("the product demo needs an unbounded truncation".into()));
    }
    let rho: Vec<f64> = (0..space.len()).map(|i| rho_tilde(space.radius_of(i))).collect();
    if rho.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(DeformError::BadDensity("rho tilde must be finite and positive".into()));
    }
    let y = farthest_from(space, space.base());
    let far_radius = space.radius_of(y);
    let two_hop_chain = rho[z1] * rho[y] * space.dist(y, z1) + rho[z2] * rho[y] * space.dist(y, z2);
    let upper_bound = 2.0 * (rho[z1] + rho[z2]) * rho[y] * far_radius;
    let d_tilde = with_metric.then(|| {
        let n = space.len();
        shortest_path_closure(n, |i, j| rho[i] * rho[j] * space.dist(i, j))[z1 * n + z2]
    });
    Ok(ProductDemoReport { n: space.len(), z1, z2, far_point: y, far_radius, two_hop_chain, upper_bound, d_tilde })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::TabulatedDensity;
    use crate::space::PointId;

    fn line(points: &[f64], mass: Vec<f64>, flags: SpaceFlags) -> Space {
        let coords: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
        Space::from_coords((0..points.len()).map(PointId::from).collect(), &coords, mass, 0, flags).unwrap()
    }

    fn grid(n: usize) -> Space {
        let pts: Vec<f64> = (0..n).map(|k| k as f64).collect();
        line(&pts, vec![1.0; n], SpaceFlags { unbounded: true, punctured: false })
    }

    #[test]
    fn grid_first_edge() {
        let g = grid(10);
        let rho = canonical_density(&g, 1.0, 1.0).unwrap();
        let part = deform_metric(&g, &rho).unwrap();
        assert_eq!(part.retained.len(), 10);
        assert_eq!(part.dhat[1], 1.25);
        assert!((0..10).all(|i| part.dhat[i * 10 + i] == 0.0));
        let nu = deform_measure(&g, &rho, 1.0).unwrap();
        for k in 0..10 {
            assert!((nu[k] - 1.0 / ((k + 1) * (k + 1)) as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_density_doubles_the_metric() {
        let s = line(&[0.0, 0.3, 1.0, 2.2], vec![1.0, 2.0, 0.5, 1.0], SpaceFlags::default());
        let c = 1.75;
        let d = MetricDensity::Tabulated(TabulatedDensity::constant(c).unwrap());
        let part = deform_metric(&s, &d).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((part.dhat[i * 4 + j] - 2.0 * c * s.dist(i, j)).abs() <= 1e-15 * s.dist(i, j).max(1.0));
            }
        }
        let unit = MetricDensity::Tabulated(TabulatedDensity::constant(1.0).unwrap());
        assert_eq!(deform_measure(&s, &unit, 3.0).unwrap(), s.masses().to_vec());
    }

    #[test]
    fn flattening_drops_base() {
        let s = line(&[0.0, 1.0, 2.0, 3.0], vec![1.0; 4], SpaceFlags::default());
        let f = flatten(&s, 1.0, TransformOptions::default()).unwrap();
        assert_eq!(f.retained(), &[1, 2, 3]);
        assert_eq!(f.space().ids()[f.space().base()], PointId::Int(3));
        assert!(f.space().flags().unbounded);
    }

    #[test]
    fn preconditions() {
        let bounded = line(&[0.0, 1.0], vec![1.0, 1.0], SpaceFlags::default());
        assert!(matches!(sphericalize(&bounded, 1.0, TransformOptions::default()), Err(DeformError::Precondition(_))));
        assert!(matches!(invert(&bounded, 1.0, TransformOptions::default()), Err(DeformError::Precondition(_))));
        let gap = line(&[0.0, 1.0, 100.0], vec![1.0; 3], SpaceFlags::default());
        assert!(matches!(flatten(&gap, 1.0, TransformOptions::default()), Err(DeformError::NotPerfectAtBase { .. })));
        assert!(matches!(
            transform(&grid(5), TransformKind::Invert, 1.0, 1.0, TransformOptions::default()),
            Err(DeformError::Precondition(_))
        ));
        assert!(matches!(sphericalize(&grid(5), -1.0, TransformOptions::default()), Err(DeformError::BadSigma(_))));
    }

    #[test]
    fn strict_large_scales() {
        let s = line(&[0.0, 0.5, 1.0, 50.0], vec![1.0; 4], SpaceFlags { unbounded: true, punctured: false });
        let strict = TransformOptions { strict_large_scales: true, ..Default::default() };
        assert!(matches!(sphericalize(&s, 1.0, strict), Err(DeformError::NotPerfectAtLargeScales { .. })));
        assert!(sphericalize(&s, 1.0, TransformOptions::default()).is_ok());
    }

    #[test]
    fn infinity_intervals_are_ordered() {
        let g = grid(64);
        let sph = sphericalize(&g, 1.0, TransformOptions::default()).unwrap();
        let inf = sph.infinity().unwrap();
        for (a, iv) in inf.intervals.iter().enumerate() {
            assert!(iv.lower <= iv.upper, "{a}: {iv:?}");
        }
        let far = inf.far_point;
        assert_eq!(inf.intervals[far].lower, 0.0);
        assert_eq!(inf.intervals[far].upper, inf.spread);
    }

    #[test]
    fn infinity_estimates_need_sphericalization() {
        let s = line(&[0.0, 1.0, 2.0, 3.0], vec![1.0; 4], SpaceFlags::default());
        let f = flatten(&s, 1.0, TransformOptions::default()).unwrap();
        assert!(infinity_estimates(&f, Kappa::Finite(2.0)).is_err());
    }

    #[test]
    fn sigma_scaling_recomputes_measure() {
        let g = grid(12);
        let rho = canonical_density(&g, 1.0, 1.0).unwrap();
        let one = deform_measure(&g, &rho, 1.0).unwrap();
        let three = deform_measure(&g, &rho, 3.0).unwrap();
        for k in 0..12 {
            let r = rho.eval(k as f64);
            assert!((one[k] - r).abs() < 1e-15);
            assert!((three[k] - r.powi(3)).abs() < 1e-15 * r.powi(3).max(1e-300));
        }
    }

    #[test]
    fn product_demo_constant_density_no_collapse() {
        let g = grid(16);
        let c = 0.5;
        let rep = product_deform_demo(&g, |_| c, 0, 1, true).unwrap();
        assert!((rep.d_tilde.unwrap() - c * c).abs() < 1e-15);
    }
}
