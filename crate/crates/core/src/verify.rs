//! Checkers turning each comparability statement into a certified ratio
//! window with witnesses.
//!
//! Pair witnesses are indices into the deformed space `Z′`. Ball witnesses
//! are `[center, radius]`.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{self, evaluation_points, Kappa, RadiusRange, KAPPA_SLACK};
use crate::besov::{pair_ball_masses, pairwise_sum, BesovParams};
use crate::deform::{self, DeformedSpace, TransformKind, TransformOptions, DEFAULT_MAX_KAPPA};
use crate::density::{MetricDensity, TabulatedDensity};
use crate::error::VerifyError;
use crate::generators::{self, FieldKind, GeneratorSpec};
use crate::io::space_to_json;
use crate::space::Space;

/// Relative slack for the exact inequalities.
pub const BOUND_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Witness {
    None,
    Pair([usize; 2]),
    Ball(usize, f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CaseHistogram {
    #[serde(rename = "1a")]
    pub case_1a: usize,
    #[serde(rename = "1b")]
    pub case_1b: usize,
    #[serde(rename = "2")]
    pub case_2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparabilityReport {
    pub statement: String,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub witness_min: Witness,
    pub witness_max: Witness,
    pub cases: CaseHistogram,
    /// Pairs or balls outside the valid annulus.
    pub excluded: usize,
    pub evaluated: usize,
    /// Failures of an exact inequality or inclusion.
    pub violations: usize,
    pub applicable: bool,
    pub passed: bool,
    pub details: Value,
    pub digest: String,
}

impl ComparabilityReport {
    /// `max(max_ratio, 1/min_ratio)`: the `C` of the window `[1/C, C]`.
    pub fn window_constant(&self) -> f64 {
        self.max_ratio.max(1.0 / self.min_ratio)
    }

    /// `max_ratio / min_ratio`.
    pub fn spread(&self) -> f64 {
        self.max_ratio / self.min_ratio
    }
}

/// Running extremes of a ratio. Ties keep the first witness, so the result
/// depends only on the push order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub min: f64,
    pub max: f64,
    pub witness_min: Witness,
    pub witness_max: Witness,
    pub count: usize,
}

impl Default for Window {
    fn default() -> Self {
        Window {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            witness_min: Witness::None,
            witness_max: Witness::None,
            count: 0,
        }
    }
}

impl Window {
    pub fn push(&mut self, value: f64, witness: Witness) {
        self.count += 1;
        if (value < self.min || self.witness_min == Witness::None)
            && (value < self.min || self.count == 1) {
                self.min = value;
                self.witness_min = witness;
            }
        if value > self.max || self.count == 1 {
            self.max = value;
            self.witness_max = witness;
        }
    }

    pub fn merge(&mut self, other: &Window) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 || other.min < self.min {
            self.min = other.min;
            self.witness_min = other.witness_min;
        }
        if self.count == 0 || other.max > self.max {
            self.max = other.max;
            self.witness_max = other.witness_max;
        }
        self.count += other.count;
    }

    /// Nonempty, positive and finite.
    pub fn is_bounded(&self) -> bool {
        self.count > 0 && self.min > 0.0 && self.max.is_finite()
    }

    fn to_json(self) -> Value {
        json!({
            "min_ratio": self.min,
            "max_ratio": self.max,
            "witness_min": self.witness_min,
            "witness_max": self.witness_max,
            "evaluated": self.count,
        })
    }
}

struct Draft {
    statement: String,
    window: Window,
    cases: CaseHistogram,
    excluded: usize,
    violations: usize,
    applicable: bool,
    passed: bool,
    details: Value,
}

impl Draft {
    fn new(statement: &str, window: Window) -> Self {
        Draft {
            statement: statement.to_string(),
            window,
            cases: CaseHistogram::default(),
            excluded: 0,
            violations: 0,
            applicable: true,
            passed: window.is_bounded(),
            details: Value::Null,
        }
    }

    fn finish(self, digest: &str) -> ComparabilityReport {
        let empty = self.window.count == 0;
        ComparabilityReport {
            statement: self.statement,
            min_ratio: if empty { f64::NAN } else { self.window.min },
            max_ratio: if empty { f64::NAN } else { self.window.max },
            witness_min: self.window.witness_min,
            witness_max: self.window.witness_max,
            cases: self.cases,
            excluded: self.excluded,
            evaluated: self.window.count,
            violations: self.violations,
            applicable: self.applicable,
            passed: self.passed,
            details: self.details,
            digest: digest.to_string(),
        }
    }
}

/// SHA-256 of the serialized source space and the transform parameters.
pub fn inputs_digest(deformed: &DeformedSpace, extra: &str) -> String {
    let mut h = Sha256::new();
    h.update(space_to_json(deformed.source()).as_bytes());
    h.update(
        format!("|{:?}|{:?}|{}|{:?}|{}", deformed.kind(), deformed.m0(), deformed.sigma(), deformed.range(), extra)
            .as_bytes(),
    );
    hex::encode(h.finalize())
}

/// A test field on the source space with a label.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyField {
    pub label: String,
    pub values: Vec<f64>,
}

impl EnergyField {
    pub fn from_kind(space: &Space, kind: FieldKind) -> Self {
        EnergyField { label: kind.label(), values: generators::test_field(space, kind) }
    }
}

#[derive(Default)]
struct EnergyRow {
    valid: Window,
    all: Window,
    cases: CaseHistogram,
    excluded: usize,
    reference: Vec<f64>,
    deformed: Vec<f64>,
}

/// Per-pair integrand ratio
/// `(ρ(x)ρ(y))^σ (d/d̂)^{θp} ν(B(x,d)) / ν̂(B̂(x,d̂))` and the global energy
/// ratio per field.
///
/// The reference energy runs over `Z′ × Z′` with the source balls, so the
/// global ratio is a weighted mean of the per-pair ratios. The window is
/// reported over pairs in the valid annulus; `details.all_pairs` covers every
/// pair. Pairs are classified with `|x| ≤ |y|`: case 1 when
/// `m(y) ≤ 2m(x)` (1a when also `d̂ ≤ c0 λ(x)`), case 2 otherwise.
pub fn check_energy_comparability(
    deformed: &DeformedSpace,
    fields: &[EnergyField],
    params: BesovParams,
    allow_sigma_mismatch: bool,
) -> Result<ComparabilityReport, VerifyError> {
    let sigma = deformed.sigma();
    if (params.sigma - sigma).abs() > 1e-12 * sigma && !allow_sigma_mismatch {
        return Err(VerifyError::SigmaMismatch { expected: params.sigma, got: sigma });
    }
    let source = deformed.source();
    for f in fields {
        if f.values.len() != source.len() {
            return Err(crate::error::BesovError::DomainMismatch { expected: source.len(), got: f.values.len() }.into());
        }
        if let Some(i) = f.values.iter().position(|v| !v.is_finite()) {
            return Err(crate::error::BesovError::NonFinite(i).into());
        }
    }
    let n = deformed.len();
    let retained = deformed.retained();
    let rho = deformed.rho();
    let valid = deformed.valid_mask();
    let c0 = deformed.ledger().map_or(f64::INFINITY, |l| l.c0.value);
    let theta_p = params.sigma;
    let p = params.p;
    let space = deformed.space();

    let rows: Vec<EnergyRow> = (0..n)
        .into_par_iter()
        .map(|a| {
            let i = retained[a];
            let src_balls = pair_ball_masses(source, i);
            let def_balls = pair_ball_masses(space, a);
            let mut row = EnergyRow::default();
            let mut reference: Vec<Vec<f64>> = vec![Vec::with_capacity(n); fields.len()];
            let mut deformed_terms: Vec<Vec<f64>> = vec![Vec::with_capacity(n); fields.len()];
            for b in (0..n).filter(|&b| b != a) {
                let j = retained[b];
                let d = source.dist(i, j);
                let dh = space.dist(a, b);
                let ratio = (rho[a] * rho[b]).powf(sigma) * (d / dh).powf(theta_p) * src_balls[j] / def_balls[b];
                let w = Witness::Pair([a, b]);
                row.all.push(ratio, w);
                if valid[a] && valid[b] {
                    row.valid.push(ratio, w);
                } else {
                    row.excluded += 1;
                }
                let (lo, hi) = if deformed.gauge(a) <= deformed.gauge(b) { (a, b) } else { (b, a) };
                if deformed.gauge(hi) <= 2.0 * deformed.gauge(lo) {
                    if dh <= c0 * deformed.lambda(lo) {
                        row.cases.case_1a += 1;
                    } else {
                        row.cases.case_1b += 1;
                    }
                } else {
                    row.cases.case_2 += 1;
                }
                for (k, f) in fields.iter().enumerate() {
                    let du = (f.values[i] - f.values[j]).abs();
                    if du == 0.0 {
                        continue;
                    }
                    let dup = du.powf(p);
                    reference[k].push(dup / d.powf(theta_p) * source.mass(i) * source.mass(j) / src_balls[j]);
                    deformed_terms[k].push(dup / dh.powf(theta_p) * space.mass(a) * space.mass(b) / def_balls[b]);
                }
            }
            row.reference = reference.iter().map(|t| pairwise_sum(t)).collect();
            row.deformed = deformed_terms.iter().map(|t| pairwise_sum(t)).collect();
            row
        })
        .collect();

    let mut valid_w = Window::default();
    let mut all_w = Window::default();
    let mut cases = CaseHistogram::default();
    let mut excluded = 0;
    for r in &rows {
        valid_w.merge(&r.valid);
        all_w.merge(&r.all);
        cases.case_1a += r.cases.case_1a;
        cases.case_1b += r.cases.case_1b;
        cases.case_2 += r.cases.case_2;
        excluded += r.excluded;
    }
    let mut field_reports = Vec::new();
    let mut all_inside = true;
    for (k, f) in fields.iter().enumerate() {
        let reference = pairwise_sum(&rows.iter().map(|r| r.reference[k]).collect::<Vec<_>>());
        let deformed_energy = pairwise_sum(&rows.iter().map(|r| r.deformed[k]).collect::<Vec<_>>());
        let zero_zero = reference == 0.0 && deformed_energy == 0.0;
        let ratio = if zero_zero { 1.0 } else { deformed_energy / reference };
        let inside = zero_zero
            || (ratio >= all_w.min * (1.0 - 1e-12) && ratio <= all_w.max * (1.0 + 1e-12) && ratio.is_finite());
        all_inside &= inside;
        field_reports.push(json!({
            "field": f.label,
            "source_energy": reference,
            "deformed_energy": deformed_energy,
            "ratio": ratio,
            "zero_over_zero": zero_zero,
            "inside_pair_window": inside,
        }));
    }
    let mut draft = Draft::new("energy_comparability", valid_w);
    draft.cases = cases;
    draft.excluded = excluded;
    draft.passed = valid_w.is_bounded() && all_w.is_bounded() && all_inside;
    draft.details = json!({
        "p": params.p,
        "theta": params.theta,
        "theta_p": theta_p,
        "sigma": sigma,
        "sigma_mismatch": (theta_p - sigma).abs() > 1e-12 * sigma,
        "window_constant": valid_w.max.max(1.0 / valid_w.min),
        "all_pairs": all_w.to_json(),
        "fields": field_reports,
    });
    Ok(draft.finish(&inputs_digest(deformed, &format!("energy|{p}|{}|{:?}", params.theta, field_labels(fields)))))
}

fn field_labels(fields: &[EnergyField]) -> Vec<&str> {
    fields.iter().map(|f| f.label.as_str()).collect()
}

/// Ball ratios `ν̂(B̂(x,2r)) / ν̂(B̂(x,r))` over valid centers and all radii.
pub fn check_doubling_preservation(deformed: &DeformedSpace) -> Result<ComparabilityReport, VerifyError> {
    let space = deformed.space();
    let index = space.ball_index();
    let valid = deformed.valid_mask();
    let n = deformed.len();
    let rows: Vec<Window> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut w = Window::default();
            if !valid[x] {
                return w;
            }
            let dists = index.sorted_distances(x);
            let mut breaks = dists.to_vec();
            breaks.extend(dists.iter().map(|d| 0.5 * d));
            for r in evaluation_points(breaks, RadiusRange::full()) {
                let small = index.mass(x, r);
                if small > 0.0 {
                    w.push(index.mass(x, 2.0 * r) / small, Witness::Ball(x, r));
                }
            }
            w
        })
        .collect();
    let mut window = Window::default();
    for r in &rows {
        window.merge(r);
    }
    let excluded = valid.iter().filter(|v| !**v).count();
    let source_c_nu = analysis::doubling_constant(deformed.source())?.c_nu;
    let mut draft = Draft::new("doubling_preservation", window);
    draft.excluded = excluded;
    draft.details = json!({
        "C_nu_hat": window.max,
        "C_nu": source_c_nu,
        "C_nu_valid_annulus": deformed.ledger().map(|l| l.c_nu),
    });
    Ok(draft.finish(&inputs_digest(deformed, "doubling")))
}

/// Ball-volume estimates in the small, middle and large regimes, the mass
/// of the far annulus and the doubling of `ν⁻¹`.
pub fn check_ball_volume_regimes(deformed: &DeformedSpace) -> Result<Vec<ComparabilityReport>, VerifyError> {
    let ledger = deformed
        .ledger()
        .ok_or_else(|| VerifyError::Other("ball-volume regimes need a canonical density".into()))?;
    let digest = inputs_digest(deformed, "ball_volume");
    let source = deformed.source();
    let space = deformed.space();
    let sigma = deformed.sigma();
    let m0 = deformed.m0().unwrap_or(0.0);
    let src_index = source.ball_index();
    let def_index = space.ball_index();
    let base_profile = source.base_profile();
    let total_hat: f64 = pairwise_sum(space.masses());
    let c0 = ledger.c0.value;
    let c2 = ledger.c2.map_or(1.0, |c| c.value.min(1.0));
    let c_prime = ledger.c_prime;
    let nu_m0 = base_profile.mass_below(m0);
    let large_cut = if nu_m0 > 0.0 { c2 * nu_m0.powf(-1.0 / sigma) } else { f64::INFINITY };
    let valid = deformed.valid_mask();
    let retained = deformed.retained();
    let rho = deformed.rho();
    let n = deformed.len();
    let base_atom = base_profile.cum[0];
    let inverse_breaks: Vec<f64> = base_profile.cum.iter().map(|c| c.powf(-1.0 / sigma)).collect();

    let rows: Vec<[Window; 4]> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut w: [Window; 4] = Default::default();
            if !valid[x] {
                return w;
            }
            let i = retained[x];
            let lambda = deformed.lambda(x);
            let mut breaks: Vec<f64> = def_index.sorted_distances(x).to_vec();
            breaks.extend(src_index.sorted_distances(i).iter().map(|d| d * rho[x]));
            breaks.extend(inverse_breaks.iter().copied());
            breaks.extend([c0 * lambda, c_prime * lambda, large_cut, 0.5 * large_cut]);
            let top = 2.0 * def_index.sorted_distances(x).last().copied().unwrap_or(0.0);
            for r in evaluation_points(breaks, RadiusRange { lo: 0.0, hi: top }) {
                let ball = def_index.mass(x, r);
                let wit = Witness::Ball(x, r);
                if r <= c0 * lambda {
                    let src = src_index.mass(i, r / rho[x]);
                    w[0].push(ball / (rho[x].powf(sigma) * src), wit);
                }
                if r >= c0 * lambda && r <= c_prime * lambda {
                    w[1].push(ball * deformed.gauge(x).powf(sigma), wit);
                }
                if r > c_prime * lambda {
                    // ν⁻¹ is resolved only above the mass of the base atom
                    if r <= large_cut && r.powf(-sigma) >= base_atom {
                        let t = r.powf(-sigma);
                        if let Ok(inv) = analysis::measure_inverse_profile(&base_profile, t) {
                            if inv > 0.0 {
                                w[2].push(ball * inv.powf(sigma), wit);
                            }
                        }
                    }
                    if r >= 0.5 * large_cut {
                        w[3].push(ball / total_hat, wit);
                    }
                }
            }
            w
        })
        .collect();
    let mut windows: [Window; 4] = Default::default();
    for r in &rows {
        for k in 0..4 {
            windows[k].merge(&r[k]);
        }
    }
    let excluded = valid.iter().filter(|v| !**v).count();
    let names = ["ball_volume_small", "ball_volume_middle", "ball_volume_large_inverse", "ball_volume_large_total"];
    let mut out = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let mut d = Draft::new(name, windows[k]);
        d.excluded = excluded;
        d.details = json!({"c0": c0, "c2": c2, "C_prime": c_prime});
        // the large total-mass branch needs m0 = 1; small truncations may
        // have no radius in a regime at all
        if windows[k].count == 0 {
            d.applicable = false;
            d.passed = true;
            d.details["reason"] = json!("no radius in this regime");
        }
        out.push(d.finish(&digest));
    }

    // mass outside B_r, 0 < r < R∞/2
    let radius_of: Vec<f64> = (0..n).map(|a| deformed.source_radius(a)).collect();
    let r_inf = source.r_infinity();
    let mut annulus = Window::default();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| radius_of[a].total_cmp(&radius_of[b]).then(a.cmp(&b)));
    for r in evaluation_points(base_profile.radii.clone(), RadiusRange { lo: 0.0, hi: 0.5 * r_inf }) {
        if r >= 0.5 * r_inf {
            continue;
        }
        let outside: Vec<f64> = order.iter().filter(|&&a| radius_of[a] > r).map(|&a| space.mass(a)).collect();
        annulus.push(pairwise_sum(&outside) * (r + m0).powf(sigma), Witness::Ball(space.base(), r));
    }
    out.push(Draft::new("annulus_mass", annulus).finish(&digest));

    out.push(inverse_doubling(source, m0).finish(&digest));
    Ok(out)
}

/// `ν⁻¹(2t) / ν⁻¹(t)` for `max(ν(B_{m0}), ν({b})) ≤ t < ν(Z)/2`.
fn inverse_doubling(source: &Space, m0: f64) -> Draft {
    let profile = source.base_profile();
    let total = profile.total();
    let lo = profile.mass_below(m0).max(profile.cum[0]);
    let mut breaks = profile.cum.clone();
    breaks.extend(profile.cum.iter().map(|c| 0.5 * c));
    let mut w = Window::default();
    for t in evaluation_points(breaks, RadiusRange { lo, hi: 0.5 * total }) {
        if t >= 0.5 * total {
            continue;
        }
        let (Ok(a), Ok(b)) =
            (analysis::measure_inverse_profile(&profile, t), analysis::measure_inverse_profile(&profile, 2.0 * t))
        else {
            continue;
        };
        if a > 0.0 {
            w.push(b / a, Witness::Ball(source.base(), t));
        }
    }
    let mut d = Draft::new("measure_inverse_doubling", w);
    if w.count == 0 {
        d.applicable = false;
        d.passed = true;
    }
    d
}

/// Uniform perfectness of the deformed space: at `∞` through the interval
/// estimates (`m0 = 1`), or at the new base point for radii `≥ 1` (`m0 = 0`).
pub fn check_perfectness_preservation(deformed: &DeformedSpace) -> Result<ComparabilityReport, VerifyError> {
    let digest = inputs_digest(deformed, "perfectness");
    let valid = deformed.valid_mask();
    match deformed.m0() {
        Some(m0) if m0 == 1.0 => {
            let inf = deformed
                .infinity()
                .ok_or_else(|| VerifyError::Other("sphericalization without infinity estimates".into()))?;
            let iv = &inf.intervals;
            let mut w = Window::default();
            for x in (0..deformed.len()).filter(|&x| valid[x]) {
                let r = iv[x].lower;
                if r <= 0.0 {
                    continue;
                }
                for strict in [false, true] {
                    // the annulus must contain some y for every realization
                    // of the intervals: L(y) ≥ r and U(y) < κ̂ r
                    let best = iv
                        .iter()
                        .filter(|c| if strict { c.lower > r } else { c.lower >= r })
                        .map(|c| c.upper / r)
                        .fold(f64::INFINITY, f64::min);
                    if best.is_finite() {
                        w.push(best, Witness::Ball(x, r));
                    }
                }
            }
            let kappa_hat = if w.count > 0 { w.max.max(1.0) * (1.0 + KAPPA_SLACK) } else { 1.0 + KAPPA_SLACK };
            let mut d = Draft::new("perfectness_preservation", w);
            d.passed = kappa_hat.is_finite() && w.count > 0;
            d.details = json!({"center": "infinity", "kappa_hat": kappa_hat, "far_annulus_empty": inf.far_annulus_empty});
            Ok(d.finish(&digest))
        }
        Some(_) => {
            let space = deformed.space();
            let b = space.base();
            let r_max = (0..deformed.len()).filter(|&x| valid[x]).map(|x| space.dist(b, x)).fold(0.0, f64::max);
            let est = analysis::perfectness_at(space, b, 1.0, r_max);
            let mut w = Window::default();
            if let Kappa::Finite(k) = est.kappa {
                w.push(k, Witness::Ball(b, est.witness_radius.unwrap_or(1.0)));
            }
            let mut d = Draft::new("perfectness_preservation", w);
            d.passed = est.kappa.is_finite();
            d.details = json!({"center": b, "kappa_hat": est.kappa, "r_max": r_max});
            Ok(d.finish(&digest))
        }
        None => Err(VerifyError::Other("perfectness preservation needs a canonical density".into())),
    }
}

fn exact_bound(name: &str, w: Window, violations: usize) -> Draft {
    let mut d = Draft::new(name, w);
    d.violations = violations;
    d.passed = violations == 0 && w.count > 0;
    d
}

fn not_applicable(name: &str, why: &str) -> Draft {
    let mut d = Draft::new(name, Window::default());
    d.applicable = false;
    d.passed = true;
    d.details = json!({ "reason": why });
    d
}

/// The pairwise bound battery. Exact inequalities report `lhs/rhs` (at most
/// `1`) and count violations; comparabilities report their window.
pub fn check_sandwich_and_bounds(deformed: &DeformedSpace) -> Result<Vec<ComparabilityReport>, VerifyError> {
    let digest = inputs_digest(deformed, "bounds");
    let n = deformed.len();
    let source = deformed.source();
    let retained = deformed.retained();
    let rho = deformed.rho();
    let valid = deformed.valid_mask();
    let radius: Vec<f64> = (0..n).map(|a| deformed.source_radius(a)).collect();
    let density = deformed.density();
    let tol = 1.0 + BOUND_REL_TOL;
    let mut out = Vec::new();

    // m d ≤ d̂ ≤ (ρ(x)+ρ(y)) d, m the least ρ on Z′ ∩ B(x, d(x,y))
    let rows: Vec<(Window, Window, usize, usize)> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut order: Vec<usize> = (0..n).collect();
            let dx = |b: usize| source.dist(retained[x], retained[b]);
            order.sort_by(|&a, &b| dx(a).total_cmp(&dx(b)).then(a.cmp(&b)));
            let (mut lo, mut hi, mut vlo, mut vhi) = (Window::default(), Window::default(), 0, 0);
            let mut k = 0;
            let mut running_min = f64::INFINITY;
            while k < n {
                let r = dx(order[k]);
                let mut end = k;
                while end < n && dx(order[end]) == r {
                    end += 1;
                }
                for &y in &order[k..end] {
                    if y == x {
                        continue;
                    }
                    let dh = deformed.dhat(x, y);
                    let lower = running_min * r / dh;
                    let upper = dh / ((rho[x] + rho[y]) * r);
                    lo.push(lower, Witness::Pair([x, y]));
                    hi.push(upper, Witness::Pair([x, y]));
                    vlo += (lower > tol) as usize;
                    vhi += (upper > tol) as usize;
                }
                for &y in &order[k..end] {
                    running_min = running_min.min(rho[y]);
                }
                k = end;
            }
            (lo, hi, vlo, vhi)
        })
        .collect();
    let (mut lo, mut hi, mut vlo, mut vhi) = (Window::default(), Window::default(), 0, 0);
    for r in &rows {
        lo.merge(&r.0);
        hi.merge(&r.1);
        vlo += r.2;
        vhi += r.3;
    }
    out.push(exact_bound("sandwich_lower", lo, vlo));
    out.push(exact_bound("sandwich_upper", hi, vhi));

    // ∫_{|x|}^{|y|} ρ ≤ d̂(x,y)
    let mut w = Window::default();
    let mut v = 0;
    for x in 0..n {
        for y in (0..n).filter(|&y| y != x && radius[x] <= radius[y]) {
            let ratio = density.integral(radius[x], radius[y]) / deformed.dhat(x, y);
            v += (ratio > tol) as usize;
            w.push(ratio, Witness::Pair([x, y]));
        }
    }
    out.push(exact_bound("integral_lower_bound", w, v));

    // d̂(x,y) ≤ 8κ³/(κ−1) ∫_{|x|/κ}^{|y|} ρ for max(m0, c1) ≤ |x| ≤ |y|
    let m0 = deformed.m0().unwrap_or(0.0);
    let c1 = source.critical_radii(source.base()).get(1).copied().unwrap_or(0.0);
    match deformed.kappa() {
        Some(Kappa::Finite(k)) if k <= DEFAULT_MAX_KAPPA && k > 1.0 => {
            let factor = 8.0 * k.powi(3) / (k - 1.0);
            let start = m0.max(c1);
            let mut w = Window::default();
            let mut v = 0;
            for x in (0..n).filter(|&x| radius[x] >= start) {
                for y in (0..n).filter(|&y| y != x && radius[x] <= radius[y]) {
                    let ratio = deformed.dhat(x, y) / (factor * density.integral(radius[x] / k, radius[y]));
                    v += (ratio > tol) as usize;
                    w.push(ratio, Witness::Pair([x, y]));
                }
            }
            let mut d = exact_bound("chain_upper_bound", w, v);
            d.details = json!({"kappa": k, "factor": factor});
            out.push(d);
        }
        other => out.push(not_applicable("chain_upper_bound", &format!("not uniformly perfect (kappa = {other:?})"))),
    }

    if let Some(ledger) = deformed.ledger() {
        let lambda: Vec<f64> = (0..n).map(|a| deformed.lambda(a)).collect();
        let gauge: Vec<f64> = (0..n).map(|a| deformed.gauge(a)).collect();
        let (mut far, mut near, mut upper, mut implied) =
            (Window::default(), Window::default(), Window::default(), Window::default());
        let c2_big = ledger.c2_upper.map_or(1.0, |c| c.value.max(1.0));
        let mut excluded = 0;
        for x in 0..n {
            if !valid[x] {
                excluded += n - 1;
                continue;
            }
            for y in (0..n).filter(|&y| y != x) {
                let dh = deformed.dhat(x, y);
                let wit = Witness::Pair([x, y]);
                if gauge[y] >= 2.0 * gauge[x] {
                    far.push(dh / lambda[x], wit);
                } else if gauge[y] >= 0.5 * gauge[x] {
                    near.push(dh / (rho[x] * deformed.d(x, y)), wit);
                }
                if radius[x] <= radius[y] {
                    upper.push(dh / lambda[x], wit);
                }
                if dh <= c2_big * lambda[x] {
                    implied.push(gauge[x] / gauge[y], wit);
                }
            }
        }
        for (name, w) in [
            ("two_regime_far", far),
            ("two_regime_comparable", near),
            ("far_pair_upper", upper),
            ("comparable_implication", implied),
        ] {
            let mut d = Draft::new(name, w);
            d.excluded = excluded;
            out.push(d);
        }
        out.push(ball_shape(deformed, ledger.c0.value, ledger.a1.value, ledger.a2.value));

        if let Some(inf) = deformed.infinity() {
            let c2 = ledger.c2.map_or(0.0, |c| c.value);
            let c2u = ledger.c2_upper.map_or(f64::INFINITY, |c| c.value);
            let (mut lw, mut uw, mut vl, mut vu) = (Window::default(), Window::default(), 0, 0);
            for x in (0..n).filter(|&x| valid[x]) {
                let iv = inf.intervals[x];
                let below = c2 * lambda[x] / iv.upper;
                let above = iv.lower / (c2u * lambda[x]);
                vl += (below > tol) as usize;
                vu += (above > tol) as usize;
                lw.push(below, Witness::Pair([x, inf.far_point]));
                uw.push(above, Witness::Pair([x, inf.far_point]));
            }
            out.push(exact_bound("infinity_sandwich_lower", lw, vl));
            out.push(exact_bound("infinity_sandwich_upper", uw, vu));
        } else {
            out.push(not_applicable("infinity_sandwich_lower", "distances to infinity need m0 = 1"));
            out.push(not_applicable("infinity_sandwich_upper", "distances to infinity need m0 = 1"));
        }
    }
    Ok(out.into_iter().map(|d| d.finish(&digest)).collect())
}

/// For `r ≤ c0 λ(x)`: `B(x, a1 r/ρ(x)) ⊆ B̂(x,r) ⊆ B(x, a2 r/ρ(x))` as index
/// sets on `Z′`, checked at every radius where either side changes. The
/// window is `ρ(y)/ρ(x)` over `y ∈ B̂(x, c0 λ(x))`.
fn ball_shape(deformed: &DeformedSpace, c0: f64, a1: f64, a2: f64) -> Draft {
    let n = deformed.len();
    let rho = deformed.rho();
    let valid = deformed.valid_mask();
    let slack = 1e-12;
    let rows: Vec<(Window, usize, usize)> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut w = Window::default();
            let mut violations = 0;
            let mut tested = 0;
            if !valid[x] {
                return (w, 0, 0);
            }
            let cap = c0 * deformed.lambda(x);
            let mut breaks = Vec::with_capacity(3 * n);
            for y in 0..n {
                let d = deformed.d(x, y);
                breaks.push(deformed.dhat(x, y));
                breaks.push(rho[x] * d / a1);
                breaks.push(rho[x] * d / a2);
                if deformed.dhat(x, y) < cap {
                    w.push(rho[y] / rho[x], Witness::Pair([x, y]));
                }
            }
            for r in evaluation_points(breaks, RadiusRange { lo: 0.0, hi: cap }) {
                tested += 1;
                for y in 0..n {
                    let d = deformed.d(x, y);
                    let dh = deformed.dhat(x, y);
                    let in_inner = d < a1 * r / rho[x] * (1.0 - slack);
                    let in_hat = dh < r;
                    let in_outer = d < a2 * r / rho[x] * (1.0 + slack);
                    if (in_inner && !in_hat) || (in_hat && !in_outer) {
                        violations += 1;
                    }
                }
            }
            (w, violations, tested)
        })
        .collect();
    let mut w = Window::default();
    let (mut v, mut tested) = (0, 0);
    for r in &rows {
        w.merge(&r.0);
        v += r.1;
        tested += r.2;
    }
    let mut d = Draft::new("ball_shape", w);
    d.violations = v;
    d.passed = v == 0 && w.is_bounded();
    d.details = json!({"c0": c0, "a1": a1, "a2": a2, "radii_tested": tested});
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualityDirection {
    SphereThenFlatten,
    FlattenThenSphere,
}

impl DualityDirection {
    fn tag(self) -> &'static str {
        match self {
            DualityDirection::SphereThenFlatten => "sphere_then_flatten",
            DualityDirection::FlattenThenSphere => "flatten_then_sphere",
        }
    }
}

/// Both deformations composed, on the points of the final space.
#[derive(Debug, Clone)]
pub struct Composite {
    /// Source indices of the points kept by both steps.
    pub points: Vec<usize>,
    /// `ρ` of the first step and `ρ̂` of the second, per point.
    pub rho: Vec<f64>,
    pub rho_hat: Vec<f64>,
    /// `d̃` (row-major over `points`) and `ν̃`.
    pub dtilde: Vec<f64>,
    pub nutilde: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Runs both steps of a duality composition.
pub fn compose(space: &Space, sigma: f64, direction: DualityDirection) -> Result<Composite, VerifyError> {
    let opts = TransformOptions::default();
    match direction {
        DualityDirection::SphereThenFlatten => {
            let first = deform::sphericalize(space, sigma, opts)?;
            let inf = first.infinity().ok_or(crate::error::DeformError::EmptyFarAnnulus)?;
            // gauge m̂(x) = d̂(x,∞), estimated by the midpoint of its interval;
            // the ball around ∞ is closed so the innermost point sees itself
            let gauge: Vec<f64> = inf.intervals.iter().map(|iv| iv.midpoint()).collect();
            let nuhat = first.space().masses();
            let mut order: Vec<usize> = (0..gauge.len()).collect();
            order.sort_by(|&a, &b| gauge[a].total_cmp(&gauge[b]).then(a.cmp(&b)));
            let mut ball = vec![0.0; gauge.len()];
            let mut acc = 0.0;
            let mut k = 0;
            while k < order.len() {
                let mut end = k;
                while end < order.len() && gauge[order[end]] == gauge[order[k]] {
                    acc += nuhat[order[end]];
                    end += 1;
                }
                for &a in &order[k..end] {
                    ball[a] = acc;
                }
                k = end;
            }
            let rho_hat: Vec<f64> = (0..gauge.len()).map(|a| 1.0 / (gauge[a] * ball[a].powf(1.0 / sigma))).collect();
            if rho_hat.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                return Err(VerifyError::Other("degenerate gauge at infinity".into()));
            }
            let dtilde = deform::chain_metric(first.space(), &rho_hat);
            let nutilde = (0..gauge.len()).map(|a| rho_hat[a].powf(sigma) * nuhat[a]).collect();
            Ok(Composite {
                points: first.retained().to_vec(),
                rho: first.rho().to_vec(),
                rho_hat,
                dtilde,
                nutilde,
                valid: first.valid_mask(),
            })
        }
        DualityDirection::FlattenThenSphere => {
            let first = deform::flatten(space, sigma, opts)?;
            let second = deform::sphericalize(first.space(), sigma, opts)?;
            let points: Vec<usize> = second.retained().iter().map(|&a| first.retained()[a]).collect();
            let rho = second.retained().iter().map(|&a| first.rho()[a]).collect();
            let valid_first = first.valid_mask();
            Ok(Composite {
                points,
                rho,
                rho_hat: second.rho().to_vec(),
                dtilde: second.space().matrix().to_vec(),
                nutilde: second.space().masses().to_vec(),
                valid: second.retained().iter().map(|&a| valid_first[a]).collect(),
            })
        }
    }
}

/// `d̃/d`, `ν̃/ν` and `ρ ρ̂` windows of a composition, over the valid annulus.
pub fn duality_report(
    space: &Space,
    sigma: f64,
    direction: DualityDirection,
) -> Result<Vec<ComparabilityReport>, VerifyError> {
    let c = compose(space, sigma, direction)?;
    let mut h = Sha256::new();
    h.update(space_to_json(space).as_bytes());
    h.update(format!("|duality|{}|{sigma}", direction.tag()).as_bytes());
    let digest = hex::encode(h.finalize());
    Ok(composite_windows(space, &c, direction.tag()).into_iter().map(|d| d.finish(&digest)).collect())
}

fn composite_windows(space: &Space, c: &Composite, tag: &str) -> Vec<Draft> {
    let m = c.points.len();
    let (mut metric, mut measure, mut product) = (Window::default(), Window::default(), Window::default());
    let mut excluded = 0;
    for a in 0..m {
        if !c.valid[a] {
            excluded += 1;
            continue;
        }
        measure.push(c.nutilde[a] / space.mass(c.points[a]), Witness::Pair([a, a]));
        product.push(c.rho[a] * c.rho_hat[a], Witness::Pair([a, a]));
        for b in (0..m).filter(|&b| b != a && c.valid[b]) {
            metric.push(c.dtilde[a * m + b] / space.dist(c.points[a], c.points[b]), Witness::Pair([a, b]));
        }
    }
    let mut out = Vec::new();
    for (name, w) in [("metric", metric), ("measure", measure), ("density_product", product)] {
        let mut d = Draft::new(&format!("duality_{tag}_{name}"), w);
        d.excluded = excluded;
        out.push(d);
    }
    out
}

/// Constant density `c` followed by its reciprocal: `d̃ = 4d`, `ν̃ = ν`.
pub fn duality_constant_sanity(space: &Space, c: f64, sigma: f64) -> Result<Vec<ComparabilityReport>, VerifyError> {
    let first = deform::deform(
        space,
        MetricDensity::Tabulated(TabulatedDensity::constant(c).map_err(VerifyError::Deform)?),
        sigma,
    )?;
    let inv = MetricDensity::Tabulated(TabulatedDensity::constant(1.0 / c).map_err(VerifyError::Deform)?);
    let second = deform::deform(first.space(), inv, sigma)?;
    let n = space.len();
    let composite = Composite {
        points: (0..n).collect(),
        rho: vec![c; n],
        rho_hat: vec![1.0 / c; n],
        dtilde: second.space().matrix().to_vec(),
        nutilde: second.space().masses().to_vec(),
        valid: vec![true; n],
    };
    let digest = hex::encode(Sha256::digest(format!("{}|constant|{c}|{sigma}", space_to_json(space)).as_bytes()));
    Ok(composite_windows(space, &composite, "constant").into_iter().map(|d| d.finish(&digest)).collect())
}

/// Settings for [`verify_all`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub params: BesovParams,
    pub allow_sigma_mismatch: bool,
    /// `None` selects the four standard fields.
    pub fields: Option<Vec<FieldKind>>,
    pub seed: u64,
    pub duality: bool,
}

impl VerifyConfig {
    pub fn new(params: BesovParams) -> Self {
        VerifyConfig { params, allow_sigma_mismatch: false, fields: None, seed: 0, duality: true }
    }
}

/// Every statement id, in report order.
pub const STATEMENTS: &[&str] = &[
    "annulus_mass",
    "ball_shape",
    "ball_volume_large_inverse",
    "ball_volume_large_total",
    "ball_volume_middle",
    "ball_volume_small",
    "chain_upper_bound",
    "comparable_implication",
    "doubling_preservation",
    "duality",
    "energy_comparability",
    "far_pair_upper",
    "infinity_sandwich_lower",
    "infinity_sandwich_upper",
    "integral_lower_bound",
    "measure_inverse_doubling",
    "perfectness_preservation",
    "sandwich_lower",
    "sandwich_upper",
    "two_regime_comparable",
    "two_regime_far",
];

/// Runs every checker on one deformation; reports sorted by statement.
pub fn verify_all(deformed: &DeformedSpace, config: &VerifyConfig) -> Result<Vec<ComparabilityReport>, VerifyError> {
    let source = deformed.source();
    let kinds = config.fields.clone().unwrap_or_else(|| generators::standard_fields(source, config.seed));
    let fields: Vec<EnergyField> = kinds.iter().map(|&k| EnergyField::from_kind(source, k)).collect();
    let mut reports = vec![check_energy_comparability(deformed, &fields, config.params, config.allow_sigma_mismatch)?];
    reports.push(check_doubling_preservation(deformed)?);
    reports.extend(check_ball_volume_regimes(deformed)?);
    reports.push(check_perfectness_preservation(deformed)?);
    reports.extend(check_sandwich_and_bounds(deformed)?);
    if config.duality {
        let direction = match deformed.kind() {
            TransformKind::Sphericalize => Some(DualityDirection::SphereThenFlatten),
            TransformKind::Flatten => Some(DualityDirection::FlattenThenSphere),
            _ => None,
        };
        if let Some(dir) = direction {
            reports.extend(duality_report(source, deformed.sigma(), dir)?);
        }
    }
    reports.sort_by(|a, b| a.statement.cmp(&b.statement));
    Ok(reports)
}

/// Verifies a named subset (`"all"` or a statement id, with `"duality"`
/// selecting every duality window).
pub fn verify_statement(
    deformed: &DeformedSpace,
    config: &VerifyConfig,
    statement: &str,
) -> Result<Vec<ComparabilityReport>, VerifyError> {
    if statement != "all" && !STATEMENTS.contains(&statement) {
        return Err(VerifyError::Other(format!("unknown statement {statement}; known: all, {}", STATEMENTS.join(", "))));
    }
    let all = verify_all(deformed, config)?;
    Ok(all
        .into_iter()
        .filter(|r| statement == "all" || r.statement == statement || r.statement.starts_with(&format!("{statement}_")))
        .collect())
}

/// One line of sweep output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub family: String,
    pub depth: f64,
    pub statement: String,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub passed: bool,
}

/// Generates, deforms and verifies each spec in turn.
pub fn run_sweep(
    specs: &[GeneratorSpec],
    kind: TransformKind,
    sigma: f64,
    config: &VerifyConfig,
) -> Result<Vec<SweepRow>, VerifyError> {
    let mut rows = Vec::new();
    for spec in specs {
        let space = generators::generate(spec).map_err(|e| VerifyError::Other(e.to_string()))?;
        let m0 = kind.gauge().unwrap_or(1.0);
        let deformed = deform::transform(&space, kind, m0, sigma, TransformOptions::default())?;
        for r in verify_all(&deformed, config)? {
            rows.push(SweepRow {
                family: spec.family.name().to_string(),
                depth: spec.family.level(),
                statement: r.statement,
                min_ratio: r.min_ratio,
                max_ratio: r.max_ratio,
                passed: r.passed,
            });
        }
    }
    Ok(rows)
}

/// Largest over smallest window constant `max(max, 1/min)` of one statement
/// across the rows of a sweep.
pub fn window_variation(rows: &[SweepRow], statement: &str) -> f64 {
    let cs: Vec<f64> = rows
        .iter()
        .filter(|r| r.statement == statement)
        .map(|r| r.max_ratio.max(1.0 / r.min_ratio))
        .collect();
    let hi = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("family,depth,statement,min_ratio,max_ratio\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.family, r.depth, r.statement, r.min_ratio, r.max_ratio));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{generate, Family};

    fn grid(n: usize) -> Space {
        generate(&GeneratorSpec::new(Family::grid(n))).unwrap()
    }

    #[test]
    fn window_keeps_first_witness_on_ties() {
        let mut w = Window::default();
        w.push(2.0, Witness::Pair([0, 1]));
        w.push(2.0, Witness::Pair([1, 2]));
        w.push(1.0, Witness::Pair([2, 3]));
        assert_eq!(w.witness_max, Witness::Pair([0, 1]));
        assert_eq!(w.witness_min, Witness::Pair([2, 3]));
        assert_eq!(w.count, 3);
    }

    #[test]
    fn sigma_mismatch_is_rejected() {
        let sph = deform::sphericalize(&grid(16), 1.0, TransformOptions::default()).unwrap();
        let params = BesovParams::new(2.0, 1.0).unwrap();
        let fields = vec![EnergyField::from_kind(sph.source(), FieldKind::Radius)];
        assert!(matches!(
            check_energy_comparability(&sph, &fields, params, false),
            Err(VerifyError::SigmaMismatch { .. })
        ));
        assert!(check_energy_comparability(&sph, &fields, params, true).is_ok());
    }

    #[test]
    fn constant_field_ratio_is_one() {
        let sph = deform::sphericalize(&grid(16), 1.0, TransformOptions::default()).unwrap();
        let params = BesovParams::new(2.0, 0.5).unwrap();
        let fields = vec![EnergyField::from_kind(sph.source(), FieldKind::Constant { value: 4.0 })];
        let rep = check_energy_comparability(&sph, &fields, params, false).unwrap();
        assert_eq!(rep.details["fields"][0]["ratio"], 1.0);
        assert_eq!(rep.details["fields"][0]["zero_over_zero"], true);
    }

    #[test]
    fn grid_sphericalization_battery_passes() {
        let sph = deform::sphericalize(&grid(48), 1.0, TransformOptions::default()).unwrap();
        for r in check_sandwich_and_bounds(&sph).unwrap() {
            assert!(r.passed, "{}: {:?}", r.statement, r);
        }
    }

    #[test]
    fn cluster_perfectness_is_reported_not_raised() {
        let s = generate(&GeneratorSpec::new(Family::grid(3))).unwrap();
        let sph = deform::sphericalize(&s, 1.0, TransformOptions::default()).unwrap();
        assert!(check_perfectness_preservation(&sph).is_ok());
    }

    #[test]
    fn unknown_statement() {
        let sph = deform::sphericalize(&grid(8), 1.0, TransformOptions::default()).unwrap();
        let cfg = VerifyConfig::new(BesovParams::new(2.0, 0.5).unwrap());
        assert!(verify_statement(&sph, &cfg, "nonsense").is_err());
    }
}
