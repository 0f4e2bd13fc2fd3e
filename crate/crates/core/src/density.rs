//! Metric density functions `ρ : [0,∞) → (0,∞]`, nonincreasing and finite
//! away from 0, with exact integrals.

use serde::Serialize;

use crate::error::DeformError;
use crate::space::{RadialProfile, Space};

/// Canonical density `ρ(t) = 1 / (m(t) ν(B_{m(t)})^{1/σ})` with `m(t) = t + m0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalDensity {
    pub m0: f64,
    pub sigma: f64,
    pub profile: RadialProfile,
}

/// Piecewise-constant density: `values[i]` on `[breaks[i], breaks[i+1])`, the
/// last value extending to infinity. `at_zero` overrides `ρ(0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabulatedDensity {
    breaks: Vec<f64>,
    values: Vec<f64>,
    at_zero: f64,
}

impl TabulatedDensity {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>, at_zero: Option<f64>) -> Result<Self, DeformError> {
        let bad = |m: &str| Err(DeformError::BadDensity(m.to_string()));
        if breaks.is_empty() || breaks.len() != values.len() {
            return bad("breaks and values must be nonempty and of equal length");
        }
        if breaks[0] != 0.0 {
            return bad("first breakpoint must be 0");
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) || breaks.iter().any(|b| !b.is_finite()) {
            return bad("breakpoints must be finite and strictly increasing");
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("values must be finite and positive");
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return bad("values must be nonincreasing");
        }
        let at_zero = at_zero.unwrap_or(values[0]);
        if !(at_zero >= values[0]) {
            return bad("value at zero must be at least the first value");
        }
        Ok(TabulatedDensity { breaks, values, at_zero })
    }

    pub fn constant(c: f64) -> Result<Self, DeformError> {
        Self::new(vec![0.0], vec![c], None)
    }

    fn eval(&self, t: f64) -> f64 {
        if t == 0.0 {
            return self.at_zero;
        }
        let k = self.breaks.partition_point(|&b| b <= t);
        self.values[k.max(1) - 1]
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let lo = self.breaks[i].max(a);
            let hi = self.breaks.get(i + 1).copied().unwrap_or(f64::INFINITY).min(b);
            if hi > lo {
                total += v * (hi - lo);
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricDensity {
    Canonical(CanonicalDensity),
    Tabulated(TabulatedDensity),
}

impl MetricDensity {
    pub fn kind(&self) -> &'static str {
        match self {
            MetricDensity::Canonical(_) => "canonical",
            MetricDensity::Tabulated(_) => "tabulated",
        }
    }

    /// `ρ(t)`; may be `+∞` at `t = 0`.
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            MetricDensity::Canonical(c) => {
                let s = t + c.m0;
                if s <= 0.0 {
                    return f64::INFINITY;
                }
                let ball = c.profile.mass_below(s);
                if ball <= 0.0 {
                    return f64::INFINITY;
                }
                1.0 / (s * ball.powf(1.0 / c.sigma))
            }
            MetricDensity::Tabulated(d) => d.eval(t),
        }
    }

    pub fn value_at_zero(&self) -> f64 {
        self.eval(0.0)
    }

    /// Exact `∫_a^b ρ dt` (`0` when `b ≤ a`).
    ///
    /// The canonical density is `1/(s·P^{1/σ})` in `s = t + m0` with `P`
    /// constant between the ball-profile jumps, so each piece integrates to
    /// `ln(s1/s0)/P^{1/σ}`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        match self {
            MetricDensity::Tabulated(d) => d.integral(a, b),
            MetricDensity::Canonical(c) => {
                let (s_lo, s_hi) = (a + c.m0, b + c.m0);
                let radii = &c.profile.radii;
                // P(s) = cum[i] on (radii[i], radii[i+1]]; 0 on [0, radii[0]]
                let mut cuts: Vec<f64> = vec![s_lo];
                cuts.extend(radii.iter().copied().filter(|&r| r > s_lo && r < s_hi));
                cuts.push(s_hi);
                let mut total = 0.0;
                for w in cuts.windows(2) {
                    let (s0, s1) = (w[0], w[1]);
                    let ball = c.profile.mass_below(0.5 * (s0 + s1));
                    if ball <= 0.0 || s0 <= 0.0 {
                        return f64::INFINITY;
                    }
                    total += (s1 / s0).ln() / ball.powf(1.0 / c.sigma);
                }
                total
            }
        }
    }
}

/// `ρ(t) = 1/((t+m0)·ν(B_{t+m0})^{1/σ})` built from the ball profile at `b`.
///
/// Fails with `ZeroBallMass` if some retained point sees an empty ball
/// `B_{m(x)}` (a zero-mass base point under `m0 = 0`, or an empty `B_1`).
pub fn canonical_density(space: &Space, m0: f64, sigma: f64) -> Result<MetricDensity, DeformError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(DeformError::BadSigma(sigma));
    }
    if m0 != 0.0 && m0 != 1.0 {
        return Err(crate::error::AnalysisError::BadGauge(m0).into());
    }
    let profile = space.base_profile();
    for x in 0..space.len() {
        let s = space.radius_of(x) + m0;
        if s == 0.0 {
            continue;
        }
        if profile.mass_below(s) <= 0.0 {
            return Err(DeformError::ZeroBallMass { point: x, radius: s });
        }
    }
    if m0 == 0.0 {
        let est = crate::analysis::perfectness_at(space, space.base(), 0.0, f64::INFINITY);
        if est.kappa.value() > crate::deform::DEFAULT_MAX_KAPPA {
            log::warn!("space is not uniformly perfect at the base point (kappa = {:?})", est.kappa);
        }
    }
    Ok(MetricDensity::Canonical(CanonicalDensity { m0, sigma, profile }))
}
