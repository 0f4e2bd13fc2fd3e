use serde::Serialize;
use thiserror::Error;

/// One violated axiom, with a witness.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Violation {
    TooFewPoints { n: usize },
    InvalidDistance { i: usize, j: usize, value: f64 },
    NonZeroDiagonal { i: usize, value: f64 },
    NonSymmetric { i: usize, j: usize, dij: f64, dji: f64 },
    ZeroDistanceDistinctPoints { i: usize, j: usize },
    NegativeMass { i: usize, value: f64 },
    ZeroMass { i: usize, base: bool },
    /// `d(i,k) > d(i,j) + d(j,k)`; the worst triple by relative excess.
    TriangleViolation { i: usize, j: usize, k: usize, relative_excess: f64 },
}

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("inconsistent shapes: {0}")]
    Shape(String),
    #[error("invalid metric measure space: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("malformed space file: {0}")]
    Format(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("every ball has zero mass")]
    DegenerateMeasure,
    #[error("t = {t} is outside [0, {total})")]
    OutOfRange { t: f64, total: f64 },
    #[error("no exponent alpha > 0 certifies reverse doubling (growth factor {growth})")]
    FitFailed { growth: f64 },
    #[error("m0 must be 0 or 1, got {0}")]
    BadGauge(f64),
}

#[derive(Debug, Error)]
pub enum DeformError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error(
        "ball B(b, {radius}) has zero mass at point {point}; give the base point positive mass or use m0 = 1"
    )]
    ZeroBallMass { point: usize, radius: f64 },
    #[error("invalid density: {0}")]
    BadDensity(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("space is not uniformly perfect at large scales (kappa = {kappa})")]
    NotPerfectAtLargeScales { kappa: f64 },
    #[error("space is not uniformly perfect at the base point (kappa = {kappa})")]
    NotPerfectAtBase { kappa: f64 },
    #[error("no point besides the farthest one lies in the far annulus")]
    EmptyFarAnnulus,
}

#[derive(Debug, Error, PartialEq)]
pub enum BesovError {
    #[error("field has {got} entries, space has {expected}")]
    DomainMismatch { expected: usize, got: usize },
    #[error("field entry {0} is not finite")]
    NonFinite(usize),
    #[error("ball B({x}, d({x},{y})) has zero mass")]
    ZeroDenominator { x: usize, y: usize },
    #[error("need p >= 1 and theta > 0, got p = {p}, theta = {theta}")]
    BadParams { p: f64, theta: f64 },
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("energy comparison needs sigma = p*theta = {expected}, deformation used {got}")]
    SigmaMismatch { expected: f64, got: f64 },
    #[error(transparent)]
    Deform(#[from] DeformError),
    #[error(transparent)]
    Besov(#[from] BesovError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("parameter out of range: {0}")]
    ParamOutOfRange(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}
