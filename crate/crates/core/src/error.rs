use thiserror::Error;

use crate::model::{Equation, SeriesDomain};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{equation}: link {link} cannot model a series with domain {domain}")]
    IncompatibleLinkDomain {
        equation: Equation,
        link: String,
        domain: SeriesDomain,
    },

    #[error("{equation}: variance function {variance} is incompatible with {detail}")]
    IncompatibleVariance {
        equation: Equation,
        variance: String,
        detail: String,
    },

    #[error("the log(y + 1) transform requires a log link")]
    InvalidTransform,

    #[error("invalid lag set: {0}")]
    InvalidLagSet(String),

    #[error("series lengths differ: y1 has {y1} observations, y2 has {y2}")]
    LengthMismatch { y1: usize, y2: usize },

    #[error("series of length {n} is too short: need more than {required} observations")]
    SeriesTooShort { n: usize, required: usize },

    #[error("domain violation in {location} at index {index}: value {value} ({reason})")]
    DomainViolation {
        location: String,
        index: usize,
        value: f64,
        reason: String,
    },

    #[error("non-finite linear predictor for {equation} at t = {t}")]
    NonFinitePredictor { equation: Equation, t: usize },

    #[error("parameter vector does not match the model: expected {expected} coefficients, got {got}")]
    ParamMismatch { expected: usize, got: usize },

    #[error("dispersion must be positive and finite, got {0}")]
    InvalidDispersion(f64),

    #[error("{equation}: sum of variance function values is zero")]
    ZeroVarianceDenominator { equation: Equation },

    #[error("expected information matrix S2 is singular")]
    SingularS2,

    #[error("replication count must be at least 1, got {0}")]
    InvalidReplicationCount(usize),

    #[error("{failed} of {total} replications failed (more than 5%)")]
    TooManyFailedReplications { failed: usize, total: usize },

    #[error("the tested equation ({0}) has no cross lags")]
    EmptyCrossLags(Equation),

    #[error("negative QLR statistic {0}: restricted and unrestricted fits are inconsistent")]
    NegativeQlr(f64),

    #[error("sampling family {family} cannot simulate variance function {variance}")]
    FamilyMismatch { family: String, variance: String },

    #[error("family {family} does not support series domain {domain}")]
    FamilyDomainMismatch { family: String, domain: SeriesDomain },

    #[error("double Poisson tail mass {tail:e} beyond y_max = {y_max} exceeds 1e-10")]
    TruncationInsufficient { tail: f64, y_max: u64 },

    #[error("explosive path: {equation} mean {mu} exceeds the overflow guard at step {t}")]
    ExplosivePath { equation: Equation, t: usize, mu: f64 },

    #[error("series is constant; correlations are undefined")]
    ConstantSeries,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::IncompatibleLinkDomain { .. } => "IncompatibleLinkDomain",
            Error::IncompatibleVariance { .. } => "IncompatibleVariance",
            Error::InvalidTransform => "InvalidTransform",
            Error::InvalidLagSet(_) => "InvalidLagSet",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::SeriesTooShort { .. } => "SeriesTooShort",
            Error::DomainViolation { .. } => "DomainViolation",
            Error::NonFinitePredictor { .. } => "NonFinitePredictor",
            Error::ParamMismatch { .. } => "ParamMismatch",
            Error::InvalidDispersion(_) => "InvalidDispersion",
            Error::ZeroVarianceDenominator { .. } => "ZeroVarianceDenominator",
            Error::SingularS2 => "SingularS2",
            Error::InvalidReplicationCount(_) => "InvalidReplicationCount",
            Error::TooManyFailedReplications { .. } => "TooManyFailedReplications",
            Error::EmptyCrossLags(_) => "EmptyCrossLags",
            Error::NegativeQlr(_) => "NegativeQlr",
            Error::FamilyMismatch { .. } => "FamilyMismatch",
            Error::FamilyDomainMismatch { .. } => "FamilyDomainMismatch",
            Error::TruncationInsufficient { .. } => "TruncationInsufficient",
            Error::ExplosivePath { .. } => "ExplosivePath",
            Error::ConstantSeries => "ConstantSeries",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }
}
