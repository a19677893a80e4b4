//! Bivariate mixed-valued time series models fitted by quasi-likelihood.
//!
//! Each series follows a GLM-type recursion on its own past and the other
//! series' past, specified only through a link, a variance function and a
//! dispersion. The crate covers specification, estimation with sandwich
//! standard errors, a quasi-likelihood-ratio Granger test, simulation and
//! bootstrap, diagnostics and one-step-ahead forecasting.

pub mod causality;
pub mod diagnose;
pub mod error;
pub mod estimate;
pub mod forecast;
pub mod model;
mod optim;
pub mod qlcore;
pub mod simulate;
pub mod stats;

pub use causality::{granger_test, Direction, GrangerTestResult};
pub use error::{Error, Result};
pub use estimate::{bootstrap_se, fit_qmle, BootstrapResult, FitOptions, FitResult};
pub use model::{
    validate_spec, BivariateSeries, Equation, EquationSpec, LagSet, LinkFunction, ModelContext, ModelSpec,
    ParamVector, SeriesDomain, VarianceFunction,
};
pub use simulate::{SamplingFamily, TrueModel};
