//! Quasi-likelihood-ratio Granger causality test.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit_qmle, fit_qmle_with, FitOptions, FitResult};
use crate::model::{validate_spec_conditioned, Equation, LagSet, ModelContext, VarianceFunction};
use crate::qlcore::BOUNDARY_EPS;
use crate::stats::chi_square_sf;

/// Values of the statistic in `[-QLR_FLOOR, 0)` are rounding noise and reported as 0.
pub const QLR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Does series 1 Granger-cause series 2? Restricts the cross lags of equation 2.
    OneToTwo,
    /// Does series 2 Granger-cause series 1? Restricts the cross lags of equation 1.
    TwoToOne,
}

impl Direction {
    /// The equation whose cross-lag coefficients are set to zero under the null.
    pub fn target(self) -> Equation {
        match self {
            Direction::OneToTwo => Equation::Second,
            Direction::TwoToOne => Equation::First,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::OneToTwo => "1->2",
            Direction::TwoToOne => "2->1",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1->2" | "12" | "1to2" | "one-to-two" => Ok(Direction::OneToTwo),
            "2->1" | "21" | "2to1" | "two-to-one" => Ok(Direction::TwoToOne),
            _ => Err(Error::InvalidArgument(format!("unknown direction '{s}' (use 1->2 or 2->1)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GrangerTestResult {
    pub direction: Direction,
    pub qlr: f64,
    pub df: usize,
    pub p_value: f64,
    pub restricted_fit: FitResult,
    pub unrestricted_fit: FitResult,
    /// Dispersion of the target equation from the unrestricted fit.
    pub phi_used: f64,
}

impl GrangerTestResult {
    pub fn rejects_at(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Dispersion-free `q(y; a) - q(y; b)` in closed form for each variance kind.
fn q_difference(y: f64, a: f64, b: f64, variance: VarianceFunction) -> f64 {
    match variance {
        VarianceFunction::Constant => 0.5 * ((y - b).powi(2) - (y - a).powi(2)),
        VarianceFunction::Linear => {
            let log_ratio = if y == 0.0 { 0.0 } else { y * (a / b).ln() };
            log_ratio - (a - b)
        }
        VarianceFunction::BernoulliLike => {
            let y = y.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS);
            y * (a / b).ln() + (1.0 - y) * ((1.0 - a) / (1.0 - b)).ln()
        }
        VarianceFunction::Quadratic => y / b + b.ln() - y / a - a.ln(),
    }
}

/// `2 / phi * sum_t [q(y_t; mu_t) - q(y_t; mu0_t)]` for unrestricted means `mu`
/// and restricted means `mu0`.
pub fn qlr_statistic(y: &[f64], mu: &[f64], mu0: &[f64], phi: f64, variance: VarianceFunction) -> Result<f64> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::InvalidDispersion(phi));
    }
    if y.len() != mu.len() || y.len() != mu0.len() {
        return Err(Error::LengthMismatch { y1: y.len(), y2: mu.len().min(mu0.len()) });
    }
    let sum: f64 = y
        .iter()
        .zip(mu.iter().zip(mu0))
        .map(|(&y, (&a, &b))| q_difference(y, variance.clamp_mean(a), variance.clamp_mean(b), variance))
        .sum();
    let qlr = 2.0 * sum / phi;
    if qlr < -QLR_FLOOR {
        return Err(Error::NegativeQlr(qlr));
    }
    Ok(qlr.max(0.0))
}

fn target_q(fit: &FitResult, e: Equation) -> f64 {
    let v = fit.spec.equation(e).variance;
    let y = &fit.response[e.index()];
    let mu = fit.mean_path.mu(e);
    // dispersion-free q relative to an arbitrary common reference point
    y.iter().zip(mu).map(|(&y, &m)| q_difference(y, m, 0.5, v)).sum()
}

/// Fits the unrestricted model in `ctx` and the model without the target
/// equation's cross lags (on the same conditioning set), then computes the QLR.
pub fn granger_test(ctx: &ModelContext, direction: Direction) -> Result<GrangerTestResult> {
    let e = direction.target();
    let spec = ctx.spec();
    let df = spec.equation(e).cross_lags.len();
    if df == 0 {
        return Err(Error::EmptyCrossLags(e));
    }
    let mut restricted_spec = spec.clone();
    restricted_spec.equation_mut(e).cross_lags = LagSet::empty();
    let rctx = validate_spec_conditioned(&restricted_spec, ctx.data(), ctx.m())?;
    let restricted = fit_qmle(&rctx)?;
    let mut unrestricted = fit_qmle(ctx)?;
    if target_q(&unrestricted, e) < target_q(&restricted, e) {
        // restart from the nested solution, where the unrestricted maximum can only be higher
        let mut start = restricted.theta_hat.clone();
        match e {
            Equation::First => start.gamma1 = vec![0.0; df],
            Equation::Second => start.gamma2 = vec![0.0; df],
        }
        let opts = FitOptions { start: Some(start.flatten()), ..FitOptions::default() };
        let again = fit_qmle_with(ctx, &opts)?;
        if target_q(&again, e) > target_q(&unrestricted, e) {
            unrestricted = again;
        }
    }
    let phi = unrestricted.phi(e);
    let qlr = qlr_statistic(
        &unrestricted.response[e.index()],
        unrestricted.mean_path.mu(e),
        restricted.mean_path.mu(e),
        phi,
        spec.equation(e).variance,
    )?;
    Ok(GrangerTestResult {
        direction,
        qlr,
        df,
        p_value: chi_square_sf(qlr, df as f64),
        restricted_fit: restricted,
        unrestricted_fit: unrestricted,
        phi_used: phi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_spec;
    use crate::qlcore::{ql_contribution, QlForm};
    use crate::simulate::{simulate_trajectory, stream_rng, study::configuration_1};
    use approx::assert_relative_eq;

    #[test]
    fn closed_forms_match_generic_difference() {
        let cases = [
            (VarianceFunction::Constant, [-0.4, 1.3, 2.2]),
            (VarianceFunction::Linear, [0.0, 3.0, 7.0]),
            (VarianceFunction::BernoulliLike, [0.1, 0.55, 0.93]),
            (VarianceFunction::Quadratic, [0.3, 1.0, 4.5]),
        ];
        let means = |v: VarianceFunction| match v {
            VarianceFunction::BernoulliLike => [0.2, 0.6, 0.8],
            VarianceFunction::Constant => [-1.0, 0.5, 2.0],
            _ => [0.5, 2.0, 6.0],
        };
        for (v, ys) in cases {
            for y in ys {
                for a in means(v) {
                    for b in means(v) {
                        let generic = ql_contribution(y, a, 1.0, v, QlForm::ConstantDropped).unwrap()
                            - ql_contribution(y, b, 1.0, v, QlForm::ConstantDropped).unwrap();
                        assert_relative_eq!(q_difference(y, a, b, v), generic, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn identical_fits_give_zero() {
        let y = [2.0, 0.0, 5.0];
        let mu = [1.5, 0.7, 4.0];
        let q = qlr_statistic(&y, &mu, &mu, 1.3, VarianceFunction::Linear).unwrap();
        assert_eq!(q, 0.0);
        assert_eq!(chi_square_sf(q, 1.0), 1.0);
    }

    #[test]
    fn negative_statistic_is_an_error() {
        // restricted means equal the data, so the "unrestricted" fit is worse
        let y = [2.0, 3.0];
        let r = qlr_statistic(&y, &[1.0, 1.0], &y, 1.0, VarianceFunction::Linear);
        assert!(matches!(r, Err(Error::NegativeQlr(_))));
    }

    #[test]
    fn p_value_at_critical_value() {
        assert!((chi_square_sf(3.841458820694124, 1.0) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn empty_cross_lags_rejected() {
        let mut cfg = configuration_1(1, 1);
        let s = simulate_trajectory(&cfg.model, cfg.families, 80, 100, &mut stream_rng(1, 0)).unwrap();
        cfg.model.spec.eq2.cross_lags = LagSet::empty();
        let ctx = validate_spec(&cfg.model.spec, &s).unwrap();
        assert_eq!(granger_test(&ctx, Direction::OneToTwo).unwrap_err(), Error::EmptyCrossLags(Equation::Second));
        assert!(granger_test(&ctx, Direction::TwoToOne).is_ok());
    }

    #[test]
    fn statistic_is_nonnegative_and_consistent() {
        let cfg = configuration_1(6, 1);
        for r in 0..5 {
            let s = simulate_trajectory(&cfg.model, cfg.families, 200, 500, &mut stream_rng(6, r)).unwrap();
            let ctx = validate_spec(&cfg.model.spec, &s).unwrap();
            for d in [Direction::OneToTwo, Direction::TwoToOne] {
                let g = granger_test(&ctx, d).unwrap();
                assert!(g.qlr >= 0.0 && (0.0..=1.0).contains(&g.p_value));
                assert_eq!(g.restricted_fit.m, g.unrestricted_fit.m);
                assert_eq!(g.df, 1);
                // the untouched equation is fitted identically in both models
                let other = d.target().other();
                let a = g.restricted_fit.theta_hat.equation(other);
                let b = g.unrestricted_fit.theta_hat.equation(other);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn direction_parsing() {
        assert_eq!("1->2".parse::<Direction>().unwrap(), Direction::OneToTwo);
        assert_eq!("2->1".parse::<Direction>().unwrap().target(), Equation::First);
        assert!("3->1".parse::<Direction>().is_err());
    }
}
