//! Expanding-window one-step-ahead forecasts of series 2, with prediction
//! intervals and the running RMFE, plus a Gaussian benchmark on `sqrt(y2)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{fit_qmle_with, FitOptions};
use crate::model::{validate_spec, Equation, ModelContext, ParamVector};
use crate::qlcore::{predict_next, transform_series};
use crate::simulate::SamplingFamily;
use crate::stats::Z_975;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastMethod {
    Mixtsql,
    GaussianSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    /// 1-based time index of the forecast target.
    pub t: usize,
    pub observed: f64,
    pub point_forecast: f64,
    pub pi_low: f64,
    pub pi_high: f64,
    /// Refit failed and the previous step's parameters were reused.
    pub refit_failed: bool,
}

impl ForecastPoint {
    pub fn error(&self) -> f64 {
        self.observed - self.point_forecast
    }

    pub fn covered(&self) -> bool {
        self.pi_low <= self.observed && self.observed <= self.pi_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRun {
    pub method: ForecastMethod,
    pub initial_train: usize,
    pub points: Vec<ForecastPoint>,
    pub rmfe_path: Vec<f64>,
}

impl ForecastRun {
    fn new(method: ForecastMethod, initial_train: usize, points: Vec<ForecastPoint>) -> Self {
        let rmfe_path = rmfe_path(&points);
        Self { method, initial_train, points, rmfe_path }
    }

    pub fn final_rmfe(&self) -> f64 {
        self.rmfe_path.last().copied().unwrap_or(f64::NAN)
    }

    pub fn coverage(&self) -> f64 {
        self.points.iter().filter(|p| p.covered()).count() as f64 / self.points.len() as f64
    }
}

/// `RMFE_H = sqrt(H^{-1} sum_{h<=H} (y_{T+h} - yhat_{T+h})^2)` for `H = 1..`.
pub fn rmfe_path(points: &[ForecastPoint]) -> Vec<f64> {
    let mut acc = 0.0;
    points
        .iter()
        .enumerate()
        .map(|(h, p)| {
            acc += p.error().powi(2);
            (acc / (h + 1) as f64).sqrt()
        })
        .collect()
}

fn check_window(ctx: &ModelContext, train: usize) -> Result<()> {
    let required = ctx.spec().max_lag().max(1) + ctx.spec().dim() + 1;
    if train < required {
        return Err(Error::SeriesTooShort { n: train, required });
    }
    if train >= ctx.n() {
        return Err(Error::InvalidArgument(format!(
            "training size {train} must be below the series length {}",
            ctx.n()
        )));
    }
    Ok(())
}

/// Refits on `y[..T]`, forecasts `y2[T]`, extends the window and repeats until
/// the end of the series. Intervals are the 2.5% and 97.5% quantiles of
/// `pi_family` at the forecast mean and the fitted dispersion of series 2.
pub fn osa_forecast(ctx: &ModelContext, train: usize, pi_family: SamplingFamily) -> Result<ForecastRun> {
    check_window(ctx, train)?;
    let domain = ctx.data().domain(Equation::Second);
    if pi_family.domain() != domain {
        return Err(Error::FamilyDomainMismatch { family: pi_family.to_string(), domain });
    }
    let spec = ctx.spec();
    let data = ctx.data();
    let mut last: Option<ParamVector> = None;
    let mut points = Vec::with_capacity(ctx.n() - train);
    for cut in train..ctx.n() {
        let window = data.prefix(cut);
        let opts = FitOptions { start: last.as_ref().map(|p| p.flatten()), ..FitOptions::default() };
        let refit = validate_spec(spec, &window).and_then(|c| fit_qmle_with(&c, &opts));
        let (theta, refit_failed) = match (refit, &last) {
            (Ok(f), _) if f.converged() => (f.theta_hat, false),
            (Ok(_) | Err(_), Some(prev)) => (prev.clone(), true),
            (Ok(f), None) => (f.theta_hat, true),
            (Err(e), None) => return Err(e),
        };
        let (_, mu2) = predict_next(spec, window.y1(), window.y2(), &theta)?;
        let phi2 = theta.phi2;
        points.push(ForecastPoint {
            t: cut + 1,
            observed: data.y2()[cut],
            point_forecast: mu2,
            pi_low: pi_family.quantile(0.025, mu2, phi2)?,
            pi_high: pi_family.quantile(0.975, mu2, phi2)?,
            refit_failed,
        });
        last = Some(theta);
    }
    Ok(ForecastRun::new(ForecastMethod::Mixtsql, train, points))
}

/// Linear-Gaussian autoregression for `sqrt(y2)` with the lag structure of
/// equation 2: own lags enter as `sqrt(y2)`, cross lags as the equation-1
/// transform of `y1`. Forecasts and interval limits are squared back with no
/// bias correction; negative limits are truncated at 0 first.
pub fn gaussian_baseline(ctx: &ModelContext, train: usize) -> Result<ForecastRun> {
    check_window(ctx, train)?;
    let spec = ctx.spec();
    let eq = &spec.eq2;
    let data = ctx.data();
    let z: Vec<f64> = data.y2().iter().map(|v| v.max(0.0).sqrt()).collect();
    let x1 = transform_series(data.y1(), &spec.eq1.link)?;
    let m = spec.max_lag().max(1);
    let row = |t: usize| -> Vec<f64> {
        let mut r = vec![1.0];
        r.extend(eq.own_lags.lags().iter().map(|&l| z[t - l]));
        r.extend(eq.cross_lags.lags().iter().map(|&l| x1[t - l]));
        r
    };
    let p = eq.n_coefficients();
    let mut points = Vec::with_capacity(ctx.n() - train);
    for cut in train..ctx.n() {
        let k = cut - m;
        let mut xm = DMatrix::zeros(k, p);
        let mut yv = DVector::zeros(k);
        for (i, t) in (m..cut).enumerate() {
            xm.row_mut(i).copy_from_slice(&row(t));
            yv[i] = z[t];
        }
        let beta = xm
            .clone()
            .svd(true, true)
            .solve(&yv, 1e-12)
            .map_err(|e| Error::InvalidArgument(format!("baseline regression failed: {e}")))?;
        let resid = &yv - &xm * &beta;
        let sigma = (resid.norm_squared() / (k - p).max(1) as f64).sqrt();
        let zhat: f64 = row(cut).iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        let back = |v: f64| v.max(0.0).powi(2);
        points.push(ForecastPoint {
            t: cut + 1,
            observed: data.y2()[cut],
            point_forecast: back(zhat),
            pi_low: back(zhat - Z_975 * sigma),
            pi_high: back(zhat + Z_975 * sigma),
            refit_failed: false,
        });
    }
    Ok(ForecastRun::new(ForecastMethod::GaussianSqrt, train, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BivariateSeries, EquationSpec, LagSet, LinkFunction, ModelSpec, SeriesDomain, VarianceFunction};
    use crate::simulate::{simulate_trajectory, stream_rng, study::configuration_1};

    fn point(observed: f64, forecast: f64) -> ForecastPoint {
        ForecastPoint { t: 1, observed, point_forecast: forecast, pi_low: 0.0, pi_high: 0.0, refit_failed: false }
    }

    #[test]
    fn rmfe_arithmetic() {
        let path = rmfe_path(&[point(3.0, 0.0), point(0.0, 4.0)]);
        assert_eq!(path[0], 3.0);
        assert!((path[1] - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmfe_path(&[point(2.0, 2.0), point(5.0, 5.0)]).iter().all(|&r| r == 0.0));
    }

    fn c1_context(n: usize, seed: u64) -> ModelContext {
        let cfg = configuration_1(seed, 1);
        let s = simulate_trajectory(&cfg.model, cfg.families, n, 500, &mut stream_rng(seed, 0)).unwrap();
        validate_spec(&cfg.model.spec, &s).unwrap()
    }

    #[test]
    fn protocol_shape() {
        let ctx = c1_context(112, 2);
        let run = osa_forecast(&ctx, 50, SamplingFamily::DoublePoisson).unwrap();
        assert_eq!(run.points.len(), 62);
        assert_eq!(run.rmfe_path.len(), 62);
        assert_eq!(run.points[0].t, 51);
        assert!(run.points.iter().all(|p| p.pi_low <= p.point_forecast.ceil() && p.pi_low <= p.pi_high));
        let g = gaussian_baseline(&ctx, 50).unwrap();
        assert_eq!(g.points.len(), 62);
    }

    #[test]
    fn no_lookahead() {
        let ctx = c1_context(90, 3);
        let run = osa_forecast(&ctx, 60, SamplingFamily::Poisson).unwrap();
        // alter everything from t = 71 on: forecasts for t <= 71 must not move
        let d = ctx.data();
        let mut y2 = d.y2().to_vec();
        for v in &mut y2[70..] {
            *v += 5.0;
        }
        let altered = BivariateSeries::new(d.y1().to_vec(), y2, d.domain(Equation::First), d.domain(Equation::Second)).unwrap();
        let actx = validate_spec(ctx.spec(), &altered).unwrap();
        let arun = osa_forecast(&actx, 60, SamplingFamily::Poisson).unwrap();
        for (a, b) in run.points.iter().zip(&arun.points).take(11) {
            assert_eq!(a.point_forecast, b.point_forecast);
        }
        assert_ne!(run.points[11].point_forecast, arun.points[11].point_forecast);
    }

    #[test]
    fn window_checks() {
        let ctx = c1_context(60, 4);
        assert!(osa_forecast(&ctx, 60, SamplingFamily::Poisson).is_err());
        assert!(osa_forecast(&ctx, 3, SamplingFamily::Poisson).is_err());
        assert!(matches!(
            osa_forecast(&ctx, 30, SamplingFamily::BetaMeanDispersion),
            Err(Error::FamilyDomainMismatch { .. })
        ));
    }

    #[test]
    fn gaussian_baseline_is_exact_on_noise_free_data() {
        // sqrt(y2_t) = 0.5 + 0.6 sqrt(y2_{t-1}) + 0.3 logit(y1_{t-1})
        let n = 40;
        let y1: Vec<f64> = (0..n).map(|t| 0.3 + 0.4 * ((t * 7 % 11) as f64 / 11.0)).collect();
        let mut z = vec![1.0; n];
        for t in 1..n {
            let l = (y1[t - 1] / (1.0 - y1[t - 1])).ln();
            z[t] = 0.5 + 0.6 * z[t - 1] + 0.3 * l;
        }
        let y2: Vec<f64> = z.iter().map(|v| v * v).collect();
        let data = BivariateSeries::new(y1, y2, SeriesDomain::UnitInterval, SeriesDomain::PositiveReal).unwrap();
        let spec = ModelSpec::new(
            EquationSpec::new(LinkFunction::logit(), VarianceFunction::BernoulliLike, LagSet::range(1), LagSet::range(1)),
            EquationSpec::new(LinkFunction::log(), VarianceFunction::Linear, LagSet::range(1), LagSet::range(1)),
        );
        let ctx = validate_spec(&spec, &data).unwrap();
        let run = gaussian_baseline(&ctx, 20).unwrap();
        assert!(run.rmfe_path.iter().all(|r| *r < 1e-9));
    }

    #[test]
    fn gaussian_interval_is_asymmetric_after_squaring() {
        let ctx = c1_context(80, 5);
        let run = gaussian_baseline(&ctx, 40).unwrap();
        for p in &run.points {
            assert!(p.pi_low <= p.point_forecast && p.point_forecast <= p.pi_high);
            if p.pi_low > 0.0 {
                assert!(p.pi_high - p.point_forecast > p.point_forecast - p.pi_low);
            }
        }
    }
}
