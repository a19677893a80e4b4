//! Closed forms checked against independent numerical oracles.

use mixtsql::diagnose::{acf, acf_pacf};
use mixtsql::forecast::{rmfe_path, ForecastPoint};
use mixtsql::qlcore::{ql_contribution, quasi_loglik, score, QlForm};
use mixtsql::simulate::study::configuration_1;
use mixtsql::simulate::{simulate_trajectory, stream_rng, DoublePoisson};
use mixtsql::stats::{chi_square_sf, normal_quantile};
use mixtsql::{validate_spec, EquationSpec, LagSet, LinkFunction, ModelSpec, ParamVector, VarianceFunction};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` (either orientation).
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn random_tuple<R: Rng>(rng: &mut R) -> (VarianceFunction, f64, f64, f64) {
    let phi = rng.random_range(0.05..5.0);
    match rng.random_range(0..4) {
        0 => (VarianceFunction::Constant, rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), phi),
        1 => (VarianceFunction::Linear, rng.random_range(0..40) as f64, rng.random_range(0.1..40.0), phi),
        2 => (VarianceFunction::BernoulliLike, rng.random_range(0.001..0.999), rng.random_range(0.01..0.99), phi),
        _ => (VarianceFunction::Quadratic, rng.random_range(0.1..20.0), rng.random_range(0.1..20.0), phi),
    }
}

#[test]
fn closed_forms_match_quadrature() {
    let mut rng = stream_rng(20, 0);
    for _ in 0..1000 {
        let (v, y, mu, phi) = random_tuple(&mut rng);
        // continuous extension at w = 0 for a zero count under V(w) = w
        let integrand = |w: f64| if w == 0.0 && y == 0.0 { -1.0 / phi } else { (y - w) / (phi * v.eval(w)) };
        let oracle = integrate(&integrand, y, mu, 1e-12);
        let closed = ql_contribution(y, mu, phi, v, QlForm::FullIntegral).unwrap();
        assert!((closed - oracle).abs() <= 1e-8, "{v:?} y={y} mu={mu} phi={phi}: {closed} vs {oracle}");
    }
}

#[test]
fn dropped_form_differs_by_a_function_of_y_only() {
    let mut rng = stream_rng(21, 0);
    for _ in 0..200 {
        let (v, y, mu, phi) = random_tuple(&mut rng);
        let mu2 = match v {
            VarianceFunction::BernoulliLike => 0.5,
            VarianceFunction::Constant => 0.0,
            _ => 1.0,
        };
        let diff = |m: f64| {
            ql_contribution(y, m, phi, v, QlForm::FullIntegral).unwrap()
                - ql_contribution(y, m, phi, v, QlForm::ConstantDropped).unwrap()
        };
        assert!((diff(mu) - diff(mu2)).abs() < 1e-9);
    }
}

fn random_spec<R: Rng>(rng: &mut R) -> ModelSpec {
    let lags = |rng: &mut R| {
        let picked: Vec<usize> = (1..5).filter(|_| rng.random_bool(0.35)).collect();
        LagSet::new(picked).unwrap()
    };
    ModelSpec::new(
        EquationSpec::new(LinkFunction::logit(), VarianceFunction::BernoulliLike, lags(rng), lags(rng)),
        EquationSpec::new(LinkFunction::log_plus_one(), VarianceFunction::Linear, lags(rng), lags(rng)),
    )
}

#[test]
fn score_matches_central_differences() {
    let cfg = configuration_1(30, 1);
    let mut rng = stream_rng(31, 0);
    for k in 0..50 {
        let data = simulate_trajectory(&cfg.model, cfg.families, 120, 200, &mut stream_rng(32, k)).unwrap();
        let spec = random_spec(&mut rng);
        let ctx = validate_spec(&spec, &data).unwrap();
        let flat: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-0.3..0.3)).collect();
        let theta = ParamVector::from_flat(&spec, &flat, rng.random_range(0.1..0.9), rng.random_range(0.5..3.0)).unwrap();
        let analytic = score(&ctx, &theta).unwrap();
        for j in 0..spec.dim() {
            let h = 1e-5;
            let at = |d: f64| {
                let mut x = flat.clone();
                x[j] += d;
                let t = ParamVector::from_flat(&spec, &x, theta.phi1, theta.phi2).unwrap();
                quasi_loglik(&ctx, &t).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let a = analytic[j];
            assert!((a - fd).abs() <= 1e-5 * a.abs().max(1.0), "case {k} coef {j}: {a} vs {fd}");
        }
    }
}

/// Regularized upper incomplete gamma by series / continued fraction.
fn upper_gamma_q(a: f64, x: f64) -> f64 {
    let ln_gamma_a = statrs::function::gamma::ln_gamma(a);
    if x < a + 1.0 {
        let mut sum = 1.0 / a;
        let mut term = sum;
        for n in 1..10_000 {
            term *= x / (a + n as f64);
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * (-x + a * x.ln() - ln_gamma_a).exp()
    } else {
        // modified Lentz
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x + a * x.ln() - ln_gamma_a).exp() * h
    }
}

#[test]
fn chi_square_tail_matches_incomplete_gamma() {
    for df in [1.0, 2.0, 3.0, 5.0, 10.0, 24.0] {
        for x in [0.01, 0.5, 1.0, 3.841458820694124, 7.5, 20.0, 45.0] {
            let oracle = upper_gamma_q(df / 2.0, x / 2.0);
            assert!((chi_square_sf(x, df) - oracle).abs() < 1e-12, "df={df} x={x}");
        }
    }
    // df = 2 has the closed form exp(-x/2)
    assert!((chi_square_sf(3.0, 2.0) - (-1.5f64).exp()).abs() < 1e-14);
}

#[test]
fn normal_quantile_inverts_erfc() {
    for p in [0.001, 0.025, 0.1, 0.5, 0.8, 0.975, 0.999] {
        let z = normal_quantile(p);
        let cdf = 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
        assert!((cdf - p).abs() < 1e-10, "p={p}: {}", cdf - p);
    }
}

#[test]
fn pacf_matches_yule_walker_solves() {
    let mut rng = stream_rng(40, 0);
    let e: Vec<f64> = (0..600).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut y = vec![0.0; e.len()];
    for t in 2..y.len() {
        y[t] = 0.5 * y[t - 1] - 0.3 * y[t - 2] + e[t];
    }
    let lmax = 12;
    let c = acf_pacf(&y, lmax).unwrap();
    let r = acf(&y, lmax).unwrap();
    for k in 1..=lmax {
        let toeplitz = DMatrix::from_fn(k, k, |i, j| r[i.abs_diff(j)]);
        let rhs = DVector::from_fn(k, |i, _| r[i + 1]);
        let phi = toeplitz.lu().solve(&rhs).unwrap();
        assert!((c.pacf[k] - phi[k - 1]).abs() < 1e-10, "lag {k}");
    }
}

#[test]
fn rmfe_accumulates_squared_errors() {
    let obs = [3.0, 0.0, 5.0, 2.0];
    let fc = [2.5, 1.0, 4.0, 2.0];
    let points: Vec<ForecastPoint> = obs
        .iter()
        .zip(&fc)
        .enumerate()
        .map(|(i, (&o, &f))| ForecastPoint {
            t: i + 1,
            observed: o,
            point_forecast: f,
            pi_low: 0.0,
            pi_high: 10.0,
            refit_failed: false,
        })
        .collect();
    let path = rmfe_path(&points);
    let mut s = 0.0;
    for h in 0..4 {
        s += (obs[h] - fc[h]) * (obs[h] - fc[h]);
        assert!((path[h] - (s / (h + 1) as f64).sqrt()).abs() < 1e-15);
    }
    assert!((path[3] - (2.25f64 / 4.0).sqrt()).abs() < 1e-15);
}

#[test]
fn double_poisson_at_unit_dispersion_is_poisson() {
    for mu in [0.3, 1.0, 4.5, 12.0, 40.0] {
        let dp = DoublePoisson::new(mu, 1.0).unwrap();
        let mut p = (-mu).exp();
        for y in 0..(10.0 * mu + 30.0) as u64 {
            assert!((dp.pmf(y) - p).abs() < 1e-8, "mu={mu} y={y}");
            p *= mu / (y + 1) as f64;
        }
    }
}
