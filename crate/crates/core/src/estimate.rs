//! Quasi-maximum-likelihood fitting, moment dispersion estimates, the
//! sandwich covariance and pseudo-parametric bootstrap standard errors.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_spec_conditioned, Equation, ModelContext, ModelSpec, ParamVector, SeriesDomain};
use crate::optim::{self, BfgsSettings, Objective, StopReason};
use crate::qlcore::{self, eval_equation, weighted_gram, MeanPath};
use crate::simulate::{self, SamplingFamily, TrueModel, DEFAULT_BURN_IN};
use crate::stats::{sample_sd, type7_quantile, Z_975};

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Converged when `max|U| <= tol * (1 + |Q|)` on the dispersion-free objective.
    pub tol: f64,
    /// Starting coefficients; defaults to `g(mean)` intercepts and zero lags.
    pub start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-6, start: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceStatus {
    Converged,
    NonConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    /// Max-norm of the dispersion-free score at the returned estimate.
    pub gradient_norm: f64,
    pub tolerance: f64,
    pub status: ConvergenceStatus,
    /// Whether the simplex restart was needed.
    pub simplex_restart: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub labels: Vec<String>,
    /// Estimated coefficients with `phi1`/`phi2` set to the moment estimates.
    pub theta_hat: ParamVector,
    pub phi1_hat: f64,
    pub phi2_hat: f64,
    /// Coefficient covariance `(n - m)^{-1} S2^{-1} S1 S2^{-1}`, flattening order.
    pub cov: DMatrix<f64>,
    pub se: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
    /// Quasi-log-likelihood at the estimate, using the estimated dispersions.
    pub qll: f64,
    pub mean_path: MeanPath,
    /// Observations for `t = m+1..n` as used by the quasi-likelihood.
    pub response: [Vec<f64>; 2],
    pub domains: [SeriesDomain; 2],
    pub m: usize,
    pub n: usize,
    pub convergence: Convergence,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.convergence.status == ConvergenceStatus::Converged
    }

    pub fn phi(&self, e: Equation) -> f64 {
        match e {
            Equation::First => self.phi1_hat,
            Equation::Second => self.phi2_hat,
        }
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.theta_hat.flatten()
    }

    /// Whether the 95% interval of coefficient `i` excludes zero.
    pub fn excludes_zero(&self, i: usize) -> bool {
        let (lo, hi) = self.ci[i];
        lo > 0.0 || hi < 0.0
    }
}

/// Negative dispersion-free quasi-log-likelihood over the flat coefficients.
struct NegQl<'a> {
    ctx: &'a ModelContext,
}

impl NegQl<'_> {
    fn split<'b>(&self, x: &'b [f64]) -> (&'b [f64], &'b [f64]) {
        x.split_at(self.ctx.spec().eq1.n_coefficients())
    }
}

impl Objective for NegQl<'_> {
    fn value(&self, x: &[f64]) -> Option<f64> {
        let (a, b) = self.split(x);
        let q1 = eval_equation(self.ctx, Equation::First, a, 1.0).ok()?.q;
        let q2 = eval_equation(self.ctx, Equation::Second, b, 1.0).ok()?.q;
        let f = -(q1 + q2);
        f.is_finite().then_some(f)
    }

    fn value_grad(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = self.split(x);
        let mut f = 0.0;
        let mut g = Vec::with_capacity(x.len());
        for (e, c) in [(Equation::First, a), (Equation::Second, b)] {
            let ev = eval_equation(self.ctx, e, c, 1.0).ok()?;
            f -= ev.q;
            let x = self.ctx.design(e);
            for j in 0..x.ncols() {
                let s: f64 = ev.score_weight.iter().enumerate().map(|(r, w)| w * x[(r, j)]).sum();
                g.push(-s);
            }
        }
        (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some((f, g))
    }
}

/// Deterministic start: intercepts at `g(mean of the margin)`, lag coefficients 0.
pub fn initial_coefficients(ctx: &ModelContext) -> Vec<f64> {
    let spec = ctx.spec();
    let mut x = vec![0.0; spec.dim()];
    for e in [Equation::First, Equation::Second] {
        let eq = spec.equation(e);
        let y = ctx.response(e);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        x[spec.block(e).start] = eq.link.link(eq.variance.clamp_mean(mean));
    }
    x
}

/// Inverse of the dispersion-free expected information, if positive definite.
fn inverse_information(ctx: &ModelContext, x: &[f64]) -> Option<DMatrix<f64>> {
    let theta = ParamVector::from_flat(ctx.spec(), x, 1.0, 1.0).ok()?;
    let h = qlcore::expected_information(ctx, &theta).ok()?;
    h.cholesky().map(|c| c.inverse())
}

pub fn fit_qmle(ctx: &ModelContext) -> Result<FitResult> {
    fit_qmle_with(ctx, &FitOptions::default())
}

pub fn fit_qmle_with(ctx: &ModelContext, opts: &FitOptions) -> Result<FitResult> {
    let spec = ctx.spec();
    let x0 = match &opts.start {
        Some(s) if s.len() == spec.dim() => s.clone(),
        Some(s) => return Err(Error::ParamMismatch { expected: spec.dim(), got: s.len() }),
        None => initial_coefficients(ctx),
    };
    let obj = NegQl { ctx };
    let settings = BfgsSettings { max_iter: opts.max_iter, tol: opts.tol };
    let mut out = optim::bfgs(&obj, &x0, inverse_information(ctx, &x0), &settings)
        .ok_or(Error::NonFinitePredictor { equation: Equation::First, t: ctx.m() + 1 })?;
    let mut iterations = out.iterations;
    let mut simplex_restart = false;
    if out.reason == StopReason::LineSearchFailed {
        simplex_restart = true;
        if let Some((xs, _)) = optim::nelder_mead(&obj, &out.x, 0.1, 200 * spec.dim()) {
            if let Some(again) = optim::bfgs(&obj, &xs, inverse_information(ctx, &xs), &settings) {
                if again.f <= out.f {
                    iterations += again.iterations;
                    out = again;
                }
            }
        }
    }
    let gradient_norm = out.grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let status = if gradient_norm <= opts.tol * (1.0 + out.f.abs()) {
        ConvergenceStatus::Converged
    } else {
        ConvergenceStatus::NonConverged
    };
    let convergence = Convergence { iterations, gradient_norm, tolerance: opts.tol, status, simplex_restart };
    finish_fit(ctx, &out.x, convergence)
}

fn finish_fit(ctx: &ModelContext, x: &[f64], convergence: Convergence) -> Result<FitResult> {
    let spec = ctx.spec();
    let mut warnings = Vec::new();
    if convergence.status == ConvergenceStatus::NonConverged {
        warnings.push(format!(
            "optimizer stopped after {} iterations with gradient norm {:.3e}",
            convergence.iterations, convergence.gradient_norm
        ));
    }
    for e in [Equation::First, Equation::Second] {
        let k = ctx.clamped_observations(e);
        if k > 0 {
            warnings.push(format!("{k} observations of series {} clamped to [1e-6, 1 - 1e-6]", e.number()));
        }
    }
    let theta = ParamVector::from_flat(spec, x, 1.0, 1.0)?;
    let (phi1, phi2) = estimate_dispersion(ctx, &theta)?;
    for (e, phi) in [(Equation::First, phi1), (Equation::Second, phi2)] {
        if phi == 0.0 {
            warnings.push(format!("degenerate dispersion estimate for series {} (perfect fit)", e.number()));
        }
    }
    let theta_hat = theta.with_phis(phi1, phi2);
    // the sandwich does not depend on the dispersions; a zero estimate falls back to 1
    let for_cov = theta_hat
        .clone()
        .with_phis(if phi1 > 0.0 { phi1 } else { 1.0 }, if phi2 > 0.0 { phi2 } else { 1.0 });
    let cov = sandwich_covariance(ctx, &for_cov)?;
    let se: Vec<f64> = (0..spec.dim()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let ci = x.iter().zip(&se).map(|(&b, &s)| normal_interval(b, s)).collect();
    let qll = qlcore::quasi_loglik(ctx, &for_cov)?;
    let mean_path = qlcore::mean_path(ctx, &theta_hat)?;
    Ok(FitResult {
        spec: spec.clone(),
        labels: spec.coefficient_labels(),
        theta_hat,
        phi1_hat: phi1,
        phi2_hat: phi2,
        cov,
        se,
        ci,
        qll,
        mean_path,
        response: [ctx.response(Equation::First).to_vec(), ctx.response(Equation::Second).to_vec()],
        domains: [ctx.data().domain(Equation::First), ctx.data().domain(Equation::Second)],
        m: ctx.m(),
        n: ctx.n(),
        convergence,
        warnings,
    })
}

/// Method-of-moments dispersions `sum (y - mu)^2 / sum V(mu)` over `t = m+1..n`.
pub fn estimate_dispersion(ctx: &ModelContext, theta: &ParamVector) -> Result<(f64, f64)> {
    let mp = qlcore::mean_path(ctx, theta)?;
    let mut phis = [0.0; 2];
    for e in [Equation::First, Equation::Second] {
        let v = ctx.spec().equation(e).variance;
        let mu = mp.mu(e);
        // residuals at rounding level count as exact fits
        let num: f64 = ctx
            .response(e)
            .iter()
            .zip(mu)
            .map(|(&y, &m)| {
                let r = y - m;
                if r.abs() <= 1e-14 * y.abs().max(m.abs()).max(1.0) { 0.0 } else { r * r }
            })
            .sum();
        let den: f64 = mu.iter().map(|&m| v.eval(m)).sum();
        if den == 0.0 || !den.is_finite() {
            return Err(Error::ZeroVarianceDenominator { equation: e });
        }
        phis[e.index()] = num / den;
    }
    Ok((phis[0], phis[1]))
}

/// Ingredients of the sandwich, each normalized by `n - m`.
#[derive(Debug, Clone)]
pub struct Sandwich {
    pub s1: DMatrix<f64>,
    pub s2: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

pub fn sandwich_parts(ctx: &ModelContext, theta: &ParamVector) -> Result<Sandwich> {
    let spec = ctx.spec();
    let dim = spec.dim();
    let k = ctx.n_eff() as f64;
    let u = qlcore::score_contributions(ctx, theta)?;
    let s1 = (u.transpose() * &u) / k;
    let mut s2 = DMatrix::zeros(dim, dim);
    for e in [Equation::First, Equation::Second] {
        let ev = eval_equation(ctx, e, &theta.equation(e), theta.phi(e))?;
        let block = weighted_gram(ctx.design(e), &ev.info_weight) / k;
        let r = spec.block(e);
        s2.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&block);
    }
    let s2_inv = s2.clone().cholesky().ok_or(Error::SingularS2)?.inverse();
    let mut sigma = &s2_inv * &s1 * &s2_inv;
    symmetrize(&mut sigma);
    Ok(Sandwich { s1, s2, sigma })
}

/// Coefficient covariance `(n - m)^{-1} Sigma_hat` with `Sigma_hat = S2^{-1} S1 S2^{-1}`.
pub fn sandwich_covariance(ctx: &ModelContext, theta: &ParamVector) -> Result<DMatrix<f64>> {
    let parts = sandwich_parts(ctx, theta)?;
    Ok(parts.sigma / ctx.n_eff() as f64)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub labels: Vec<String>,
    pub se: Vec<f64>,
    /// Empirical 2.5% and 97.5% quantiles of the replicated estimates.
    pub quantile_ci: Vec<(f64, f64)>,
    pub phi_se: [f64; 2],
    pub replications: usize,
    pub failed: usize,
    /// Successful replicated coefficient vectors, in replication order.
    pub estimates: Vec<Vec<f64>>,
    pub phi_estimates: Vec<[f64; 2]>,
}

impl BootstrapResult {
    /// Intervals from the bootstrap SEs with normal quantiles.
    pub fn normal_ci(&self, estimates: &[f64]) -> Vec<(f64, f64)> {
        estimates.iter().zip(&self.se).map(|(&b, &s)| normal_interval(b, s)).collect()
    }
}

/// `estimate +- 1.96 se`.
pub fn normal_interval(estimate: f64, se: f64) -> (f64, f64) {
    (estimate - Z_975 * se, estimate + Z_975 * se)
}

/// Pseudo-parametric bootstrap: `b` trajectories from the fitted model under
/// `families`, each refitted by QMLE. Replication `i` draws from the stream
/// seeded with `seed + i`.
pub fn bootstrap_se(
    ctx: &ModelContext,
    fit: &FitResult,
    b: usize,
    families: [SamplingFamily; 2],
    seed: u64,
) -> Result<BootstrapResult> {
    if b == 0 {
        return Err(Error::InvalidReplicationCount(0));
    }
    let model = TrueModel::new(ctx.spec().clone(), fit.theta_hat.clone())?;
    let n = ctx.n();
    let m = ctx.m();
    let opts = FitOptions { start: Some(fit.estimates()), ..FitOptions::default() };
    let outcomes: Vec<Option<(Vec<f64>, [f64; 2])>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = simulate::stream_rng(seed, i as u64);
            let series = simulate::simulate_trajectory(&model, families, n, DEFAULT_BURN_IN, &mut rng).ok()?;
            let rctx = validate_spec_conditioned(ctx.spec(), &series, m).ok()?;
            let f = fit_qmle_with(&rctx, &opts).ok()?;
            f.converged().then(|| (f.estimates(), [f.phi1_hat, f.phi2_hat]))
        })
        .collect();
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    if failed * 20 > b {
        return Err(Error::TooManyFailedReplications { failed, total: b });
    }
    let (estimates, phi_estimates): (Vec<_>, Vec<_>) = outcomes.into_iter().flatten().unzip();
    let dim = ctx.spec().dim();
    let column = |j: usize| estimates.iter().map(|v: &Vec<f64>| v[j]).collect::<Vec<_>>();
    let se = (0..dim).map(|j| sample_sd(&column(j))).collect();
    let quantile_ci = (0..dim)
        .map(|j| {
            let mut c = column(j);
            c.sort_by(f64::total_cmp);
            (type7_quantile(&c, 0.025), type7_quantile(&c, 0.975))
        })
        .collect();
    let phi_col = |k: usize| phi_estimates.iter().map(|p: &[f64; 2]| p[k]).collect::<Vec<_>>();
    Ok(BootstrapResult {
        labels: ctx.spec().coefficient_labels(),
        se,
        quantile_ci,
        phi_se: [sample_sd(&phi_col(0)), sample_sd(&phi_col(1))],
        replications: b,
        failed,
        estimates,
        phi_estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_spec, BivariateSeries, EquationSpec, LagSet, LinkFunction, VarianceFunction};
    use crate::simulate::{stream_rng, study::configuration_1};
    use approx::assert_relative_eq;

    fn intercept_spec(link1: LinkFunction, v1: VarianceFunction) -> ModelSpec {
        ModelSpec::new(
            EquationSpec::new(link1, v1, LagSet::empty(), LagSet::empty()),
            EquationSpec::new(LinkFunction::log_plus_one(), VarianceFunction::Linear, LagSet::empty(), LagSet::empty()),
        )
    }

    #[test]
    fn intercept_only_poisson_margin_hits_log_mean() {
        let spec = intercept_spec(LinkFunction::logit(), VarianceFunction::BernoulliLike);
        let data = BivariateSeries::new(
            vec![0.2, 0.4, 0.5, 0.7],
            vec![9.0, 2.0, 3.0, 7.0],
            SeriesDomain::UnitInterval,
            SeriesDomain::NonnegativeCount,
        )
        .unwrap();
        let ctx = validate_spec(&spec, &data).unwrap();
        let fit = fit_qmle(&ctx).unwrap();
        assert!(fit.converged());
        // stationary point of sum(y e^{-b} - 1) = 0 over t = 2..4
        assert_relative_eq!(fit.theta_hat.beta2[0], 4f64.ln(), epsilon = 1e-6);
        let p: f64 = (0.4 + 0.5 + 0.7) / 3.0;
        assert_relative_eq!(fit.theta_hat.beta1[0], (p / (1.0 - p)).ln(), epsilon = 1e-6);
    }

    #[test]
    fn noise_free_intercepts_are_exact() {
        let spec = intercept_spec(LinkFunction::logit(), VarianceFunction::BernoulliLike);
        let c = 0.3f64;
        let mu1 = 1.0 / (1.0 + (-c).exp());
        let data = BivariateSeries::new(
            vec![mu1; 20],
            vec![5.0; 20],
            SeriesDomain::UnitInterval,
            SeriesDomain::NonnegativeCount,
        )
        .unwrap();
        let ctx = validate_spec(&spec, &data).unwrap();
        let fit = fit_qmle(&ctx).unwrap();
        assert_relative_eq!(fit.theta_hat.beta1[0], c, epsilon = 1e-9);
        assert_relative_eq!(fit.theta_hat.beta2[0], 5f64.ln(), epsilon = 1e-9);
        assert!(fit.convergence.gradient_norm < 1e-9);
        assert_eq!(fit.phi1_hat, 0.0);
        assert!(fit.warnings.iter().any(|w| w.contains("degenerate")));
    }

    #[test]
    fn dispersion_arithmetic() {
        let spec = intercept_spec(LinkFunction::identity(), VarianceFunction::Constant);
        let data = BivariateSeries::new(
            vec![0.0, 1.0, -1.0, 1.0, -1.0],
            vec![1.0; 5],
            SeriesDomain::Real,
            SeriesDomain::NonnegativeCount,
        )
        .unwrap();
        let ctx = validate_spec(&spec, &data).unwrap();
        // residuals (1, -1, 1, -1) with V = 1
        let theta = ParamVector::from_flat(&spec, &[0.0, 0.0], 1.0, 1.0).unwrap();
        let (phi1, phi2) = estimate_dispersion(&ctx, &theta).unwrap();
        assert_relative_eq!(phi1, 1.0);
        assert_relative_eq!(phi2, 0.0);
    }

    #[test]
    fn gaussian_intercept_sandwich_reduces_to_variance_of_mean() {
        let spec = intercept_spec(LinkFunction::identity(), VarianceFunction::Constant);
        let y1 = vec![0.3, 1.2, -0.7, 2.2, 0.9, -0.1, 1.6, 0.4, 0.8, 1.1];
        let data = BivariateSeries::new(y1.clone(), vec![2.0; 10], SeriesDomain::Real, SeriesDomain::NonnegativeCount).unwrap();
        let ctx = validate_spec(&spec, &data).unwrap();
        let fit = fit_qmle(&ctx).unwrap();
        let r = &y1[1..];
        let k = r.len() as f64;
        let mean = r.iter().sum::<f64>() / k;
        assert_relative_eq!(fit.theta_hat.beta1[0], mean, epsilon = 1e-8);
        let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
        assert_relative_eq!(fit.cov[(0, 0)], var / k, epsilon = 1e-10);
        assert_relative_eq!(fit.se[0], (var / k).sqrt(), epsilon = 1e-10);
    }

    fn c1_context(seed: u64, n: usize) -> ModelContext {
        let cfg = configuration_1(seed, 1);
        let s = simulate::simulate_trajectory(&cfg.model, cfg.families, n, 500, &mut stream_rng(seed, 0)).unwrap();
        validate_spec(&cfg.model.spec, &s).unwrap()
    }

    #[test]
    fn information_blocks_are_uncoupled() {
        let ctx = c1_context(3, 100);
        let theta = configuration_1(3, 1).model.params;
        let parts = sandwich_parts(&ctx, &theta).unwrap();
        for i in 0..3 {
            for j in 3..6 {
                assert_eq!(parts.s2[(i, j)], 0.0);
                assert_eq!(parts.s2[(j, i)], 0.0);
            }
        }
    }

    #[test]
    fn converged_fit_has_small_score() {
        let ctx = c1_context(8, 100);
        let fit = fit_qmle(&ctx).unwrap();
        assert!(fit.converged());
        let theta = fit.theta_hat.clone().with_phis(1.0, 1.0);
        let u = qlcore::score(&ctx, &theta).unwrap();
        let q = qlcore::quasi_loglik(&ctx, &theta).unwrap();
        let norm = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(norm <= 1e-6 * (1.0 + q.abs()));
        // covariance symmetric PSD and se = sqrt(diag)
        let eig = fit.cov.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-14));
        for i in 0..6 {
            assert_eq!(fit.cov[(i, 3.min(i))], fit.cov[(3.min(i), i)]);
            assert_relative_eq!(fit.se[i], fit.cov[(i, i)].sqrt());
        }
    }

    #[test]
    fn argmin_and_sandwich_invariant_to_dispersion() {
        let ctx = c1_context(12, 150);
        let fit = fit_qmle(&ctx).unwrap();
        let base = sandwich_covariance(&ctx, &fit.theta_hat).unwrap();
        let scaled = fit.theta_hat.clone().with_phis(fit.phi1_hat * 3.0, fit.phi2_hat * 0.5);
        let other = sandwich_covariance(&ctx, &scaled).unwrap();
        assert!((base - other).abs().max() < 1e-12);
        // score at the estimate vanishes for any dispersion
        let u = qlcore::score(&ctx, &scaled).unwrap();
        assert!(u.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn bootstrap_rejects_zero_replications() {
        let ctx = c1_context(1, 100);
        let fit = fit_qmle(&ctx).unwrap();
        let fam = [SamplingFamily::BetaMeanDispersion, SamplingFamily::Poisson];
        assert_eq!(bootstrap_se(&ctx, &fit, 0, fam, 1).unwrap_err(), Error::InvalidReplicationCount(0));
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let ctx = c1_context(2, 100);
        let fit = fit_qmle(&ctx).unwrap();
        let fam = [SamplingFamily::BetaMeanDispersion, SamplingFamily::Poisson];
        let a = bootstrap_se(&ctx, &fit, 20, fam, 99).unwrap();
        let b = bootstrap_se(&ctx, &fit, 20, fam, 99).unwrap();
        assert_eq!(a.se, b.se);
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.failed, 0);
        assert!(a.se.iter().all(|s| *s > 0.0));
    }
}
