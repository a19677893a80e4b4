//! Linear predictors, conditional means, the quasi-log-likelihood and its score.
//!
//! The quasi-likelihood of one observation is
//!
//! ```text
//! Q(y; mu) = (1/phi) * integral_y^mu (y - w) / V(w) dw
//! ```
//!
//! evaluated in closed form. Estimation uses the forms with `y`-only terms
//! dropped; [`QlForm::FullIntegral`] keeps them so that `Q(y; y) = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Equation, LinkFunction, ModelContext, ModelSpec, ParamVector, VarianceFunction};

/// Boundary clamp for unit-interval observations and means, and the lower
/// clamp for positive means.
pub const BOUNDARY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QlForm {
    /// `y`-only terms dropped; used for estimation.
    ConstantDropped,
    /// Exact value of the defining integral.
    FullIntegral,
}

/// Linear predictors and conditional means for `t = m+1..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanPath {
    pub nu1: Vec<f64>,
    pub nu2: Vec<f64>,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
}

impl MeanPath {
    pub fn mu(&self, e: Equation) -> &[f64] {
        match e {
            Equation::First => &self.mu1,
            Equation::Second => &self.mu2,
        }
    }

    pub fn nu(&self, e: Equation) -> &[f64] {
        match e {
            Equation::First => &self.nu1,
            Equation::Second => &self.nu2,
        }
    }
}

/// Applies `T` elementwise.
pub fn transform_series(y: &[f64], link: &LinkFunction) -> Result<Vec<f64>> {
    y.iter()
        .enumerate()
        .map(|(i, &v)| {
            link.transform(v).map_err(|reason| Error::DomainViolation {
                location: format!("transform ({link})"),
                index: i,
                value: v,
                reason: reason.into(),
            })
        })
        .collect()
}

/// Closed-form quasi-likelihood contribution of one observation.
pub fn ql_contribution(
    y: f64,
    mu: f64,
    phi: f64,
    variance: VarianceFunction,
    form: QlForm,
) -> Result<f64> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::InvalidDispersion(phi));
    }
    let mu = if variance.in_domain(mu) { mu } else { variance.clamp_mean(mu) };
    if !variance.in_domain(mu) {
        return Err(domain_err("mean", mu, variance));
    }
    let q = match (variance, form) {
        (VarianceFunction::Constant, _) => -(mu - y).powi(2) / 2.0,
        (VarianceFunction::Linear, QlForm::ConstantDropped) => xlogy(y, mu) - mu,
        (VarianceFunction::Linear, QlForm::FullIntegral) => {
            if y < 0.0 {
                return Err(domain_err("observation", y, variance));
            }
            xlogy(y, mu) - xlogy(y, y) - (mu - y)
        }
        (VarianceFunction::BernoulliLike, form) => {
            let y = y.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS);
            let dropped = y * mu.ln() + (1.0 - y) * (1.0 - mu).ln();
            match form {
                QlForm::ConstantDropped => dropped,
                QlForm::FullIntegral => dropped - y * y.ln() - (1.0 - y) * (1.0 - y).ln(),
            }
        }
        (VarianceFunction::Quadratic, QlForm::ConstantDropped) => -y / mu - mu.ln(),
        (VarianceFunction::Quadratic, QlForm::FullIntegral) => {
            if y <= 0.0 {
                return Err(domain_err("observation", y, variance));
            }
            -y / mu - mu.ln() + 1.0 + y.ln()
        }
    };
    Ok(q / phi)
}

/// `x log y` with `0 log y = 0`.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn domain_err(what: &str, v: f64, variance: VarianceFunction) -> Error {
    Error::DomainViolation {
        location: format!("{what} under {variance} variance"),
        index: 0,
        value: v,
        reason: "outside the variance function domain".into(),
    }
}

/// Per-equation evaluation at a coefficient vector: the quasi-log-likelihood
/// and the observation weights the score and information need.
#[derive(Debug, Clone)]
pub(crate) struct EquationEval {
    pub q: f64,
    /// `(y - mu) / (phi V(mu) g'(mu))` per observation.
    pub score_weight: Vec<f64>,
    /// `1 / (phi V(mu) g'(mu)^2)` per observation.
    pub info_weight: Vec<f64>,
}

pub(crate) fn eval_equation(
    ctx: &ModelContext,
    e: Equation,
    coef: &[f64],
    phi: f64,
) -> Result<EquationEval> {
    let eq = ctx.spec().equation(e);
    let x = ctx.design(e);
    if coef.iter().any(|c| c.is_nan()) {
        return Err(Error::NonFinitePredictor { equation: e, t: ctx.m() + 1 });
    }
    let nu = x * DVector::from_column_slice(coef);
    let y = ctx.response(e);
    let mut score_weight = Vec::with_capacity(y.len());
    let mut info_weight = Vec::with_capacity(y.len());
    let mut q = 0.0;
    for (r, (&nu_t, &y_t)) in nu.iter().zip(y).enumerate() {
        if nu_t.is_nan() {
            return Err(Error::NonFinitePredictor { equation: e, t: ctx.m() + r + 1 });
        }
        let m = eq.variance.clamp_mean(eq.link.inverse(nu_t));
        let v = eq.variance.eval(m);
        let gp = eq.link.derivative(m);
        q += ql_contribution(y_t, m, phi, eq.variance, QlForm::ConstantDropped)?;
        score_weight.push((y_t - m) / (phi * v * gp));
        info_weight.push(1.0 / (phi * v * gp * gp));
    }
    Ok(EquationEval { q, score_weight, info_weight })
}

/// Conditional means implied by `theta` for `t = m+1..n`.
pub fn mean_path(ctx: &ModelContext, theta: &ParamVector) -> Result<MeanPath> {
    theta.conforms_to(ctx.spec())?;
    let mut out = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for e in [Equation::First, Equation::Second] {
        let eq = ctx.spec().equation(e);
        let coef = theta.equation(e);
        if coef.iter().any(|c| c.is_nan()) {
            return Err(Error::NonFinitePredictor { equation: e, t: ctx.m() + 1 });
        }
        let nu = ctx.design(e) * DVector::from_vec(coef);
        let mu = nu.iter().map(|&v| eq.variance.clamp_mean(eq.link.inverse(v))).collect();
        out[e.index()] = nu.iter().copied().collect();
        out[2 + e.index()] = mu;
    }
    let [nu1, nu2, mu1, mu2] = out;
    Ok(MeanPath { nu1, nu2, mu1, mu2 })
}

/// `sum_{t=m+1}^n [Q_1(y_1t; mu_1t) + Q_2(y_2t; mu_2t)]` with the dispersions in `theta`.
pub fn quasi_loglik(ctx: &ModelContext, theta: &ParamVector) -> Result<f64> {
    theta.conforms_to(ctx.spec())?;
    let mut total = 0.0;
    for e in [Equation::First, Equation::Second] {
        total += eval_equation(ctx, e, &theta.equation(e), theta.phi(e))?.q;
    }
    Ok(total)
}

/// Analytic quasi-score `U(theta) = sum_t U_t(theta)` in flattening order.
pub fn score(ctx: &ModelContext, theta: &ParamVector) -> Result<Vec<f64>> {
    theta.conforms_to(ctx.spec())?;
    let mut g = Vec::with_capacity(ctx.spec().dim());
    for e in [Equation::First, Equation::Second] {
        let ev = eval_equation(ctx, e, &theta.equation(e), theta.phi(e))?;
        let w = DVector::from_vec(ev.score_weight);
        g.extend((ctx.design(e).transpose() * w).iter());
    }
    Ok(g)
}

/// Per-observation scores `U_t` as rows of an `(n - m) x dim` matrix.
pub fn score_contributions(ctx: &ModelContext, theta: &ParamVector) -> Result<DMatrix<f64>> {
    theta.conforms_to(ctx.spec())?;
    let spec = ctx.spec();
    let mut u = DMatrix::zeros(ctx.n_eff(), spec.dim());
    for e in [Equation::First, Equation::Second] {
        let ev = eval_equation(ctx, e, &theta.equation(e), theta.phi(e))?;
        let x = ctx.design(e);
        let block = spec.block(e);
        for (r, w) in ev.score_weight.iter().enumerate() {
            for (c, col) in block.clone().enumerate() {
                u[(r, col)] = w * x[(r, c)];
            }
        }
    }
    Ok(u)
}

/// `sum_t H_t`, the conditional expected information. Block diagonal by construction.
pub fn expected_information(ctx: &ModelContext, theta: &ParamVector) -> Result<DMatrix<f64>> {
    theta.conforms_to(ctx.spec())?;
    let spec = ctx.spec();
    let dim = spec.dim();
    let mut h = DMatrix::zeros(dim, dim);
    for e in [Equation::First, Equation::Second] {
        let ev = eval_equation(ctx, e, &theta.equation(e), theta.phi(e))?;
        let block = weighted_gram(ctx.design(e), &ev.info_weight);
        let r = spec.block(e);
        h.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&block);
    }
    Ok(h)
}

/// `X^T diag(w) X`.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let p = x.ncols();
    let mut g = DMatrix::zeros(p, p);
    for (r, &wr) in w.iter().enumerate() {
        for i in 0..p {
            let xi = wr * x[(r, i)];
            for j in 0..=i {
                g[(i, j)] += xi * x[(r, j)];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            g[(j, i)] = g[(i, j)];
        }
    }
    g
}

/// Conditional means for the time point right after the end of `y1`/`y2`,
/// using only observed lags. Returns `(mu_1, mu_2)` at `t = len + 1`.
pub fn predict_next(
    spec: &ModelSpec,
    y1: &[f64],
    y2: &[f64],
    theta: &ParamVector,
) -> Result<(f64, f64)> {
    theta.conforms_to(spec)?;
    let n = y1.len();
    if y2.len() != n {
        return Err(Error::LengthMismatch { y1: n, y2: y2.len() });
    }
    if n < spec.max_lag() {
        return Err(Error::SeriesTooShort { n, required: spec.max_lag() });
    }
    let ty = [transform_series(y1, &spec.eq1.link)?, transform_series(y2, &spec.eq2.link)?];
    let mut mus = [0.0; 2];
    for e in [Equation::First, Equation::Second] {
        let eq = spec.equation(e);
        let coef = theta.equation(e);
        let own = &ty[e.index()];
        let cross = &ty[e.other().index()];
        let mut nu = coef[0];
        for (i, &l) in eq.own_lags.lags().iter().enumerate() {
            nu += coef[1 + i] * own[n - l];
        }
        let k = 1 + eq.own_lags.len();
        for (i, &l) in eq.cross_lags.lags().iter().enumerate() {
            nu += coef[k + i] * cross[n - l];
        }
        if !nu.is_finite() {
            return Err(Error::NonFinitePredictor { equation: e, t: n + 1 });
        }
        mus[e.index()] = eq.variance.clamp_mean(eq.link.inverse(nu));
    }
    Ok((mus[0], mus[1]))
}
