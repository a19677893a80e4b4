//! Structural description of a bivariate mixed-valued quasi-likelihood model.
//!
//! Each margin `j` has a conditional mean `mu_j,t` linked to a linear predictor
//!
//! ```text
//! g_j(mu_j,t) = b0 + sum_{l in own_j} b_l T_j(y_j,t-l) + sum_{l in cross_j} c_l T_k(y_k,t-l)
//! ```
//!
//! and conditional variance `phi_j V_j(mu_j,t)`. Lag sets are arbitrary sparse
//! subsets of the positive integers.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlcore::BOUNDARY_EPS;

/// Which of the two equations (or series) a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Equation {
    First,
    Second,
}

impl Equation {
    pub fn index(self) -> usize {
        match self {
            Equation::First => 0,
            Equation::Second => 1,
        }
    }

    pub fn other(self) -> Equation {
        match self {
            Equation::First => Equation::Second,
            Equation::Second => Equation::First,
        }
    }

    pub fn number(self) -> usize {
        self.index() + 1
    }
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "equation {}", self.number())
    }
}

/// Variance function `V(mu)`; the conditional variance is `phi * V(mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarianceFunction {
    /// `V(mu) = 1`
    Constant,
    /// `V(mu) = mu`
    Linear,
    /// `V(mu) = mu (1 - mu)`
    BernoulliLike,
    /// `V(mu) = mu^2`
    Quadratic,
}

impl VarianceFunction {
    pub fn eval(self, mu: f64) -> f64 {
        match self {
            VarianceFunction::Constant => 1.0,
            VarianceFunction::Linear => mu,
            VarianceFunction::BernoulliLike => mu * (1.0 - mu),
            VarianceFunction::Quadratic => mu * mu,
        }
    }

    /// Whether `mu` lies in the open set where `V(mu) > 0`.
    pub fn in_domain(self, mu: f64) -> bool {
        if !mu.is_finite() {
            return false;
        }
        match self {
            VarianceFunction::Constant => true,
            VarianceFunction::Linear | VarianceFunction::Quadratic => mu > 0.0,
            VarianceFunction::BernoulliLike => mu > 0.0 && mu < 1.0,
        }
    }

    /// Moves a mean into `[eps, 1 - eps]` or `[eps, inf)` as the kind requires.
    pub fn clamp_mean(self, mu: f64) -> f64 {
        match self {
            VarianceFunction::Constant => mu,
            VarianceFunction::Linear | VarianceFunction::Quadratic => mu.max(BOUNDARY_EPS),
            VarianceFunction::BernoulliLike => mu.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS),
        }
    }

    fn supports(self, domain: SeriesDomain) -> bool {
        match self {
            VarianceFunction::Constant => true,
            VarianceFunction::Linear => matches!(
                domain,
                SeriesDomain::NonnegativeCount | SeriesDomain::PositiveReal
            ),
            VarianceFunction::BernoulliLike => domain == SeriesDomain::UnitInterval,
            VarianceFunction::Quadratic => domain == SeriesDomain::PositiveReal,
        }
    }
}

impl fmt::Display for VarianceFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VarianceFunction::Constant => "constant",
            VarianceFunction::Linear => "linear",
            VarianceFunction::BernoulliLike => "bernoulli-like",
            VarianceFunction::Quadratic => "quadratic",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkKind {
    Logit,
    Log,
    Identity,
}

/// How lagged observations are mapped onto the predictor scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformKind {
    SameAsLink,
    LogPlusOne,
}

/// Link `g` together with the transform `T` applied to lagged observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLink")]
pub struct LinkFunction {
    kind: LinkKind,
    transform: TransformKind,
}

#[derive(Deserialize)]
struct RawLink {
    kind: LinkKind,
    transform: TransformKind,
}

impl TryFrom<RawLink> for LinkFunction {
    type Error = Error;

    fn try_from(raw: RawLink) -> Result<Self> {
        LinkFunction::new(raw.kind, raw.transform)
    }
}

/// Saturation bounds for inverse links.
const LOGIT_ARG_BOUND: f64 = 35.0;
const EXP_ARG_BOUND: f64 = 30.0;

impl LinkFunction {
    pub fn new(kind: LinkKind, transform: TransformKind) -> Result<Self> {
        if transform == TransformKind::LogPlusOne && kind != LinkKind::Log {
            return Err(Error::InvalidTransform);
        }
        Ok(Self { kind, transform })
    }

    pub fn logit() -> Self {
        Self { kind: LinkKind::Logit, transform: TransformKind::SameAsLink }
    }

    pub fn log() -> Self {
        Self { kind: LinkKind::Log, transform: TransformKind::SameAsLink }
    }

    /// Log link with `T(y) = log(y + 1)`, the usual choice for counts.
    pub fn log_plus_one() -> Self {
        Self { kind: LinkKind::Log, transform: TransformKind::LogPlusOne }
    }

    pub fn identity() -> Self {
        Self { kind: LinkKind::Identity, transform: TransformKind::SameAsLink }
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    pub fn transform_kind(&self) -> TransformKind {
        self.transform
    }

    /// `g(mu)`, without clamping.
    pub fn link(&self, mu: f64) -> f64 {
        match self.kind {
            LinkKind::Logit => (mu / (1.0 - mu)).ln(),
            LinkKind::Log => mu.ln(),
            LinkKind::Identity => mu,
        }
    }

    /// `g^{-1}(nu)`; the argument saturates so the result is always finite.
    pub fn inverse(&self, nu: f64) -> f64 {
        match self.kind {
            LinkKind::Logit => {
                let x = nu.clamp(-LOGIT_ARG_BOUND, LOGIT_ARG_BOUND);
                1.0 / (1.0 + (-x).exp())
            }
            LinkKind::Log => nu.min(EXP_ARG_BOUND).exp(),
            LinkKind::Identity => nu,
        }
    }

    /// `g'(mu)`.
    pub fn derivative(&self, mu: f64) -> f64 {
        match self.kind {
            LinkKind::Logit => 1.0 / (mu * (1.0 - mu)),
            LinkKind::Log => 1.0 / mu,
            LinkKind::Identity => 1.0,
        }
    }

    /// `T(y)` for a single observation. Unit-interval values are clamped to
    /// `[eps, 1 - eps]` and positive values to `[eps, inf)` before the log.
    pub fn transform(&self, y: f64) -> std::result::Result<f64, &'static str> {
        if !y.is_finite() {
            return Err("non-finite value");
        }
        match (self.kind, self.transform) {
            (LinkKind::Log, TransformKind::LogPlusOne) => {
                if y < 0.0 {
                    Err("log(y + 1) transform needs y >= 0")
                } else {
                    Ok(y.ln_1p())
                }
            }
            (LinkKind::Logit, _) => {
                if !(0.0..=1.0).contains(&y) {
                    Err("logit transform needs y in [0, 1]")
                } else {
                    let y = y.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS);
                    Ok((y / (1.0 - y)).ln())
                }
            }
            (LinkKind::Log, TransformKind::SameAsLink) => {
                if y < 0.0 {
                    Err("log transform needs y >= 0")
                } else {
                    Ok(y.max(BOUNDARY_EPS).ln())
                }
            }
            (LinkKind::Identity, _) => Ok(y),
        }
    }

    fn supports(&self, domain: SeriesDomain) -> bool {
        match (self.kind, self.transform) {
            (LinkKind::Logit, _) => domain == SeriesDomain::UnitInterval,
            (LinkKind::Log, TransformKind::SameAsLink) => domain == SeriesDomain::PositiveReal,
            (LinkKind::Log, TransformKind::LogPlusOne) => matches!(
                domain,
                SeriesDomain::NonnegativeCount | SeriesDomain::PositiveReal
            ),
            (LinkKind::Identity, _) => true,
        }
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.transform) {
            (LinkKind::Logit, _) => f.write_str("logit"),
            (LinkKind::Log, TransformKind::SameAsLink) => f.write_str("log"),
            (LinkKind::Log, TransformKind::LogPlusOne) => f.write_str("log (lags: log(y+1))"),
            (LinkKind::Identity, _) => f.write_str("identity"),
        }
    }
}

/// Sorted set of distinct positive lags.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LagSet(Vec<usize>);

impl LagSet {
    pub fn new(lags: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut v: Vec<usize> = lags.into_iter().collect();
        if v.contains(&0) {
            return Err(Error::InvalidLagSet("lags must be at least 1".into()));
        }
        v.sort_unstable();
        let before = v.len();
        v.dedup();
        if v.len() != before {
            return Err(Error::InvalidLagSet("duplicate lag".into()));
        }
        Ok(Self(v))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// `1..=p`.
    pub fn range(p: usize) -> Self {
        Self((1..=p).collect())
    }

    pub fn lags(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> usize {
        self.0.last().copied().unwrap_or(0)
    }
}

impl TryFrom<Vec<usize>> for LagSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        LagSet::new(v)
    }
}

impl From<LagSet> for Vec<usize> {
    fn from(l: LagSet) -> Self {
        l.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationSpec {
    pub link: LinkFunction,
    pub variance: VarianceFunction,
    pub own_lags: LagSet,
    pub cross_lags: LagSet,
}

impl EquationSpec {
    pub fn new(
        link: LinkFunction,
        variance: VarianceFunction,
        own_lags: LagSet,
        cross_lags: LagSet,
    ) -> Self {
        Self { link, variance, own_lags, cross_lags }
    }

    /// Intercept plus one coefficient per own and cross lag.
    pub fn n_coefficients(&self) -> usize {
        1 + self.own_lags.len() + self.cross_lags.len()
    }

    pub fn max_lag(&self) -> usize {
        self.own_lags.max().max(self.cross_lags.max())
    }

    fn check_link_variance(&self, equation: Equation) -> Result<()> {
        let ok = match self.variance {
            VarianceFunction::Constant => true,
            VarianceFunction::BernoulliLike => self.link.kind() == LinkKind::Logit,
            VarianceFunction::Linear | VarianceFunction::Quadratic => {
                matches!(self.link.kind(), LinkKind::Log | LinkKind::Identity)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::IncompatibleVariance {
                equation,
                variance: self.variance.to_string(),
                detail: format!("link {}", self.link),
            })
        }
    }
}

/// Identifies one regression coefficient of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coefficient {
    Intercept(Equation),
    Own(Equation, usize),
    Cross(Equation, usize),
}

impl Coefficient {
    pub fn equation(&self) -> Equation {
        match *self {
            Coefficient::Intercept(e) | Coefficient::Own(e, _) | Coefficient::Cross(e, _) => e,
        }
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Coefficient::Intercept(e) => write!(f, "beta{}_0", e.number()),
            Coefficient::Own(e, l) => write!(f, "beta{}_lag{}", e.number(), l),
            Coefficient::Cross(e, l) => write!(f, "gamma{}_lag{}", e.number(), l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub eq1: EquationSpec,
    pub eq2: EquationSpec,
}

impl ModelSpec {
    pub fn new(eq1: EquationSpec, eq2: EquationSpec) -> Self {
        Self { eq1, eq2 }
    }

    pub fn equation(&self, e: Equation) -> &EquationSpec {
        match e {
            Equation::First => &self.eq1,
            Equation::Second => &self.eq2,
        }
    }

    pub fn equation_mut(&mut self, e: Equation) -> &mut EquationSpec {
        match e {
            Equation::First => &mut self.eq1,
            Equation::Second => &mut self.eq2,
        }
    }

    /// Largest lag in either equation; the first `m` observations are conditioned on.
    pub fn max_lag(&self) -> usize {
        self.eq1.max_lag().max(self.eq2.max_lag())
    }

    /// Number of regression coefficients (dispersions excluded).
    pub fn dim(&self) -> usize {
        self.eq1.n_coefficients() + self.eq2.n_coefficients()
    }

    /// Coefficients in flattening order.
    pub fn coefficients(&self) -> Vec<Coefficient> {
        let mut out = Vec::with_capacity(self.dim());
        for e in [Equation::First, Equation::Second] {
            let eq = self.equation(e);
            out.push(Coefficient::Intercept(e));
            out.extend(eq.own_lags.lags().iter().map(|&l| Coefficient::Own(e, l)));
            out.extend(eq.cross_lags.lags().iter().map(|&l| Coefficient::Cross(e, l)));
        }
        out
    }

    pub fn coefficient_labels(&self) -> Vec<String> {
        self.coefficients().iter().map(|c| c.to_string()).collect()
    }

    /// Range of the flattened vector holding equation `e`'s coefficients.
    pub fn block(&self, e: Equation) -> std::ops::Range<usize> {
        let p1 = self.eq1.n_coefficients();
        match e {
            Equation::First => 0..p1,
            Equation::Second => p1..p1 + self.eq2.n_coefficients(),
        }
    }
}

/// Regression coefficients and dispersions.
///
/// Flattening order: `(b0^(1), own lags of eq 1 ascending, cross lags of eq 1
/// ascending, b0^(2), own lags of eq 2 ascending, cross lags of eq 2 ascending)`.
/// The dispersions are nuisance parameters and are never part of the flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    /// Intercept followed by own-lag coefficients of equation 1.
    pub beta1: Vec<f64>,
    pub gamma1: Vec<f64>,
    /// Intercept followed by own-lag coefficients of equation 2.
    pub beta2: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub phi1: f64,
    pub phi2: f64,
}

impl ParamVector {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(
            self.beta1.len() + self.gamma1.len() + self.beta2.len() + self.gamma2.len(),
        );
        v.extend_from_slice(&self.beta1);
        v.extend_from_slice(&self.gamma1);
        v.extend_from_slice(&self.beta2);
        v.extend_from_slice(&self.gamma2);
        v
    }

    pub fn from_flat(spec: &ModelSpec, flat: &[f64], phi1: f64, phi2: f64) -> Result<Self> {
        if flat.len() != spec.dim() {
            return Err(Error::ParamMismatch { expected: spec.dim(), got: flat.len() });
        }
        let (a, b) = (1 + spec.eq1.own_lags.len(), spec.eq1.cross_lags.len());
        let (c, d) = (1 + spec.eq2.own_lags.len(), spec.eq2.cross_lags.len());
        let mut it = flat.iter().copied();
        let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<_>>();
        Ok(Self {
            beta1: take(a),
            gamma1: take(b),
            beta2: take(c),
            gamma2: take(d),
            phi1,
            phi2,
        })
    }

    /// Coefficients of one equation in flattening order.
    pub fn equation(&self, e: Equation) -> Vec<f64> {
        match e {
            Equation::First => [self.beta1.as_slice(), &self.gamma1].concat(),
            Equation::Second => [self.beta2.as_slice(), &self.gamma2].concat(),
        }
    }

    pub fn phi(&self, e: Equation) -> f64 {
        match e {
            Equation::First => self.phi1,
            Equation::Second => self.phi2,
        }
    }

    pub fn with_phis(mut self, phi1: f64, phi2: f64) -> Self {
        self.phi1 = phi1;
        self.phi2 = phi2;
        self
    }

    pub fn conforms_to(&self, spec: &ModelSpec) -> Result<()> {
        let ok = self.beta1.len() == 1 + spec.eq1.own_lags.len()
            && self.gamma1.len() == spec.eq1.cross_lags.len()
            && self.beta2.len() == 1 + spec.eq2.own_lags.len()
            && self.gamma2.len() == spec.eq2.cross_lags.len();
        if ok {
            Ok(())
        } else {
            Err(Error::ParamMismatch {
                expected: spec.dim(),
                got: self.beta1.len() + self.gamma1.len() + self.beta2.len() + self.gamma2.len(),
            })
        }
    }

    /// Value of a coefficient identified structurally, or `None` if absent.
    pub fn get(&self, spec: &ModelSpec, c: Coefficient) -> Option<f64> {
        let eq = spec.equation(c.equation());
        let (beta, gamma) = match c.equation() {
            Equation::First => (&self.beta1, &self.gamma1),
            Equation::Second => (&self.beta2, &self.gamma2),
        };
        match c {
            Coefficient::Intercept(_) => beta.first().copied(),
            Coefficient::Own(_, l) => {
                let i = eq.own_lags.lags().iter().position(|&x| x == l)?;
                beta.get(1 + i).copied()
            }
            Coefficient::Cross(_, l) => {
                let i = eq.cross_lags.lags().iter().position(|&x| x == l)?;
                gamma.get(i).copied()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeriesDomain {
    UnitInterval,
    NonnegativeCount,
    PositiveReal,
    Real,
}

impl SeriesDomain {
    pub fn contains(self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self {
            SeriesDomain::UnitInterval => (0.0..=1.0).contains(&y),
            SeriesDomain::NonnegativeCount => y >= 0.0 && y.fract() == 0.0,
            SeriesDomain::PositiveReal => y > 0.0,
            SeriesDomain::Real => true,
        }
    }
}

impl fmt::Display for SeriesDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SeriesDomain::UnitInterval => "unit-interval",
            SeriesDomain::NonnegativeCount => "count",
            SeriesDomain::PositiveReal => "positive",
            SeriesDomain::Real => "real",
        };
        f.write_str(s)
    }
}

/// Two aligned observation sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariateSeries {
    y1: Vec<f64>,
    y2: Vec<f64>,
    domain1: SeriesDomain,
    domain2: SeriesDomain,
    labels: Option<Vec<String>>,
}

impl BivariateSeries {
    pub fn new(
        y1: Vec<f64>,
        y2: Vec<f64>,
        domain1: SeriesDomain,
        domain2: SeriesDomain,
    ) -> Result<Self> {
        if y1.len() != y2.len() {
            return Err(Error::LengthMismatch { y1: y1.len(), y2: y2.len() });
        }
        for (name, y, d) in [("y1", &y1, domain1), ("y2", &y2, domain2)] {
            if let Some(i) = y.iter().position(|&v| !d.contains(v)) {
                return Err(Error::DomainViolation {
                    location: name.into(),
                    index: i,
                    value: y[i],
                    reason: format!("outside the {d} domain"),
                });
            }
        }
        Ok(Self { y1, y2, domain1, domain2, labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "{} time labels for {} observations",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    pub fn y1(&self) -> &[f64] {
        &self.y1
    }

    pub fn y2(&self) -> &[f64] {
        &self.y2
    }

    pub fn series(&self, e: Equation) -> &[f64] {
        match e {
            Equation::First => &self.y1,
            Equation::Second => &self.y2,
        }
    }

    pub fn domain(&self, e: Equation) -> SeriesDomain {
        match e {
            Equation::First => self.domain1,
            Equation::Second => self.domain2,
        }
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// The first `len` observations.
    pub fn prefix(&self, len: usize) -> Self {
        let len = len.min(self.len());
        Self {
            y1: self.y1[..len].to_vec(),
            y2: self.y2[..len].to_vec(),
            domain1: self.domain1,
            domain2: self.domain2,
            labels: self.labels.as_ref().map(|l| l[..len].to_vec()),
        }
    }
}

/// A model bound to data: the design matrices, the effective responses and
/// the conditioning offset `m` are computed once here.
#[derive(Debug, Clone)]
pub struct ModelContext {
    spec: ModelSpec,
    data: BivariateSeries,
    m: usize,
    transformed: [Vec<f64>; 2],
    design: [DMatrix<f64>; 2],
    response: [Vec<f64>; 2],
    clamped: [usize; 2],
}

/// Binds `spec` to `data`, conditioning on the first `spec.max_lag()` observations.
pub fn validate_spec(spec: &ModelSpec, data: &BivariateSeries) -> Result<ModelContext> {
    validate_spec_conditioned(spec, data, spec.max_lag())
}

/// As [`validate_spec`], but conditioning on the first `m` observations, where
/// `m` may exceed the model's largest lag. Nested models compared by a test
/// must share the same `m`.
pub fn validate_spec_conditioned(
    spec: &ModelSpec,
    data: &BivariateSeries,
    m: usize,
) -> Result<ModelContext> {
    if m < spec.max_lag() {
        return Err(Error::InvalidArgument(format!(
            "conditioning offset {m} is below the largest lag {}",
            spec.max_lag()
        )));
    }
    let m = m.max(1);
    for e in [Equation::First, Equation::Second] {
        let eq = spec.equation(e);
        let domain = data.domain(e);
        if !eq.link.supports(domain) {
            return Err(Error::IncompatibleLinkDomain {
                equation: e,
                link: eq.link.to_string(),
                domain,
            });
        }
        eq.check_link_variance(e)?;
        if !eq.variance.supports(domain) {
            return Err(Error::IncompatibleVariance {
                equation: e,
                variance: eq.variance.to_string(),
                detail: format!("series domain {domain}"),
            });
        }
    }
    let n = data.len();
    let required = m + spec.dim();
    if n <= required {
        return Err(Error::SeriesTooShort { n, required });
    }

    let transformed = [
        crate::qlcore::transform_series(data.y1(), &spec.eq1.link)?,
        crate::qlcore::transform_series(data.y2(), &spec.eq2.link)?,
    ];
    let rows = n - m;
    let mut design: [DMatrix<f64>; 2] = [DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)];
    let mut response: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut clamped = [0usize; 2];
    for e in [Equation::First, Equation::Second] {
        let eq = spec.equation(e);
        let own = &transformed[e.index()];
        let cross = &transformed[e.other().index()];
        let x = DMatrix::from_fn(rows, eq.n_coefficients(), |r, c| {
            let t = m + r;
            let n_own = eq.own_lags.len();
            if c == 0 {
                1.0
            } else if c <= n_own {
                own[t - eq.own_lags.lags()[c - 1]]
            } else {
                cross[t - eq.cross_lags.lags()[c - 1 - n_own]]
            }
        });
        design[e.index()] = x;
        let (resp, k) = effective_response(&data.series(e)[m..], eq.variance);
        response[e.index()] = resp;
        clamped[e.index()] = k;
    }
    Ok(ModelContext { spec: spec.clone(), data: data.clone(), m, transformed, design, response, clamped })
}

/// Responses as seen by the quasi-likelihood; unit-interval observations are
/// clamped to `[eps, 1 - eps]`.
fn effective_response(y: &[f64], variance: VarianceFunction) -> (Vec<f64>, usize) {
    match variance {
        VarianceFunction::BernoulliLike => {
            let mut k = 0;
            let v = y
                .iter()
                .map(|&v| {
                    let c = v.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS);
                    if c != v {
                        k += 1;
                    }
                    c
                })
                .collect();
            (v, k)
        }
        _ => (y.to_vec(), 0),
    }
}

impl ModelContext {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn data(&self) -> &BivariateSeries {
        &self.data
    }

    /// Number of conditioning observations.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    /// Number of likelihood terms, `n - m`.
    pub fn n_eff(&self) -> usize {
        self.n() - self.m
    }

    /// Transformed series `T_j(y_j,t)` over the full sample.
    pub fn transformed(&self, e: Equation) -> &[f64] {
        &self.transformed[e.index()]
    }

    /// Rows `(1, transformed own lags, transformed cross lags)` for `t = m+1..n`.
    pub fn design(&self, e: Equation) -> &DMatrix<f64> {
        &self.design[e.index()]
    }

    /// Observations entering the quasi-likelihood for `t = m+1..n`.
    pub fn response(&self, e: Equation) -> &[f64] {
        &self.response[e.index()]
    }

    /// How many observations of series `e` were moved onto `[eps, 1 - eps]`.
    pub fn clamped_observations(&self, e: Equation) -> usize {
        self.clamped[e.index()]
    }
}
