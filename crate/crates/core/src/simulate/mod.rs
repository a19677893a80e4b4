//! Mean-variance matched samplers and trajectory generation.
//!
//! A quasi-likelihood model only fixes the first two conditional moments, so
//! simulation needs a concrete law for each margin. The families here match
//! `E[Y] = mu` and `Var[Y] = phi V(mu)` (exactly, or to the double-Poisson
//! approximation).

pub mod study;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};

use crate::error::{Error, Result};
use crate::model::{BivariateSeries, Equation, ModelSpec, ParamVector, SeriesDomain, VarianceFunction};

pub use study::{run_mc_study, BootstrapPlan, CoefficientSummary, McStudyConfig, ReplicationRecord, StudyReport};

/// Default number of discarded warm-up steps.
pub const DEFAULT_BURN_IN: usize = 500;

/// Means above this bound abort the simulation as explosive.
pub const MAX_SIMULATED_MEAN: f64 = 1e5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplingFamily {
    /// Beta law with mean `mu` and variance `phi mu (1 - mu)`, `phi in (0, 1)`.
    BetaMeanDispersion,
    /// Poisson; the dispersion is fixed at 1.
    Poisson,
    /// Efron's double Poisson with `theta = 1 / phi`.
    DoublePoisson,
    /// Equal-weight two-component beta mixture matching `mu` and `phi mu (1 - mu)`.
    BoundedAlternative,
}

impl SamplingFamily {
    /// Variance function whose mean-variance relation the family reproduces.
    pub fn variance_kind(self) -> VarianceFunction {
        match self {
            SamplingFamily::BetaMeanDispersion | SamplingFamily::BoundedAlternative => {
                VarianceFunction::BernoulliLike
            }
            SamplingFamily::Poisson | SamplingFamily::DoublePoisson => VarianceFunction::Linear,
        }
    }

    pub fn domain(self) -> SeriesDomain {
        match self.variance_kind() {
            VarianceFunction::BernoulliLike => SeriesDomain::UnitInterval,
            _ => SeriesDomain::NonnegativeCount,
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, mu: f64, phi: f64, rng: &mut R) -> Result<f64> {
        match self {
            SamplingFamily::BetaMeanDispersion => sample_beta_mean_dispersion(mu, phi, rng),
            SamplingFamily::Poisson => sample_poisson(mu, rng),
            SamplingFamily::DoublePoisson => sample_double_poisson(mu, phi, rng).map(|y| y as f64),
            SamplingFamily::BoundedAlternative => sample_bounded_alternative(mu, phi, rng),
        }
    }

    /// `P(Y <= y)` at mean `mu` and dispersion `phi`.
    pub fn cdf(self, y: f64, mu: f64, phi: f64) -> Result<f64> {
        match self {
            SamplingFamily::BetaMeanDispersion => {
                let (a, b) = beta_shape(mu, phi)?;
                let d = BetaDist::new(a, b).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok(d.cdf(y.clamp(0.0, 1.0)))
            }
            SamplingFamily::Poisson => Ok(DoublePoisson::new(mu, 1.0)?.cdf(y)),
            SamplingFamily::DoublePoisson => Ok(DoublePoisson::new(mu, phi)?.cdf(y)),
            SamplingFamily::BoundedAlternative => {
                let mix = BoundedMixture::new(mu, phi)?;
                let c = |m: f64| -> Result<f64> {
                    let (a, b) = beta_shape(m, mix.phi_within)?;
                    let d = BetaDist::new(a, b).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                    Ok(d.cdf(y.clamp(0.0, 1.0)))
                };
                Ok(0.5 * c(mix.low)? + 0.5 * c(mix.high)?)
            }
        }
    }

    /// Smallest `y` with `P(Y <= y) >= q` for count families; the inverse CDF otherwise.
    pub fn quantile(self, q: f64, mu: f64, phi: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidArgument(format!("quantile level {q} outside [0, 1]")));
        }
        match self {
            SamplingFamily::BetaMeanDispersion => {
                let (a, b) = beta_shape(mu, phi)?;
                let d = BetaDist::new(a, b).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok(d.inverse_cdf(q))
            }
            SamplingFamily::Poisson => Ok(DoublePoisson::new(mu, 1.0)?.quantile(q) as f64),
            SamplingFamily::DoublePoisson => Ok(DoublePoisson::new(mu, phi)?.quantile(q) as f64),
            SamplingFamily::BoundedAlternative => {
                // bisection on the mixture CDF
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid, mu, phi)? < q {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }
}

impl std::fmt::Display for SamplingFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SamplingFamily::BetaMeanDispersion => "beta",
            SamplingFamily::Poisson => "poisson",
            SamplingFamily::DoublePoisson => "double-poisson",
            SamplingFamily::BoundedAlternative => "beta-mixture",
        };
        f.write_str(s)
    }
}

/// Beta shape parameters with mean `mu` and variance `phi mu (1 - mu)`:
/// `a = mu (1/phi - 1)`, `b = (1 - mu)(1/phi - 1)`.
pub fn beta_shape(mu: f64, phi: f64) -> Result<(f64, f64)> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(sampler_domain("beta mean", mu, "needs 0 < mu < 1"));
    }
    if !(phi > 0.0 && phi < 1.0) {
        return Err(sampler_domain("beta dispersion", phi, "needs 0 < phi < 1"));
    }
    let k = 1.0 / phi - 1.0;
    Ok((mu * k, (1.0 - mu) * k))
}

fn sampler_domain(location: &str, value: f64, reason: &str) -> Error {
    Error::DomainViolation {
        location: location.into(),
        index: 0,
        value,
        reason: reason.into(),
    }
}

pub fn sample_beta_mean_dispersion<R: Rng + ?Sized>(mu: f64, phi: f64, rng: &mut R) -> Result<f64> {
    let (a, b) = beta_shape(mu, phi)?;
    let d = Beta::new(a, b).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(d.sample(rng))
}

fn sample_poisson<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(sampler_domain("poisson mean", mu, "needs mu > 0"));
    }
    let d = Poisson::new(mu).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(d.sample(rng))
}

/// Efron's double Poisson law tabulated on `0..=y_max` and normalized numerically.
#[derive(Debug, Clone)]
pub struct DoublePoisson {
    mu: f64,
    phi: f64,
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl DoublePoisson {
    pub fn new(mu: f64, phi: f64) -> Result<Self> {
        let (mut pmf, y_max) = Self::unnormalized(mu, phi)?;
        let total: f64 = pmf.iter().sum();
        pmf.iter_mut().for_each(|p| *p /= total);
        check_tail(&pmf, y_max)?;

        let mut acc = 0.0;
        let cdf = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc.min(1.0)
            })
            .collect();
        Ok(Self { mu, phi, pmf, cdf })
    }

    /// Weights proportional to the pmf on `0..=y_max`, scaled so the largest is 1.
    fn unnormalized(mu: f64, phi: f64) -> Result<(Vec<f64>, u64)> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(sampler_domain("double Poisson mean", mu, "needs mu > 0"));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(sampler_domain("double Poisson dispersion", phi, "needs phi > 0"));
        }
        let y_max = Self::y_max(mu, phi);
        let theta = 1.0 / phi;
        let ln_mu = mu.ln();
        // log f(y) = log(theta)/2 - theta mu - y + y log y - log y! + theta y (1 + log mu - log y)
        let c0 = 0.5 * theta.ln() - theta * mu;
        let mut ln_fact = 0.0;
        let mut log_f = Vec::with_capacity(y_max as usize + 1);
        log_f.push(c0);
        for y in 1..=y_max {
            let yf = y as f64;
            let lny = yf.ln();
            ln_fact += lny;
            log_f.push(c0 - yf + yf * lny - ln_fact + theta * yf * (1.0 + ln_mu - lny));
        }
        let max = log_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        log_f.iter_mut().for_each(|l| *l = (*l - max).exp());
        Ok((log_f, y_max))
    }

    /// Upper end of the tabulation, `ceil(10 mu (1 + phi) + 100)`.
    pub fn y_max(mu: f64, phi: f64) -> u64 {
        (mu * (1.0 + phi) * 10.0 + 100.0).ceil() as u64
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn pmf(&self, y: u64) -> f64 {
        self.pmf.get(y as usize).copied().unwrap_or(0.0)
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y < 0.0 {
            return 0.0;
        }
        let k = y.floor() as usize;
        self.cdf.get(k).copied().unwrap_or(1.0)
    }

    /// Smallest `y` with `F(y) >= q`.
    pub fn quantile(&self, q: f64) -> u64 {
        self.cdf.partition_point(|&c| c < q).min(self.cdf.len() - 1) as u64
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(y, p)| y as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.pmf.iter().enumerate().map(|(y, p)| (y as f64 - m).powi(2) * p).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }
}

/// Geometric-ratio estimate of the normalized mass beyond the last tabulated point.
fn check_tail(pmf: &[f64], y_max: u64) -> Result<()> {
    let last = pmf[pmf.len() - 1];
    let prev = pmf[pmf.len() - 2];
    let ratio = if prev > 0.0 { last / prev } else { 0.0 };
    let tail = if ratio < 1.0 { last * ratio / (1.0 - ratio) } else { f64::INFINITY };
    if tail > 1e-10 {
        return Err(Error::TruncationInsufficient { tail, y_max });
    }
    Ok(())
}

/// Inverse-CDF draw; same result as `DoublePoisson::new(mu, phi)?.sample(rng)`
/// without building the cumulative table.
pub fn sample_double_poisson<R: Rng + ?Sized>(mu: f64, phi: f64, rng: &mut R) -> Result<u64> {
    let (mut w, y_max) = DoublePoisson::unnormalized(mu, phi)?;
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|p| *p /= total);
    check_tail(&w, y_max)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (y, p) in w.iter().enumerate() {
        acc += p;
        if acc.min(1.0) >= u {
            return Ok(y as u64);
        }
    }
    Ok(y_max)
}

/// Two beta components at `mu -/+ delta` sharing a within-component dispersion,
/// chosen so the mixture has mean `mu` and variance `phi mu (1 - mu)`.
#[derive(Debug, Clone, Copy)]
struct BoundedMixture {
    low: f64,
    high: f64,
    phi_within: f64,
}

impl BoundedMixture {
    fn new(mu: f64, phi: f64) -> Result<Self> {
        beta_shape(mu, phi)?;
        let v = mu * (1.0 - mu);
        // spread of the component means: half the target variance, kept inside (0, 1)
        let delta = (0.5 * phi * v).sqrt().min(0.5 * mu.min(1.0 - mu));
        let d2 = delta * delta;
        let phi_within = (phi * v - d2) / (v - d2);
        Ok(Self { low: mu - delta, high: mu + delta, phi_within })
    }
}

pub fn sample_bounded_alternative<R: Rng + ?Sized>(mu: f64, phi: f64, rng: &mut R) -> Result<f64> {
    let mix = BoundedMixture::new(mu, phi)?;
    let pick = if rng.random::<f64>() < 0.5 { mix.low } else { mix.high };
    sample_beta_mean_dispersion(pick, mix.phi_within, rng)
}

/// Generating model: a structure plus true coefficients and dispersions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub spec: ModelSpec,
    pub params: ParamVector,
}

impl TrueModel {
    pub fn new(spec: ModelSpec, params: ParamVector) -> Result<Self> {
        params.conforms_to(&spec)?;
        Ok(Self { spec, params })
    }
}

/// RNG for stream `index` under `base_seed`.
pub fn stream_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(index))
}

/// Simulates `n` observations after `burn_in` discarded steps. Lags before
/// the first step enter the predictors as 0 on the transformed scale.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    model: &TrueModel,
    families: [SamplingFamily; 2],
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<BivariateSeries> {
    let spec = &model.spec;
    for e in [Equation::First, Equation::Second] {
        let fam = families[e.index()];
        let v = spec.equation(e).variance;
        if fam.variance_kind() != v {
            return Err(Error::FamilyMismatch { family: fam.to_string(), variance: v.to_string() });
        }
    }
    let total = n + burn_in;
    let coefs = [model.params.equation(Equation::First), model.params.equation(Equation::Second)];
    let mut y = [Vec::with_capacity(total), Vec::with_capacity(total)];
    let mut ty: [Vec<f64>; 2] = [Vec::with_capacity(total), Vec::with_capacity(total)];
    for t in 0..total {
        let mut mus = [0.0; 2];
        for e in [Equation::First, Equation::Second] {
            let eq = spec.equation(e);
            let c = &coefs[e.index()];
            let lagged = |series: &Vec<f64>, l: usize| if t >= l { series[t - l] } else { 0.0 };
            let mut nu = c[0];
            for (i, &l) in eq.own_lags.lags().iter().enumerate() {
                nu += c[1 + i] * lagged(&ty[e.index()], l);
            }
            let k = 1 + eq.own_lags.len();
            for (i, &l) in eq.cross_lags.lags().iter().enumerate() {
                nu += c[k + i] * lagged(&ty[e.other().index()], l);
            }
            let mu = eq.variance.clamp_mean(eq.link.inverse(nu));
            if !nu.is_finite() || mu > MAX_SIMULATED_MEAN {
                return Err(Error::ExplosivePath { equation: e, t, mu });
            }
            mus[e.index()] = mu;
        }
        for e in [Equation::First, Equation::Second] {
            let draw = families[e.index()].sample(mus[e.index()], model.params.phi(e), rng)?;
            let link = spec.equation(e).link;
            let t_draw = link.transform(draw).map_err(|reason| Error::DomainViolation {
                location: format!("simulated series {}", e.number()),
                index: t,
                value: draw,
                reason: reason.into(),
            })?;
            y[e.index()].push(draw);
            ty[e.index()].push(t_draw);
        }
    }
    let [y1, y2] = y;
    BivariateSeries::new(
        y1[burn_in..].to_vec(),
        y2[burn_in..].to_vec(),
        families[0].domain(),
        families[1].domain(),
    )
}
