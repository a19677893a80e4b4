//! Correlation diagnostics, Pearson residuals and PIT histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::FitResult;
use crate::model::{Equation, SeriesDomain};
use crate::simulate::SamplingFamily;
use crate::stats::chi_square_sf;

pub const DEFAULT_MAX_LAG: usize = 24;
pub const DEFAULT_BINS: usize = 10;

/// Sample ACF and PACF indexed by lag `0..=max_lag` (both equal 1 at lag 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlogram {
    pub acf: Vec<f64>,
    pub pacf: Vec<f64>,
}

fn centered(y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let d: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let ss: f64 = d.iter().map(|v| v * v).sum();
    if !(ss > 0.0) || !ss.is_finite() {
        return Err(Error::ConstantSeries);
    }
    Ok((d, ss))
}

/// `r(h) = sum_t (y_t - ybar)(y_{t+h} - ybar) / sum_t (y_t - ybar)^2`.
pub fn acf(y: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if y.len() <= max_lag {
        return Err(Error::SeriesTooShort { n: y.len(), required: max_lag + 1 });
    }
    let (d, ss) = centered(y)?;
    Ok((0..=max_lag)
        .map(|h| d.iter().zip(&d[h..]).map(|(a, b)| a * b).sum::<f64>() / ss)
        .collect())
}

/// Partial autocorrelations from autocorrelations by Durbin-Levinson.
/// Input and output are indexed by lag, with `pacf[0] = 1`.
pub fn durbin_levinson(r: &[f64]) -> Vec<f64> {
    let p = r.len().saturating_sub(1);
    let mut pacf = vec![1.0; p + 1];
    let mut phi = vec![0.0; p + 1];
    let mut v = 1.0;
    for k in 1..=p {
        let num = r[k] - (1..k).map(|j| phi[j] * r[k - j]).sum::<f64>();
        let a = if v > 0.0 { num / v } else { 0.0 };
        let prev = phi.clone();
        phi[k] = a;
        for j in 1..k {
            phi[j] = prev[j] - a * prev[k - j];
        }
        v *= 1.0 - a * a;
        pacf[k] = a;
    }
    pacf
}

pub fn acf_pacf(y: &[f64], max_lag: usize) -> Result<Correlogram> {
    let acf = acf(y, max_lag)?;
    let pacf = durbin_levinson(&acf);
    Ok(Correlogram { acf, pacf })
}

/// Sample cross-correlation `cor(y1_{t-h}, y2_t)` for `h = -max_lag..=max_lag`
/// (index `h + max_lag`), with the usual `n` divisor.
pub fn ccf(y1: &[f64], y2: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = y1.len();
    if y2.len() != n {
        return Err(Error::LengthMismatch { y1: n, y2: y2.len() });
    }
    if n <= max_lag {
        return Err(Error::SeriesTooShort { n, required: max_lag + 1 });
    }
    let (d1, s1) = centered(y1)?;
    let (d2, s2) = centered(y2)?;
    let scale = (s1 * s2).sqrt();
    let l = max_lag as isize;
    Ok((-l..=l)
        .map(|h| {
            let sum: f64 = if h >= 0 {
                let h = h as usize;
                d1.iter().zip(&d2[h..]).map(|(a, b)| a * b).sum()
            } else {
                let h = (-h) as usize;
                d1[h..].iter().zip(&d2).map(|(a, b)| a * b).sum()
            };
            sum / scale
        })
        .collect())
}

/// Approximate 95% white-noise band `1.96 / sqrt(n)`.
pub fn bartlett_band(n: usize) -> f64 {
    1.959963984540054 / (n as f64).sqrt()
}

/// Pearson residuals `(y - mu) / sqrt(phi V(mu))` for `t = m+1..n`. A zero
/// dispersion estimate (perfect fit) yields zeros.
pub fn residuals(fit: &FitResult) -> [Vec<f64>; 2] {
    [Equation::First, Equation::Second].map(|e| {
        let v = fit.spec.equation(e).variance;
        let phi = fit.phi(e);
        fit.response[e.index()]
            .iter()
            .zip(fit.mean_path.mu(e))
            .map(|(&y, &mu)| if phi > 0.0 { (y - mu) / (phi * v.eval(mu)).sqrt() } else { 0.0 })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PitConstruction {
    /// `F(y_t)` binned directly.
    Continuous,
    /// Each count contributes the segment `[F(y_t - 1), F(y_t)]` spread uniformly.
    NonRandomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitHistogram {
    pub bin_count: usize,
    /// Density-scaled heights; they average to 1.
    pub heights: Vec<f64>,
    /// Mass per bin; sums to `n_obs`.
    pub mass: Vec<f64>,
    pub reference_family: SamplingFamily,
    pub construction: PitConstruction,
    pub n_obs: usize,
}

impl PitHistogram {
    /// Pearson chi-square statistic against equal bin masses, with `bins - 1` df.
    pub fn chi_square_uniformity(&self) -> (f64, usize, f64) {
        let expected = self.n_obs as f64 / self.bin_count as f64;
        let stat: f64 = self.mass.iter().map(|o| (o - expected).powi(2) / expected).sum();
        let df = self.bin_count - 1;
        (stat, df, chi_square_sf(stat, df as f64))
    }
}

/// Adds the uniform distribution on `[lo, hi]` (total mass 1) to `mass`.
fn spread_segment(mass: &mut [f64], lo: f64, hi: f64) {
    let j = mass.len();
    let bin = |u: f64| ((u * j as f64).floor() as usize).min(j - 1);
    let (lo, hi) = (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0));
    if hi - lo <= 1e-15 {
        mass[bin(hi)] += 1.0;
        return;
    }
    for (k, m) in mass.iter_mut().enumerate() {
        let a = k as f64 / j as f64;
        let b = (k + 1) as f64 / j as f64;
        let overlap = hi.min(b) - lo.max(a);
        if overlap > 0.0 {
            *m += overlap / (hi - lo);
        }
    }
}

/// PIT histogram of margin `e` under `family` evaluated at the fitted means
/// and the fitted dispersion of that margin.
pub fn pit(fit: &FitResult, e: Equation, family: SamplingFamily, bins: usize) -> Result<PitHistogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bin count must be positive".into()));
    }
    let domain = fit.domains[e.index()];
    if family.domain() != domain {
        return Err(Error::FamilyDomainMismatch { family: family.to_string(), domain });
    }
    let phi = fit.phi(e);
    let y = &fit.response[e.index()];
    let mu = fit.mean_path.mu(e);
    let mut mass = vec![0.0; bins];
    let construction = if domain == SeriesDomain::NonnegativeCount {
        PitConstruction::NonRandomized
    } else {
        PitConstruction::Continuous
    };
    for (&yt, &mt) in y.iter().zip(mu) {
        match construction {
            PitConstruction::NonRandomized => {
                let hi = family.cdf(yt, mt, phi)?;
                let lo = if yt >= 1.0 { family.cdf(yt - 1.0, mt, phi)? } else { 0.0 };
                spread_segment(&mut mass, lo, hi);
            }
            PitConstruction::Continuous => {
                let u = family.cdf(yt, mt, phi)?;
                spread_segment(&mut mass, u, u);
            }
        }
    }
    let n_obs = y.len();
    let heights = mass.iter().map(|m| m * bins as f64 / n_obs as f64).collect();
    Ok(PitHistogram { bin_count: bins, heights, mass, reference_family: family, construction, n_obs })
}
