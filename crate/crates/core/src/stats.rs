//! Small numeric helpers shared across modules.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Standard normal 97.5% quantile.
pub const Z_975: f64 = 1.959963984540054;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation with `n - 1` divisor; NaN for fewer than two values.
pub fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Type-7 (linear interpolation) quantile of an ascending slice.
pub fn type7_quantile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    type7_quantile(&s, 0.5)
}

/// Upper tail `P(X > x)` of a chi-square with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).map(|d| d.sf(x)).unwrap_or(f64::NAN)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(type7_quantile(&s, 0.0), 1.0);
        assert_eq!(type7_quantile(&s, 1.0), 4.0);
        assert!((type7_quantile(&s, 0.5) - 2.5).abs() < 1e-15);
        assert!((normal_quantile(0.975) - Z_975).abs() < 1e-9);
    }

    #[test]
    fn sd_edge_cases() {
        assert!(sample_sd(&[1.0]).is_nan());
        assert!((sample_sd(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(chi_square_sf(0.0, 3.0), 1.0);
    }
}
