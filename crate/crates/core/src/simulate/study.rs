//! Monte Carlo harness: simulate, fit, optionally bootstrap, and aggregate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_trajectory, stream_rng, SamplingFamily, TrueModel, DEFAULT_BURN_IN};
use crate::error::{Error, Result};
use crate::estimate::{bootstrap_se, fit_qmle};
use crate::model::{validate_spec, EquationSpec, LagSet, LinkFunction, ModelSpec, ParamVector, VarianceFunction};
use crate::stats::{mean, median, sample_sd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub b: usize,
    pub families: [SamplingFamily; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStudyConfig {
    pub name: String,
    pub model: TrueModel,
    /// Structure used for fitting; the generating structure when absent.
    pub fit_spec: Option<ModelSpec>,
    pub n: usize,
    pub reps: usize,
    pub families: [SamplingFamily; 2],
    pub bootstrap: Option<BootstrapPlan>,
    pub base_seed: u64,
    pub burn_in: usize,
}

impl McStudyConfig {
    pub fn fitted_spec(&self) -> &ModelSpec {
        self.fit_spec.as_ref().unwrap_or(&self.model.spec)
    }

    /// True value of every fitted coefficient (0 for lags absent from the generator).
    pub fn true_values(&self) -> Vec<f64> {
        self.fitted_spec()
            .coefficients()
            .into_iter()
            .map(|c| self.model.params.get(&self.model.spec, c).unwrap_or(0.0))
            .collect()
    }
}

/// One fitted coefficient in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub coefficient: String,
    pub true_value: f64,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub detected: bool,
    pub boot_se: Option<f64>,
    pub boot_normal_detected: Option<bool>,
    pub boot_quantile_detected: Option<bool>,
    pub phi1_hat: f64,
    pub phi2_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub coefficient: String,
    pub true_value: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Monte Carlo standard deviation of the estimates; `None` with one replication.
    pub mc_sd: Option<f64>,
    pub mean_se: f64,
    /// `mean_se / mc_sd`.
    pub se_ratio: Option<f64>,
    pub detection_rate: f64,
    pub mean_boot_se: Option<f64>,
    /// `mean_boot_se / mc_sd`.
    pub boot_se_ratio: Option<f64>,
    /// Median over replications of `boot_se / se`.
    pub median_boot_theory_ratio: Option<f64>,
    pub boot_normal_detection_rate: Option<f64>,
    pub boot_quantile_detection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub name: String,
    pub reps: usize,
    pub successful: usize,
    pub failed: usize,
    /// Set when fewer than two replications succeeded, so spreads are undefined.
    pub degenerate: bool,
    pub mean_phi: [f64; 2],
    pub summary: Vec<CoefficientSummary>,
    pub rows: Vec<ReplicationRecord>,
}

/// SplitMix64 finalizer, used to derive bootstrap seeds that do not overlap
/// the trajectory streams.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct RepOutcome {
    estimates: Vec<f64>,
    se: Vec<f64>,
    ci: Vec<(f64, f64)>,
    phi: [f64; 2],
    boot: Option<(Vec<f64>, Vec<(f64, f64)>)>,
}

fn run_replication(cfg: &McStudyConfig, r: usize) -> Option<RepOutcome> {
    let mut rng = stream_rng(cfg.base_seed, r as u64);
    let series = simulate_trajectory(&cfg.model, cfg.families, cfg.n, cfg.burn_in, &mut rng).ok()?;
    let ctx = validate_spec(cfg.fitted_spec(), &series).ok()?;
    let fit = fit_qmle(&ctx).ok()?;
    if !fit.converged() {
        return None;
    }
    let boot = match &cfg.bootstrap {
        Some(plan) => {
            let seed = splitmix64(cfg.base_seed.wrapping_add(r as u64));
            let b = bootstrap_se(&ctx, &fit, plan.b, plan.families, seed).ok()?;
            Some((b.se, b.quantile_ci))
        }
        None => None,
    };
    Some(RepOutcome {
        estimates: fit.estimates(),
        se: fit.se.clone(),
        ci: fit.ci.clone(),
        phi: [fit.phi1_hat, fit.phi2_hat],
        boot,
    })
}

fn excludes_zero((lo, hi): (f64, f64)) -> bool {
    lo > 0.0 || hi < 0.0
}

pub fn run_mc_study(cfg: &McStudyConfig) -> Result<StudyReport> {
    if cfg.reps == 0 {
        return Err(Error::InvalidReplicationCount(0));
    }
    if cfg.n <= cfg.fitted_spec().max_lag().max(cfg.model.spec.max_lag()) {
        return Err(Error::SeriesTooShort { n: cfg.n, required: cfg.fitted_spec().max_lag() + 1 });
    }
    let outcomes: Vec<Option<RepOutcome>> = (0..cfg.reps).into_par_iter().map(|r| run_replication(cfg, r)).collect();
    let labels = cfg.fitted_spec().coefficient_labels();
    let truth = cfg.true_values();
    let mut rows = Vec::new();
    for (r, out) in outcomes.iter().enumerate() {
        let Some(o) = out else { continue };
        for j in 0..labels.len() {
            let boot_se = o.boot.as_ref().map(|b| b.0[j]);
            rows.push(ReplicationRecord {
                replication: r,
                coefficient: labels[j].clone(),
                true_value: truth[j],
                estimate: o.estimates[j],
                se: o.se[j],
                ci_low: o.ci[j].0,
                ci_high: o.ci[j].1,
                detected: excludes_zero(o.ci[j]),
                boot_se,
                boot_normal_detected: boot_se.map(|s| excludes_zero(crate::estimate::normal_interval(o.estimates[j], s))),
                boot_quantile_detected: o.boot.as_ref().map(|b| excludes_zero(b.1[j])),
                phi1_hat: o.phi[0],
                phi2_hat: o.phi[1],
            });
        }
    }
    let ok: Vec<&RepOutcome> = outcomes.iter().flatten().collect();
    let successful = ok.len();
    let failed = cfg.reps - successful;
    let rate = |v: Vec<bool>| v.iter().filter(|&&d| d).count() as f64 / v.len().max(1) as f64;
    let summary = (0..labels.len())
        .map(|j| {
            let est: Vec<f64> = ok.iter().map(|o| o.estimates[j]).collect();
            let se: Vec<f64> = ok.iter().map(|o| o.se[j]).collect();
            let mean_estimate = mean(&est);
            let mc_sd = (successful >= 2).then(|| sample_sd(&est));
            let mean_se = mean(&se);
            let has_boot = cfg.bootstrap.is_some() && successful > 0;
            let boot_se: Vec<f64> = ok.iter().filter_map(|o| o.boot.as_ref().map(|b| b.0[j])).collect();
            let mean_boot_se = has_boot.then(|| mean(&boot_se));
            CoefficientSummary {
                coefficient: labels[j].clone(),
                true_value: truth[j],
                mean_estimate,
                bias: mean_estimate - truth[j],
                mc_sd,
                mean_se,
                se_ratio: mc_sd.map(|sd| mean_se / sd),
                detection_rate: rate(ok.iter().map(|o| excludes_zero(o.ci[j])).collect()),
                mean_boot_se,
                boot_se_ratio: mean_boot_se.zip(mc_sd).map(|(b, sd)| b / sd),
                median_boot_theory_ratio: has_boot
                    .then(|| median(&boot_se.iter().zip(&se).map(|(b, s)| b / s).collect::<Vec<_>>())),
                boot_normal_detection_rate: has_boot.then(|| {
                    rate(ok.iter().map(|o| excludes_zero(crate::estimate::normal_interval(o.estimates[j], o.boot.as_ref().unwrap().0[j]))).collect())
                }),
                boot_quantile_detection_rate: has_boot
                    .then(|| rate(ok.iter().map(|o| excludes_zero(o.boot.as_ref().unwrap().1[j])).collect())),
            }
        })
        .collect();
    let mean_phi = [
        mean(&ok.iter().map(|o| o.phi[0]).collect::<Vec<_>>()),
        mean(&ok.iter().map(|o| o.phi[1]).collect::<Vec<_>>()),
    ];
    Ok(StudyReport {
        name: cfg.name.clone(),
        reps: cfg.reps,
        successful,
        failed,
        degenerate: successful < 2,
        mean_phi,
        summary,
        rows,
    })
}

fn mixed_spec(cross1: LagSet, cross2: LagSet) -> ModelSpec {
    ModelSpec::new(
        EquationSpec::new(LinkFunction::logit(), VarianceFunction::BernoulliLike, LagSet::range(1), cross1),
        EquationSpec::new(LinkFunction::log_plus_one(), VarianceFunction::Linear, LagSet::range(1), cross2),
    )
}

fn preset(
    name: &str,
    spec: ModelSpec,
    theta: [&[f64]; 4],
    phi: [f64; 2],
    families: [SamplingFamily; 2],
    base_seed: u64,
    reps: usize,
) -> McStudyConfig {
    let params = ParamVector {
        beta1: theta[0].to_vec(),
        gamma1: theta[1].to_vec(),
        beta2: theta[2].to_vec(),
        gamma2: theta[3].to_vec(),
        phi1: phi[0],
        phi2: phi[1],
    };
    McStudyConfig {
        name: name.into(),
        model: TrueModel::new(spec, params).expect("preset parameters conform"),
        fit_spec: None,
        n: 100,
        reps,
        families,
        bootstrap: None,
        base_seed,
        burn_in: DEFAULT_BURN_IN,
    }
}

/// Beta-Poisson model with one own and one cross lag per equation.
pub fn configuration_1(base_seed: u64, reps: usize) -> McStudyConfig {
    preset(
        "configuration-1",
        mixed_spec(LagSet::range(1), LagSet::range(1)),
        [&[1.0, 0.2], &[-0.2], &[1.0, 0.2], &[-0.2]],
        [0.2, 1.0],
        [SamplingFamily::BetaMeanDispersion, SamplingFamily::Poisson],
        base_seed,
        reps,
    )
}

/// Beta-Poisson model with cross effects at lags 1 and 4, fitted with cross lags 1..10.
pub fn configuration_2(base_seed: u64, reps: usize) -> McStudyConfig {
    let mut cfg = preset(
        "configuration-2",
        mixed_spec(LagSet::range(4), LagSet::range(4)),
        [&[1.5, 0.2], &[-0.5, 0.0, 0.0, 0.3], &[1.0, 0.2], &[-0.2, 0.0, 0.0, 0.1]],
        [0.1, 1.0],
        [SamplingFamily::BetaMeanDispersion, SamplingFamily::Poisson],
        base_seed,
        reps,
    );
    cfg.fit_spec = Some(mixed_spec(LagSet::range(10), LagSet::range(10)));
    cfg
}

/// Bounded-mixture/Poisson generator with a beta/double-Poisson bootstrap,
/// so the bootstrap family differs from the generator.
pub fn configuration_3(base_seed: u64, reps: usize, b: usize) -> McStudyConfig {
    let mut cfg = preset(
        "configuration-3",
        mixed_spec(LagSet::range(1), LagSet::range(1)),
        [&[-0.5, 0.2], &[0.25], &[1.0, 0.2], &[0.2]],
        [0.1, 1.0],
        [SamplingFamily::BoundedAlternative, SamplingFamily::Poisson],
        base_seed,
        reps,
    );
    cfg.bootstrap = Some(BootstrapPlan { b, families: [SamplingFamily::BetaMeanDispersion, SamplingFamily::DoublePoisson] });
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_conform() {
        let c2 = configuration_2(0, 1);
        assert_eq!(c2.fitted_spec().dim(), 2 * (2 + 10));
        let truth = c2.true_values();
        let labels = c2.fitted_spec().coefficient_labels();
        let at = |l: &str| truth[labels.iter().position(|x| x == l).unwrap()];
        assert_eq!(at("gamma1_lag1"), -0.5);
        assert_eq!(at("gamma1_lag4"), 0.3);
        assert_eq!(at("gamma2_lag4"), 0.1);
        assert_eq!(at("gamma2_lag9"), 0.0);
        assert!(configuration_3(0, 1, 10).bootstrap.is_some());
    }

    #[test]
    fn single_replication_is_degenerate() {
        let rep = run_mc_study(&configuration_1(4, 1)).unwrap();
        assert!(rep.degenerate);
        assert!(rep.summary.iter().all(|s| s.mc_sd.is_none() && s.se_ratio.is_none()));
        assert_eq!(rep.rows.len(), 6);
    }

    #[test]
    fn zero_reps_rejected() {
        assert!(matches!(run_mc_study(&configuration_1(0, 0)), Err(Error::InvalidReplicationCount(0))));
    }

    #[test]
    fn study_is_deterministic() {
        let cfg = configuration_1(21, 8);
        let a = run_mc_study(&cfg).unwrap();
        let b = run_mc_study(&cfg).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| run_mc_study(&cfg).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn stationary_presets_over_long_paths() {
        for cfg in [configuration_1(1, 1), configuration_2(1, 1), configuration_3(1, 1, 1)] {
            let mut rng = stream_rng(77, 0);
            simulate_trajectory(&cfg.model, cfg.families, 10_000, 500, &mut rng).unwrap();
        }
    }
}
