//! Run configuration: flags merged over an optional JSON config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mixtsql::simulate::study::{configuration_1, configuration_2, configuration_3, McStudyConfig};
use mixtsql::{
    Direction, Equation, EquationSpec, LagSet, LinkFunction, ModelSpec, ParamVector, SamplingFamily, SeriesDomain,
    VarianceFunction,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::ingest::IngestOptions;

/// Comma-separated lag list; an empty string or `none` is the empty set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LagList(pub Vec<usize>);

impl FromStr for LagList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(LagList(Vec::new()));
        }
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| format!("invalid lag '{p}'")))
            .collect::<Result<_, _>>()
            .map(LagList)
    }
}

/// Comma-separated list of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NumList(pub Vec<f64>);

impl FromStr for NumList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(NumList(Vec::new()));
        }
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("invalid number '{p}'")))
            .collect::<Result<_, _>>()
            .map(NumList)
    }
}

macro_rules! run_config {
    ($( $(#[$meta:meta])* $field:ident : $ty:ty ),* $(,)?) => {
        /// Parameters of one invocation. Every field is optional; unset fields
        /// take command-specific defaults during resolution.
        #[derive(Debug, Clone, Default, PartialEq, clap::Args, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct RunConfig {
            /// JSON config file; flags override its values
            #[arg(long)]
            #[serde(skip)]
            pub config: Option<PathBuf>,
            /// Directory receiving the output artifacts
            #[arg(long)]
            #[serde(skip)]
            pub out_dir: Option<PathBuf>,
            $(
                $(#[$meta])*
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl RunConfig {
            /// Fields set in `self` win over those in `base`.
            pub fn merged_over(self, base: RunConfig) -> RunConfig {
                RunConfig {
                    config: self.config.or(base.config),
                    out_dir: self.out_dir.or(base.out_dir),
                    $( $field: self.$field.or(base.$field), )*
                }
            }
        }
    };
}

run_config! {
    /// Input CSV with a header row
    #[arg(long)] input: PathBuf,
    /// Date column (default: `date` when present)
    #[arg(long)] col_date: String,
    /// Column holding series 1
    #[arg(long)] col_y1: String,
    /// Column holding series 2
    #[arg(long)] col_y2: String,
    /// unit, count, positive or real
    #[arg(long)] y1_domain: String,
    #[arg(long)] y2_domain: String,
    /// Min-max standardize the column (y1 or y2) and take 1 - x
    #[arg(long)] standardize_flip: String,
    /// Aggregate daily rows to weekly values
    #[arg(long, num_args = 0..=1, default_missing_value = "true")] weekly: bool,
    /// Own lags of equation 1, e.g. 1,2,5 (empty for none)
    #[arg(long)] own_lags_1: LagList,
    #[arg(long)] cross_lags_1: LagList,
    #[arg(long)] own_lags_2: LagList,
    #[arg(long)] cross_lags_2: LagList,
    /// logit, log, log1p or identity
    #[arg(long)] link1: String,
    #[arg(long)] link2: String,
    /// constant, linear, bernoulli or quadratic
    #[arg(long)] var1: String,
    #[arg(long)] var2: String,
    /// Built-in study design: configuration-1, configuration-2 or configuration-3
    #[arg(long)] preset: String,
    /// True coefficients (intercept then own lags) of equation 1
    #[arg(long, allow_hyphen_values = true)] beta1: NumList,
    #[arg(long, allow_hyphen_values = true)] gamma1: NumList,
    #[arg(long, allow_hyphen_values = true)] beta2: NumList,
    #[arg(long, allow_hyphen_values = true)] gamma2: NumList,
    /// True dispersions
    #[arg(long)] phi1: f64,
    #[arg(long)] phi2: f64,
    /// Sampling family per margin: beta, poisson, double-poisson or beta-mixture
    #[arg(long)] family1: String,
    #[arg(long)] family2: String,
    #[arg(long)] seed: u64,
    /// Series length for simulation
    #[arg(long)] n: usize,
    #[arg(long)] burn_in: usize,
    #[arg(long)] reps: usize,
    /// Bootstrap replications
    #[arg(long = "boot-B")] boot_b: usize,
    /// Initial training length for forecasting
    #[arg(long = "train-T")] train_t: usize,
    #[arg(long)] max_lag: usize,
    #[arg(long)] bins: usize,
    /// 1->2 or 2->1
    #[arg(long, allow_hyphen_values = true)] direction: String,
    /// Predictive family for forecast intervals
    #[arg(long)] pi_family: String,
}

pub const DEFAULT_SEED: u64 = 1;

impl RunConfig {
    /// Merges the flags over the config file named by `--config`, if any.
    pub fn load(self) -> CliResult<RunConfig> {
        match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let file: RunConfig =
                    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                Ok(self.merged_over(file))
            }
            None => Ok(self),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// Lowercase hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn input_path(&self) -> CliResult<&Path> {
        self.input.as_deref().ok_or_else(|| CliError::Config("an --input file is required".into()))
    }

    pub fn domains(&self) -> CliResult<[SeriesDomain; 2]> {
        Ok([
            parse_domain(self.y1_domain.as_deref().unwrap_or("unit"))?,
            parse_domain(self.y2_domain.as_deref().unwrap_or("count"))?,
        ])
    }

    pub fn ingest_options(&self) -> CliResult<IngestOptions> {
        let standardize_flip = match self.standardize_flip.as_deref() {
            None => None,
            Some("y1") => Some(Equation::First),
            Some("y2") => Some(Equation::Second),
            Some(other) => return Err(CliError::Config(format!("--standardize-flip expects y1 or y2, got '{other}'"))),
        };
        Ok(IngestOptions {
            col_date: self.col_date.clone(),
            col_y1: self.col_y1.clone().unwrap_or_else(|| "y1".into()),
            col_y2: self.col_y2.clone().unwrap_or_else(|| "y2".into()),
            domains: self.domains()?,
            standardize_flip,
            weekly: self.weekly.unwrap_or(false),
        })
    }

    /// Model structure from the link/variance/lag fields. Unset fields default
    /// to a logit/bernoulli first equation and a log1p/linear second equation,
    /// each with lag 1 own and cross terms.
    pub fn model_spec(&self) -> CliResult<ModelSpec> {
        let one = LagList(vec![1]);
        let eq = |link: &Option<String>, dl: &str, var: &Option<String>, dv: &str, own: &Option<LagList>, cross: &Option<LagList>| {
            Ok::<_, CliError>(EquationSpec::new(
                parse_link(link.as_deref().unwrap_or(dl))?,
                parse_variance(var.as_deref().unwrap_or(dv))?,
                LagSet::new(own.as_ref().unwrap_or(&one).0.clone())?,
                LagSet::new(cross.as_ref().unwrap_or(&one).0.clone())?,
            ))
        };
        Ok(ModelSpec::new(
            eq(&self.link1, "logit", &self.var1, "bernoulli", &self.own_lags_1, &self.cross_lags_1)?,
            eq(&self.link2, "log1p", &self.var2, "linear", &self.own_lags_2, &self.cross_lags_2)?,
        ))
    }

    /// Writes the resolved structure back into the config.
    pub fn set_model_spec(&mut self, spec: &ModelSpec) {
        let lags = |s: &LagSet| Some(LagList(s.lags().to_vec()));
        self.link1 = Some(link_name(&spec.eq1.link).into());
        self.link2 = Some(link_name(&spec.eq2.link).into());
        self.var1 = Some(variance_name(spec.eq1.variance).into());
        self.var2 = Some(variance_name(spec.eq2.variance).into());
        self.own_lags_1 = lags(&spec.eq1.own_lags);
        self.cross_lags_1 = lags(&spec.eq1.cross_lags);
        self.own_lags_2 = lags(&spec.eq2.own_lags);
        self.cross_lags_2 = lags(&spec.eq2.cross_lags);
    }

    fn has_model_fields(&self) -> bool {
        self.link1.is_some()
            || self.link2.is_some()
            || self.var1.is_some()
            || self.var2.is_some()
            || self.own_lags_1.is_some()
            || self.cross_lags_1.is_some()
            || self.own_lags_2.is_some()
            || self.cross_lags_2.is_some()
            || self.beta1.is_some()
            || self.gamma1.is_some()
            || self.beta2.is_some()
            || self.gamma2.is_some()
            || self.phi1.is_some()
            || self.phi2.is_some()
    }

    pub fn family(&self, e: Equation) -> CliResult<Option<SamplingFamily>> {
        let f = match e {
            Equation::First => &self.family1,
            Equation::Second => &self.family2,
        };
        f.as_deref().map(parse_family).transpose()
    }

    pub fn direction(&self) -> CliResult<Direction> {
        self.direction
            .as_deref()
            .unwrap_or("1->2")
            .parse()
            .map_err(|e: mixtsql::Error| CliError::Config(e.to_string()))
    }

    /// Study design from a preset or, without one, from the model fields
    /// (generator and fitted structure coincide). Writes the resolved values
    /// back so the config fully describes the run.
    pub fn study(&mut self) -> CliResult<McStudyConfig> {
        let seed = self.seed();
        let reps = self.reps.unwrap_or(100);
        self.seed = Some(seed);
        self.reps = Some(reps);
        let mut cfg = match self.preset.as_deref() {
            Some(name) => {
                if self.has_model_fields() || self.family1.is_some() || self.family2.is_some() {
                    return Err(CliError::Config("model and family fields cannot be combined with --preset".into()));
                }
                let b = self.boot_b.unwrap_or(0);
                match name {
                    "configuration-1" | "c1" => configuration_1(seed, reps),
                    "configuration-2" | "c2" => configuration_2(seed, reps),
                    "configuration-3" | "c3" => configuration_3(seed, reps, b.max(1)),
                    other => return Err(CliError::Config(format!("unknown preset '{other}'"))),
                }
            }
            None => {
                let model = self.true_model()?;
                let families = self.generator_families(&model)?;
                McStudyConfig {
                    name: "custom".into(),
                    model,
                    fit_spec: None,
                    n: 100,
                    reps,
                    families,
                    bootstrap: None,
                    base_seed: seed,
                    burn_in: mixtsql::simulate::DEFAULT_BURN_IN,
                }
            }
        };
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(b) = self.burn_in {
            cfg.burn_in = b;
        }
        self.n = Some(cfg.n);
        self.burn_in = Some(cfg.burn_in);
        match self.boot_b {
            Some(0) => cfg.bootstrap = None,
            Some(b) => {
                let families = match &cfg.bootstrap {
                    Some(plan) => plan.families,
                    None => [SamplingFamily::BetaMeanDispersion, SamplingFamily::DoublePoisson],
                };
                cfg.bootstrap = Some(mixtsql::simulate::BootstrapPlan { b, families });
            }
            None => self.boot_b = Some(cfg.bootstrap.as_ref().map_or(0, |p| p.b)),
        }
        Ok(cfg)
    }

    fn true_model(&mut self) -> CliResult<mixtsql::TrueModel> {
        let spec = self.model_spec()?;
        self.set_model_spec(&spec);
        let need = |v: &Option<NumList>, name: &str| {
            v.as_ref().map(|l| l.0.clone()).ok_or_else(|| CliError::Config(format!("--{name} is required without --preset")))
        };
        let phi1 = *self.phi1.get_or_insert(0.2);
        let phi2 = *self.phi2.get_or_insert(1.0);
        let params = ParamVector {
            beta1: need(&self.beta1, "beta1")?,
            gamma1: self.gamma1.get_or_insert(NumList(vec![0.0; spec.eq1.cross_lags.len()])).0.clone(),
            beta2: need(&self.beta2, "beta2")?,
            gamma2: self.gamma2.get_or_insert(NumList(vec![0.0; spec.eq2.cross_lags.len()])).0.clone(),
            phi1,
            phi2,
        };
        Ok(mixtsql::TrueModel::new(spec, params)?)
    }

    fn generator_families(&mut self, model: &mixtsql::TrueModel) -> CliResult<[SamplingFamily; 2]> {
        let mut out = [SamplingFamily::Poisson; 2];
        for e in [Equation::First, Equation::Second] {
            let f = match self.family(e)? {
                Some(f) => f,
                None => match model.spec.equation(e).variance {
                    VarianceFunction::BernoulliLike => SamplingFamily::BetaMeanDispersion,
                    VarianceFunction::Linear if model.params.phi(e) == 1.0 => SamplingFamily::Poisson,
                    VarianceFunction::Linear => SamplingFamily::DoublePoisson,
                    v => {
                        return Err(CliError::Config(format!("no sampling family simulates the {v} variance function")))
                    }
                },
            };
            out[e.index()] = f;
        }
        self.family1 = Some(family_name(out[0]).into());
        self.family2 = Some(family_name(out[1]).into());
        Ok(out)
    }

    /// Families for bootstrap resampling: beta and double Poisson unless set.
    pub fn bootstrap_families(&mut self) -> CliResult<[SamplingFamily; 2]> {
        let f1 = self.family(Equation::First)?.unwrap_or(SamplingFamily::BetaMeanDispersion);
        let f2 = self.family(Equation::Second)?.unwrap_or(SamplingFamily::DoublePoisson);
        self.family1 = Some(family_name(f1).into());
        self.family2 = Some(family_name(f2).into());
        Ok([f1, f2])
    }
}

fn unknown(what: &str, value: &str) -> CliError {
    CliError::Config(format!("unknown {what} '{value}'"))
}

pub fn parse_domain(s: &str) -> CliResult<SeriesDomain> {
    match s {
        "unit" | "unit-interval" => Ok(SeriesDomain::UnitInterval),
        "count" => Ok(SeriesDomain::NonnegativeCount),
        "positive" => Ok(SeriesDomain::PositiveReal),
        "real" => Ok(SeriesDomain::Real),
        _ => Err(unknown("domain", s)),
    }
}

pub fn parse_link(s: &str) -> CliResult<LinkFunction> {
    match s {
        "logit" => Ok(LinkFunction::logit()),
        "log" => Ok(LinkFunction::log()),
        "log1p" | "log-plus-one" => Ok(LinkFunction::log_plus_one()),
        "identity" => Ok(LinkFunction::identity()),
        _ => Err(unknown("link", s)),
    }
}

pub fn link_name(link: &LinkFunction) -> &'static str {
    use mixtsql::model::{LinkKind, TransformKind};
    match (link.kind(), link.transform_kind()) {
        (LinkKind::Log, TransformKind::LogPlusOne) => "log1p",
        (LinkKind::Log, _) => "log",
        (LinkKind::Logit, _) => "logit",
        (LinkKind::Identity, _) => "identity",
    }
}

pub fn parse_variance(s: &str) -> CliResult<VarianceFunction> {
    match s {
        "constant" => Ok(VarianceFunction::Constant),
        "linear" => Ok(VarianceFunction::Linear),
        "bernoulli" | "bernoulli-like" => Ok(VarianceFunction::BernoulliLike),
        "quadratic" => Ok(VarianceFunction::Quadratic),
        _ => Err(unknown("variance function", s)),
    }
}

pub fn variance_name(v: VarianceFunction) -> &'static str {
    match v {
        VarianceFunction::Constant => "constant",
        VarianceFunction::Linear => "linear",
        VarianceFunction::BernoulliLike => "bernoulli",
        VarianceFunction::Quadratic => "quadratic",
    }
}

pub fn parse_family(s: &str) -> CliResult<SamplingFamily> {
    match s {
        "beta" => Ok(SamplingFamily::BetaMeanDispersion),
        "poisson" => Ok(SamplingFamily::Poisson),
        "double-poisson" => Ok(SamplingFamily::DoublePoisson),
        "beta-mixture" | "bounded-alternative" => Ok(SamplingFamily::BoundedAlternative),
        _ => Err(unknown("family", s)),
    }
}

pub fn family_name(f: SamplingFamily) -> &'static str {
    match f {
        SamplingFamily::BetaMeanDispersion => "beta",
        SamplingFamily::Poisson => "poisson",
        SamplingFamily::DoublePoisson => "double-poisson",
        SamplingFamily::BoundedAlternative => "beta-mixture",
    }
}

pub fn domain_name(d: SeriesDomain) -> &'static str {
    match d {
        SeriesDomain::UnitInterval => "unit",
        SeriesDomain::NonnegativeCount => "count",
        SeriesDomain::PositiveReal => "positive",
        SeriesDomain::Real => "real",
    }
}

impl fmt::Display for LagList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_lists() {
        assert_eq!("1, 2,5".parse::<LagList>().unwrap(), LagList(vec![1, 2, 5]));
        assert_eq!("".parse::<LagList>().unwrap(), LagList(vec![]));
        assert!("1,x".parse::<LagList>().is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = RunConfig { seed: Some(3), reps: Some(10), ..Default::default() };
        let flags = RunConfig { seed: Some(7), ..Default::default() };
        let m = flags.merged_over(file);
        assert_eq!((m.seed, m.reps), (Some(7), Some(10)));
    }

    #[test]
    fn spec_round_trips_through_names() {
        let cfg = RunConfig { cross_lags_2: Some(LagList(vec![])), link1: Some("identity".into()), var1: Some("constant".into()), ..Default::default() };
        let spec = cfg.model_spec().unwrap();
        let mut back = RunConfig::default();
        back.set_model_spec(&spec);
        assert_eq!(back.model_spec().unwrap(), spec);
        assert!(spec.eq2.cross_lags.is_empty());
    }

    #[test]
    fn json_rejects_unknown_fields() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 1, "own_lags_1": [1, 2]}"#).unwrap();
        assert_eq!(c.own_lags_1, Some(LagList(vec![1, 2])));
    }

    #[test]
    fn preset_excludes_model_fields() {
        let mut c = RunConfig { preset: Some("c1".into()), beta1: Some(NumList(vec![1.0])), ..Default::default() };
        assert!(c.study().is_err());
        let mut c = RunConfig { preset: Some("c1".into()), reps: Some(3), ..Default::default() };
        let s = c.study().unwrap();
        assert_eq!((s.reps, s.n, c.boot_b), (3, 100, Some(0)));
    }
}
