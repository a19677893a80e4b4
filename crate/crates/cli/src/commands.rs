//! Subcommand runners. Each resolves the config, runs the analysis and
//! writes its artifacts into the output directory.

use std::path::PathBuf;

use mixtsql::diagnose::{self, DEFAULT_BINS, DEFAULT_MAX_LAG};
use mixtsql::forecast::{gaussian_baseline, osa_forecast, ForecastRun};
use mixtsql::simulate::{run_mc_study, simulate_trajectory, stream_rng};
use mixtsql::{
    bootstrap_se, fit_qmle, granger_test, validate_spec, BivariateSeries, Equation, ModelSpec, SamplingFamily,
    SeriesDomain,
};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{domain_name, family_name, parse_family, RunConfig};
use crate::error::{CliError, CliResult};
use crate::ingest::ingest_csv;
use crate::output::{coefficient_table, fit_json, num, opt, Provenance, Writer, COEFFICIENT_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Granger,
    Simulate,
    Bootstrap,
    McStudy,
    Diagnose,
    Forecast,
}

/// Runs `command` with `flags` merged over the config file and returns the
/// written artifact paths.
pub fn run(command: Command, flags: RunConfig) -> CliResult<Vec<PathBuf>> {
    let mut cfg = flags.load()?;
    let dir = cfg.out_dir();
    cfg.config = None;
    cfg.out_dir = None;
    match command {
        Command::Fit => fit(cfg, dir),
        Command::Granger => granger(cfg, dir),
        Command::Simulate => simulate(cfg, dir),
        Command::Bootstrap => bootstrap(cfg, dir),
        Command::McStudy => mc_study(cfg, dir),
        Command::Diagnose => diagnose(cfg, dir),
        Command::Forecast => forecast(cfg, dir),
    }
}

struct Loaded {
    data: BivariateSeries,
    spec: ModelSpec,
    input_sha256: String,
}

/// Reads the input series and the model structure, recording resolved values in `cfg`.
fn load(cfg: &mut RunConfig) -> CliResult<Loaded> {
    let path = cfg.input_path()?.to_path_buf();
    let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    let opts = cfg.ingest_options()?;
    let data = ingest_csv(&path, &opts)?;
    let spec = cfg.model_spec()?;
    cfg.set_model_spec(&spec);
    cfg.col_y1 = Some(opts.col_y1);
    cfg.col_y2 = Some(opts.col_y2);
    cfg.y1_domain = Some(domain_name(opts.domains[0]).into());
    cfg.y2_domain = Some(domain_name(opts.domains[1]).into());
    cfg.weekly = Some(opts.weekly);
    Ok(Loaded { data, spec, input_sha256: hex::encode(Sha256::digest(&bytes)) })
}

fn label_at(data: &BivariateSeries, t: usize) -> String {
    data.labels().map_or_else(String::new, |l| l[t].clone())
}

fn fit(mut cfg: RunConfig, dir: PathBuf) -> CliResult<Vec<PathBuf>> {
    let l = load(&mut cfg)?;
    let ctx = validate_spec(&l.spec, &l.data)?;
    let f = fit_qmle(&ctx)?;
    let mut w = Writer::new(&dir, Provenance::new(cfg, Some(l.input_sha256)))?;
    w.json("fit.json", "fit", fit_json(&f))?;
    w.csv("coefficients.csv", "coefficients", &COEFFICIENT_HEADER, &coefficient_table(&f))?;
    let rows: Vec<Vec<String>> = (0..f.response[0].len())
        .map(|i| {
            let t = f.m + i;
            vec![
                (t + 1).to_string(),
                label_at(&l.data, t),
                num(f.response[0][i]),
                num(f.mean_path.mu1[i]),
                num(f.response[1][i]),
                num(f.mean_path.mu2[i]),
            ]
        })
        .collect();
    w.csv("fitted_means.csv", "fitted-means", &["t", "date", "y1", "mu1", "y2", "mu2"], &rows)?;
    Ok(w.written)
}

fn granger(mut cfg: RunConfig, dir: PathBuf) -> CliResult<Vec<PathBuf>> {
    let l = load(&mut cfg)?;
    let direction = cfg.direction()?;
    cfg.direction = Some(direction.to_string());
    let ctx = validate_spec(&l.spec, &l.data)?;
    let g = granger_test(&ctx, direction)?;
    let mut w = Writer::new(&dir, Provenance::new(cfg, Some(l.input_sha256)))?;
    w.json(
        "granger.json",
        "granger",
        json!({
            "direction": direction.to_string(),
            "tested_equation": direction.target().number(),
            "qlr": g.qlr,
            "df": g.df,
            "p_value": g.p_value,
            "phi_used": g.phi_used,
            "unrestricted": fit_json(&g.unrestricted_fit),
            "restricted": fit_json(&g.restricted_fit),
        }),
    )?;
    Ok(w.written)
}

fn simulate(mut cfg: RunConfig, dir: PathBuf) -> CliResult<Vec<PathBuf>> {
    let study = cfg.study()?;
    cfg.reps = None;
    cfg.boot_b = None;
    let mut rng = stream_rng(cfg.seed(), 0);
    let series = simulate_trajectory(&study.model, study.families, study.n, study.burn_in, &mut rng)?;
    let mut w = Writer::new(&dir, Provenance::new(cfg, None))?;
    w.series("series.csv", "simulated-series", &series)?;
    w.json(
        "simulate.json",
        "simulate",
        json!({
            "model": study.model,
            "families": study.families.map(family_name),
            "n": study.n,
            "burn_in": study.burn_in,
        }),
    )?;
    Ok(w.written)
}

fn bootstrap(mut cfg: RunConfig, dir: PathBuf) -> CliResult<Vec<PathBuf>> {
    let l = load(&mut cfg)?;
    let families = cfg.bootstrap_families()?;
    let b = *cfg.boot_b.get_or_insert(100);
    let seed = cfg.seed();
    let ctx = validate_spec(&l.spec, &l.data)?;
    let f = fit_qmle(&ctx)?;
    let boot = bootstrap_se(&ctx, &f, b, families, seed)?;
    let mut w = Writer::new(&dir, Provenance::new(cfg, Some(l.input_sha256)))?;
    let est = f.estimates();
    let mut rows: Vec<Vec<String>> = f
        .labels
        .iter()
        .enumerate()
        .map(|(i, name)| {
            vec![
                name.clone(),
                num(est[i]),
                num(f.se[i]),
                num(boot.se[i]),
                num(boot.quantile_ci[i].0),
                num(boot.quantile_ci[i].1),
            ]
        })
        .collect();
    for (k, phi) in [f.phi1_hat, f.phi2_hat].into_iter().enumerate() {
        rows.push(vec![format!("phi{}", k + 1), num(phi), String::new(), num(boot.phi_se[k]), String::new(), String::new()]);
    }
    w.csv(
        "bootstrap.csv",
        "bootstrap-se",
        &["parameter", "estimate", "theory_se", "boot_se", "boot_q025", "boot_q975"],
        &rows,
    )?;
    w.json(
        "bootstrap.json",
        "bootstrap",
        json!({
            "replications": boot.replications,
            "failed": boot.failed,
            "families": families.map(family_name),
            "labels": boot.labels,
            "se": boot.se,
            "quantile_ci": boot.quantile_ci,
            "phi_se": boot.phi_se,
            "fit": fit_json(&f),
        }),
    )?;
    Ok(w.written)
}

fn mc_study(mut cfg: RunConfig, dir: PathBuf) -> CliResult<Vec<PathBuf>> {
    let study = cfg.study()?;
    let report = run_mc_study(&study)?;
    let mut w = Writer::new(&dir, Provenance::new(cfg, None))?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.replication.to_string(),
                r.coefficient.clone(),
                num(r.true_value),
                num(r.estimate),
                num(r.se),
                num(r.ci_low),
                num(r.ci_high),
                r.detected.to_string(),
                opt(r.boot_se),
                r.boot_normal_detected.map_or_else(String::new, |b| b.to_string()),
                r.boot_quantile_detected.map_or_else(String::new, |b| b.to_string()),
                num(r.phi1_hat),
                num(r.phi2_hat),
            ]
        })
        .collect();
    w.csv(
        "replications.csv",
        "mc-replications",
        &[
            "replication",
            "coefficient",
            "true_value",
            "estimate",
            "se",
            "ci_low",
            "ci_high",
            "detected",
            "boot_se",
            "boot_normal_detected",
            "boot_quantile_detected",
            "phi1_hat",
            "phi2_hat",
        ],
        &rows,
    )?;
    w.json(
        "study.json",
        "mc-study",
        json!({
            "name": report.name,
            "reps": report.reps,
            "successful": report.successful,
            "failed": report.failed,
            "degenerate": report.degenerate,
            "mean_phi": report.mean_phi,
            "generator": study.model,
            "generator_families": study.families.map(family_name),
            "fitted_spec": study.fitted_spec(),
            "summary": report.summary,
        }),
    )?;
    Ok(w.written)
}

fn default_family(domain: SeriesDomain) -> Option<SamplingFamily> {
    match domain {
        SeriesDomain::UnitInterval => Some(SamplingFamily::BetaMeanDispersion),
        SeriesDomain::NonnegativeCount => Some(SamplingFamily::DoublePoisson),
        _ => None,
    }
}

fn diagnose(mut cfg: RunConfig, dir: PathBuf) -> CliResult<Vec<PathBuf>> {
    let l = load(&mut cfg)?;
    let max_lag = *cfg.max_lag.get_or_insert(DEFAULT_MAX_LAG);
    let bins = *cfg.bins.get_or_insert(DEFAULT_BINS);
    let mut families = [None, None];
    for e in [Equation::First, Equation::Second] {
        families[e.index()] = match cfg.family(e)? {
            Some(f) => Some(f),
            None => default_family(l.data.domain(e)),
        };
    }
    cfg.family1 = families[0].map(|f| family_name(f).to_string());
    cfg.family2 = families[1].map(|f| family_name(f).to_string());

    let c1 = diagnose::acf_pacf(l.data.y1(), max_lag)?;
    let c2 = diagnose::acf_pacf(l.data.y2(), max_lag)?;
    let ccf = diagnose::ccf(l.data.y1(), l.data.y2(), max_lag)?;
    let ctx = validate_spec(&l.spec, &l.data)?;
    let f = fit_qmle(&ctx)?;
    let res = diagnose::residuals(&f);
    let res_lag = max_lag.min(res[0].len().saturating_sub(1));
    let racf = [diagnose::acf(&res[0], res_lag)?, diagnose::acf(&res[1], res_lag)?];
    let mut pits = Vec::new();
    for e in [Equation::First, Equation::Second] {
        if let Some(fam) = families[e.index()] {
            pits.push((e, diagnose::pit(&f, e, fam, bins)?));
        }
    }

    let mut w = Writer::new(&dir, Provenance::new(cfg, Some(l.input_sha256)))?;
    let rows: Vec<Vec<String>> = (0..=max_lag)
        .map(|h| vec![h.to_string(), num(c1.acf[h]), num(c1.pacf[h]), num(c2.acf[h]), num(c2.pacf[h])])
        .collect();
    w.csv("acf_pacf.csv", "acf-pacf", &["lag", "acf_y1", "pacf_y1", "acf_y2", "pacf_y2"], &rows)?;
    let rows: Vec<Vec<String>> = ccf
        .iter()
        .enumerate()
        .map(|(i, v)| vec![(i as i64 - max_lag as i64).to_string(), num(*v)])
        .collect();
    w.csv("ccf.csv", "ccf", &["lag", "ccf_y1_lagged_y2"], &rows)?;
    let rows: Vec<Vec<String>> = (0..=res_lag).map(|h| vec![h.to_string(), num(racf[0][h]), num(racf[1][h])]).collect();
    w.csv("residual_acf.csv", "residual-acf", &["lag", "acf_r1", "acf_r2"], &rows)?;
    let rows: Vec<Vec<String>> = (0..res[0].len())
        .map(|i| vec![(f.m + i + 1).to_string(), num(res[0][i]), num(res[1][i])])
        .collect();
    w.csv("residuals.csv", "pearson-residuals", &["t", "r1", "r2"], &rows)?;
    let mut rows = Vec::new();
    let mut pit_json = Vec::new();
    for (e, h) in &pits {
        for k in 0..h.bin_count {
            rows.push(vec![
                e.number().to_string(),
                family_name(h.reference_family).into(),
                k.to_string(),
                num(k as f64 / h.bin_count as f64),
                num((k + 1) as f64 / h.bin_count as f64),
                num(h.heights[k]),
                num(h.mass[k]),
            ]);
        }
        let (stat, df, p) = h.chi_square_uniformity();
        pit_json.push(json!({
            "margin": e.number(),
            "family": family_name(h.reference_family),
            "construction": h.construction,
            "chi_square": stat,
            "df": df,
            "p_value": p,
        }));
    }
    w.csv("pit.csv", "pit", &["margin", "family", "bin", "lower", "upper", "height", "mass"], &rows)?;
    w.json(
        "diagnose.json",
        "diagnose",
        json!({
            "n": l.data.len(),
            "white_noise_band": diagnose::bartlett_band(l.data.len()),
            "residual_band": diagnose::bartlett_band(res[0].len()),
            "pit": pit_json,
            "fit": fit_json(&f),
        }),
    )?;
    Ok(w.written)
}

fn run_json(run: &ForecastRun) -> Value {
    json!({
        "method": run.method,
        "initial_train": run.initial_train,
        "forecasts": run.points.len(),
        "final_rmfe": run.final_rmfe(),
        "coverage": run.coverage(),
        "refit_failures": run.points.iter().filter(|p| p.refit_failed).count(),
    })
}

fn forecast(mut cfg: RunConfig, dir: PathBuf) -> CliResult<Vec<PathBuf>> {
    let l = load(&mut cfg)?;
    let train = *cfg.train_t.get_or_insert(50);
    let pi_family = match &cfg.pi_family {
        Some(s) => parse_family(s)?,
        None => default_family(l.data.domain(Equation::Second)).ok_or_else(|| {
            CliError::Config("no default predictive family for this domain; set --pi-family".into())
        })?,
    };
    cfg.pi_family = Some(family_name(pi_family).into());
    let ctx = validate_spec(&l.spec, &l.data)?;
    let runs = [osa_forecast(&ctx, train, pi_family)?, gaussian_baseline(&ctx, train)?];
    let mut w = Writer::new(&dir, Provenance::new(cfg, Some(l.input_sha256)))?;
    let mut rows = Vec::new();
    for run in &runs {
        let method = serde_json::to_value(run.method).unwrap_or_default();
        for (p, r) in run.points.iter().zip(&run.rmfe_path) {
            rows.push(vec![
                method.as_str().unwrap_or_default().to_string(),
                p.t.to_string(),
                label_at(&l.data, p.t - 1),
                num(p.observed),
                num(p.point_forecast),
                num(p.pi_low),
                num(p.pi_high),
                p.covered().to_string(),
                p.refit_failed.to_string(),
                num(*r),
            ]);
        }
    }
    w.csv(
        "forecast.csv",
        "forecast",
        &["method", "t", "date", "observed", "forecast", "pi_low", "pi_high", "covered", "refit_failed", "rmfe"],
        &rows,
    )?;
    w.json(
        "forecast.json",
        "forecast",
        json!({ "runs": runs.iter().map(run_json).collect::<Vec<_>>(), "points": runs }),
    )?;
    Ok(w.written)
}
