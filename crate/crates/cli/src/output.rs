//! Self-describing JSON and CSV artifacts.

use std::path::{Path, PathBuf};

use mixtsql::FitResult;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::VERSION;

/// What every artifact carries about the run that produced it.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub config: RunConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub input_sha256: Option<String>,
}

impl Provenance {
    pub fn new(config: RunConfig, input_sha256: Option<String>) -> Self {
        let seed = config.seed();
        let mut config = config;
        config.seed = Some(seed);
        let config_sha256 = config.hash();
        Self { config, config_sha256, seed, input_sha256 }
    }

    fn header(&self, artifact: &str) -> String {
        let mut h = format!(
            "artifact={artifact} version={VERSION} seed={} config_sha256={}",
            self.seed, self.config_sha256
        );
        if let Some(s) = &self.input_sha256 {
            h.push_str(&format!(" input_sha256={s}"));
        }
        h
    }
}

pub struct Writer {
    dir: PathBuf,
    pub prov: Provenance,
    pub written: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: &Path, prov: Provenance) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), prov, written: Vec::new() })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// Writes `{artifact, version, seed, config_sha256, config, result}`.
    pub fn json(&mut self, name: &str, artifact: &str, result: Value) -> CliResult<()> {
        let mut doc = json!({
            "artifact": artifact,
            "version": VERSION,
            "seed": self.prov.seed,
            "config_sha256": self.prov.config_sha256,
            "config": self.prov.config,
            "result": result,
        });
        if let Some(s) = &self.prov.input_sha256 {
            doc["input_sha256"] = json!(s);
        }
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    /// CSV preceded by a `#` provenance line.
    pub fn csv(&mut self, name: &str, artifact: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| CliError::Csv(e.to_string()))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::Csv(e.to_string()))?;
        }
        let body = w.into_inner().map_err(|e| CliError::Csv(e.to_string()))?;
        let mut bytes = format!("# {}\n", self.prov.header(artifact)).into_bytes();
        bytes.extend_from_slice(&body);
        self.put(name, &bytes)
    }

    pub fn series(&mut self, name: &str, artifact: &str, series: &mixtsql::BivariateSeries) -> CliResult<()> {
        let mut bytes = Vec::new();
        crate::ingest::write_series(series, &[self.prov.header(artifact)], &mut bytes)?;
        self.put(name, &bytes)
    }
}

pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn fit_json(fit: &FitResult) -> Value {
    let est = fit.estimates();
    let coefficients: Vec<Value> = fit
        .labels
        .iter()
        .enumerate()
        .map(|(i, name)| {
            json!({
                "name": name,
                "estimate": est[i],
                "se": fit.se[i],
                "ci_low": fit.ci[i].0,
                "ci_high": fit.ci[i].1,
            })
        })
        .collect();
    let cov: Vec<Vec<f64>> = (0..fit.cov.nrows()).map(|i| fit.cov.row(i).iter().copied().collect()).collect();
    json!({
        "coefficients": coefficients,
        "dispersions": { "phi1": fit.phi1_hat, "phi2": fit.phi2_hat },
        "quasi_loglik": fit.qll,
        "m": fit.m,
        "n": fit.n,
        "convergence": fit.convergence,
        "warnings": fit.warnings,
        "covariance": cov,
    })
}

/// Estimate and 95% interval per coefficient, then the dispersion estimates.
pub fn coefficient_table(fit: &FitResult) -> Vec<Vec<String>> {
    let est = fit.estimates();
    let mut rows: Vec<Vec<String>> = fit
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| vec![l.clone(), num(est[i]), num(fit.ci[i].0), num(fit.ci[i].1), num(fit.se[i])])
        .collect();
    rows.push(vec!["phi1".into(), num(fit.phi1_hat), String::new(), String::new(), String::new()]);
    rows.push(vec!["phi2".into(), num(fit.phi2_hat), String::new(), String::new(), String::new()]);
    rows
}

pub const COEFFICIENT_HEADER: [&str; 5] = ["parameter", "estimate", "ci_low", "ci_high", "se"];
