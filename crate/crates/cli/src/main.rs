use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixtsql_cli::{run, Command, RunConfig};

/// Bivariate mixed-valued time series models fitted by quasi-likelihood.
#[derive(Parser)]
#[command(name = "mixtsql", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the model by QMLE with sandwich standard errors
    Fit(RunConfig),
    /// Quasi-likelihood-ratio Granger causality test
    Granger(RunConfig),
    /// Simulate one trajectory from a preset or a configured model
    Simulate(RunConfig),
    /// Pseudo-parametric bootstrap standard errors
    Bootstrap(RunConfig),
    /// Monte Carlo study: simulate, fit and summarize
    McStudy(RunConfig),
    /// Correlograms, residual checks and PIT histograms
    Diagnose(RunConfig),
    /// One-step-ahead forecasts with an expanding window
    Forecast(RunConfig),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MIXTSQL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // ignore failure: a pool may already exist
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (command, cfg) = match cli.command {
        Cmd::Fit(c) => (Command::Fit, c),
        Cmd::Granger(c) => (Command::Granger, c),
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Bootstrap(c) => (Command::Bootstrap, c),
        Cmd::McStudy(c) => (Command::McStudy, c),
        Cmd::Diagnose(c) => (Command::Diagnose, c),
        Cmd::Forecast(c) => (Command::Forecast, c),
    };
    match run(command, cfg) {
        Ok(files) => {
            let files: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
            println!("{}", serde_json::json!({ "status": "ok", "artifacts": files }));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
