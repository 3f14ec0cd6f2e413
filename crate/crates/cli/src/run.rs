//! Command implementations.

use chrono::NaiveDate;
use cvaropt::backtest::{
    self, BacktestError, BacktestOptions, RebalanceSchedule, Strategy,
};
use cvaropt::data::{parse_returns_csv, ReturnPanel};
use cvaropt::problems;
use cvaropt::solver::{self, SolveStatus};
use cvaropt::theory;
use ndarray::Array1;
use serde::Serialize;
use std::path::Path;

use crate::config::{DataConfig, RunConfig};
use crate::output::{hash_file, to_pretty_json, write_atomic, PanelHash, Provenance};
use crate::CliError;

fn load_panel(path: &Path, data: &DataConfig) -> Result<ReturnPanel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {path:?}: {e}")))?;
    parse_returns_csv(&text, data.layout, data.missing)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn data_config(cfg: &RunConfig) -> Result<&DataConfig, CliError> {
    cfg.data
        .as_ref()
        .ok_or_else(|| CliError::Validation("config has no `data` section".into()))
}

fn estimation_panel(cfg: &RunConfig) -> Result<(ReturnPanel, PanelHash), CliError> {
    let data = data_config(cfg)?;
    let path = data.estimation_panel.as_ref().ok_or_else(|| {
        CliError::Validation("config has no `data.estimation_panel`".into())
    })?;
    Ok((load_panel(path, data)?, hash_file(path)?))
}

fn evaluation_panel(cfg: &RunConfig) -> Result<(ReturnPanel, PanelHash), CliError> {
    let data = data_config(cfg)?;
    let path = data.evaluation_panel.as_ref().ok_or_else(|| {
        CliError::Validation("config has no `data.evaluation_panel`".into())
    })?;
    Ok((load_panel(path, data)?, hash_file(path)?))
}

fn map_backtest_error(e: BacktestError) -> CliError {
    match e {
        BacktestError::SolverFailed { .. } | BacktestError::BuildFailed { .. } => {
            CliError::Solver(e.to_string())
        }
        BacktestError::Data(_) | BacktestError::AssetMissing(_) => CliError::Data(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

#[derive(Serialize)]
struct SolverSection {
    status: SolveStatus,
    iterations: usize,
    objective: f64,
    residuals: solver::Residuals,
    certificate_residual: Option<f64>,
}

#[derive(Serialize)]
struct OptimizeOutput {
    provenance: Provenance,
    strategy: String,
    as_of: NaiveDate,
    estimation_cutoff: Option<NaiveDate>,
    assets: Vec<String>,
    weights: Option<Vec<f64>>,
    objective: Option<f64>,
    deviation: Option<f64>,
    alphas: Option<Vec<f64>>,
    baseline_betas: Vec<f64>,
    baselines: Vec<f64>,
    delta: Option<f64>,
    confidence: Option<f64>,
    solver: Option<SolverSection>,
}

pub fn cmd_optimize(
    config_path: &Path,
    as_of_flag: Option<NaiveDate>,
    trace: bool,
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let opt = cfg
        .optimize
        .as_ref()
        .ok_or_else(|| CliError::Validation("config has no `optimize` section".into()))?;
    let as_of = as_of_flag
        .or(opt.as_of)
        .ok_or_else(|| CliError::Validation("no as-of date (flag or optimize.as_of)".into()))?;
    if cfg.strategies.is_empty() {
        return Err(CliError::Validation("config lists no strategies".into()));
    }
    let (est, est_hash) = estimation_panel(&cfg)?;
    let mut solver_settings = cfg.solver.clone();
    solver_settings.collect_trace = trace;

    let mut failures = Vec::new();
    for strategy in &cfg.strategies {
        let provenance = Provenance {
            config: cfg.to_value(),
            inputs: vec![est_hash.clone()],
        };
        let file_stem = format!("optimize-{}", strategy.id());
        let out = match strategy {
            Strategy::EqualWeight => OptimizeOutput {
                provenance,
                strategy: strategy.id(),
                as_of,
                estimation_cutoff: None,
                assets: est.assets().to_vec(),
                weights: Some(vec![1.0 / est.num_assets() as f64; est.num_assets()]),
                objective: None,
                deviation: None,
                alphas: None,
                baseline_betas: vec![],
                baselines: vec![],
                delta: None,
                confidence: None,
                solver: None,
            },
            _ => {
                // Estimate on data up to and including the as-of date.
                let idx = est.dates().partition_point(|d| *d <= as_of);
                if idx == 0 {
                    return Err(CliError::Validation(format!(
                        "no estimation data at or before {as_of}"
                    )));
                }
                let cutoff = est.dates()[idx - 1];
                let window = est
                    .window(cutoff, opt.estimation_span)
                    .map_err(|e| CliError::Data(e.to_string()))?;
                let inputs =
                    backtest::build_strategy_program(strategy, &window, &solver_settings)
                        .map_err(|e| CliError::Solver(e.to_string()))?;
                let result = solver::solve(&inputs.program, &solver_settings)
                    .map_err(|e| CliError::Validation(e.to_string()))?;
                if trace {
                    let mut lines = String::new();
                    for t in &result.trace {
                        lines.push_str(&serde_json::to_string(t).expect("trace serializes"));
                        lines.push('\n');
                    }
                    write_atomic(&cfg.output_dir, &format!("{file_stem}.trace.jsonl"), &lines)?;
                }
                let sol = problems::decode(&result, &inputs.program)
                    .map_err(|e| CliError::Solver(e.to_string()))?;
                if sol.status != SolveStatus::Optimal {
                    failures.push(format!("{}: {:?}", strategy.id(), sol.status));
                }
                let confidence = match strategy {
                    Strategy::DrMultiCvar { uncertainty, .. } => uncertainty.confidence,
                    _ => None,
                };
                OptimizeOutput {
                    provenance,
                    strategy: strategy.id(),
                    as_of,
                    estimation_cutoff: Some(cutoff),
                    assets: est.assets().to_vec(),
                    weights: sol
                        .weights
                        .as_ref()
                        .map(|w| w.as_slice().to_vec()),
                    objective: Some(sol.objective_value),
                    deviation: sol.deviation,
                    alphas: sol.alphas.clone(),
                    baseline_betas: inputs
                        .ladder
                        .as_ref()
                        .map(|l| l.betas().to_vec())
                        .unwrap_or_default(),
                    baselines: inputs
                        .ladder
                        .as_ref()
                        .map(|l| l.baselines().to_vec())
                        .unwrap_or_default(),
                    delta: inputs.delta,
                    confidence,
                    solver: Some(SolverSection {
                        status: sol.status,
                        iterations: result.iterations,
                        objective: result.objective,
                        residuals: result.residuals,
                        certificate_residual: result.certificate_residual,
                    }),
                }
            }
        };
        let path = write_atomic(
            &cfg.output_dir,
            &format!("{file_stem}.json"),
            &to_pretty_json(&out),
        )?;
        println!("wrote {}", path.display());
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Solver(format!(
            "non-optimal solves: {}",
            failures.join(", ")
        )))
    }
}

#[derive(Serialize)]
struct BacktestOutput {
    provenance: Provenance,
    report: backtest::BacktestReport,
}

pub fn cmd_backtest(config_path: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let bt = cfg
        .backtest
        .as_ref()
        .ok_or_else(|| CliError::Validation("config has no `backtest` section".into()))?;
    if cfg.strategies.is_empty() {
        return Err(CliError::Validation("config lists no strategies".into()));
    }
    let (eval, eval_hash) = evaluation_panel(&cfg)?;
    let needs_est = cfg.strategies.iter().any(Strategy::needs_estimation);
    let (est, mut hashes) = if needs_est {
        let (p, h) = estimation_panel(&cfg)?;
        (p, vec![h])
    } else {
        (eval.clone(), vec![])
    };
    hashes.push(eval_hash);

    let options = BacktestOptions {
        solver: cfg.solver.clone(),
        on_solver_failure: bt.on_solver_failure,
    };

    let mut csv = String::from(backtest::BacktestReport::CSV_HEADER);
    csv.push('\n');
    for strategy in &cfg.strategies {
        let schedule = RebalanceSchedule::monthly(
            &eval,
            bt.start,
            bt.end,
            bt.estimation_span,
            strategy.clone(),
        )
        .map_err(map_backtest_error)?;
        let report =
            backtest::run_backtest(&schedule, &est, &eval, &options).map_err(map_backtest_error)?;
        csv.push_str(&report.metrics_csv_row());
        csv.push('\n');
        let out = BacktestOutput {
            provenance: Provenance {
                config: cfg.to_value(),
                inputs: hashes.clone(),
            },
            report,
        };
        let path = write_atomic(
            &cfg.output_dir,
            &format!("backtest-{}.json", strategy.id()),
            &to_pretty_json(&out),
        )?;
        println!("wrote {}", path.display());
    }
    let path = write_atomic(&cfg.output_dir, "backtest-metrics.csv", &csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct TheoryOutput {
    provenance: Provenance,
    seed: u64,
    rows: Vec<theory::ExcessRiskTrial>,
}

pub fn cmd_theory(config_path: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let th = cfg
        .theory
        .as_ref()
        .ok_or_else(|| CliError::Validation("config has no `theory` section".into()))?;
    let n = th.mu.len();
    let sigma = th.sigma.to_matrix(n)?;
    let experiment = theory::ExperimentConfig {
        spec: theory::GaussianSpec {
            mu: Array1::from(th.mu.clone()),
            sigma,
        },
        q_grid: th.q_grid.clone(),
        trials: th.trials,
        confidence_delta: th.confidence_delta,
        seed: cfg.seed,
        variant: th.variant,
        reference: theory::ReferenceConfig {
            q_ref: th.reference.q_ref,
            betas: th.reference.betas.clone(),
        },
        solver: cfg.solver.clone(),
    };
    let rows = theory::excess_risk_experiment(&experiment).map_err(|e| match e {
        theory::TheoryError::Problem(p) => CliError::Solver(p.to_string()),
        theory::TheoryError::ReferenceSolveFailed(_) | theory::TheoryError::TrueSolveFailed(_) => {
            CliError::Solver(e.to_string())
        }
        theory::TheoryError::SampleOutOfRange { .. } | theory::TheoryError::Data(_) => {
            CliError::Data(e.to_string())
        }
        other => CliError::Validation(other.to_string()),
    })?;
    let csv = theory::trials_to_csv(&rows);
    let path = write_atomic(&cfg.output_dir, "theory.csv", &csv)?;
    println!("wrote {}", path.display());
    let out = TheoryOutput {
        provenance: Provenance {
            config: cfg.to_value(),
            inputs: vec![],
        },
        seed: cfg.seed,
        rows,
    };
    let path = write_atomic(&cfg.output_dir, "theory.json", &to_pretty_json(&out))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_validate_data(config_path: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let data = data_config(&cfg)?;
    let mut any = false;
    for (tag, path) in [
        ("estimation", &data.estimation_panel),
        ("evaluation", &data.evaluation_panel),
    ] {
        if let Some(path) = path {
            any = true;
            let panel = load_panel(path, data)?;
            let hash = hash_file(path)?;
            println!(
                "{tag}: {} rows x {} assets, {:?}, {}..{}, sha256 {}",
                panel.num_obs(),
                panel.num_assets(),
                panel.frequency(),
                panel.dates().first().unwrap(),
                panel.dates().last().unwrap(),
                hash.sha256
            );
        }
    }
    if !any {
        return Err(CliError::Validation(
            "config references no data panels".into(),
        ));
    }
    Ok(())
}
