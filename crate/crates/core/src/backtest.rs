//! Rolling-rebalance simulation and the summary measures: turnover (TO),
//! annualized return (AR), annualized risk (RISK), return/risk (R/R),
//! maximum drawdown (MaxDD), and Calmar ratio (CR).
//!
//! Timeline convention: a weight vector is dated at its *decision* date
//! (the estimation cutoff), strictly before the first return period it
//! earns. An evaluation row dated `d` is earned by the most recent weights
//! dated strictly before `d`, which rules out look-ahead structurally.

use chrono::NaiveDate;
use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cvar::{CvarError, PortfolioWeights};
use crate::data::{DataError, Frequency, ReturnPanel, Span};
use crate::estimators::{self, EstimatorError, UncertaintyConfig};
use crate::problems::{self, ProblemError};
use crate::solver::{SolveStatus, SolverSettings};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("need at least {need} {what}, got {got}")]
    TooFew {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("weight history dates must be strictly increasing")]
    WeightsNotSorted,
    #[error("look-ahead: weights dated {0} coincide with a return period")]
    LookAhead(NaiveDate),
    #[error("no return period follows the weights dated {0}")]
    DanglingWeights(NaiveDate),
    #[error("portfolio wiped out on {0} (1 + w'r <= 0)")]
    WipedOut(NaiveDate),
    #[error("evaluation asset `{0}` missing from the estimation panel")]
    AssetMissing(String),
    #[error("no estimation data strictly before rebalance date {0}")]
    NoEstimationHistory(NaiveDate),
    #[error("rebalance {date}: solver ended {status:?}")]
    SolverFailed { date: NaiveDate, status: SolveStatus },
    #[error("rebalance {date}: {source}")]
    BuildFailed {
        date: NaiveDate,
        source: ProblemError,
    },
    #[error("schedule has no rebalance dates inside the evaluation panel")]
    EmptySchedule,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cvar(#[from] CvarError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Portfolio construction rule applied at each rebalance.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(tag = "name")]
pub enum Strategy {
    #[serde(rename = "EW")]
    EqualWeight,
    #[serde(rename = "mean-CVaR")]
    MeanCvar { beta: f64 },
    #[serde(rename = "mean-MCVaR")]
    MeanMultiCvar { betas: Vec<f64> },
    #[serde(rename = "DR-MCVaR")]
    DrMultiCvar {
        betas: Vec<f64>,
        uncertainty: UncertaintyConfig,
    },
}

impl Strategy {
    pub fn needs_estimation(&self) -> bool {
        !matches!(self, Strategy::EqualWeight)
    }

    /// Short identifier used in report filenames and CSV rows.
    pub fn id(&self) -> String {
        match self {
            Strategy::EqualWeight => "EW".into(),
            Strategy::MeanCvar { beta } => format!("mean-CVaR-{beta}"),
            Strategy::MeanMultiCvar { .. } => "mean-MCVaR".into(),
            Strategy::DrMultiCvar { uncertainty, .. } => {
                let tag = match (uncertainty.delta, uncertainty.confidence) {
                    (Some(d), _) => format!("delta{d}"),
                    (None, Some(c)) => format!("conf{c}"),
                    _ => "none".into(),
                };
                format!("DR-MCVaR-{:?}-{tag}", uncertainty.shape).to_lowercase()
            }
        }
    }
}

/// What to do when a rebalance solve does not come back optimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverFailurePolicy {
    #[default]
    Abort,
    HoldPrevious,
}

/// Rebalance dates (the evaluation periods to trade into), the trailing
/// estimation span, and the strategy.
#[derive(Debug, Clone)]
pub struct RebalanceSchedule {
    pub rebalance_dates: Vec<NaiveDate>,
    pub estimation_span: Span,
    pub strategy: Strategy,
}

impl RebalanceSchedule {
    /// Monthly schedule over every evaluation period in `[start, end]`.
    pub fn monthly(
        evaluation: &ReturnPanel,
        start: NaiveDate,
        end: NaiveDate,
        estimation_span: Span,
        strategy: Strategy,
    ) -> Result<Self, BacktestError> {
        let dates: Vec<NaiveDate> = evaluation
            .dates()
            .iter()
            .copied()
            .filter(|d| *d >= start && *d <= end)
            .collect();
        if dates.is_empty() {
            return Err(BacktestError::EmptySchedule);
        }
        Ok(Self {
            rebalance_dates: dates,
            estimation_span,
            strategy,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryMetrics {
    /// One-way annualized turnover.
    pub turnover: Option<f64>,
    pub annualized_return: f64,
    pub risk: f64,
    /// AR / RISK; absent when the risk is zero.
    pub return_over_risk: Option<f64>,
    /// Largest peak-to-trough wealth decline, in [-1, 0].
    pub max_drawdown: f64,
    /// AR / |MaxDD|; absent when the drawdown is zero.
    pub calmar_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightRecord {
    pub date: NaiveDate,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BacktestReport {
    pub strategy: String,
    pub weight_history: Vec<WeightRecord>,
    pub realized_dates: Vec<NaiveDate>,
    pub realized_returns: Vec<f64>,
    pub metrics: SummaryMetrics,
    pub periods_per_year: u32,
    /// Provenance notes (evaluation source, failure policy, held rebalances).
    pub metadata: Vec<String>,
}

impl BacktestReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// One CSV row matching the summary-table layout.
    pub fn metrics_csv_row(&self) -> String {
        fn fmt(v: Option<f64>) -> String {
            v.map_or(String::new(), |x| format!("{x:.6}"))
        }
        format!(
            "{},{},{:.6},{:.6},{},{:.6},{}",
            self.strategy,
            fmt(self.metrics.turnover),
            self.metrics.annualized_return,
            self.metrics.risk,
            fmt(self.metrics.return_over_risk),
            self.metrics.max_drawdown,
            fmt(self.metrics.calmar_ratio),
        )
    }

    pub const CSV_HEADER: &'static str = "strategy,TO,AR,RISK,R/R,MaxDD,CR";
}

/// Drift weights through one period of returns and renormalize:
/// `(w ⊙ (1+r)) / (1 + w'r)`.
pub fn pre_rebalance_weights(
    w_prev: &PortfolioWeights,
    r_t: ArrayView1<f64>,
) -> Result<Array1<f64>, BacktestError> {
    assert_eq!(w_prev.len(), r_t.len());
    let growth = 1.0
        + w_prev
            .as_slice()
            .iter()
            .zip(r_t.iter())
            .map(|(w, r)| w * r)
            .sum::<f64>();
    if growth <= 0.0 {
        return Err(BacktestError::WipedOut(NaiveDate::MIN));
    }
    let mut out = Array1::<f64>::zeros(w_prev.len());
    for (i, (w, r)) in w_prev.as_slice().iter().zip(r_t.iter()).enumerate() {
        out[i] = w * (1.0 + r) / growth;
    }
    Ok(out)
}

fn l1_distance(a: &[f64], b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

fn validate_weight_dates(weights: &[(NaiveDate, PortfolioWeights)]) -> Result<(), BacktestError> {
    for pair in weights.windows(2) {
        if pair[1].0 <= pair[0].0 {
            return Err(BacktestError::WeightsNotSorted);
        }
    }
    Ok(())
}

/// One-way annualized turnover: rebalancing trade volume against the
/// drift-adjusted previous weights, averaged over rebalances and scaled by
/// `periods_per_year / 2`.
pub fn turnover(
    weights: &[(NaiveDate, PortfolioWeights)],
    panel: &ReturnPanel,
    periods_per_year: u32,
) -> Result<f64, BacktestError> {
    if weights.len() < 2 {
        return Err(BacktestError::TooFew {
            what: "rebalances",
            need: 2,
            got: weights.len(),
        });
    }
    validate_weight_dates(weights)?;
    let t = weights.len();
    let mut total = 0.0;
    for i in 1..t {
        let (prev_date, prev_w) = &weights[i - 1];
        let (next_date, next_w) = &weights[i];
        // Drift the held portfolio through every return period between the
        // two decisions.
        let mut drifted = Array1::from(prev_w.as_slice().to_vec());
        for (di, d) in panel.dates().iter().enumerate() {
            if *d > *prev_date && *d <= *next_date {
                let held = PortfolioWeights::new(drifted.to_vec())?;
                drifted = pre_rebalance_weights(&held, panel.returns().row(di))
                    .map_err(|_| BacktestError::WipedOut(*d))?;
            }
        }
        total += l1_distance(next_w.as_slice(), &drifted);
    }
    Ok(f64::from(periods_per_year) / (2.0 * (t - 1) as f64) * total)
}

/// Realized portfolio returns: each evaluation period is earned by the most
/// recent weights dated strictly before it.
pub fn realized_returns(
    weights: &[(NaiveDate, PortfolioWeights)],
    panel: &ReturnPanel,
) -> Result<(Vec<NaiveDate>, Vec<f64>), BacktestError> {
    if weights.is_empty() {
        return Err(BacktestError::TooFew {
            what: "weight records",
            need: 1,
            got: 0,
        });
    }
    validate_weight_dates(weights)?;
    for (wd, _) in weights {
        if panel.dates().contains(wd) {
            return Err(BacktestError::LookAhead(*wd));
        }
    }
    let first = weights[0].0;
    let mut dates = Vec::new();
    let mut returns = Vec::new();
    for (di, d) in panel.dates().iter().enumerate() {
        if *d <= first {
            continue;
        }
        let idx = weights.partition_point(|(wd, _)| *wd < *d) - 1;
        let w = &weights[idx].1;
        let r = panel.returns().row(di);
        let ret: f64 = w
            .as_slice()
            .iter()
            .zip(r.iter())
            .map(|(wi, ri)| wi * ri)
            .sum();
        dates.push(*d);
        returns.push(ret);
    }
    let last_weight = weights.last().unwrap().0;
    if dates.last().map_or(true, |d| *d <= last_weight) {
        return Err(BacktestError::DanglingWeights(last_weight));
    }
    Ok((dates, returns))
}

/// AR, RISK, R/R, MaxDD, and CR of a realized return series.
pub fn summary_metrics(
    returns: &[f64],
    periods_per_year: u32,
) -> Result<SummaryMetrics, BacktestError> {
    let t = returns.len();
    if t < 2 {
        return Err(BacktestError::TooFew {
            what: "periods",
            need: 2,
            got: t,
        });
    }
    let ppy = f64::from(periods_per_year);
    let tf = t as f64;
    let growth: f64 = returns.iter().map(|r| 1.0 + r).product();
    let ar = growth.powf(ppy / tf) - 1.0;
    let mean = returns.iter().sum::<f64>() / tf;
    let ss: f64 = returns.iter().map(|r| (r - mean) * (r - mean)).sum();
    let risk = (ppy / (tf - 1.0) * ss).sqrt();

    let mut wealth = 1.0;
    let mut peak = 1.0f64;
    let mut maxdd = 0.0f64;
    for r in returns {
        wealth *= 1.0 + r;
        peak = peak.max(wealth);
        maxdd = maxdd.min(wealth / peak - 1.0);
    }

    let rr = if risk > 0.0 { Some(ar / risk) } else { None };
    let cr = if maxdd < 0.0 {
        Some(ar / maxdd.abs())
    } else {
        None
    };
    Ok(SummaryMetrics {
        turnover: None,
        annualized_return: ar,
        risk,
        return_over_risk: rr,
        max_drawdown: maxdd,
        calmar_ratio: cr,
    })
}

#[derive(Debug, Clone, Default)]
pub struct BacktestOptions {
    pub solver: SolverSettings,
    pub on_solver_failure: SolverFailurePolicy,
}

/// Reorder estimation-panel columns to the evaluation universe, joining by
/// asset identifier.
fn align_assets(
    estimation: &ReturnPanel,
    evaluation: &ReturnPanel,
) -> Result<ReturnPanel, BacktestError> {
    if estimation.assets() == evaluation.assets() {
        return Ok(estimation.clone());
    }
    let mut perm = Vec::with_capacity(evaluation.num_assets());
    for a in evaluation.assets() {
        let idx = estimation
            .assets()
            .iter()
            .position(|e| e == a)
            .ok_or_else(|| BacktestError::AssetMissing(a.clone()))?;
        perm.push(idx);
    }
    let q = estimation.num_obs();
    let mut returns = ndarray::Array2::<f64>::zeros((q, perm.len()));
    for (new_col, &old_col) in perm.iter().enumerate() {
        returns
            .column_mut(new_col)
            .assign(&estimation.returns().column(old_col));
    }
    Ok(ReturnPanel::new(
        estimation.dates().to_vec(),
        evaluation.assets().to_vec(),
        returns,
        estimation.frequency(),
    )?)
}

/// Everything the strategy compilation derived from the estimation window,
/// for reporting alongside the solved program.
#[derive(Debug, Clone)]
pub struct StrategyInputs {
    pub program: crate::problems::ConicProgram,
    pub mu_hat: ndarray::Array1<f64>,
    pub required_return: Option<f64>,
    pub ladder: Option<crate::problems::CVaRLadder>,
    pub delta: Option<f64>,
}

/// Compile an estimating strategy on one estimation window following the
/// experimental protocol: sample-mean expected returns, required return set
/// to their cross-sectional average, ladder baselines solved per level.
pub fn build_strategy_program(
    strategy: &Strategy,
    window: &ReturnPanel,
    settings: &SolverSettings,
) -> Result<StrategyInputs, ProblemError> {
    let est = estimators::estimate_mean(window)?;
    let mu = est.mu_hat().clone();
    match strategy {
        Strategy::EqualWeight => panic!("equal-weight strategy bypasses the solver"),
        Strategy::MeanCvar { beta } => {
            let c = estimators::required_return(&mu);
            let program = problems::build_mean_cvar(*beta, window, &mu, c)?;
            Ok(StrategyInputs {
                program,
                mu_hat: mu,
                required_return: Some(c),
                ladder: None,
                delta: None,
            })
        }
        Strategy::MeanMultiCvar { betas } => {
            let ladder = problems::solve_baselines(betas, window, settings)?;
            let program = problems::build_mean_multi_cvar(&ladder, window, &mu)?;
            Ok(StrategyInputs {
                program,
                mu_hat: mu,
                required_return: None,
                ladder: Some(ladder),
                delta: None,
            })
        }
        Strategy::DrMultiCvar { betas, uncertainty } => {
            let ladder = problems::solve_baselines(betas, window, settings)?;
            let delta = uncertainty.resolve_delta(window.num_assets())?;
            let program = match uncertainty.shape {
                estimators::UncertaintyShape::Rectangular => {
                    problems::build_dr_mcvar_rectangular(&ladder, window, &mu, delta)?
                }
                _ => problems::build_dr_mcvar_ellipsoidal(&ladder, window, &est, delta)?,
            };
            Ok(StrategyInputs {
                program,
                mu_hat: mu,
                required_return: None,
                ladder: Some(ladder),
                delta: Some(delta),
            })
        }
    }
}

fn solve_strategy_weights(
    strategy: &Strategy,
    window: &ReturnPanel,
    settings: &SolverSettings,
) -> Result<PortfolioWeights, (Option<SolveStatus>, ProblemError)> {
    let inputs =
        build_strategy_program(strategy, window, settings).map_err(|e| (None, e))?;
    let sol = problems::solve_portfolio(&inputs.program, settings).map_err(|e| (None, e))?;
    match sol.weights {
        Some(w) => Ok(w),
        None => Err((Some(sol.status), ProblemError::LabelMissing("weights"))),
    }
}

/// Run the rolling backtest: at each rebalance date, estimate on the
/// trailing window (cut strictly before the period being traded into),
/// solve the strategy's program, then score the realized series.
///
/// Rebalance solves are independent given the frozen data and run in
/// parallel; report assembly is an ordered reduction.
pub fn run_backtest(
    schedule: &RebalanceSchedule,
    estimation: &ReturnPanel,
    evaluation: &ReturnPanel,
    options: &BacktestOptions,
) -> Result<BacktestReport, BacktestError> {
    if schedule.rebalance_dates.len() < 2 {
        return Err(BacktestError::TooFew {
            what: "rebalances",
            need: 2,
            got: schedule.rebalance_dates.len(),
        });
    }
    let n = evaluation.num_assets();
    let mut metadata = vec![
        format!("evaluation_frequency: {:?}", evaluation.frequency()),
        format!("failure_policy: {:?}", options.on_solver_failure),
        "evaluation_source: evaluation panel rows (not compounded estimation data)".to_string(),
    ];

    let mut weights: Vec<(NaiveDate, PortfolioWeights)> = Vec::new();
    if schedule.strategy.needs_estimation() {
        let est_aligned = align_assets(estimation, evaluation)?;
        // Estimation cutoff per rebalance: latest estimation date strictly
        // before the period traded into.
        let mut cutoffs: Vec<NaiveDate> = Vec::with_capacity(schedule.rebalance_dates.len());
        for d in &schedule.rebalance_dates {
            let idx = est_aligned.dates().partition_point(|ed| ed < d);
            if idx == 0 {
                return Err(BacktestError::NoEstimationHistory(*d));
            }
            let cutoff = est_aligned.dates()[idx - 1];
            // A repeated cutoff means the estimation panel ran out of data
            // between rebalances.
            if cutoffs.last().is_some_and(|prev| *prev >= cutoff) {
                return Err(BacktestError::NoEstimationHistory(*d));
            }
            cutoffs.push(cutoff);
        }
        let solves: Vec<(NaiveDate, Result<PortfolioWeights, BacktestError>)> = schedule
            .rebalance_dates
            .par_iter()
            .zip(cutoffs.par_iter())
            .map(|(d, cutoff)| {
                let out = est_aligned
                    .window(*cutoff, schedule.estimation_span)
                    .map_err(BacktestError::Data)
                    .and_then(|window| {
                        solve_strategy_weights(&schedule.strategy, &window, &options.solver)
                            .map_err(|(status, source)| match status {
                                Some(status) => BacktestError::SolverFailed { date: *d, status },
                                None => BacktestError::BuildFailed { date: *d, source },
                            })
                    });
                (*cutoff, out)
            })
            .collect();
        let mut held = 0usize;
        for (cutoff, res) in solves {
            match res {
                Ok(w) => weights.push((cutoff, w)),
                Err(e) => match options.on_solver_failure {
                    SolverFailurePolicy::Abort => return Err(e),
                    SolverFailurePolicy::HoldPrevious => {
                        let prev = weights.last().map(|(_, w)| w.clone()).ok_or(e)?;
                        weights.push((cutoff, prev));
                        held += 1;
                    }
                },
            }
        }
        if held > 0 {
            metadata.push(format!("held_rebalances: {held}"));
        }
    } else {
        for d in &schedule.rebalance_dates {
            let decision = *d - chrono::Days::new(1);
            weights.push((decision, PortfolioWeights::equal(n)?));
        }
    }

    // Score only the scheduled out-of-sample periods.
    let first_period = schedule.rebalance_dates[0];
    let last_period = *schedule.rebalance_dates.last().unwrap();
    let keep: Vec<usize> = (0..evaluation.num_obs())
        .filter(|&i| {
            let d = evaluation.dates()[i];
            d >= first_period && d <= last_period
        })
        .collect();
    let mut eval_returns = ndarray::Array2::<f64>::zeros((keep.len(), n));
    let mut eval_dates = Vec::with_capacity(keep.len());
    for (row, &src) in keep.iter().enumerate() {
        eval_returns
            .row_mut(row)
            .assign(&evaluation.returns().row(src));
        eval_dates.push(evaluation.dates()[src]);
    }
    let eval_panel = ReturnPanel::new(
        eval_dates,
        evaluation.assets().to_vec(),
        eval_returns,
        evaluation.frequency(),
    )?;

    let (realized_dates, realized) = realized_returns(&weights, &eval_panel)?;
    let periods_per_year = match evaluation.frequency() {
        Frequency::Monthly => 12,
        Frequency::Daily => 252,
    };
    let mut metrics = summary_metrics(&realized, periods_per_year)?;
    metrics.turnover = Some(turnover(&weights, &eval_panel, periods_per_year)?);

    Ok(BacktestReport {
        strategy: schedule.strategy.id(),
        weight_history: weights
            .into_iter()
            .map(|(date, w)| WeightRecord {
                date,
                weights: w.as_slice().to_vec(),
            })
            .collect(),
        realized_dates,
        realized_returns: realized,
        metrics,
        periods_per_year,
        metadata,
    })
}
