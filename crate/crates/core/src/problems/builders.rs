//! Builders for the portfolio formulations, all compiled to the standard
//! conic form of [`program::ConicProgram`]:
//!
//! - min-CVaR and mean-CVaR (linear programs),
//! - mean-multiple-CVaR with a deviation budget `d` shared across levels,
//! - doubly robust mean-CVaR: ellipsoidal uncertainty adds one epigraph
//!   variable and a second-order cone block for the penalty
//!   `delta * sqrt(w' Sigma w)`; rectangular uncertainty stays a pure LP
//!   (the box worst case shifts the return coefficients by `delta`).
//!
//! Inequalities `g(x) <= h` become rows `g(x) + s = h` with nonnegative
//! slack; the budget `sum w = 1` is a zero-cone row.

use ndarray::Array1;
use thiserror::Error;

use crate::cvar::{CvarError, PortfolioWeights};
use crate::data::ReturnPanel;
use crate::estimators::{EstimatorError, MeanEstimate};
use crate::problems::program::{ConeBlock, ConicProgram, ProgramError, VariableLabels};
use crate::solver::{self, Residuals, SolveStatus, SolverError, SolverResult, SolverSettings};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("beta {0} outside (0, 1)")]
    InvalidBeta(f64),
    #[error("betas must be strictly increasing: {prev} then {next}")]
    BetasNotIncreasing { prev: f64, next: f64 },
    #[error("ladder is empty")]
    EmptyLadder,
    #[error("ladder has {betas} betas but {baselines} baselines")]
    LadderLengthMismatch { betas: usize, baselines: usize },
    #[error("delta must be nonnegative, got {0}")]
    NegativeDelta(f64),
    #[error("mu has {mu} entries, panel has {panel} assets")]
    MuDimensionMismatch { mu: usize, panel: usize },
    #[error("baseline solve at beta {beta} ended {status:?}")]
    BaselineSolveFailed { beta: f64, status: SolveStatus },
    #[error("variable label `{0}` missing from program")]
    LabelMissing(&'static str),
    #[error("decoded weights drift {0:e} from the budget; solver failure")]
    WeightDrift(f64),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Cvar(#[from] CvarError),
}

fn check_beta(beta: f64) -> Result<(), ProblemError> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(ProblemError::InvalidBeta(beta))
    }
}

/// Probability levels with their solved minimum-CVaR baselines.
#[derive(Debug, Clone)]
pub struct CVaRLadder {
    betas: Vec<f64>,
    baselines: Vec<f64>,
    statuses: Vec<SolveStatus>,
}

impl CVaRLadder {
    /// Ladder from externally supplied baselines (tests, replays). Betas
    /// must be strictly increasing in (0, 1).
    pub fn from_values(betas: Vec<f64>, baselines: Vec<f64>) -> Result<Self, ProblemError> {
        let statuses = vec![SolveStatus::Optimal; betas.len()];
        Self::validated(betas, baselines, statuses)
    }

    fn validated(
        betas: Vec<f64>,
        baselines: Vec<f64>,
        statuses: Vec<SolveStatus>,
    ) -> Result<Self, ProblemError> {
        if betas.is_empty() {
            return Err(ProblemError::EmptyLadder);
        }
        if betas.len() != baselines.len() {
            return Err(ProblemError::LadderLengthMismatch {
                betas: betas.len(),
                baselines: baselines.len(),
            });
        }
        for &b in &betas {
            check_beta(b)?;
        }
        for pair in betas.windows(2) {
            if pair[1] <= pair[0] {
                return Err(ProblemError::BetasNotIncreasing {
                    prev: pair[0],
                    next: pair[1],
                });
            }
        }
        Ok(Self {
            betas,
            baselines,
            statuses,
        })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn baselines(&self) -> &[f64] {
        &self.baselines
    }

    pub fn statuses(&self) -> &[SolveStatus] {
        &self.statuses
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }
}

/// Decoded portfolio solution.
#[derive(Debug, Clone)]
pub struct PortfolioSolution {
    /// Present only on optimal exits.
    pub weights: Option<PortfolioWeights>,
    pub objective_value: f64,
    pub deviation: Option<f64>,
    pub alphas: Option<Vec<f64>>,
    pub status: SolveStatus,
    pub kkt_residuals: Residuals,
    pub warnings: Vec<String>,
}

fn hinge_coef(q: usize, beta: f64) -> f64 {
    1.0 / (q as f64 * (1.0 - beta))
}

/// Problem: minimize the empirical CVaR at a single level over the
/// long-only budget simplex.
///
/// Variables `(w, alpha, u_1..u_Q)`; constraints `u_q >= -w'r[q] - alpha`,
/// `u_q >= 0`, `sum w = 1`, `w >= 0`; objective
/// `alpha + (Q(1-beta))^-1 sum u_q`.
pub fn build_min_cvar(beta: f64, panel: &ReturnPanel) -> Result<ConicProgram, ProblemError> {
    check_beta(beta)?;
    let n = panel.num_assets();
    let q = panel.num_obs();
    let r = panel.returns();

    let alpha_ix = n;
    let u_base = n + 1;
    let num_vars = n + 1 + q;

    let mut objective = vec![0.0; num_vars];
    objective[alpha_ix] = 1.0;
    let coef = hinge_coef(q, beta);
    for qi in 0..q {
        objective[u_base + qi] = coef;
    }

    let mut rows = Vec::with_capacity(1 + n + 2 * q);
    let mut rhs = Vec::with_capacity(rows.capacity());

    // Budget.
    rows.push((0..n).map(|j| (j, 1.0)).collect());
    rhs.push(1.0);
    // Long-only.
    for j in 0..n {
        rows.push(vec![(j, -1.0)]);
        rhs.push(0.0);
    }
    // u >= 0.
    for qi in 0..q {
        rows.push(vec![(u_base + qi, -1.0)]);
        rhs.push(0.0);
    }
    // Hinges: -w'r[q] - alpha - u_q <= 0.
    for qi in 0..q {
        let mut row: Vec<(usize, f64)> = (0..n).map(|j| (j, -r[[qi, j]])).collect();
        row.push((alpha_ix, -1.0));
        row.push((u_base + qi, -1.0));
        rows.push(row);
        rhs.push(0.0);
    }

    let cones = vec![ConeBlock::Zero(1), ConeBlock::NonNeg(n + 2 * q)];
    let prog = ConicProgram {
        num_vars,
        objective,
        rows,
        rhs,
        cones,
        labels: VariableLabels {
            weights: (0..n).collect(),
            alphas: vec![alpha_ix],
            deviation: None,
            hinges: vec![(u_base, q)],
            soc_epigraph: None,
        },
        warnings: vec![],
    };
    prog.validate()?;
    Ok(prog)
}

/// Problem: min-CVaR plus the required-return row `mu'w >= c`.
///
/// An unattainable `c` surfaces as an infeasible solve status, not a build
/// error.
pub fn build_mean_cvar(
    beta: f64,
    panel: &ReturnPanel,
    mu: &Array1<f64>,
    c: f64,
) -> Result<ConicProgram, ProblemError> {
    if mu.len() != panel.num_assets() {
        return Err(ProblemError::MuDimensionMismatch {
            mu: mu.len(),
            panel: panel.num_assets(),
        });
    }
    let mut prog = build_min_cvar(beta, panel)?;
    // -mu'w <= -c.
    prog.rows
        .push(mu.iter().enumerate().map(|(j, &m)| (j, -m)).collect());
    prog.rhs.push(-c);
    match prog.cones.last_mut() {
        Some(ConeBlock::NonNeg(k)) => *k += 1,
        _ => prog.cones.push(ConeBlock::NonNeg(1)),
    }
    prog.validate()?;
    Ok(prog)
}

/// Solve the min-CVaR problem at each level and assemble the ladder.
/// Any non-optimal solve aborts with the offending beta.
pub fn solve_baselines(
    betas: &[f64],
    panel: &ReturnPanel,
    settings: &SolverSettings,
) -> Result<CVaRLadder, ProblemError> {
    if betas.is_empty() {
        return Err(ProblemError::EmptyLadder);
    }
    for pair in betas.windows(2) {
        if pair[1] <= pair[0] {
            return Err(ProblemError::BetasNotIncreasing {
                prev: pair[0],
                next: pair[1],
            });
        }
    }
    let mut baselines = Vec::with_capacity(betas.len());
    let mut statuses = Vec::with_capacity(betas.len());
    for &beta in betas {
        let prog = build_min_cvar(beta, panel)?;
        let result = solver::solve(&prog, settings)?;
        if result.status != SolveStatus::Optimal {
            return Err(ProblemError::BaselineSolveFailed {
                beta,
                status: result.status,
            });
        }
        baselines.push(result.objective);
        statuses.push(result.status);
    }
    CVaRLadder::validated(betas.to_vec(), baselines, statuses)
}

struct MultiCvarCore {
    prog: ConicProgram,
    n: usize,
}

/// Shared core of the multi-level formulations. Variables
/// `(d, w, alpha_1..alpha_K, t_{qk})`; the deviation bound per level is
/// `F_k(w, alpha_k) <= d*|C_k| + C_k` exactly as the formulations print it,
/// absolute value included. `d` is sign-free.
fn build_multi_core(
    ladder: &CVaRLadder,
    panel: &ReturnPanel,
    w_objective: &Array1<f64>,
) -> Result<MultiCvarCore, ProblemError> {
    if w_objective.len() != panel.num_assets() {
        return Err(ProblemError::MuDimensionMismatch {
            mu: w_objective.len(),
            panel: panel.num_assets(),
        });
    }
    let n = panel.num_assets();
    let q = panel.num_obs();
    let k = ladder.len();
    let r = panel.returns();

    let d_ix = 0usize;
    let w_base = 1usize;
    let alpha_base = 1 + n;
    let t_base = 1 + n + k;
    let num_vars = 1 + n + k + q * k;

    let mut objective = vec![0.0; num_vars];
    objective[d_ix] = 1.0;
    for j in 0..n {
        objective[w_base + j] = w_objective[j];
    }

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(1 + n + 2 * q * k + k);
    let mut rhs = Vec::with_capacity(rows.capacity());
    let mut warnings = Vec::new();

    rows.push((0..n).map(|j| (w_base + j, 1.0)).collect());
    rhs.push(1.0);
    for j in 0..n {
        rows.push(vec![(w_base + j, -1.0)]);
        rhs.push(0.0);
    }
    for ki in 0..k {
        for qi in 0..q {
            rows.push(vec![(t_base + ki * q + qi, -1.0)]);
            rhs.push(0.0);
        }
    }
    for ki in 0..k {
        for qi in 0..q {
            let mut row: Vec<(usize, f64)> =
                (0..n).map(|j| (w_base + j, -r[[qi, j]])).collect();
            row.push((alpha_base + ki, -1.0));
            row.push((t_base + ki * q + qi, -1.0));
            rows.push(row);
            rhs.push(0.0);
        }
    }
    for ki in 0..k {
        let c_k = ladder.baselines()[ki];
        if c_k == 0.0 {
            warnings.push(format!(
                "baseline C at beta {} is exactly 0: the deviation bound is scale-free (F <= 0 regardless of d)",
                ladder.betas()[ki]
            ));
        }
        let coef = hinge_coef(q, ladder.betas()[ki]);
        let mut row: Vec<(usize, f64)> = vec![(alpha_base + ki, 1.0)];
        for qi in 0..q {
            row.push((t_base + ki * q + qi, coef));
        }
        row.push((d_ix, -c_k.abs()));
        rows.push(row);
        rhs.push(c_k);
    }

    let cones = vec![
        ConeBlock::Zero(1),
        ConeBlock::NonNeg(n + 2 * q * k + k),
    ];
    let prog = ConicProgram {
        num_vars,
        objective,
        rows,
        rhs,
        cones,
        labels: VariableLabels {
            weights: (w_base..w_base + n).collect(),
            alphas: (alpha_base..alpha_base + k).collect(),
            deviation: Some(d_ix),
            hinges: (0..k).map(|ki| (t_base + ki * q, q)).collect(),
            soc_epigraph: None,
        },
        warnings,
    };
    prog.validate()?;
    Ok(MultiCvarCore { prog, n })
}

/// Problem: mean-multiple-CVaR. Objective `d - w'mu` subject to the
/// deviation bounds at every ladder level plus the budget simplex.
pub fn build_mean_multi_cvar(
    ladder: &CVaRLadder,
    panel: &ReturnPanel,
    mu: &Array1<f64>,
) -> Result<ConicProgram, ProblemError> {
    let core = build_multi_core(ladder, panel, &mu.mapv(|m| -m))?;
    Ok(core.prog)
}

/// Doubly robust mean-multi-CVaR with the ellipsoidal uncertainty set:
/// the objective gains `delta * ||G w||_2` with `G'G = Sigma_mu`, realized
/// as an epigraph variable over one second-order cone block.
pub fn build_dr_mcvar_ellipsoidal(
    ladder: &CVaRLadder,
    panel: &ReturnPanel,
    mean: &MeanEstimate,
    delta: f64,
) -> Result<ConicProgram, ProblemError> {
    if delta < 0.0 {
        return Err(ProblemError::NegativeDelta(delta));
    }
    if mean.dim() != panel.num_assets() {
        return Err(ProblemError::MuDimensionMismatch {
            mu: mean.dim(),
            panel: panel.num_assets(),
        });
    }
    let core = build_multi_core(ladder, panel, &mean.mu_hat().mapv(|m| -m))?;
    let MultiCvarCore { mut prog, n } = core;
    let g = mean.sigma_factor()?;

    let y_ix = prog.num_vars;
    prog.num_vars += 1;
    prog.objective.push(delta);

    let w_base = prog.labels.weights[0];
    // SOC block: s_0 = y, s_j = (G w)_j.
    prog.rows.push(vec![(y_ix, -1.0)]);
    prog.rhs.push(0.0);
    for i in 0..n {
        let mut row = Vec::with_capacity(n);
        for j in 0..n {
            let v = g[[i, j]];
            if v != 0.0 {
                row.push((w_base + j, -v));
            }
        }
        prog.rows.push(row);
        prog.rhs.push(0.0);
    }
    prog.cones.push(ConeBlock::Soc(n + 1));
    prog.labels.soc_epigraph = Some(y_ix);
    prog.validate()?;
    Ok(prog)
}

/// Doubly robust mean-multi-CVaR with the rectangular (box) uncertainty
/// set. Under `w >= 0` and `sum w = 1` the box worst case of the return
/// term is `w'(mu - delta*1)`, so the program stays a pure LP whose
/// objective is the nominal one shifted by exactly `delta`.
pub fn build_dr_mcvar_rectangular(
    ladder: &CVaRLadder,
    panel: &ReturnPanel,
    mu_hat: &Array1<f64>,
    delta: f64,
) -> Result<ConicProgram, ProblemError> {
    if delta < 0.0 {
        return Err(ProblemError::NegativeDelta(delta));
    }
    let core = build_multi_core(ladder, panel, &mu_hat.mapv(|m| delta - m))?;
    Ok(core.prog)
}

/// Extract portfolio terms from a solver result via the program labels.
///
/// Weights are renormalized only within a 1e-8 budget drift; a drift above
/// 1e-6 signals a solver failure and is an error. Non-optimal statuses pass
/// through with the weights absent.
pub fn decode(
    result: &SolverResult,
    program: &ConicProgram,
) -> Result<PortfolioSolution, ProblemError> {
    if program.labels.weights.is_empty() {
        return Err(ProblemError::LabelMissing("weights"));
    }
    let kkt = solver::check_kkt(program, result);
    if result.status != SolveStatus::Optimal {
        return Ok(PortfolioSolution {
            weights: None,
            objective_value: result.objective,
            deviation: None,
            alphas: None,
            status: result.status,
            kkt_residuals: kkt,
            warnings: program.warnings.clone(),
        });
    }
    for &ix in &program.labels.weights {
        if ix >= result.primal.len() {
            return Err(ProblemError::LabelMissing("weights"));
        }
    }
    let mut w: Vec<f64> = program
        .labels
        .weights
        .iter()
        .map(|&ix| result.primal[ix])
        .collect();
    for v in &mut w {
        // Interior-point output can sit a hair below zero; snap roundoff.
        if *v < 0.0 && *v > -1e-9 {
            *v = 0.0;
        }
    }
    let sum: f64 = w.iter().sum();
    let drift = (sum - 1.0).abs();
    if drift > 1e-6 {
        return Err(ProblemError::WeightDrift(drift));
    }
    for v in &mut w {
        *v /= sum;
    }
    let weights = PortfolioWeights::new(w)?;
    let deviation = program.labels.deviation.map(|ix| result.primal[ix]);
    let alphas = if program.labels.alphas.is_empty() {
        None
    } else {
        Some(
            program
                .labels
                .alphas
                .iter()
                .map(|&ix| result.primal[ix])
                .collect(),
        )
    };
    Ok(PortfolioSolution {
        weights: Some(weights),
        objective_value: result.objective,
        deviation,
        alphas,
        status: result.status,
        kkt_residuals: kkt,
        warnings: program.warnings.clone(),
    })
}

/// Build-solve-decode convenience wrapper.
pub fn solve_portfolio(
    program: &ConicProgram,
    settings: &SolverSettings,
) -> Result<PortfolioSolution, ProblemError> {
    let result = solver::solve(program, settings)?;
    decode(&result, program)
}
