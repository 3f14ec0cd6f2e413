//! Empirical loss, VaR, CVaR, and the convex auxiliary function on finite
//! samples.
//!
//! The loss convention is `L(w, r) = -w'r`: a positive loss is money lost.
//! CVaR at level beta is computed exactly by minimizing the piecewise-linear
//! auxiliary function
//!
//! ```text
//! F(alpha) = alpha + (Q (1 - beta))^-1 * sum_q max(loss_q - alpha, 0)
//! ```
//!
//! over its breakpoints (the sorted sample losses), which also yields the
//! full argmin interval.

use ndarray::ArrayView1;
use thiserror::Error;

use crate::data::ReturnPanel;

#[derive(Debug, Error)]
pub enum CvarError {
    #[error("weights sum to {sum}, expected 1 within 1e-8")]
    WeightsNotNormalized { sum: f64 },
    #[error("weight {index} is {value}, below the long-only floor")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights are empty")]
    EmptyWeights,
    #[error("weight {index} is not finite")]
    NonFiniteWeight { index: usize },
    #[error("dimension mismatch: weights {weights}, returns {returns}")]
    DimensionMismatch { weights: usize, returns: usize },
    #[error("beta {0} outside (0, 1)")]
    InvalidBeta(f64),
    #[error("loss sample is empty")]
    EmptySample,
    #[error("loss {index} is not finite")]
    NonFiniteLoss { index: usize },
}

/// Long-only portfolio weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights(Vec<f64>);

impl PortfolioWeights {
    pub const SUM_TOL: f64 = 1e-8;
    pub const NEG_TOL: f64 = -1e-10;

    pub fn new(w: Vec<f64>) -> Result<Self, CvarError> {
        if w.is_empty() {
            return Err(CvarError::EmptyWeights);
        }
        for (i, &x) in w.iter().enumerate() {
            if !x.is_finite() {
                return Err(CvarError::NonFiniteWeight { index: i });
            }
            if x < Self::NEG_TOL {
                return Err(CvarError::NegativeWeight { index: i, value: x });
            }
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(CvarError::WeightsNotNormalized { sum });
        }
        Ok(Self(w))
    }

    /// The 1/N portfolio.
    pub fn equal(n: usize) -> Result<Self, CvarError> {
        if n == 0 {
            return Err(CvarError::EmptyWeights);
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-scenario portfolio losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSample(Vec<f64>);

impl LossSample {
    pub fn new(losses: Vec<f64>) -> Result<Self, CvarError> {
        if losses.is_empty() {
            return Err(CvarError::EmptySample);
        }
        for (i, &l) in losses.iter().enumerate() {
            if !l.is_finite() {
                return Err(CvarError::NonFiniteLoss { index: i });
            }
        }
        Ok(Self(losses))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `L(w, r) = -w'r`.
pub fn portfolio_loss(w: &PortfolioWeights, r: ArrayView1<f64>) -> Result<f64, CvarError> {
    if w.len() != r.len() {
        return Err(CvarError::DimensionMismatch {
            weights: w.len(),
            returns: r.len(),
        });
    }
    Ok(-w
        .as_slice()
        .iter()
        .zip(r.iter())
        .map(|(wi, ri)| wi * ri)
        .sum::<f64>())
}

/// Losses of `w` across every scenario of the panel.
pub fn loss_sample(w: &PortfolioWeights, panel: &ReturnPanel) -> Result<LossSample, CvarError> {
    let mut losses = Vec::with_capacity(panel.num_obs());
    for row in panel.returns().outer_iter() {
        losses.push(portfolio_loss(w, row)?);
    }
    LossSample::new(losses)
}

fn check_beta(beta: f64) -> Result<(), CvarError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(CvarError::InvalidBeta(beta));
    }
    Ok(())
}

/// Auxiliary function on a loss sample:
/// `alpha + (Q(1-beta))^-1 sum max(loss - alpha, 0)`.
pub fn auxiliary_f_losses(losses: &LossSample, alpha: f64, beta: f64) -> Result<f64, CvarError> {
    check_beta(beta)?;
    let q = losses.len() as f64;
    let denom = q * (1.0 - beta);
    let hinge: f64 = losses
        .as_slice()
        .iter()
        .map(|&l| (l - alpha).max(0.0))
        .sum();
    Ok(alpha + hinge / denom)
}

/// Auxiliary function for a portfolio against a panel (empirical form).
pub fn auxiliary_f(
    w: &PortfolioWeights,
    alpha: f64,
    beta: f64,
    panel: &ReturnPanel,
) -> Result<f64, CvarError> {
    auxiliary_f_losses(&loss_sample(w, panel)?, alpha, beta)
}

/// Result of an exact empirical-CVaR evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvarValue {
    /// `min_alpha F(w, alpha)`.
    pub cvar: f64,
    /// Closed interval of minimizers `[alpha_lo, alpha_hi]`.
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    /// Set when `Q(1-beta) < 1`: fewer than one tail scenario, the estimate
    /// is defined but degenerate.
    pub degenerate_tail: bool,
}

/// Exact CVaR of a loss sample, with the full argmin interval of the
/// auxiliary function.
///
/// `F` is piecewise linear in alpha with breakpoints at the sample losses,
/// so the minimum and the argmin interval are found by a single scan over
/// the sorted distinct losses. The slope right of a breakpoint `v` is
/// `1 - (#losses > v) / (Q(1-beta))`; the interval case arises when a
/// segment slope vanishes (to a 1e-9 relative tolerance, merging ties).
pub fn cvar_of_losses(losses: &LossSample, beta: f64) -> Result<CvarValue, CvarError> {
    check_beta(beta)?;
    let q = losses.len();
    let denom = q as f64 * (1.0 - beta);
    let degenerate_tail = denom < 1.0;

    let mut sorted: Vec<f64> = losses.as_slice().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // Distinct breakpoints with multiplicity, ties merged.
    let mut distinct: Vec<(f64, usize)> = Vec::with_capacity(q);
    for &l in &sorted {
        match distinct.last_mut() {
            Some((v, count)) if *v == l => *count += 1,
            _ => distinct.push((l, 1)),
        }
    }

    // Walk breakpoints from below. Before the first breakpoint the slope is
    // 1 - Q/denom <= 0 (beta < 1), so the minimum sits at a breakpoint or on
    // a flat segment between two consecutive breakpoints.
    let mut greater = q; // #losses strictly greater than current breakpoint
    let mut best_value = f64::MAX;
    let mut alpha_lo = distinct[0].0;
    let mut alpha_hi = distinct[0].0;
    let slope_tol = 1e-9 * (1.0 + q as f64 / denom);

    for (idx, &(v, count)) in distinct.iter().enumerate() {
        greater -= count;
        let f_v = {
            let hinge: f64 = sorted.iter().map(|&l| (l - v).max(0.0)).sum();
            v + hinge / denom
        };
        if f_v < best_value - 1e-15 * (1.0 + best_value.abs()) {
            best_value = f_v;
            alpha_lo = v;
            alpha_hi = v;
        }
        // Slope of the segment to the right of v.
        let slope = 1.0 - greater as f64 / denom;
        if slope > slope_tol {
            // F increases from here on; the scan is done.
            break;
        }
        if slope.abs() <= slope_tol && idx + 1 < distinct.len() {
            // Flat segment: the argmin extends to the next breakpoint.
            let next = distinct[idx + 1].0;
            if (f_v - best_value).abs() <= 1e-12 * (1.0 + best_value.abs()) {
                alpha_hi = next;
            }
        }
    }

    Ok(CvarValue {
        cvar: best_value,
        alpha_lo,
        alpha_hi,
        degenerate_tail,
    })
}

/// Exact empirical CVaR of a portfolio at level beta.
pub fn empirical_cvar(
    w: &PortfolioWeights,
    beta: f64,
    panel: &ReturnPanel,
) -> Result<CvarValue, CvarError> {
    cvar_of_losses(&loss_sample(w, panel)?, beta)
}

/// Empirical VaR on a loss sample: the smallest sample loss `alpha` with
/// `(#losses <= alpha) / Q > beta` (strict inequality).
pub fn var_of_losses(losses: &LossSample, beta: f64) -> Result<f64, CvarError> {
    check_beta(beta)?;
    let q = losses.len();
    let mut sorted: Vec<f64> = losses.as_slice().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (i, &l) in sorted.iter().enumerate() {
        // Count ties at l so the fraction is over losses <= l.
        let mut upper = i + 1;
        while upper < q && sorted[upper] == l {
            upper += 1;
        }
        if upper as f64 / q as f64 > beta {
            return Ok(l);
        }
    }
    Ok(*sorted.last().unwrap())
}

/// Empirical VaR of a portfolio at level beta.
pub fn empirical_var(
    w: &PortfolioWeights,
    beta: f64,
    panel: &ReturnPanel,
) -> Result<f64, CvarError> {
    var_of_losses(&loss_sample(w, panel)?, beta)
}
