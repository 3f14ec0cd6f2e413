//! CVaR-family portfolio optimization on an embedded conic interior-point solver.
//!
//! The crate provides, bottom to top:
//!
//! - [`data`]: return-panel ingestion (Fama-French-style CSVs) and rolling windows.
//! - [`estimators`]: expected-return and mean-estimator-covariance estimation,
//!   plus confidence-to-radius calibration for uncertainty sets.
//! - [`cvar`]: empirical loss, VaR, CVaR, and the Rockafellar-Uryasev auxiliary
//!   function on finite samples.
//! - [`problems`]: compilation of the portfolio formulations (min-CVaR,
//!   mean-CVaR, mean-multi-CVaR, doubly robust mean-CVaR with ellipsoidal or
//!   rectangular uncertainty) into standard conic form, and solution decoding.
//! - [`solver`]: a self-contained primal-dual interior-point method for conic
//!   programs over zero, nonnegative, and second-order cones.
//! - [`backtest`]: rolling-rebalance simulation with turnover, annualized
//!   return/risk, drawdown, and Calmar metrics.
//! - [`theory`]: an empirical finite-sample excess-risk scaling experiment.

pub mod backtest;
pub mod cvar;
pub mod data;
pub mod estimators;
pub mod linalg;
pub mod problems;
pub mod solver;
pub mod theory;
