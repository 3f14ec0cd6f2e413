//! Optimizer inputs: expected returns, mean-estimator covariance, required
//! return, and uncertainty-set radii.
//!
//! The covariance reported here is the covariance of the *sample-mean
//! estimator* (S/Q with S the unbiased sample covariance), which is the
//! statistically meaningful spread for an uncertainty set around mu-hat.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ReturnPanel;
use crate::linalg;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("need at least 2 observations, got {0}")]
    InsufficientData(usize),
    #[error("confidence {0} outside (0, 1)")]
    InvalidConfidence(f64),
    #[error("dimension must be >= 1")]
    ZeroDimension,
    #[error("delta must be nonnegative, got {0}")]
    NegativeDelta(f64),
    #[error("sigma_mu asymmetric beyond 1e-10 (max {0:e})")]
    AsymmetricCovariance(f64),
    #[error("sigma_mu has eigenvalue {0:e} below -1e-10")]
    IndefiniteCovariance(f64),
    #[error("uncertainty config needs either a confidence or an absolute delta")]
    UnresolvedDelta,
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

/// Sample-mean estimate with the covariance of the estimator itself.
#[derive(Debug, Clone)]
pub struct MeanEstimate {
    mu_hat: Array1<f64>,
    sigma_mu: Array2<f64>,
    sample_size: usize,
}

impl MeanEstimate {
    /// Validates symmetry (1e-10) and near-positive-semidefiniteness
    /// (eigenvalues >= -1e-10 relative to the trace scale).
    pub fn new(
        mu_hat: Array1<f64>,
        sigma_mu: Array2<f64>,
        sample_size: usize,
    ) -> Result<Self, EstimatorError> {
        assert_eq!(mu_hat.len(), sigma_mu.nrows());
        assert_eq!(sigma_mu.nrows(), sigma_mu.ncols());
        let asym = linalg::max_asymmetry(&sigma_mu);
        if asym > 1e-10 {
            return Err(EstimatorError::AsymmetricCovariance(asym));
        }
        let (vals, _) = linalg::symmetric_eigen(&sigma_mu)?;
        let n = sigma_mu.nrows() as f64;
        let scale = (sigma_mu.diag().sum() / n).abs().max(1.0);
        if vals[0] < -1e-10 * scale {
            return Err(EstimatorError::IndefiniteCovariance(vals[0]));
        }
        Ok(Self {
            mu_hat,
            sigma_mu,
            sample_size,
        })
    }

    pub fn mu_hat(&self) -> &Array1<f64> {
        &self.mu_hat
    }

    pub fn sigma_mu(&self) -> &Array2<f64> {
        &self.sigma_mu
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn dim(&self) -> usize {
        self.mu_hat.len()
    }

    /// Sigma_mu with the ridge `eps I`, `eps = 1e-12 * trace/N`, applied so
    /// factorizations survive rank-deficient panels.
    pub fn regularized_sigma(&self) -> Array2<f64> {
        let n = self.dim();
        let eps = 1e-12 * (self.sigma_mu.diag().sum() / n as f64).max(0.0) + 1e-300;
        let mut out = self.sigma_mu.clone();
        for i in 0..n {
            out[[i, i]] += eps;
        }
        out
    }

    /// Upper-triangular factor `G` with `G'G = sigma_mu + eps I`, so the
    /// robust penalty is `delta * ||G w||_2 = delta * sqrt(w' Sigma w)`.
    pub fn sigma_factor(&self) -> Result<Array2<f64>, EstimatorError> {
        let reg = self.regularized_sigma();
        let l = linalg::cholesky_psd(&reg)?;
        Ok(l.t().to_owned())
    }
}

/// Shape of the expected-return uncertainty set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyShape {
    Ellipsoidal,
    Rectangular,
    None,
}

/// Uncertainty-set configuration: a shape plus either a confidence level
/// (mapped to a radius via the chi-square rule) or an absolute radius.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UncertaintyConfig {
    pub shape: UncertaintyShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl UncertaintyConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if let Some(c) = self.confidence {
            if !(c > 0.0 && c < 1.0) {
                return Err(EstimatorError::InvalidConfidence(c));
            }
        }
        if let Some(d) = self.delta {
            if d < 0.0 {
                return Err(EstimatorError::NegativeDelta(d));
            }
        }
        if self.shape != UncertaintyShape::None && self.confidence.is_none() && self.delta.is_none()
        {
            return Err(EstimatorError::UnresolvedDelta);
        }
        Ok(())
    }

    /// Radius for an N-dimensional problem. An absolute delta wins over a
    /// confidence level; `shape: none` resolves to zero.
    pub fn resolve_delta(&self, dimension: usize) -> Result<f64, EstimatorError> {
        self.validate()?;
        if self.shape == UncertaintyShape::None {
            return Ok(0.0);
        }
        if let Some(d) = self.delta {
            return Ok(d);
        }
        calibrate_delta(self.confidence.unwrap(), dimension)
    }
}

/// Column means plus estimator covariance S/Q.
pub fn estimate_mean(panel: &ReturnPanel) -> Result<MeanEstimate, EstimatorError> {
    let q = panel.num_obs();
    let n = panel.num_assets();
    if q < 2 {
        return Err(EstimatorError::InsufficientData(q));
    }
    let r = panel.returns();
    let qf = q as f64;
    let mut mu = Array1::<f64>::zeros(n);
    for j in 0..n {
        mu[j] = r.column(j).sum() / qf;
    }
    // Unbiased sample covariance, then /Q for the mean estimator.
    let mut sigma = Array2::<f64>::zeros((n, n));
    for a in 0..n {
        for b in a..n {
            let mut acc = 0.0;
            for t in 0..q {
                acc += (r[[t, a]] - mu[a]) * (r[[t, b]] - mu[b]);
            }
            let v = acc / (qf - 1.0) / qf;
            sigma[[a, b]] = v;
            sigma[[b, a]] = v;
        }
    }
    MeanEstimate::new(mu, sigma, q)
}

/// Required return c: cross-sectional average of the expected returns.
pub fn required_return(mu_hat: &Array1<f64>) -> f64 {
    mu_hat.sum() / mu_hat.len() as f64
}

/// Radius of the joint Gaussian confidence ellipsoid:
/// `delta = sqrt(chi-square quantile with N dof at confidence)`.
pub fn calibrate_delta(confidence: f64, dimension: usize) -> Result<f64, EstimatorError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(EstimatorError::InvalidConfidence(confidence));
    }
    if dimension == 0 {
        return Err(EstimatorError::ZeroDimension);
    }
    Ok(chi_squared_quantile(confidence, dimension as f64).sqrt())
}

/// Lanczos approximation of `ln Gamma(x)` for `x > 0` (g = 7, n = 9),
/// accurate to ~1e-13 relative.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let xm1 = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (xm1 + i as f64 + 1.0);
    }
    let t = xm1 + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (xm1 + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x): series expansion for
/// `x < a + 1`, Lentz continued fraction for the complement otherwise.
fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (log_prefix.exp() * sum).min(1.0)
    } else {
        // Continued fraction for Q(a, x), modified Lentz.
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (log_prefix.exp() * h).min(1.0)
    }
}

/// Chi-square quantile by bisection on the monotone CDF
/// `P(k/2, x/2)`; ~200 halvings pin the root to full double precision.
fn chi_squared_quantile(p: f64, dof: f64) -> f64 {
    let cdf = |x: f64| reg_lower_gamma(dof / 2.0, x / 2.0);
    let mut hi = 2.0 * dof + 100.0;
    while cdf(hi) < p && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
