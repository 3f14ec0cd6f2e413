//! Declarative run configuration.

use chrono::NaiveDate;
use cvaropt::backtest::{SolverFailurePolicy, Strategy};
use cvaropt::data::{Layout, MissingPolicy, Span};
use cvaropt::solver::SolverSettings;
use cvaropt::theory::LossVariant;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    /// Panel used for estimation windows (daily in the reference protocol).
    pub estimation_panel: Option<PathBuf>,
    /// Panel whose periods are traded and scored (monthly).
    pub evaluation_panel: Option<PathBuf>,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    #[serde(default)]
    pub missing: MissingPolicy,
}

fn default_layout() -> Layout {
    Layout::Percent
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub estimation_span: Span,
    #[serde(default)]
    pub on_solver_failure: SolverFailurePolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub as_of: Option<NaiveDate>,
    pub estimation_span: Span,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryReferenceConfig {
    #[serde(default = "default_q_ref")]
    pub q_ref: usize,
    #[serde(default = "default_ref_betas")]
    pub betas: Vec<f64>,
}

fn default_q_ref() -> usize {
    60
}

fn default_ref_betas() -> Vec<f64> {
    vec![0.8, 0.9]
}

impl Default for TheoryReferenceConfig {
    fn default() -> Self {
        Self {
            q_ref: default_q_ref(),
            betas: default_ref_betas(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryConfig {
    pub mu: Vec<f64>,
    /// Either a full matrix or `{"diagonal": [...]}`.
    pub sigma: SigmaSpec,
    pub q_grid: Vec<usize>,
    pub trials: usize,
    #[serde(default = "default_confidence_delta")]
    pub confidence_delta: f64,
    #[serde(default)]
    pub variant: LossVariant,
    #[serde(default)]
    pub reference: TheoryReferenceConfig,
}

fn default_confidence_delta() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Diagonal { diagonal: Vec<f64> },
    Full(Vec<Vec<f64>>),
}

impl SigmaSpec {
    pub fn to_matrix(&self, n: usize) -> Result<ndarray::Array2<f64>, CliError> {
        match self {
            SigmaSpec::Diagonal { diagonal } => {
                if diagonal.len() != n {
                    return Err(CliError::Validation(format!(
                        "sigma diagonal has {} entries, mu has {n}",
                        diagonal.len()
                    )));
                }
                let mut m = ndarray::Array2::<f64>::zeros((n, n));
                for (i, &v) in diagonal.iter().enumerate() {
                    m[[i, i]] = v;
                }
                Ok(m)
            }
            SigmaSpec::Full(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(CliError::Validation(format!(
                        "sigma must be {n}x{n} to match mu"
                    )));
                }
                Ok(ndarray::Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]))
            }
        }
    }
}

/// The whole declarative run file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub backtest: Option<BacktestConfig>,
    #[serde(default)]
    pub optimize: Option<OptimizeConfig>,
    #[serde(default)]
    pub theory: Option<TheoryConfig>,
    #[serde(default)]
    pub solver: SolverSettings,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {path:?}: {e}")))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        for s in &self.strategies {
            let betas: &[f64] = match s {
                Strategy::EqualWeight => &[],
                Strategy::MeanCvar { beta } => std::slice::from_ref(beta),
                Strategy::MeanMultiCvar { betas } => betas,
                Strategy::DrMultiCvar { betas, uncertainty } => {
                    uncertainty
                        .validate()
                        .map_err(|e| CliError::Validation(e.to_string()))?;
                    betas
                }
            };
            for &b in betas {
                if !(b > 0.0 && b < 1.0) {
                    return Err(CliError::Validation(format!(
                        "strategy beta {b} outside (0, 1)"
                    )));
                }
            }
        }
        if let Some(bt) = &self.backtest {
            if bt.end < bt.start {
                return Err(CliError::Validation(format!(
                    "backtest end {} before start {}",
                    bt.end, bt.start
                )));
            }
        }
        if let Some(data) = &self.data {
            for p in [&data.estimation_panel, &data.evaluation_panel]
                .into_iter()
                .flatten()
            {
                if !p.exists() {
                    return Err(CliError::Validation(format!(
                        "referenced data file {p:?} does not exist"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Resolved config as a JSON value, for embedding in outputs.
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
