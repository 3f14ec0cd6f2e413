//! Standard-form conic program shared between the builders and the solver.
//!
//! ```text
//! minimize    c'x
//! subject to  a_i'x + s_i = b_i,   s in K
//! ```
//!
//! where `K` is an ordered product of zero, nonnegative, and second-order
//! cone blocks over the slack vector. Rows are stored sparse; the solver
//! densifies only the KKT system.

use serde::Serialize;
use thiserror::Error;

/// One block of the cone product, in row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConeBlock {
    /// `s = 0` (equality rows).
    Zero(usize),
    /// `s >= 0` elementwise.
    NonNeg(usize),
    /// `s_0 >= ||s_1..||_2`.
    Soc(usize),
}

impl ConeBlock {
    pub fn len(&self) -> usize {
        match *self {
            ConeBlock::Zero(n) | ConeBlock::NonNeg(n) | ConeBlock::Soc(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sparse row: list of `(column, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("cone blocks cover {cones} rows but the program has {rows}")]
    ConeRowMismatch { cones: usize, rows: usize },
    #[error("row {row} references column {col}, but the program has {vars} variables")]
    ColumnOutOfRange { row: usize, col: usize, vars: usize },
    #[error("row {row} contains a non-finite coefficient")]
    NonFiniteCoefficient { row: usize },
    #[error("objective has {len} entries, expected {vars}")]
    ObjectiveLength { len: usize, vars: usize },
    #[error("objective entry {0} is not finite")]
    NonFiniteObjective(usize),
    #[error("rhs entry {0} is not finite")]
    NonFiniteRhs(usize),
    #[error("second-order cone block at row {0} has size < 1")]
    EmptySoc(usize),
    #[error("label `{0}` references variable {1} out of range")]
    LabelOutOfRange(&'static str, usize),
    #[error("labels do not cover the weight variables")]
    MissingWeightLabels,
    #[error("rhs has {len} entries, expected {rows}")]
    RhsLength { len: usize, rows: usize },
}

/// Map from portfolio entities to variable indices.
#[derive(Debug, Clone, Default, Serialize)]
pub struct VariableLabels {
    /// Index of each portfolio weight w_n; exhaustive.
    pub weights: Vec<usize>,
    /// Index of each VaR-threshold variable alpha_k.
    pub alphas: Vec<usize>,
    /// Index of the deviation fraction d, when the formulation has one.
    pub deviation: Option<usize>,
    /// Hinge-variable ranges, one `(start, len)` per probability level.
    pub hinges: Vec<(usize, usize)>,
    /// Epigraph variable of the second-order-cone penalty term.
    pub soc_epigraph: Option<usize>,
}

/// Standard-form conic problem plus portfolio labels.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<SparseRow>,
    pub rhs: Vec<f64>,
    pub cones: Vec<ConeBlock>,
    pub labels: VariableLabels,
    /// Non-fatal conditions attached at build time (e.g. a zero baseline
    /// making a deviation bound scale-free).
    pub warnings: Vec<String>,
}

impl ConicProgram {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Structural validation plus label coverage (the full invariant set).
    pub fn validate(&self) -> Result<(), ProgramError> {
        self.validate_structure()?;
        let check = |name: &'static str, idx: usize| -> Result<(), ProgramError> {
            if idx >= self.num_vars {
                Err(ProgramError::LabelOutOfRange(name, idx))
            } else {
                Ok(())
            }
        };
        for &w in &self.labels.weights {
            check("weights", w)?;
        }
        for &a in &self.labels.alphas {
            check("alphas", a)?;
        }
        if let Some(d) = self.labels.deviation {
            check("deviation", d)?;
        }
        if let Some(y) = self.labels.soc_epigraph {
            check("soc_epigraph", y)?;
        }
        for &(start, len) in &self.labels.hinges {
            if len > 0 {
                check("hinges", start + len - 1)?;
            }
        }
        if self.labels.weights.is_empty() {
            return Err(ProgramError::MissingWeightLabels);
        }
        Ok(())
    }

    /// Shape-and-finiteness validation only; what the solver requires.
    pub fn validate_structure(&self) -> Result<(), ProgramError> {
        let rows = self.rows.len();
        if self.rhs.len() != rows {
            return Err(ProgramError::RhsLength {
                len: self.rhs.len(),
                rows,
            });
        }
        let cone_rows: usize = self.cones.iter().map(ConeBlock::len).sum();
        if cone_rows != rows {
            return Err(ProgramError::ConeRowMismatch {
                cones: cone_rows,
                rows,
            });
        }
        if self.objective.len() != self.num_vars {
            return Err(ProgramError::ObjectiveLength {
                len: self.objective.len(),
                vars: self.num_vars,
            });
        }
        for (i, &c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(ProgramError::NonFiniteObjective(i));
            }
        }
        for (i, &b) in self.rhs.iter().enumerate() {
            if !b.is_finite() {
                return Err(ProgramError::NonFiniteRhs(i));
            }
        }
        let mut at_row = 0usize;
        for block in &self.cones {
            if let ConeBlock::Soc(sz) = block {
                if *sz == 0 {
                    return Err(ProgramError::EmptySoc(at_row));
                }
            }
            at_row += block.len();
        }
        for (r, row) in self.rows.iter().enumerate() {
            for &(col, val) in row {
                if col >= self.num_vars {
                    return Err(ProgramError::ColumnOutOfRange {
                        row: r,
                        col,
                        vars: self.num_vars,
                    });
                }
                if !val.is_finite() {
                    return Err(ProgramError::NonFiniteCoefficient { row: r });
                }
            }
        }
        Ok(())
    }

    /// Append a zero-cone row fixing `objective`-space variable `var` to
    /// `value`. Useful for pinning a variable in experiments and tests.
    pub fn pin_variable(&mut self, var: usize, value: f64) {
        assert!(var < self.num_vars);
        self.rows.push(vec![(var, 1.0)]);
        self.rhs.push(value);
        self.cones.push(ConeBlock::Zero(1));
    }

    /// JSON debug dump: objective, triplet-form rows, rhs, cone layout, and
    /// labels, for cross-solver verification.
    pub fn to_debug_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            num_vars: usize,
            objective: &'a [f64],
            triplets: Vec<(usize, usize, f64)>,
            rhs: &'a [f64],
            cones: &'a [ConeBlock],
            labels: &'a VariableLabels,
            warnings: &'a [String],
        }
        let mut triplets = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                triplets.push((i, j, v));
            }
        }
        serde_json::to_string_pretty(&Dump {
            num_vars: self.num_vars,
            objective: &self.objective,
            triplets,
            rhs: &self.rhs,
            cones: &self.cones,
            labels: &self.labels,
            warnings: &self.warnings,
        })
        .expect("serializable")
    }
}
