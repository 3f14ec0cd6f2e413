//! Compile the portfolio formulations into standard conic form and decode
//! solver output back to portfolio terms.

pub mod program;

mod builders;

pub use builders::*;
pub use program::{ConeBlock, ConicProgram, ProgramError, SparseRow, VariableLabels};
