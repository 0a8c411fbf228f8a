//! Long-only mean–variance–skewness–kurtosis portfolio optimization on the
//! simplex with reduced-coordinate affine-normal descent.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod direction;
pub mod driver;
pub mod error;
pub mod householder;
pub mod instance;
pub mod linalg;
pub mod linesearch;
pub mod oracle;
pub mod simplex;
pub mod verify;

#[cfg(test)]
mod testutil;

pub use error::{MvskError, Result};
pub use direction::{yand_direction, Direction, DirectionDiagnostics, SolveMode, TangentSolveConfig, TraceMode};
pub use driver::{solve, solve_objective, LineSearchKind, Preset, SolveReport, SolveStatus, SolverConfig, TracePoint};
pub use instance::{
    center_panel, crra_coefficients, load_returns, save_returns, CoefficientOrigin, PanelFormat, PreferenceCoefficients,
    ReturnPanel,
};
pub use linalg::RowMatrix;
pub use oracle::{KernelCounts, Objective, OracleCache};
pub use simplex::{alpha_max, project_slice, projected_kkt_residual, FaceState, TangentBasis};
