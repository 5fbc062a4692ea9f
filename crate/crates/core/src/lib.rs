//! Robust log-contrast regression for compositional covariates.

pub mod composition;
pub mod error;
pub mod init;
pub mod linalg;
pub mod penalty;
pub mod selection;
pub mod simulate;
pub mod solver;
pub mod workflow;

pub use composition::{
    build_constraint, build_design, CompositionalDataset, ConstraintMatrix, Design, LogTransform,
};
pub use error::{Error, Result};
pub use penalty::{PenaltyKind, PenaltySpec};
pub use solver::{
    dual_descent_fit, DualDescent, Estimate, FitResult, RegressionProblem, SolverOptions,
};
pub use init::{robust_init, InitOptions, RobustInit};
pub use selection::{robust_cv, CvOptions, CvResult, LambdaPath, SelectionRule};
pub use simulate::{Method, Metrics, ScenarioConfig, ScenarioSummary};
pub use workflow::{run_baseline, run_workflow, Analysis, Prepared, WorkflowConfig};
