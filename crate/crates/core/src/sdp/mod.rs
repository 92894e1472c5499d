//! Semidefinite programs for optimal testers.

use thiserror::Error;

use crate::{choi, numerics, su2rep, tester};

pub mod ipm;
pub mod parallel;
pub mod comb;
pub mod dual;
pub mod problem;

pub use ipm::{IpmOptions, IpmStatus};
pub use problem::{solve, BlockSpec, Constraint, Field, SdpProblem, SdpSolution};

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("malformed problem: {0}")]
    Structure(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("solver did not converge: {0}")]
    NotConverged(String),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Rep(#[from] su2rep::RepError),
    #[error(transparent)]
    Choi(#[from] choi::ChoiError),
    #[error(transparent)]
    Tester(#[from] tester::TesterError),
}

pub type Result<T> = std::result::Result<T, SdpError>;
