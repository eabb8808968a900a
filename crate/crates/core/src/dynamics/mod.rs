//! Serial-chain rigid-body model of one arm.

mod algorithms;
mod model;

pub use algorithms::*;
pub use model::{ChainModel, Joint, Pose, RobotState};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid chain model: {0}")]
    InvalidModel(String),
    #[error("state dimension {found} does not match the {expected}-joint model")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("mass matrix is not positive definite")]
    SingularMass,
}
