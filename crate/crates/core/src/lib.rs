//! Multi-objective tuning of joint-space PD torque controllers.
//!
//! A planar rigid arm ([`plant`]) tracks Cartesian paths ([`trajectory`])
//! under a saturated PD law ([`control`]). Each closed-loop run ([`rollout`])
//! yields a tracking-error / torque-smoothness pair that NSGA-II ([`moga`])
//! minimizes; fronts are compared by hypervolume ([`pareto`]) and rollouts
//! are written out as a torque/position/velocity dataset ([`dataset`]).
//! [`experiments`] wires everything into the command-line studies.

pub mod config;
pub mod control;
pub mod dataset;
pub mod experiments;
pub mod moga;
pub mod pareto;
pub mod plant;
pub mod rollout;
pub mod trajectory;

pub use control::Gains;
pub use moga::{GaConfig, GaResult, Genome};
pub use pareto::ParetoFront;
pub use plant::{ArmModel, CartesianPoint, ElbowBranch, JointState};
pub use rollout::{ObjectiveVector, RolloutLog};
pub use trajectory::{CartesianTrajectory, JointTrajectory, TrajectoryKind, TrajectorySpec};

/// Version string recorded in every manifest.
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
