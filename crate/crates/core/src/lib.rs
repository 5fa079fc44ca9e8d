//! Distributed multi-robot motion planning with Gaussian belief propagation.
//!
//! Each robot plans its own short-horizon trajectory as a factor graph over
//! a handful of future states. Dynamics, obstacle and anchor factors live
//! entirely on the robot; separation factors couple its states to the same
//! states of nearby robots, and the two sides of such a factor exchange
//! messages over a simulated peer-to-peer link that can drop traffic.
//!
//! Modules, from the bottom up:
//! - [`gauss`]: Gaussians in information form.
//! - [`gbp`]: factor graph and synchronous belief propagation.
//! - [`factors`]: measurement models and factor construction for planning.
//! - [`planner`]: one robot's trajectory graph and its tick lifecycle.
//! - [`comm`]: neighbour discovery and lossy message delivery.
//! - [`sdf`], [`scenario`]: obstacle fields, configs and scenario builders.
//! - [`sim`]: the world clock that runs all robots together.
//! - [`metrics`]: evaluation of finished runs.

pub mod comm;
pub mod factors;
pub mod gauss;
pub mod gbp;
pub mod metrics;
pub mod planner;
pub mod scenario;
pub mod sdf;
pub mod sim;

pub use comm::{CommConfig, CommStats, Envelope, NodeAddr};
pub use factors::{FactorParams, RobotState};
pub use gauss::{CanonicalGaussian, GaussError};
pub use gbp::{FactorId, FactorKind, GbpGraph, VarSlot, VariableId};
pub use metrics::{FlowReport, Makespan, MetricsError, RobotMetrics, RunSummary};
pub use planner::{HorizonMode, RobotFragment, TrajectorySchedule};
pub use scenario::{ConfigError, ScenarioConfig, ScenarioKind};
pub use sdf::{Polygon, SdfGrid};
pub use sim::{run, RunResult, RunStatus, SimError, World};
