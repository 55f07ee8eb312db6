//! Parameter estimation for kinetic ODE models by subsystem decomposition,
//! Gaussian-process input smoothing and per-subsystem Metropolis-Hastings.

pub mod benchmarks;
pub mod data;
pub mod expr;
pub mod gp;
pub mod graph;
pub mod mcmc;
pub mod model;
pub mod orchestrator;
pub mod parse;
pub mod sim;
pub mod summary;

pub use graph::{decompose, DecomposeError, DependencyGraph, SubsystemSpec};
pub use model::{ModelError, OdeModel, ParameterDecl, Species};
pub use parse::{parse_model, ParseError};
pub use sim::{IntegratorConfig, InputSignal, SimError, Trajectory};
