//! Multilevel Picard approximation of semilinear Kolmogorov PDEs, together
//! with explicit ReLU networks whose realization equals the estimator under a
//! frozen sample.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod index_rng;
pub mod mlp_solver;
pub mod net_builder;
pub mod net_calculus;
pub mod problems;
pub mod sde_sim;

pub use error::{Error, Result};
pub use index_rng::{FrozenSample, IndexPath};
pub use mlp_solver::{mlp_estimate, MlpConfig, SemilinearProblem};
pub use net_builder::{build_mlp_network, BuiltMlpNetwork, ProblemNetworks, SigmaNetworkFamily};
pub use net_calculus::{Architecture, ReluNetwork};
pub use sde_sim::TimeGrid;
