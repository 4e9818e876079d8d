//! Coordinated rate-splitting multiple access (RSMA) for integrated sensing
//! and communication in multi-UAV emergency networks.
//!
//! The crate maximizes the weighted sum rate of a set of communication
//! survivors (CSs) served by `U` ISAC UAVs while a dedicated receive UAV
//! senses a trapped survivor (TS). The optimization is decomposed into
//! three stages:
//!
//! 1. [`association`]: K-Means clustering of CSs onto UAVs,
//! 2. [`deployment`]: successive convex approximation (SCA) of the UAV
//!    horizontal positions,
//! 3. [`beamforming`]: semidefinite relaxation plus SCA of the common,
//!    private and sensing beamformers and of the common-rate split,
//!
//! orchestrated by [`pipeline`]. Metrics are always re-evaluated exactly by
//! [`rates`]. [`baselines`] provides SDMA, NOMA and OMA comparison schemes,
//! and [`experiment`] runs parameter sweeps.

// Links the system OpenBLAS used by the PSD cone of the conic backend.
extern crate openblas_src;

pub mod association;
pub mod baselines;
pub mod beamforming;
pub mod channel;
pub mod conic;
pub mod deployment;
pub mod diagnostics;
pub mod experiment;
pub mod pipeline;
pub mod rates;
pub mod scenario;
pub mod types;

pub use association::Association;
pub use baselines::Scheme;
pub use channel::ChannelMode;
pub use pipeline::{run, RunOptions, Solution, SolutionStatus};
pub use rates::{BeamformingState, RateReport};
pub use scenario::{Scenario, ScenarioConfig, ValidatedScenario};

/// Crate-level error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error(transparent)]
    Association(#[from] association::AssociationError),
    #[error(transparent)]
    Rate(#[from] rates::RateError),
    #[error(transparent)]
    Rank1(#[from] beamforming::Rank1Error),
    #[error("invalid run options: {0}")]
    Options(String),
    #[error("invalid sweep specification: {0}")]
    Sweep(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
