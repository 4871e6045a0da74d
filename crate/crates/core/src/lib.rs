//! Topology synthesis for galvanic-coupled intra-body networks.
//!
//! Given implant and on-skin node placements inside a layered tissue volume,
//! the crate computes an energy-balanced clustered topology: how many on-skin
//! relays are needed, which nodes each relay serves, and where each relay sits.
//!
//! The pipeline has two phases:
//!
//! 1. [`icap`] partitions the surface into square cells whose diagonal equals
//!    the shortest admissible link, giving an initial clustering.
//! 2. [`nico`] iterates relay optimization, cluster reformation, nearest-relay
//!    assignment, reassignment/merging and dedicated relays until the
//!    membership is stable.
//!
//! [`channel`] supplies the parametric tissue gain model and the transmit-power
//! bounds, and [`analytics`] hosts the closed-form grid statistics plus the
//! post-clustering energy report.

pub mod analytics;
pub mod channel;
pub mod icap;
pub mod model;
pub mod nico;

pub use channel::{ChannelModel, LifetimeModel, PathKind, PowerLawPath};
pub use icap::GridSpec;
pub use model::{
    Cluster, ClusterId, ClusterState, ModelError, NodeId, NodeSpec, RelayPlacement,
    ScenarioConfig, Tissue, TissueStack,
};
pub use nico::{NicoError, NicoOutcome};
