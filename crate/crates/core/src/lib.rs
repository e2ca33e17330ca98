//! Miniature NFV management-and-orchestration stack over a deterministic
//! simulated network.

pub mod catalog;
pub mod hag;
pub mod mano;
pub mod sdn;
pub mod scenario;
pub mod sim;
pub mod telemetry;
pub mod vim;
pub mod world;

pub use catalog::{Catalogue, Demand, NsDescriptor, PlacementClass, VnfDescriptor};
pub use hag::{HagSession, Policy, Technology};
pub use mano::{Mano, ManoConfig, NsInstance, NsState, PlacementConstraints, PlacementPlan};
pub use scenario::{load_scenario, RunReport, Scenario};
pub use sdn::{Fabric, ForwardMode, MacAddr};
pub use sim::SimTime;
pub use telemetry::{Aggregation, Metric, MetricSample, Telemetry};
pub use vim::{SiteClass, VimConfig, VimOp};
pub use world::{World, WorldConfig};
