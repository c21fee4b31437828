//! Deterministic churn simulator for a local self-healing protocol on
//! unstructured peer-to-peer overlays.
//!
//! Nodes keep a cache of their 2nd neighbors. When a neighbor fails, each
//! survivor that lost 2nd neighbors waits a random time and asks one of them
//! for a direct link, so the overlay stays connected under churn.

pub mod config;
pub mod graph;
pub mod metrics;
pub mod protocol;
pub mod runner;
pub mod sim;
pub mod topology;
pub mod unionfind;
pub mod view;

pub use config::{parse_config, render, ConfigError, Mode, RunManifest};
pub use graph::{FailureReport, GraphError, NodeId, NodeState, OverlayGraph};
pub use metrics::{aggregate, AggregateSeries, MetricsRecord};
pub use protocol::{Protocol, ProtocolConfig, ProtocolMessage};
pub use runner::{execute, ExecuteReport, RunnerError};
pub use sim::{run, run_single, Scenario, ScenarioConfig, SimError, Simulation};
pub use topology::{Topology, TopologyKind, TopologyRegistry, TopologySpec};
pub use view::{rebuild_second_view, SecondNeighborView};
