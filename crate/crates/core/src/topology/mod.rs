//! Initial overlay generators and join procedures.
//!
//! Each topology family implements [`Topology`] and is registered by name in a
//! [`TopologyRegistry`]. Scenarios refer to a family through a
//! [`TopologySpec`] (name plus flat parameters) and resolve it at run time.

mod clustered;
mod random;
mod uniform;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::RngCore;
use thiserror::Error;

use crate::graph::{GraphError, NodeId, OverlayGraph};

pub use clustered::{gen_clustered, join_clustered, Clustered};
pub use random::{gen_random, join_random, RandomGraph};
pub use uniform::{gen_uniform, join_uniform, Uniform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("unknown topology `{0}`")]
    Unknown(String),
    #[error("topology `{topology}` requires parameter `{param}`")]
    MissingParam {
        topology: &'static str,
        param: &'static str,
    },
    #[error("invalid topology configuration: {0}")]
    Invalid(String),
    #[error("could not build a simple {degree}-regular graph on {nodes} nodes after {attempts} attempts")]
    PairingExhausted {
        nodes: usize,
        degree: usize,
        attempts: usize,
    },
}

/// Resolved parameters of a topology family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopologyKind {
    Uniform { degree: usize },
    Clustered { clusters: usize, gamma: f64, omega: f64 },
    Random { edge_prob: f64 },
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Uniform { degree } => write!(f, "uniform(d={degree})"),
            TopologyKind::Clustered { clusters, gamma, omega } => {
                write!(f, "clustered(C={clusters}, gamma={gamma}, omega={omega})")
            }
            TopologyKind::Random { edge_prob } => write!(f, "random(p={edge_prob})"),
        }
    }
}

/// Flat, family-agnostic parameter bag filled from configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TopologyParams {
    pub degree: Option<usize>,
    pub clusters: Option<usize>,
    pub gamma: Option<f64>,
    pub omega: Option<f64>,
    pub edge_prob: Option<f64>,
}

impl From<TopologyKind> for TopologyParams {
    fn from(kind: TopologyKind) -> Self {
        let mut p = TopologyParams::default();
        match kind {
            TopologyKind::Uniform { degree } => p.degree = Some(degree),
            TopologyKind::Clustered { clusters, gamma, omega } => {
                p.clusters = Some(clusters);
                p.gamma = Some(gamma);
                p.omega = Some(omega);
            }
            TopologyKind::Random { edge_prob } => p.edge_prob = Some(edge_prob),
        }
        p
    }
}

/// A topology family: how the initial overlay is drawn and how an arriving
/// node picks its links.
pub trait Topology: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn kind(&self) -> TopologyKind;

    /// Rejects node counts this family cannot build on.
    fn validate(&self, nodes: usize) -> Result<(), TopologyError>;

    fn generate(&self, nodes: usize, rng: &mut dyn RngCore) -> Result<OverlayGraph, TopologyError>;

    /// Links the freshly activated `node` into `g`; returns its new neighbors.
    fn join(
        &self,
        g: &mut OverlayGraph,
        node: NodeId,
        rng: &mut dyn RngCore,
    ) -> Result<BTreeSet<NodeId>, GraphError>;

    /// Repair threshold used when the scenario does not set one.
    fn default_threshold(&self, initial: &OverlayGraph) -> usize {
        mean_degree_ceiling(initial)
    }
}

/// `ceil(mean degree)` over active nodes, at least 1.
pub fn mean_degree_ceiling(g: &OverlayGraph) -> usize {
    let active = g.active_count();
    if active == 0 {
        return 1;
    }
    let total: usize = g.active_nodes().map(|n| g.degree(n)).sum();
    total.div_ceil(active).max(1)
}

pub(crate) fn check_prob(name: &str, p: f64) -> Result<(), TopologyError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(TopologyError::Invalid(format!("{name} must lie in [0, 1], got {p}")))
    }
}

pub type TopologyBuilder = fn(&TopologyParams) -> Result<Box<dyn Topology>, TopologyError>;

#[derive(Clone)]
pub struct TopologyEntry {
    pub name: &'static str,
    pub summary: &'static str,
    /// Configuration keys the family needs.
    pub required: &'static [&'static str],
    pub build: TopologyBuilder,
}

impl fmt::Debug for TopologyEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TopologyEntry")
            .field("name", &self.name)
            .field("required", &self.required)
            .finish()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TopologyRegistry {
    entries: BTreeMap<&'static str, TopologyEntry>,
}

impl TopologyRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding the uniform, clustered and random families.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(TopologyEntry {
            name: "uniform",
            summary: "simple d-regular graph; arrivals link to d random peers",
            required: &["degree"],
            build: Uniform::from_params,
        });
        r.register(TopologyEntry {
            name: "clustered",
            summary: "equal-size random-graph clusters joined by per-node bridges",
            required: &["clusters", "gamma", "omega"],
            build: Clustered::from_params,
        });
        r.register(TopologyEntry {
            name: "random",
            summary: "Erdos-Renyi G(N, p); arrivals link to each peer with probability p",
            required: &["p"],
            build: RandomGraph::from_params,
        });
        r
    }

    pub fn register(&mut self, entry: TopologyEntry) -> Option<TopologyEntry> {
        self.entries.insert(entry.name, entry)
    }

    pub fn get(&self, name: &str) -> Option<&TopologyEntry> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn build(&self, name: &str, params: &TopologyParams) -> Result<Box<dyn Topology>, TopologyError> {
        let entry = self
            .get(name)
            .ok_or_else(|| TopologyError::Unknown(name.to_string()))?;
        (entry.build)(params)
    }
}

/// Named topology plus its parameters, as written in a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySpec {
    pub name: String,
    pub params: TopologyParams,
}

impl TopologySpec {
    pub fn new(name: impl Into<String>, params: TopologyParams) -> Self {
        Self {
            name: name.into(),
            params,
        }
    }

    pub fn uniform(degree: usize) -> Self {
        Self::new("uniform", TopologyKind::Uniform { degree }.into())
    }

    pub fn clustered(clusters: usize, gamma: f64, omega: f64) -> Self {
        Self::new("clustered", TopologyKind::Clustered { clusters, gamma, omega }.into())
    }

    pub fn random(edge_prob: f64) -> Self {
        Self::new("random", TopologyKind::Random { edge_prob }.into())
    }

    pub fn instantiate(&self, registry: &TopologyRegistry) -> Result<Box<dyn Topology>, TopologyError> {
        registry.build(&self.name, &self.params)
    }
}
