use std::collections::BTreeSet;

use rand::{Rng, RngCore};

use super::{check_prob, Topology, TopologyError, TopologyKind, TopologyParams};
use crate::graph::{GraphError, NodeId, OverlayGraph};

/// Erdős–Rényi `G(N, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomGraph {
    edge_prob: f64,
}

impl RandomGraph {
    pub fn new(edge_prob: f64) -> Result<Self, TopologyError> {
        check_prob("p", edge_prob)?;
        Ok(Self { edge_prob })
    }

    pub(super) fn from_params(p: &TopologyParams) -> Result<Box<dyn Topology>, TopologyError> {
        let edge_prob = p.edge_prob.ok_or(TopologyError::MissingParam {
            topology: "random",
            param: "p",
        })?;
        Ok(Box::new(RandomGraph::new(edge_prob)?))
    }
}

impl Topology for RandomGraph {
    fn name(&self) -> &'static str {
        "random"
    }

    fn kind(&self) -> TopologyKind {
        TopologyKind::Random {
            edge_prob: self.edge_prob,
        }
    }

    fn validate(&self, nodes: usize) -> Result<(), TopologyError> {
        if nodes == 0 {
            return Err(TopologyError::Invalid("need at least one node".into()));
        }
        Ok(())
    }

    fn generate(&self, nodes: usize, rng: &mut dyn RngCore) -> Result<OverlayGraph, TopologyError> {
        gen_random(nodes, self.edge_prob, rng)
    }

    fn join(
        &self,
        g: &mut OverlayGraph,
        node: NodeId,
        rng: &mut dyn RngCore,
    ) -> Result<BTreeSet<NodeId>, GraphError> {
        join_random(g, node, self.edge_prob, rng)
    }
}

pub fn gen_random(nodes: usize, edge_prob: f64, rng: &mut dyn RngCore) -> Result<OverlayGraph, TopologyError> {
    check_prob("p", edge_prob)?;
    let mut g = OverlayGraph::new(nodes);
    for u in 0..nodes {
        for v in u + 1..nodes {
            if rng.gen_bool(edge_prob) {
                g.add_link(NodeId(u), NodeId(v)).expect("fresh link");
            }
        }
    }
    Ok(g)
}

/// Links `node` to each other active node independently with `edge_prob`.
pub fn join_random(
    g: &mut OverlayGraph,
    node: NodeId,
    edge_prob: f64,
    rng: &mut dyn RngCore,
) -> Result<BTreeSet<NodeId>, GraphError> {
    if !g.is_active(node) {
        return Err(GraphError::Inactive(node));
    }
    let peers: Vec<NodeId> = g.active_nodes().filter(|&m| m != node).collect();
    let chosen: BTreeSet<NodeId> = peers.into_iter().filter(|_| rng.gen_bool(edge_prob)).collect();
    for &m in &chosen {
        g.add_link(node, m)?;
    }
    Ok(chosen)
}
