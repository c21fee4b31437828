use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use super::{check_prob, Topology, TopologyError, TopologyKind, TopologyParams};
use crate::graph::{GraphError, NodeId, OverlayGraph};

/// Equal-size clusters. Inside a cluster every pair is linked with
/// probability `gamma`; every node links, with probability `omega`, to one
/// random member of each other cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clustered {
    clusters: usize,
    gamma: f64,
    omega: f64,
}

impl Clustered {
    pub fn new(clusters: usize, gamma: f64, omega: f64) -> Result<Self, TopologyError> {
        if clusters < 2 {
            return Err(TopologyError::Invalid(format!("need at least 2 clusters, got {clusters}")));
        }
        check_prob("gamma", gamma)?;
        check_prob("omega", omega)?;
        Ok(Self { clusters, gamma, omega })
    }

    pub(super) fn from_params(p: &TopologyParams) -> Result<Box<dyn Topology>, TopologyError> {
        let missing = |param| TopologyError::MissingParam {
            topology: "clustered",
            param,
        };
        let clusters = p.clusters.ok_or(missing("clusters"))?;
        let gamma = p.gamma.ok_or(missing("gamma"))?;
        let omega = p.omega.ok_or(missing("omega"))?;
        Ok(Box::new(Clustered::new(clusters, gamma, omega)?))
    }
}

impl Topology for Clustered {
    fn name(&self) -> &'static str {
        "clustered"
    }

    fn kind(&self) -> TopologyKind {
        TopologyKind::Clustered {
            clusters: self.clusters,
            gamma: self.gamma,
            omega: self.omega,
        }
    }

    fn validate(&self, nodes: usize) -> Result<(), TopologyError> {
        if nodes == 0 || !nodes.is_multiple_of(self.clusters) {
            return Err(TopologyError::Invalid(format!(
                "{} clusters do not divide {nodes} nodes evenly",
                self.clusters
            )));
        }
        Ok(())
    }

    fn generate(&self, nodes: usize, rng: &mut dyn RngCore) -> Result<OverlayGraph, TopologyError> {
        gen_clustered(nodes, self.clusters, self.gamma, self.omega, rng)
    }

    fn join(
        &self,
        g: &mut OverlayGraph,
        node: NodeId,
        rng: &mut dyn RngCore,
    ) -> Result<BTreeSet<NodeId>, GraphError> {
        let cluster = g.cluster_of(node).unwrap_or(0);
        join_clustered(g, node, cluster, self.clusters, self.gamma, self.omega, rng)
    }
}

pub fn gen_clustered(
    nodes: usize,
    clusters: usize,
    gamma: f64,
    omega: f64,
    rng: &mut dyn RngCore,
) -> Result<OverlayGraph, TopologyError> {
    let t = Clustered::new(clusters, gamma, omega)?;
    t.validate(nodes)?;
    let size = nodes / clusters;
    let mut g = OverlayGraph::new(nodes);
    for n in 0..nodes {
        g.set_cluster(NodeId(n), Some((n / size) as u32));
    }
    for c in 0..clusters {
        let base = c * size;
        for u in base..base + size {
            for v in u + 1..base + size {
                if rng.gen_bool(gamma) {
                    g.add_link(NodeId(u), NodeId(v)).expect("intra-cluster link");
                }
            }
        }
    }
    for u in 0..nodes {
        let own = u / size;
        for c in (0..clusters).filter(|&c| c != own) {
            if rng.gen_bool(omega) {
                let v = c * size + rng.gen_range(0..size);
                g.add_link(NodeId(u), NodeId(v)).expect("inter-cluster link");
            }
        }
    }
    Ok(g)
}

/// Links `node` into `cluster`: a `gamma` coin per active cluster member,
/// then an `omega` coin per other cluster that still has active members.
pub fn join_clustered(
    g: &mut OverlayGraph,
    node: NodeId,
    cluster: u32,
    clusters: usize,
    gamma: f64,
    omega: f64,
    rng: &mut dyn RngCore,
) -> Result<BTreeSet<NodeId>, GraphError> {
    if !g.is_active(node) {
        return Err(GraphError::Inactive(node));
    }
    g.set_cluster(node, Some(cluster));
    let mut members: Vec<Vec<NodeId>> = vec![Vec::new(); clusters];
    for m in g.active_nodes().filter(|&m| m != node) {
        if let Some(c) = g.cluster_of(m) {
            if let Some(bucket) = members.get_mut(c as usize) {
                bucket.push(m);
            }
        }
    }
    let mut chosen = BTreeSet::new();
    for &m in &members[cluster as usize] {
        if rng.gen_bool(gamma) {
            chosen.insert(m);
        }
    }
    for (c, bucket) in members.iter().enumerate() {
        if c == cluster as usize || bucket.is_empty() {
            continue;
        }
        if rng.gen_bool(omega) {
            chosen.insert(*bucket.choose(rng).expect("non-empty cluster"));
        }
    }
    for &m in &chosen {
        g.add_link(node, m)?;
    }
    Ok(chosen)
}
