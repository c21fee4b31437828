use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, RngCore};

use super::{Topology, TopologyError, TopologyKind, TopologyParams};
use crate::graph::{GraphError, NodeId, OverlayGraph};

const MAX_PAIRING_ATTEMPTS: usize = 1000;
const QUICK_TRIES: usize = 64;

/// Every node starts with the same degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Uniform {
    degree: usize,
}

impl Uniform {
    pub fn new(degree: usize) -> Self {
        Self { degree }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub(super) fn from_params(p: &TopologyParams) -> Result<Box<dyn Topology>, TopologyError> {
        let degree = p.degree.ok_or(TopologyError::MissingParam {
            topology: "uniform",
            param: "degree",
        })?;
        if degree == 0 {
            return Err(TopologyError::Invalid("degree must be at least 1".into()));
        }
        Ok(Box::new(Uniform::new(degree)))
    }
}

impl Topology for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn kind(&self) -> TopologyKind {
        TopologyKind::Uniform { degree: self.degree }
    }

    fn validate(&self, nodes: usize) -> Result<(), TopologyError> {
        validate_regular(nodes, self.degree)
    }

    fn generate(&self, nodes: usize, rng: &mut dyn RngCore) -> Result<OverlayGraph, TopologyError> {
        gen_uniform(nodes, self.degree, rng)
    }

    fn join(
        &self,
        g: &mut OverlayGraph,
        node: NodeId,
        rng: &mut dyn RngCore,
    ) -> Result<BTreeSet<NodeId>, GraphError> {
        join_uniform(g, node, self.degree, rng)
    }

    fn default_threshold(&self, _initial: &OverlayGraph) -> usize {
        self.degree
    }
}

fn validate_regular(nodes: usize, degree: usize) -> Result<(), TopologyError> {
    if degree == 0 {
        return Err(TopologyError::Invalid("degree must be at least 1".into()));
    }
    if degree >= nodes {
        return Err(TopologyError::Invalid(format!(
            "degree {degree} must be below the node count {nodes}"
        )));
    }
    if !(nodes * degree).is_multiple_of(2) {
        return Err(TopologyError::Invalid(format!(
            "nodes * degree must be even, got {nodes} * {degree}"
        )));
    }
    Ok(())
}

/// Simple `degree`-regular graph on `nodes` nodes.
///
/// Stubs are paired at random, rejecting pairs that would create a self-loop
/// or a parallel link. When no admissible pair is left the attempt restarts
/// from scratch.
pub fn gen_uniform(nodes: usize, degree: usize, rng: &mut dyn RngCore) -> Result<OverlayGraph, TopologyError> {
    validate_regular(nodes, degree)?;
    for _ in 0..MAX_PAIRING_ATTEMPTS {
        if let Some(g) = try_pairing(nodes, degree, rng) {
            return Ok(g);
        }
    }
    Err(TopologyError::PairingExhausted {
        nodes,
        degree,
        attempts: MAX_PAIRING_ATTEMPTS,
    })
}

fn try_pairing(nodes: usize, degree: usize, rng: &mut dyn RngCore) -> Option<OverlayGraph> {
    let mut g = OverlayGraph::new(nodes);
    let mut stubs: Vec<usize> = (0..nodes).flat_map(|n| std::iter::repeat_n(n, degree)).collect();
    stubs.shuffle(rng);

    while !stubs.is_empty() {
        let mut paired = false;
        for _ in 0..QUICK_TRIES {
            let i = rng.gen_range(0..stubs.len());
            let j = rng.gen_range(0..stubs.len());
            let (u, v) = (stubs[i], stubs[j]);
            if i != j && u != v && !g.has_link(NodeId(u), NodeId(v)) {
                remove_pair(&mut stubs, i, j);
                g.add_link(NodeId(u), NodeId(v)).ok()?;
                paired = true;
                break;
            }
        }
        if paired {
            continue;
        }
        // Few stubs left: enumerate admissible pairs, restart if none.
        let mut open: BTreeMap<usize, usize> = BTreeMap::new();
        for &s in &stubs {
            *open.entry(s).or_default() += 1;
        }
        let keys: Vec<usize> = open.keys().copied().collect();
        let (u, v) = keys
            .iter()
            .enumerate()
            .flat_map(|(a, &u)| keys[a + 1..].iter().map(move |&v| (u, v)))
            .filter(|&(u, v)| !g.has_link(NodeId(u), NodeId(v)))
            .choose(rng)?;
        let i = stubs.iter().position(|&s| s == u)?;
        let j = stubs.iter().position(|&s| s == v)?;
        remove_pair(&mut stubs, i, j);
        g.add_link(NodeId(u), NodeId(v)).ok()?;
    }
    Some(g)
}

fn remove_pair(stubs: &mut Vec<usize>, i: usize, j: usize) {
    let (hi, lo) = if i > j { (i, j) } else { (j, i) };
    stubs.swap_remove(hi);
    stubs.swap_remove(lo);
}

/// Links `node` to `degree` distinct active peers chosen uniformly, or to all
/// of them when fewer are available.
pub fn join_uniform(
    g: &mut OverlayGraph,
    node: NodeId,
    degree: usize,
    rng: &mut dyn RngCore,
) -> Result<BTreeSet<NodeId>, GraphError> {
    if !g.is_active(node) {
        return Err(GraphError::Inactive(node));
    }
    let peers: Vec<NodeId> = g.active_nodes().filter(|&m| m != node).collect();
    let chosen: BTreeSet<NodeId> = peers.choose_multiple(rng, degree.min(peers.len())).copied().collect();
    for &m in &chosen {
        g.add_link(node, m)?;
    }
    Ok(chosen)
}
