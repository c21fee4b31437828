//! Per-node cache of 2nd neighbors, keyed by the 1st neighbor they are
//! reached through.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{NodeId, OverlayGraph};

/// Map `q ↦ via(q)` where `via(q)` holds the nodes `n` reaches in two hops
/// through its 1st neighbor `q`: `Π_q − Π_n − {n}` when coherent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SecondNeighborView {
    via: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl SecondNeighborView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(via: BTreeMap<NodeId, BTreeSet<NodeId>>) -> Self {
        Self { via }
    }

    pub fn via(&self, q: NodeId) -> Option<&BTreeSet<NodeId>> {
        self.via.get(&q)
    }

    pub fn entries(&self) -> &BTreeMap<NodeId, BTreeSet<NodeId>> {
        &self.via
    }

    pub fn keys(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.via.keys().copied()
    }

    /// Union of all via sets.
    pub fn second_neighbors(&self) -> BTreeSet<NodeId> {
        self.via.values().flatten().copied().collect()
    }

    pub fn contains(&self, m: NodeId) -> bool {
        self.via.values().any(|s| s.contains(&m))
    }

    pub fn second_count(&self) -> usize {
        self.second_neighbors().len()
    }

    pub fn set_via(&mut self, q: NodeId, nodes: BTreeSet<NodeId>) {
        self.via.insert(q, nodes);
    }

    pub fn drop_via(&mut self, q: NodeId) -> Option<BTreeSet<NodeId>> {
        self.via.remove(&q)
    }

    /// Records `m` as reachable through `q`. No-op if `q` is not a key.
    pub fn insert_via(&mut self, q: NodeId, m: NodeId) -> bool {
        self.via.get_mut(&q).is_some_and(|s| s.insert(m))
    }

    pub fn remove_via(&mut self, q: NodeId, m: NodeId) -> bool {
        self.via.get_mut(&q).is_some_and(|s| s.remove(&m))
    }

    /// Removes `m` from every via set (used when `m` becomes a 1st neighbor).
    pub fn forget(&mut self, m: NodeId) {
        for s in self.via.values_mut() {
            s.remove(&m);
        }
    }

    pub fn clear(&mut self) {
        self.via.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.via.is_empty()
    }
}

/// `Π_q − Π_n − {n}`.
pub fn via_set(g: &OverlayGraph, n: NodeId, q: NodeId) -> BTreeSet<NodeId> {
    let own = g.neighbors(n);
    g.neighbors(q)
        .iter()
        .copied()
        .filter(|m| *m != n && !own.contains(m))
        .collect()
}

/// Ground-truth view of `n` recomputed from the adjacency.
pub fn rebuild_second_view(g: &OverlayGraph, n: NodeId) -> SecondNeighborView {
    let via = g
        .neighbors(n)
        .iter()
        .map(|&q| (q, via_set(g, n, q)))
        .collect();
    SecondNeighborView { via }
}
