//! Overlay graph over a fixed table of node slots.
//!
//! Every slot is either active or inactive. Failures and arrivals toggle the
//! state of a slot instead of allocating new identifiers, so `NodeId`s stay
//! valid for the whole simulation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::unionfind::UnionFind;

/// Index into the node-slot table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(v: usize) -> Self {
        NodeId(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeState {
    Active,
    Inactive,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("node {0} is out of range")]
    OutOfRange(NodeId),
    #[error("self-loop requested on node {0}")]
    SelfLoop(NodeId),
    #[error("node {0} is inactive")]
    Inactive(NodeId),
    #[error("node {0} is already active")]
    AlreadyActive(NodeId),
    #[error("node {0} is already inactive")]
    AlreadyInactive(NodeId),
}

/// What a failure removed from the overlay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureReport {
    pub failed: NodeId,
    /// Neighbor set of the failed node immediately before the failure.
    pub former_neighbors: BTreeSet<NodeId>,
    /// Adjacency of each survivor right after the incident links were removed.
    pub survivor_adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

/// Undirected simple graph over node slots with per-slot state and optional
/// cluster labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlayGraph {
    adjacency: Vec<BTreeSet<NodeId>>,
    states: Vec<NodeState>,
    cluster_of: Vec<Option<u32>>,
}

impl OverlayGraph {
    /// `slots` nodes, all active, no links.
    pub fn new(slots: usize) -> Self {
        Self {
            adjacency: vec![BTreeSet::new(); slots],
            states: vec![NodeState::Active; slots],
            cluster_of: vec![None; slots],
        }
    }

    /// `slots` nodes, all inactive.
    pub fn new_inactive(slots: usize) -> Self {
        Self {
            adjacency: vec![BTreeSet::new(); slots],
            states: vec![NodeState::Inactive; slots],
            cluster_of: vec![None; slots],
        }
    }

    pub fn slot_count(&self) -> usize {
        self.states.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.slot_count()).map(NodeId)
    }

    fn check(&self, n: NodeId) -> Result<(), GraphError> {
        if n.0 < self.slot_count() {
            Ok(())
        } else {
            Err(GraphError::OutOfRange(n))
        }
    }

    pub fn state(&self, n: NodeId) -> NodeState {
        self.states[n.0]
    }

    pub fn is_active(&self, n: NodeId) -> bool {
        self.states.get(n.0) == Some(&NodeState::Active)
    }

    pub fn active_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(move |&n| self.is_active(n))
    }

    pub fn inactive_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(move |&n| !self.is_active(n))
    }

    pub fn active_count(&self) -> usize {
        self.states.iter().filter(|s| **s == NodeState::Active).count()
    }

    pub fn neighbors(&self, n: NodeId) -> &BTreeSet<NodeId> {
        &self.adjacency[n.0]
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.adjacency[n.0].len()
    }

    pub fn has_link(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency.get(a.0).is_some_and(|s| s.contains(&b))
    }

    pub fn cluster_of(&self, n: NodeId) -> Option<u32> {
        self.cluster_of[n.0]
    }

    pub fn set_cluster(&mut self, n: NodeId, label: Option<u32>) {
        self.cluster_of[n.0] = label;
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// All links as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (u, adj) in self.adjacency.iter().enumerate() {
            for &v in adj.range(NodeId(u + 1)..) {
                out.push((NodeId(u), v));
            }
        }
        out
    }

    /// Adds the undirected link `a`–`b`. Returns `true` if the link is new.
    pub fn add_link(&mut self, a: NodeId, b: NodeId) -> Result<bool, GraphError> {
        self.check(a)?;
        self.check(b)?;
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        for n in [a, b] {
            if !self.is_active(n) {
                return Err(GraphError::Inactive(n));
            }
        }
        let fresh = self.adjacency[a.0].insert(b);
        self.adjacency[b.0].insert(a);
        Ok(fresh)
    }

    /// Deactivates `f` and removes all of its links.
    pub fn fail_node(&mut self, f: NodeId) -> Result<FailureReport, GraphError> {
        self.check(f)?;
        if !self.is_active(f) {
            return Err(GraphError::AlreadyInactive(f));
        }
        let former = std::mem::take(&mut self.adjacency[f.0]);
        let mut survivor_adjacency = BTreeMap::new();
        for &n in &former {
            self.adjacency[n.0].remove(&f);
            survivor_adjacency.insert(n, self.adjacency[n.0].clone());
        }
        self.states[f.0] = NodeState::Inactive;
        Ok(FailureReport {
            failed: f,
            former_neighbors: former,
            survivor_adjacency,
        })
    }

    /// Reactivates `n` with no links. `cluster` overrides the slot label when
    /// given; otherwise the existing label is kept.
    pub fn activate_node(&mut self, n: NodeId, cluster: Option<u32>) -> Result<(), GraphError> {
        self.check(n)?;
        if self.is_active(n) {
            return Err(GraphError::AlreadyActive(n));
        }
        debug_assert!(self.adjacency[n.0].is_empty());
        self.states[n.0] = NodeState::Active;
        if cluster.is_some() {
            self.cluster_of[n.0] = cluster;
        }
        Ok(())
    }

    /// Connected components of the active subgraph, found by BFS.
    ///
    /// Components are listed in order of their smallest member, and every
    /// component is sorted.
    pub fn components(&self) -> Vec<Vec<NodeId>> {
        let mut seen = vec![false; self.slot_count()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in self.active_nodes() {
            if seen[start.0] {
                continue;
            }
            seen[start.0] = true;
            queue.push_back(start);
            let mut comp = Vec::new();
            while let Some(u) = queue.pop_front() {
                comp.push(u);
                for &v in &self.adjacency[u.0] {
                    if !seen[v.0] {
                        seen[v.0] = true;
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Same partition as [`components`](Self::components), computed with a
    /// disjoint-set forest.
    pub fn components_union_find(&self) -> Vec<Vec<NodeId>> {
        let mut uf = UnionFind::new(self.slot_count());
        for (u, v) in self.edges() {
            uf.union(u.0, v.0);
        }
        let mut groups: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
        for n in self.active_nodes() {
            groups.entry(uf.find(n.0)).or_default().push(n);
        }
        let mut out: Vec<Vec<NodeId>> = groups.into_values().collect();
        out.sort_unstable_by_key(|c| c[0]);
        out
    }

    /// Size of the largest component over the active count; 0 when nothing
    /// is active.
    pub fn main_component_fraction(&self) -> f64 {
        let active = self.active_count();
        if active == 0 {
            return 0.0;
        }
        let largest = self.components().iter().map(Vec::len).max().unwrap_or(0);
        largest as f64 / active as f64
    }

    pub fn isolated_count(&self) -> usize {
        self.active_nodes().filter(|&n| self.degree(n) == 0).count()
    }

    /// Writes the plain-text edge-list snapshot.
    pub fn write_edge_list<W: Write>(&self, mut w: W, step: u64) -> io::Result<()> {
        writeln!(
            w,
            "# nodes={} active={} step={}",
            self.slot_count(),
            self.active_count(),
            step
        )?;
        for (u, v) in self.edges() {
            writeln!(w, "{u} {v}")?;
        }
        for n in self.nodes() {
            if let Some(label) = self.cluster_of(n) {
                writeln!(w, "c {n} {label}")?;
            }
        }
        Ok(())
    }
}

/// Parsed form of an edge-list snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeListSnapshot {
    pub nodes: usize,
    pub active: usize,
    pub step: u64,
    pub edges: Vec<(NodeId, NodeId)>,
    pub clusters: Vec<(NodeId, u32)>,
}

pub fn read_edge_list<R: BufRead>(r: R) -> io::Result<EdgeListSnapshot> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| bad("missing header".into()))??;
    let rest = header
        .strip_prefix("# ")
        .ok_or_else(|| bad(format!("bad header: {header}")))?;
    let mut fields = BTreeMap::new();
    for kv in rest.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| bad(format!("bad header field: {kv}")))?;
        let v: u64 = v.parse().map_err(|_| bad(format!("bad number: {v}")))?;
        fields.insert(k.to_string(), v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing {k}")));
    let mut snap = EdgeListSnapshot {
        nodes: get("nodes")? as usize,
        active: get("active")? as usize,
        step: get("step")?,
        edges: Vec::new(),
        clusters: Vec::new(),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad number: {s}")));
    for line in lines {
        let line = line?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [] => {}
            ["c", id, label] => snap.clusters.push((NodeId(num(id)?), num(label)? as u32)),
            [u, v] => snap.edges.push((NodeId(num(u)?), NodeId(num(v)?))),
            _ => return Err(bad(format!("bad line: {line}"))),
        }
    }
    Ok(snap)
}
