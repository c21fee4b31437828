//! Local self-healing protocol.
//!
//! When a neighbor `f` of `n` fails, `n` looks at the nodes `f` was linked
//! to. Any of them that `n` no longer reaches within two hops goes into the
//! repair set `P` of a [`RepairSession`]. The session waits a random time,
//! picks a target from `P` and asks it for a link. Targets accept unless the
//! requester is already one of their 1st or 2nd neighbors. Every link
//! created is announced to the creator's other neighbors, which drop the new
//! neighbor from their own repair sets and record it in their 2nd-neighbor
//! cache.
//!
//! Handlers are plain state transitions: they mutate the graph and caches and
//! push [`Effect`]s (messages to send, timers to arm) for the event loop.

use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::graph::{FailureReport, NodeId, OverlayGraph};
use crate::view::{rebuild_second_view, via_set, SecondNeighborView};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("threshold_degree must be at least 1")]
    Threshold,
    #[error("contention wait bounds must satisfy 0 <= wait_min < wait_max, got [{0}, {1})")]
    WaitBounds(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConfig {
    /// A node only initiates repairs while its degree is at most this value.
    pub threshold_degree: usize,
    pub wait_min: f64,
    pub wait_max: f64,
    /// ON/OFF mode.
    pub enabled: bool,
}

impl ProtocolConfig {
    pub fn new(threshold_degree: usize, enabled: bool) -> Self {
        Self {
            threshold_degree,
            wait_min: 0.0,
            wait_max: 1.0,
            enabled,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.threshold_degree < 1 {
            return Err(ProtocolError::Threshold);
        }
        let ok = self.wait_min.is_finite()
            && self.wait_max.is_finite()
            && 0.0 <= self.wait_min
            && self.wait_min < self.wait_max;
        if !ok {
            return Err(ProtocolError::WaitBounds(self.wait_min, self.wait_max));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolMessage {
    /// Carries the requester's neighbor list so the acceptor can cache it.
    LinkRequest {
        from: NodeId,
        to: NodeId,
        neighbors: Vec<NodeId>,
    },
    /// On acceptance, carries the acceptor's neighbor list.
    LinkAnswer {
        from: NodeId,
        to: NodeId,
        accepted: bool,
        neighbors: Vec<NodeId>,
    },
    /// `owner` gained `new_neighbor`; sent to `notified`, a neighbor of `owner`.
    LinkCreated {
        owner: NodeId,
        new_neighbor: NodeId,
        notified: NodeId,
    },
    /// `owner` lost `lost_neighbor`.
    NeighborLost {
        owner: NodeId,
        lost_neighbor: NodeId,
        notified: NodeId,
    },
}

impl ProtocolMessage {
    pub fn sender(&self) -> NodeId {
        match *self {
            ProtocolMessage::LinkRequest { from, .. } | ProtocolMessage::LinkAnswer { from, .. } => from,
            ProtocolMessage::LinkCreated { owner, .. } | ProtocolMessage::NeighborLost { owner, .. } => owner,
        }
    }

    pub fn recipient(&self) -> NodeId {
        match *self {
            ProtocolMessage::LinkRequest { to, .. } | ProtocolMessage::LinkAnswer { to, .. } => to,
            ProtocolMessage::LinkCreated { notified, .. } | ProtocolMessage::NeighborLost { notified, .. } => {
                notified
            }
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ProtocolMessage::LinkRequest { .. } => "link_request",
            ProtocolMessage::LinkAnswer { .. } => "link_answer",
            ProtocolMessage::LinkCreated { .. } => "link_created",
            ProtocolMessage::NeighborLost { .. } => "neighbor_lost",
        }
    }

    /// Neighbor-update notifications, as opposed to the request/answer pair.
    pub fn is_notification(&self) -> bool {
        matches!(
            self,
            ProtocolMessage::LinkCreated { .. } | ProtocolMessage::NeighborLost { .. }
        )
    }

    /// Trace payload: `;`-separated fields, no commas.
    pub fn payload(&self) -> String {
        let list = |v: &[NodeId]| v.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ");
        match self {
            ProtocolMessage::LinkRequest { neighbors, .. } => format!("neighbors={}", list(neighbors)),
            ProtocolMessage::LinkAnswer { accepted, neighbors, .. } => {
                format!("accepted={};neighbors={}", u8::from(*accepted), list(neighbors))
            }
            ProtocolMessage::LinkCreated { new_neighbor, .. } => format!("new={new_neighbor}"),
            ProtocolMessage::NeighborLost { lost_neighbor, .. } => format!("lost={lost_neighbor}"),
        }
    }
}

/// Where a former neighbor `p` of the failed node stands relative to `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    AlreadyFirst,
    StillSecond,
    Lost,
}

pub fn classify_after_failure(
    p: NodeId,
    first: &BTreeSet<NodeId>,
    second: &BTreeSet<NodeId>,
) -> Classification {
    if first.contains(&p) {
        Classification::AlreadyFirst
    } else if second.contains(&p) {
        Classification::StillSecond
    } else {
        Classification::Lost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Active-side state of one repair episode at `owner` for the failed `failed`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairSession {
    pub id: SessionId,
    pub owner: NodeId,
    pub failed: NodeId,
    pub pending: BTreeSet<NodeId>,
    pub awaiting_answer: Option<NodeId>,
    /// Sub-step time of the armed contention timer.
    pub timer: Option<f64>,
    /// Neighbor list sent with the outstanding request.
    pub advertised: BTreeSet<NodeId>,
    pub firings: usize,
    pub refusals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Send(ProtocolMessage),
    Wake { owner: NodeId, session: SessionId, at: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProtocolStats {
    pub sessions_opened: u64,
    pub requests: u64,
    pub accepts: u64,
    pub refusals: u64,
    pub aborted: u64,
    pub completed: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("node {node}: cached view {cached:?} differs from adjacency-derived {expected:?}")]
pub struct CoherenceError {
    pub node: NodeId,
    pub cached: SecondNeighborView,
    pub expected: SecondNeighborView,
}

/// Protocol state of every node slot.
#[derive(Debug, Clone)]
pub struct Protocol {
    config: ProtocolConfig,
    views: Vec<SecondNeighborView>,
    sessions: Vec<Vec<RepairSession>>,
    next_session: u64,
    stats: ProtocolStats,
}

impl Protocol {
    pub fn new(config: ProtocolConfig, slots: usize) -> Self {
        Self {
            config,
            views: vec![SecondNeighborView::new(); slots],
            sessions: vec![Vec::new(); slots],
            next_session: 0,
            stats: ProtocolStats::default(),
        }
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn enabled(&self) -> bool {
        self.config.enabled
    }

    pub fn stats(&self) -> ProtocolStats {
        self.stats
    }

    pub fn view(&self, n: NodeId) -> &SecondNeighborView {
        &self.views[n.0]
    }

    pub fn views(&self) -> &[SecondNeighborView] {
        &self.views
    }

    pub fn sessions(&self, n: NodeId) -> &[RepairSession] {
        &self.sessions[n.0]
    }

    pub fn open_sessions(&self) -> usize {
        self.sessions.iter().map(Vec::len).sum()
    }

    /// Replaces every cache with the view derived from `g`.
    pub fn seed_views(&mut self, g: &OverlayGraph) {
        for n in g.nodes() {
            self.views[n.0] = if g.is_active(n) {
                rebuild_second_view(g, n)
            } else {
                SecondNeighborView::new()
            };
        }
    }

    pub fn reset_node(&mut self, n: NodeId) {
        self.views[n.0].clear();
        self.sessions[n.0].clear();
    }

    /// Compares every cache against [`rebuild_second_view`].
    pub fn check_coherence(&self, g: &OverlayGraph) -> Result<(), CoherenceError> {
        for n in g.nodes() {
            let expected = if g.is_active(n) {
                rebuild_second_view(g, n)
            } else {
                SecondNeighborView::new()
            };
            if self.views[n.0] != expected {
                return Err(CoherenceError {
                    node: n,
                    cached: self.views[n.0].clone(),
                    expected,
                });
            }
        }
        Ok(())
    }

    fn guard_holds(&self, g: &OverlayGraph, n: NodeId) -> bool {
        g.degree(n) <= self.config.threshold_degree
    }

    fn draw_wait(&self, rng: &mut dyn RngCore) -> f64 {
        rng.gen_range(self.config.wait_min..self.config.wait_max)
    }

    fn broadcast_created(g: &OverlayGraph, owner: NodeId, new: NodeId, out: &mut Vec<Effect>) {
        for &m in g.neighbors(owner) {
            if m != new {
                out.push(Effect::Send(ProtocolMessage::LinkCreated {
                    owner,
                    new_neighbor: new,
                    notified: m,
                }));
            }
        }
    }

    /// Cache bookkeeping once `n` has `p` as a 1st neighbor. `advertised` is
    /// `p`'s neighbor list as `p` reported it.
    fn gained_neighbor(&mut self, g: &OverlayGraph, n: NodeId, p: NodeId, advertised: &[NodeId]) {
        let own = g.neighbors(n);
        let view = &mut self.views[n.0];
        view.forget(p);
        let via = advertised
            .iter()
            .copied()
            .filter(|m| *m != n && !own.contains(m))
            .collect();
        view.set_via(p, via);
        for s in &mut self.sessions[n.0] {
            s.pending.remove(&p);
        }
    }

    /// Failure of `report.failed`: every former neighbor drops its cached
    /// entry, tells its remaining neighbors, and may open a repair session.
    pub fn handle_failure(
        &mut self,
        g: &OverlayGraph,
        report: &FailureReport,
        now: f64,
        rng: &mut dyn RngCore,
        out: &mut Vec<Effect>,
    ) {
        let f = report.failed;
        self.reset_node(f);
        for &n in &report.former_neighbors {
            self.views[n.0].drop_via(f);
            for &m in g.neighbors(n) {
                out.push(Effect::Send(ProtocolMessage::NeighborLost {
                    owner: n,
                    lost_neighbor: f,
                    notified: m,
                }));
            }
        }
        for &n in &report.former_neighbors {
            self.on_neighbor_failed(g, n, f, &report.former_neighbors, now, rng, out);
        }
    }

    /// Opens a session at `n` for the lost 2nd neighbors among `failed_neighbors`.
    ///
    /// Expects `f` already removed from `Π_n` and from `n`'s cache.
    #[allow(clippy::too_many_arguments)]
    pub fn on_neighbor_failed(
        &mut self,
        g: &OverlayGraph,
        n: NodeId,
        f: NodeId,
        failed_neighbors: &BTreeSet<NodeId>,
        now: f64,
        rng: &mut dyn RngCore,
        out: &mut Vec<Effect>,
    ) -> Option<SessionId> {
        if !self.config.enabled || !g.is_active(n) {
            return None;
        }
        let first = g.neighbors(n);
        let second = self.views[n.0].second_neighbors();
        let pending: BTreeSet<NodeId> = failed_neighbors
            .iter()
            .copied()
            .filter(|&p| p != n && g.is_active(p))
            .filter(|&p| classify_after_failure(p, first, &second) == Classification::Lost)
            .collect();
        if pending.is_empty() || !self.guard_holds(g, n) {
            return None;
        }
        let id = SessionId(self.next_session);
        self.next_session += 1;
        let at = now + self.draw_wait(rng);
        self.sessions[n.0].push(RepairSession {
            id,
            owner: n,
            failed: f,
            pending,
            awaiting_answer: None,
            timer: Some(at),
            advertised: BTreeSet::new(),
            firings: 0,
            refusals: 0,
        });
        self.stats.sessions_opened += 1;
        out.push(Effect::Wake { owner: n, session: id, at });
        Some(id)
    }

    fn close(&mut self, owner: NodeId, idx: usize) {
        let s = self.sessions[owner.0].remove(idx);
        if s.pending.is_empty() {
            self.stats.completed += 1;
        } else {
            self.stats.aborted += 1;
        }
    }

    /// Contention timer expiry: extract a random target and request a link.
    pub fn on_timer(
        &mut self,
        g: &OverlayGraph,
        owner: NodeId,
        session: SessionId,
        rng: &mut dyn RngCore,
        out: &mut Vec<Effect>,
    ) -> Option<NodeId> {
        let idx = self.sessions[owner.0].iter().position(|s| s.id == session)?;
        let guard = self.guard_holds(g, owner);
        let s = &mut self.sessions[owner.0][idx];
        if s.awaiting_answer.is_some() {
            return None;
        }
        s.timer = None;
        if s.pending.is_empty() || !guard {
            self.close(owner, idx);
            return None;
        }
        let pick = rng.gen_range(0..s.pending.len());
        let p = *s.pending.iter().nth(pick).expect("index in range");
        s.pending.remove(&p);
        s.awaiting_answer = Some(p);
        s.advertised = g.neighbors(owner).clone();
        s.firings += 1;
        self.stats.requests += 1;
        out.push(Effect::Send(ProtocolMessage::LinkRequest {
            from: owner,
            to: p,
            neighbors: g.neighbors(owner).iter().copied().collect(),
        }));
        Some(p)
    }

    /// Passive side: `n` receives a link request from `p`. Returns whether it
    /// was accepted.
    pub fn on_link_request(
        &mut self,
        g: &mut OverlayGraph,
        n: NodeId,
        p: NodeId,
        advertised: &[NodeId],
        out: &mut Vec<Effect>,
    ) -> bool {
        if !g.is_active(n) || !g.is_active(p) {
            return false;
        }
        let known = p == n || g.has_link(n, p) || self.views[n.0].contains(p);
        if known {
            out.push(Effect::Send(ProtocolMessage::LinkAnswer {
                from: n,
                to: p,
                accepted: false,
                neighbors: Vec::new(),
            }));
            return false;
        }
        out.push(Effect::Send(ProtocolMessage::LinkAnswer {
            from: n,
            to: p,
            accepted: true,
            neighbors: g.neighbors(n).iter().copied().collect(),
        }));
        Self::broadcast_created(g, n, p, out);
        g.add_link(n, p).expect("both endpoints active");
        self.gained_neighbor(g, n, p, advertised);
        true
    }

    /// Active side: the answer from `p` to `n`'s outstanding request.
    #[allow(clippy::too_many_arguments)]
    pub fn on_link_answer(
        &mut self,
        g: &mut OverlayGraph,
        n: NodeId,
        p: NodeId,
        accepted: bool,
        advertised: &[NodeId],
        now: f64,
        rng: &mut dyn RngCore,
        out: &mut Vec<Effect>,
    ) {
        let Some(idx) = self.sessions[n.0]
            .iter()
            .position(|s| s.awaiting_answer == Some(p))
        else {
            return;
        };
        let sent = std::mem::take(&mut self.sessions[n.0][idx].advertised);
        self.sessions[n.0][idx].awaiting_answer = None;

        if accepted && g.is_active(n) && g.is_active(p) {
            g.add_link(n, p).expect("both endpoints active");
            self.stats.accepts += 1;
            Self::broadcast_created(g, n, p, out);
            // Neighbor changes made after the request left.
            let current: BTreeSet<NodeId> = g.neighbors(n).iter().copied().filter(|&m| m != p).collect();
            for &x in current.difference(&sent) {
                out.push(Effect::Send(ProtocolMessage::LinkCreated {
                    owner: n,
                    new_neighbor: x,
                    notified: p,
                }));
            }
            for &x in sent.difference(&current) {
                out.push(Effect::Send(ProtocolMessage::NeighborLost {
                    owner: n,
                    lost_neighbor: x,
                    notified: p,
                }));
            }
            self.gained_neighbor(g, n, p, advertised);
        } else {
            self.stats.refusals += 1;
            self.sessions[n.0][idx].refusals += 1;
        }

        let guard = self.guard_holds(g, n);
        if !self.sessions[n.0][idx].pending.is_empty() && guard {
            let at = now + self.draw_wait(rng);
            let s = &mut self.sessions[n.0][idx];
            s.timer = Some(at);
            out.push(Effect::Wake {
                owner: n,
                session: s.id,
                at,
            });
        } else {
            self.close(n, idx);
        }
    }

    /// `q` announced its new link to `m`.
    pub fn on_link_created(&mut self, g: &OverlayGraph, n: NodeId, q: NodeId, m: NodeId) {
        if !g.has_link(n, q) {
            return;
        }
        if m == n {
            return;
        }
        for s in &mut self.sessions[n.0] {
            s.pending.remove(&m);
        }
        if g.has_link(n, m) {
            return;
        }
        self.views[n.0].insert_via(q, m);
    }

    /// `q` announced it lost its neighbor `m`.
    pub fn on_neighbor_lost(&mut self, g: &OverlayGraph, n: NodeId, q: NodeId, m: NodeId) {
        if g.has_link(n, q) {
            self.views[n.0].remove_via(q, m);
        }
    }

    /// Cache handshake after `x` joined with `links`; each new peer announces
    /// `x` to its other neighbors.
    pub fn handle_join(&mut self, g: &OverlayGraph, x: NodeId, links: &BTreeSet<NodeId>, out: &mut Vec<Effect>) {
        self.sessions[x.0].clear();
        self.views[x.0] = rebuild_second_view(g, x);
        for &y in links {
            self.views[y.0].forget(x);
            self.views[y.0].set_via(x, via_set(g, y, x));
            for s in &mut self.sessions[y.0] {
                s.pending.remove(&x);
            }
            Self::broadcast_created(g, y, x, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn ids(v: &[usize]) -> BTreeSet<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    fn graph(n: usize, edges: &[(usize, usize)]) -> OverlayGraph {
        let mut g = OverlayGraph::new(n);
        for &(a, b) in edges {
            g.add_link(NodeId(a), NodeId(b)).unwrap();
        }
        g
    }

    /// Delivers messages in FIFO order and fires timers in time order until
    /// nothing is left. Returns the message tags in delivery order.
    fn settle(p: &mut Protocol, g: &mut OverlayGraph, effects: Vec<Effect>, rng: &mut ChaCha8Rng) -> Vec<&'static str> {
        let mut msgs: VecDeque<ProtocolMessage> = VecDeque::new();
        let mut timers: Vec<(f64, NodeId, SessionId)> = Vec::new();
        let mut log = Vec::new();
        let push = |effects: Vec<Effect>, msgs: &mut VecDeque<ProtocolMessage>, timers: &mut Vec<(f64, NodeId, SessionId)>| {
            for e in effects {
                match e {
                    Effect::Send(m) => msgs.push_back(m),
                    Effect::Wake { owner, session, at } => timers.push((at, owner, session)),
                }
            }
        };
        push(effects, &mut msgs, &mut timers);
        loop {
            let mut out = Vec::new();
            if let Some(msg) = msgs.pop_front() {
                log.push(msg.tag());
                deliver(p, g, msg, rng, &mut out);
            } else if !timers.is_empty() {
                timers.sort_by(|a, b| a.0.total_cmp(&b.0));
                let (_, owner, sid) = timers.remove(0);
                log.push("timer");
                p.on_timer(g, owner, sid, rng, &mut out);
            } else {
                break;
            }
            push(out, &mut msgs, &mut timers);
        }
        log
    }

    fn deliver(p: &mut Protocol, g: &mut OverlayGraph, msg: ProtocolMessage, rng: &mut ChaCha8Rng, out: &mut Vec<Effect>) {
        match msg {
            ProtocolMessage::LinkRequest { from, to, neighbors } => {
                p.on_link_request(g, to, from, &neighbors, out);
            }
            ProtocolMessage::LinkAnswer { from, to, accepted, neighbors } => {
                p.on_link_answer(g, to, from, accepted, &neighbors, 0.0, rng, out);
            }
            ProtocolMessage::LinkCreated { owner, new_neighbor, notified } => {
                p.on_link_created(g, notified, owner, new_neighbor)
            }
            ProtocolMessage::NeighborLost { owner, lost_neighbor, notified } => {
                p.on_neighbor_lost(g, notified, owner, lost_neighbor)
            }
        }
    }

    fn fail(p: &mut Protocol, g: &mut OverlayGraph, f: usize, rng: &mut ChaCha8Rng) -> Vec<Effect> {
        let report = g.fail_node(NodeId(f)).unwrap();
        let mut out = Vec::new();
        p.handle_failure(g, &report, 0.0, rng, &mut out);
        out
    }

    #[test]
    fn classification_cases() {
        let first = ids(&[1, 2]);
        let second = ids(&[3]);
        assert_eq!(classify_after_failure(NodeId(1), &first, &second), Classification::AlreadyFirst);
        assert_eq!(classify_after_failure(NodeId(3), &first, &second), Classification::StillSecond);
        assert_eq!(classify_after_failure(NodeId(4), &first, &second), Classification::Lost);
    }

    #[test]
    fn square_with_hub_loses_opposite_corners() {
        // square 0-1-2-3-0, hub 4 linked to all corners
        let mut g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 0), (4, 0), (4, 1), (4, 2), (4, 3)]);
        let mut p = Protocol::new(ProtocolConfig::new(4, true), 5);
        p.seed_views(&g);
        let report = g.fail_node(NodeId(4)).unwrap();
        for &n in &report.former_neighbors {
            p.views[n.0].drop_via(NodeId(4));
        }
        // hand enumeration for node 0: Π_0 = {1, 3}, Π²_0 = {2}
        assert_eq!(g.neighbors(NodeId(0)), &ids(&[1, 3]));
        let second = p.view(NodeId(0)).second_neighbors();
        assert_eq!(second, ids(&[2]));
        let first = g.neighbors(NodeId(0)).clone();
        assert_eq!(classify_after_failure(NodeId(1), &first, &second), Classification::AlreadyFirst);
        assert_eq!(classify_after_failure(NodeId(2), &first, &second), Classification::StillSecond);

        // Drop edge 1-2 and 3-2 variants: a corner with no shared surviving neighbor is lost.
        let mut g = graph(5, &[(0, 1), (2, 3), (4, 0), (4, 1), (4, 2), (4, 3)]);
        let mut p = Protocol::new(ProtocolConfig::new(4, true), 5);
        p.seed_views(&g);
        let report = g.fail_node(NodeId(4)).unwrap();
        for &n in &report.former_neighbors {
            p.views[n.0].drop_via(NodeId(4));
        }
        let first = g.neighbors(NodeId(0)).clone();
        let second = p.view(NodeId(0)).second_neighbors();
        assert_eq!(classify_after_failure(NodeId(2), &first, &second), Classification::Lost);
        assert_eq!(classify_after_failure(NodeId(3), &first, &second), Classification::Lost);
    }

    #[test]
    fn no_session_when_everything_still_reachable() {
        // triangle with a hub: after hub failure everybody is still 1st neighbor
        let mut g = graph(4, &[(0, 1), (1, 2), (2, 0), (3, 0), (3, 1), (3, 2)]);
        let mut p = Protocol::new(ProtocolConfig::new(3, true), 4);
        p.seed_views(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = fail(&mut p, &mut g, 3, &mut rng);
        assert_eq!(p.open_sessions(), 0);
        assert!(out.iter().all(|e| matches!(e, Effect::Send(m) if m.is_notification())));
    }

    #[test]
    fn degree_guard_blocks_session() {
        // star center 0 failing; leaf 1 also has extra neighbors 5, 6, 7
        let mut g = graph(8, &[(0, 1), (0, 2), (1, 5), (1, 6), (1, 7)]);
        let mut p = Protocol::new(ProtocolConfig::new(2, true), 8);
        p.seed_views(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        fail(&mut p, &mut g, 0, &mut rng);
        // leaf 1 has degree 3 > 2: no session; leaf 2 has degree 0: session targeting 1
        assert!(p.sessions(NodeId(1)).is_empty());
        assert_eq!(p.sessions(NodeId(2)).len(), 1);
        assert_eq!(p.sessions(NodeId(2))[0].pending, ids(&[1]));
    }

    #[test]
    fn bridge_hub_failure_opens_sessions_on_both_sides() {
        // two triangles {0,1,2} and {3,4,5} bridged only through hub 6
        let mut g = graph(7, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (6, 0), (6, 3)]);
        let mut p = Protocol::new(ProtocolConfig::new(3, true), 7);
        p.seed_views(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = fail(&mut p, &mut g, 6, &mut rng);
        assert_eq!(p.sessions(NodeId(0))[0].pending, ids(&[3]));
        assert_eq!(p.sessions(NodeId(3))[0].pending, ids(&[0]));
        settle(&mut p, &mut g, out, &mut rng);
        assert_eq!(g.components().len(), 1);
        assert!(g.has_link(NodeId(0), NodeId(3)));
        assert_eq!(g.edge_count(), 7);
        assert_eq!(p.open_sessions(), 0);
        p.check_coherence(&g).unwrap();
    }

    #[test]
    fn single_target_fire_and_accept() {
        // path 0 - 1 - 2; 1 fails; 0 and 2 both target each other
        let mut g = graph(3, &[(0, 1), (1, 2)]);
        let mut p = Protocol::new(ProtocolConfig::new(2, true), 3);
        p.seed_views(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = fail(&mut p, &mut g, 1, &mut rng);
        assert_eq!(p.open_sessions(), 2);
        let mut out2 = Vec::new();
        let sid = p.sessions(NodeId(0))[0].id;
        assert_eq!(p.on_timer(&g, NodeId(0), sid, &mut rng, &mut out2), Some(NodeId(2)));
        let s = &p.sessions(NodeId(0))[0];
        assert!(s.pending.is_empty());
        assert_eq!(s.awaiting_answer, Some(NodeId(2)));
        let mut all = out;
        all.retain(|e| !matches!(e, Effect::Wake { owner, .. } if *owner == NodeId(0)));
        all.extend(out2);
        settle(&mut p, &mut g, all, &mut rng);
        assert!(g.has_link(NodeId(0), NodeId(2)));
        assert_eq!(g.edge_count(), 1);
        assert_eq!(p.open_sessions(), 0);
        assert_eq!(p.stats().accepts, 1);
        // 2's own session was satisfied by accepting 0
        assert_eq!(p.stats().refusals, 0);
        assert_eq!(p.stats().completed, 2);
        p.check_coherence(&g).unwrap();
    }

    #[test]
    fn target_choice_replays_with_fixed_seed() {
        let pick = |seed| {
            let mut g = graph(5, &[(0, 4), (1, 4), (2, 4), (3, 4)]);
            let mut p = Protocol::new(ProtocolConfig::new(3, true), 5);
            p.seed_views(&g);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            fail(&mut p, &mut g, 4, &mut rng);
            let sid = p.sessions(NodeId(0))[0].id;
            assert_eq!(p.sessions(NodeId(0))[0].pending, ids(&[1, 2, 3]));
            p.on_timer(&g, NodeId(0), sid, &mut rng, &mut Vec::new())
        };
        assert_eq!(pick(42), pick(42));
        assert_eq!(pick(7), pick(7));
    }

    #[test]
    fn guard_aborts_at_fire_time() {
        let mut g = graph(6, &[(0, 1), (1, 2)]);
        let mut p = Protocol::new(ProtocolConfig::new(1, true), 6);
        p.seed_views(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        fail(&mut p, &mut g, 1, &mut rng);
        let sid = p.sessions(NodeId(0))[0].id;
        // node 0 grows past the threshold before the timer expires
        g.add_link(NodeId(0), NodeId(3)).unwrap();
        g.add_link(NodeId(0), NodeId(4)).unwrap();
        let mut out = Vec::new();
        assert_eq!(p.on_timer(&g, NodeId(0), sid, &mut rng, &mut out), None);
        assert!(out.is_empty());
        assert!(p.sessions(NodeId(0)).is_empty());
        assert_eq!(p.stats().aborted, 1);
    }

    #[test]
    fn pending_emptied_before_fire_terminates_silently() {
        let mut g = graph(4, &[(0, 1), (1, 2), (2, 3)]);
        let mut p = Protocol::new(ProtocolConfig::new(3, true), 4);
        p.seed_views(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        fail(&mut p, &mut g, 1, &mut rng);
        let sid = p.sessions(NodeId(0))[0].id;
        p.sessions[0][0].pending.clear();
        let mut out = Vec::new();
        assert_eq!(p.on_timer(&g, NodeId(0), sid, &mut rng, &mut out), None);
        assert!(out.is_empty());
        assert!(p.sessions(NodeId(0)).is_empty());
    }

    #[test]
    fn request_handling() {
        // 0 - 1 - 2, 3 unrelated
        let mut g = graph(4, &[(0, 1), (1, 2)]);
        let mut p = Protocol::new(ProtocolConfig::new(3, true), 4);
        p.seed_views(&g);
        let mut out = Vec::new();
        // 1st neighbor asks again: refused
        assert!(!p.on_link_request(&mut g, NodeId(0), NodeId(1), &[NodeId(0), NodeId(2)], &mut out));
        // 2nd neighbor: refused
        assert!(!p.on_link_request(&mut g, NodeId(0), NodeId(2), &[NodeId(1)], &mut out));
        assert_eq!(g.edge_count(), 2);
        // unknown node: accepted and announced to 1
        out.clear();
        assert!(p.on_link_request(&mut g, NodeId(0), NodeId(3), &[], &mut out));
        assert!(g.has_link(NodeId(0), NodeId(3)));
        assert!(out.contains(&Effect::Send(ProtocolMessage::LinkCreated {
            owner: NodeId(0),
            new_neighbor: NodeId(3),
            notified: NodeId(1)
        })));
    }

    #[test]
    fn serialized_race_yields_one_edge() {
        // Cluster {0, 1} linked to each other, 2 on the far side. Hub 3 fails.
        let mut g = graph(4, &[(0, 1), (3, 0), (3, 1), (3, 2)]);
        let mut p = Protocol::new(ProtocolConfig::new(3, true), 4);
        p.seed_views(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut out = fail(&mut p, &mut g, 3, &mut rng);
        deliver_notifications(&mut p, &mut g, &mut out, &mut rng);
        assert_eq!(p.sessions(NodeId(0))[0].pending, ids(&[2]));
        assert_eq!(p.sessions(NodeId(1))[0].pending, ids(&[2]));
        let s0 = p.sessions(NodeId(0))[0].id;
        let s1 = p.sessions(NodeId(1))[0].id;

        // 0 fires, 1 fires before hearing about anything.
        let mut req0 = Vec::new();
        p.on_timer(&g, NodeId(0), s0, &mut rng, &mut req0);
        let mut req1 = Vec::new();
        p.on_timer(&g, NodeId(1), s1, &mut rng, &mut req1);

        // 2 processes request from 0 first: accept.
        let mut after0 = Vec::new();
        let (from, nb) = request_parts(&req0[0]);
        assert!(p.on_link_request(&mut g, NodeId(2), from, &nb, &mut after0));
        // then the request from 1: 1 is now 2's 2nd neighbor through 0.
        let mut after1 = Vec::new();
        let (from, nb) = request_parts(&req1[0]);
        assert!(!p.on_link_request(&mut g, NodeId(2), from, &nb, &mut after1));

        // 2 also lost its 2nd neighbors; its own timer is still queued.
        let mut rest = after0;
        rest.extend(after1);
        rest.extend(out);
        settle(&mut p, &mut g, rest, &mut rng);
        assert!(g.has_link(NodeId(0), NodeId(2)));
        assert!(!g.has_link(NodeId(1), NodeId(2)));
        assert_eq!(g.edge_count(), 2);
        assert_eq!(p.open_sessions(), 0);
        p.check_coherence(&g).unwrap();
    }

    #[test]
    fn notification_cancels_competing_session() {
        let mut g = graph(4, &[(0, 1), (3, 0), (3, 1), (3, 2)]);
        let mut p = Protocol::new(ProtocolConfig::new(3, true), 4);
        p.seed_views(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut out = fail(&mut p, &mut g, 3, &mut rng);
        deliver_notifications(&mut p, &mut g, &mut out, &mut rng);
        let s0 = p.sessions(NodeId(0))[0].id;
        let s1 = p.sessions(NodeId(1))[0].id;
        let mut req = Vec::new();
        p.on_timer(&g, NodeId(0), s0, &mut rng, &mut req);
        // 0's request, the answer and the announcement all land before 1's timer.
        settle(&mut p, &mut g, req, &mut rng);
        assert!(p.sessions(NodeId(1))[0].pending.is_empty());
        let mut out = Vec::new();
        assert_eq!(p.on_timer(&g, NodeId(1), s1, &mut rng, &mut out), None);
        assert!(out.is_empty());
        assert_eq!(g.edge_count(), 2);
        p.check_coherence(&g).unwrap();
    }

    fn request_parts(e: &Effect) -> (NodeId, Vec<NodeId>) {
        match e {
            Effect::Send(ProtocolMessage::LinkRequest { from, neighbors, .. }) => (*from, neighbors.clone()),
            other => panic!("not a request: {other:?}"),
        }
    }

    fn deliver_notifications(p: &mut Protocol, g: &mut OverlayGraph, out: &mut Vec<Effect>, rng: &mut ChaCha8Rng) {
        let mut keep = Vec::new();
        for e in out.drain(..) {
            match e {
                Effect::Send(m) if m.is_notification() => deliver(p, g, m, rng, &mut Vec::new()),
                other => keep.push(other),
            }
        }
        *out = keep;
    }

    #[test]
    fn refusal_drops_target_and_moves_on() {
        let mut g = graph(6, &[(0, 5), (1, 5), (2, 5)]);
        let mut p = Protocol::new(ProtocolConfig::new(3, true), 6);
        p.seed_views(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        fail(&mut p, &mut g, 5, &mut rng);
        let sid = p.sessions(NodeId(0))[0].id;
        let mut out = Vec::new();
        let target = p.on_timer(&g, NodeId(0), sid, &mut rng, &mut out).unwrap();
        out.clear();
        p.on_link_answer(&mut g, NodeId(0), target, false, &[], 0.0, &mut rng, &mut out);
        let s = &p.sessions(NodeId(0))[0];
        assert!(!s.pending.contains(&target));
        assert_eq!(s.pending.len(), 1);
        assert_eq!(s.refusals, 1);
        assert!(matches!(out.as_slice(), [Effect::Wake { .. }]));
    }

    #[test]
    fn accept_with_remaining_targets_reschedules() {
        let mut g = graph(6, &[(0, 5), (1, 5), (2, 5)]);
        let mut p = Protocol::new(ProtocolConfig::new(3, true), 6);
        p.seed_views(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        fail(&mut p, &mut g, 5, &mut rng);
        let sid = p.sessions(NodeId(0))[0].id;
        let mut out = Vec::new();
        let target = p.on_timer(&g, NodeId(0), sid, &mut rng, &mut out).unwrap();
        let mut out = Vec::new();
        assert!(p.on_link_request(&mut g, target, NodeId(0), &[], &mut out));
        let mut out = Vec::new();
        p.on_link_answer(&mut g, NodeId(0), target, true, &[], 0.0, &mut rng, &mut out);
        assert!(g.has_link(NodeId(0), target));
        assert!(out.iter().any(|e| matches!(e, Effect::Wake { owner, .. } if *owner == NodeId(0))));
        // stale answer is ignored
        let before = p.sessions(NodeId(0)).to_vec();
        p.on_link_answer(&mut g, NodeId(0), NodeId(4), true, &[], 0.0, &mut rng, &mut Vec::new());
        assert_eq!(p.sessions(NodeId(0)), &before[..]);
    }

    #[test]
    fn link_created_updates_view_and_pending() {
        let mut g = graph(5, &[(0, 1), (1, 2)]);
        let mut p = Protocol::new(ProtocolConfig::new(3, true), 5);
        p.seed_views(&g);
        g.add_link(NodeId(1), NodeId(3)).unwrap();
        p.on_link_created(&g, NodeId(0), NodeId(1), NodeId(3));
        assert_eq!(p.view(NodeId(0)).via(NodeId(1)), Some(&ids(&[2, 3])));
        // own link announced back: ignored
        p.on_link_created(&g, NodeId(0), NodeId(1), NodeId(0));
        assert_eq!(p.view(NodeId(0)).via(NodeId(1)), Some(&ids(&[2, 3])));
        // from a non-neighbor: ignored
        p.on_link_created(&g, NodeId(0), NodeId(4), NodeId(2));
        assert_eq!(p.view(NodeId(0)), &rebuild_second_view(&g, NodeId(0)));
    }

    #[test]
    fn neighbor_lost_shrinks_second_set_only_when_unique() {
        // 0 linked to 1 and 4; both reach 2; only 1 reaches 3
        let mut g = graph(5, &[(0, 1), (0, 4), (1, 2), (4, 2), (1, 3)]);
        let mut p = Protocol::new(ProtocolConfig::new(3, true), 5);
        p.seed_views(&g);
        p.on_neighbor_lost(&g, NodeId(0), NodeId(1), NodeId(3));
        assert!(!p.view(NodeId(0)).second_neighbors().contains(&NodeId(3)));
        p.on_neighbor_lost(&g, NodeId(0), NodeId(1), NodeId(2));
        assert!(p.view(NodeId(0)).second_neighbors().contains(&NodeId(2)));
        let _ = &mut g;
    }

    #[test]
    fn off_mode_never_opens_sessions() {
        let mut g = graph(3, &[(0, 1), (1, 2)]);
        let mut p = Protocol::new(ProtocolConfig::new(2, false), 3);
        p.seed_views(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = fail(&mut p, &mut g, 1, &mut rng);
        assert_eq!(p.open_sessions(), 0);
        assert!(out.iter().all(|e| matches!(e, Effect::Send(m) if m.is_notification())));
    }

    #[test]
    fn config_validation() {
        assert!(ProtocolConfig::new(3, true).validate().is_ok());
        assert_eq!(ProtocolConfig::new(0, true).validate(), Err(ProtocolError::Threshold));
        let mut c = ProtocolConfig::new(3, true);
        c.wait_min = 1.0;
        assert!(c.validate().is_err());
    }
}
