//! Triangles, the octavalent grid, and coordinator-driven link recovery.
//!
//! In a triangle each link's transaction manager is the node opposite it.
//! When a link's endpoints have both declared it disconnected, that node
//! collects both endpoints' views over the two surviving links and commits
//! one resolution for every in-flight token.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ae::{combine_votes, AeConfig, AeError, AeLink, Phase, Resolution, Side};
use crate::ledger::Ledger;
use crate::{LinkId, NodeId, TokenId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("triangle needs three distinct nodes, got {0:?}")]
    DuplicateNodes([NodeId; 3]),
    #[error("grid needs at least 2 rows and 2 columns, got {rows}x{cols}")]
    Degenerate { rows: u32, cols: u32 },
    #[error("failure configurations need at least 2 nodes, got {0}")]
    TooFewNodes(u64),
    #[error("failure configuration count for {0} nodes does not fit in 128 bits")]
    Overflow(u64),
    #[error("{0:?} is not a link of this triangle")]
    NotAnEdge(Edge),
    #[error("link {link} endpoints have not both declared disconnection")]
    NotDisconnected { link: LinkId },
    #[error(transparent)]
    Ae(#[from] AeError),
}

/// Undirected link, stored with the smaller node first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge(pub NodeId, pub NodeId);

impl Edge {
    pub fn new(a: NodeId, b: NodeId) -> Self {
        if a <= b {
            Edge(a, b)
        } else {
            Edge(b, a)
        }
    }

    pub fn touches(&self, n: NodeId) -> bool {
        self.0 == n || self.1 == n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triangle {
    pub nodes: [NodeId; 3],
}

impl Triangle {
    /// Links in order ab, bc, ca.
    pub fn edges(&self) -> [Edge; 3] {
        let [a, b, c] = self.nodes;
        [Edge::new(a, b), Edge::new(b, c), Edge::new(c, a)]
    }

    /// The node opposite `edge`.
    pub fn tm(&self, edge: Edge) -> Option<NodeId> {
        let [a, b, c] = self.nodes;
        match self.edges().iter().position(|e| *e == edge)? {
            0 => Some(c),
            1 => Some(a),
            _ => Some(b),
        }
    }

    pub fn contains(&self, edge: Edge) -> bool {
        self.edges().contains(&edge)
    }

    /// The coordinator's links to the two endpoints of `edge`.
    pub fn survivors(&self, edge: Edge) -> Option<[Edge; 2]> {
        let tm = self.tm(edge)?;
        Some([Edge::new(tm, edge.0), Edge::new(tm, edge.1)])
    }
}

/// A triangle together with its three links, in `edges()` order.
#[derive(Clone, Debug)]
pub struct TriangleGroup {
    pub triangle: Triangle,
    pub links: [AeLink; 3],
}

impl TriangleGroup {
    pub fn link(&self, edge: Edge) -> Option<&AeLink> {
        let i = self.triangle.edges().iter().position(|e| *e == edge)?;
        Some(&self.links[i])
    }

    pub fn link_mut(&mut self, edge: Edge) -> Option<&mut AeLink> {
        let i = self.triangle.edges().iter().position(|e| *e == edge)?;
        Some(&mut self.links[i])
    }
}

pub fn build_triangle(
    a: NodeId,
    b: NodeId,
    c: NodeId,
    config: AeConfig,
) -> Result<TriangleGroup, TopologyError> {
    if a == b || b == c || a == c {
        return Err(TopologyError::DuplicateNodes([a, b, c]));
    }
    let triangle = Triangle { nodes: [a, b, c] };
    let e = triangle.edges();
    let links = [0, 1, 2].map(|i| AeLink::new(LinkId(i as u32), e[i].0, e[i].1, config));
    Ok(TriangleGroup { triangle, links })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OctavalentGrid {
    pub rows: u32,
    pub cols: u32,
    links: Vec<Edge>,
}

pub fn build_grid(rows: u32, cols: u32) -> Result<OctavalentGrid, TopologyError> {
    if rows < 2 || cols < 2 {
        return Err(TopologyError::Degenerate { rows, cols });
    }
    let mut links = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let here = NodeId(r * cols + c);
            // east, south-west, south, south-east
            for (dr, dc) in [(0i64, 1i64), (1, -1), (1, 0), (1, 1)] {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < rows as i64 && nc >= 0 && nc < cols as i64 {
                    links.push(Edge::new(here, NodeId(nr as u32 * cols + nc as u32)));
                }
            }
        }
    }
    links.sort();
    Ok(OctavalentGrid { rows, cols, links })
}

impl OctavalentGrid {
    pub fn node_count(&self) -> u32 {
        self.rows * self.cols
    }

    pub fn node(&self, row: u32, col: u32) -> NodeId {
        NodeId(row * self.cols + col)
    }

    pub fn links(&self) -> &[Edge] {
        &self.links
    }

    pub fn link_id(&self, edge: Edge) -> Option<LinkId> {
        self.links
            .binary_search(&edge)
            .ok()
            .map(|i| LinkId(i as u32))
    }

    pub fn adjacent(&self, a: NodeId, b: NodeId) -> bool {
        a != b && self.links.binary_search(&Edge::new(a, b)).is_ok()
    }

    pub fn neighbours(&self, n: NodeId) -> Vec<NodeId> {
        self.links
            .iter()
            .filter(|e| e.touches(n))
            .map(|e| if e.0 == n { e.1 } else { e.0 })
            .collect()
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.links.iter().filter(|e| e.touches(n)).count()
    }

    /// The structure has nodes and links only.
    pub fn switch_count(&self) -> usize {
        0
    }

    pub fn export(&self) -> AdjacencyExport {
        AdjacencyExport {
            rows: self.rows,
            cols: self.cols,
            nodes: (0..self.node_count()).map(NodeId).collect(),
            links: self.links.clone(),
            triangles: enumerate_triangles(self),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyExport {
    pub rows: u32,
    pub cols: u32,
    pub nodes: Vec<NodeId>,
    pub links: Vec<Edge>,
    pub triangles: Vec<Triangle>,
}

/// Every 3-clique of the grid, once, with nodes in ascending order.
pub fn enumerate_triangles(grid: &OctavalentGrid) -> Vec<Triangle> {
    let mut out = Vec::new();
    for e in grid.links() {
        for w in grid.neighbours(e.1) {
            if w > e.1 && grid.adjacent(e.0, w) {
                out.push(Triangle {
                    nodes: [e.0, e.1, w],
                });
            }
        }
    }
    out.sort();
    out
}

/// Triangles containing `edge`.
pub fn triangles_for(grid: &OctavalentGrid, edge: Edge) -> Vec<Triangle> {
    let mut out: Vec<Triangle> = grid
        .neighbours(edge.0)
        .into_iter()
        .filter(|&w| w != edge.1 && grid.adjacent(w, edge.1))
        .map(|w| {
            let mut n = [edge.0, edge.1, w];
            n.sort();
            Triangle { nodes: n }
        })
        .collect();
    out.sort();
    out
}

/// First triangle around `edge` whose two surviving links are up.
pub fn select_tm(
    grid: &OctavalentGrid,
    edge: Edge,
    up: impl Fn(Edge) -> bool,
) -> Option<Triangle> {
    triangles_for(grid, edge)
        .into_iter()
        .find(|t| t.survivors(edge).is_some_and(|s| s.iter().all(|e| up(*e))))
}

/// `4^(n(n-1)/2) - 1`: every link independently up, down in one direction,
/// down in the other, or down in both, minus the all-up configuration.
pub fn count_failure_configs(n: u64) -> Result<u128, TopologyError> {
    if n < 2 {
        return Err(TopologyError::TooFewNodes(n));
    }
    let pairs = n
        .checked_mul(n - 1)
        .map(|p| p / 2)
        .ok_or(TopologyError::Overflow(n))?;
    if pairs >= 64 {
        return Err(TopologyError::Overflow(n));
    }
    Ok((1u128 << (2 * pairs)) - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "kebab-case")]
pub enum TwoPcPhase {
    PrepareSent { to: NodeId },
    Vote { from: NodeId, in_flight: u32 },
    Commit,
    Abort,
    Ack { from: NodeId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwoPcOutcome {
    Committed,
    /// A surviving link went down; nothing was applied and the failure is
    /// handed to the enclosing mesh.
    Escalated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoPcTranscript {
    pub coordinator: NodeId,
    pub participants: (NodeId, NodeId),
    pub failed: Edge,
    pub phases: Vec<TwoPcPhase>,
    pub resolved: Vec<(TokenId, Resolution)>,
    pub outcome: TwoPcOutcome,
}

/// Run two-phase commit from the triangle's coordinator for `failed`.
///
/// `survivor_up(edge, phase)` is consulted before every message crosses a
/// surviving link; returning false aborts the round. Nothing is applied to
/// the failed link before both votes are in, so an abort leaves it as found.
pub fn recover_link(
    tri: &Triangle,
    failed: Edge,
    link: &mut AeLink,
    ledger: &mut Ledger,
    mut survivor_up: impl FnMut(Edge, &TwoPcPhase) -> bool,
) -> Result<TwoPcTranscript, TopologyError> {
    let coordinator = tri.tm(failed).ok_or(TopologyError::NotAnEdge(failed))?;
    if !link.is_disconnected() {
        return Err(TopologyError::NotDisconnected { link: link.id });
    }
    let sides = [Side::A, Side::B];
    let nodes = sides.map(|s| link.peer(s).node);
    let mut t = TwoPcTranscript {
        coordinator,
        participants: (nodes[0], nodes[1]),
        failed,
        phases: Vec::new(),
        resolved: Vec::new(),
        outcome: TwoPcOutcome::Committed,
    };
    let route = |n: NodeId| Edge::new(coordinator, n);

    let abort = |t: &mut TwoPcTranscript| {
        t.phases.push(TwoPcPhase::Abort);
        t.outcome = TwoPcOutcome::Escalated;
    };

    for n in nodes {
        let p = TwoPcPhase::PrepareSent { to: n };
        if !survivor_up(route(n), &p) {
            abort(&mut t);
            return Ok(t);
        }
        t.phases.push(p);
    }
    let votes = sides.map(|s| link.vote(s));
    let views = combine_votes(&votes[0], &votes[1]);
    for (i, n) in nodes.into_iter().enumerate() {
        let held = [votes[i].sending.held, votes[i].receiving.held]
            .iter()
            .flatten()
            .collect::<BTreeSet<_>>()
            .len() as u32;
        let p = TwoPcPhase::Vote {
            from: n,
            in_flight: held.max(votes[i].committed.is_some() as u32),
        };
        if !survivor_up(route(n), &p) {
            abort(&mut t);
            return Ok(t);
        }
        t.phases.push(p);
    }
    t.phases.push(TwoPcPhase::Commit);
    t.resolved = link.apply_resolution(&views, ledger)?;
    link.set_condition(Phase::Idle);
    for n in nodes {
        let p = TwoPcPhase::Ack { from: n };
        // The decision is already durable at both endpoints; a lost ack
        // changes nothing but the transcript.
        if survivor_up(route(n), &p) {
            t.phases.push(p);
        }
    }
    Ok(t)
}
