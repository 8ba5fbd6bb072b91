//! Traversal-time shortest paths and origin/destination sampling.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{EdgeId, NodeId, RoadNetwork};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {destination} is unreachable from {origin}")]
    Unreachable { origin: NodeId, destination: NodeId },
    #[error("need at least 2 eligible nodes, found {0}")]
    TooFewEligibleNodes(usize),
    #[error("need at least one usable whitelist pair")]
    EmptyWhitelist,
    #[error("route is inconsistent with the network: {0}")]
    InvalidRoute(String),
}

/// A path through the network with its summed traversal time and length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub node_seq: Vec<NodeId>,
    pub edge_seq: Vec<EdgeId>,
    pub naive_tt_s: f64,
    pub length_m: f64,
}

impl Route {
    /// Builds a route by walking `edge_seq` from `origin`, summing edge times
    /// and lengths in path order.
    pub fn from_edges(net: &RoadNetwork, origin: NodeId, edge_seq: Vec<EdgeId>) -> Result<Self, RoutingError> {
        if !net.contains_node(origin) {
            return Err(RoutingError::UnknownNode(origin));
        }
        let mut node_seq = Vec::with_capacity(edge_seq.len() + 1);
        node_seq.push(origin);
        let (mut tt, mut len) = (0.0, 0.0);
        let mut at = origin;
        for &eid in &edge_seq {
            let e = net.edge(eid).ok_or_else(|| RoutingError::InvalidRoute(format!("unknown edge {eid}")))?;
            if e.from_node() != at {
                return Err(RoutingError::InvalidRoute(format!("edge {eid} does not leave node {at}")));
            }
            tt += e.traversal_s();
            len += e.length_m();
            at = e.to_node();
            node_seq.push(at);
        }
        Ok(Self { node_seq, edge_seq, naive_tt_s: tt, length_m: len })
    }

    pub fn origin(&self) -> NodeId {
        self.node_seq[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.node_seq.last().expect("route has at least one node")
    }

    /// Checks edge connectivity and the stored sums against `net`.
    pub fn validate(&self, net: &RoadNetwork) -> Result<(), RoutingError> {
        let origin = *self.node_seq.first().ok_or_else(|| RoutingError::InvalidRoute("empty node sequence".into()))?;
        let rebuilt = Self::from_edges(net, origin, self.edge_seq.clone())?;
        if rebuilt.node_seq != self.node_seq {
            return Err(RoutingError::InvalidRoute("node sequence does not follow the edges".into()));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        if !close(rebuilt.naive_tt_s, self.naive_tt_s) || !close(rebuilt.length_m, self.length_m) {
            return Err(RoutingError::InvalidRoute("stored totals disagree with edge sums".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OdPair {
    pub pair_id: u64,
    pub origin: NodeId,
    pub destination: NodeId,
}

/// One line of the routes JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub pair_id: u64,
    pub node_seq: Vec<NodeId>,
    pub edge_seq: Vec<EdgeId>,
    pub naive_tt_s: f64,
    pub length_m: f64,
}

impl RouteRecord {
    pub fn new(pair_id: u64, route: Route) -> Self {
        Self {
            pair_id,
            node_seq: route.node_seq,
            edge_seq: route.edge_seq,
            naive_tt_s: route.naive_tt_s,
            length_m: route.length_m,
        }
    }

    pub fn into_route(self) -> Route {
        Route { node_seq: self.node_seq, edge_seq: self.edge_seq, naive_tt_s: self.naive_tt_s, length_m: self.length_m }
    }
}

#[derive(Debug, Clone, Copy)]
struct Label {
    cost: f64,
    hops: u32,
    pred_edge: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueEntry {
    cost: f64,
    hops: u32,
    node: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (cost, hops, node)
        other.cost.total_cmp(&self.cost).then(other.hops.cmp(&self.hops)).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Search<'a> {
    net: &'a RoadNetwork,
    labels: Vec<Option<Label>>,
}

impl<'a> Search<'a> {
    /// Edge indices from the origin to `node`, origin first.
    fn edge_path(&self, mut node: usize) -> Vec<usize> {
        let mut path = Vec::new();
        while let Some(ei) = self.labels[node].and_then(|l| l.pred_edge) {
            path.push(ei);
            node = self.net.edge_endpoints(ei).0;
        }
        path.reverse();
        path
    }

    /// Label-setting Dijkstra keyed on (cost, edge count, edge-id sequence).
    /// Stops early once `target` is settled.
    fn run(net: &'a RoadNetwork, origin: usize, target: Option<usize>) -> Self {
        let n = net.node_count();
        let mut search = Search { net, labels: vec![None; n] };
        let mut settled = vec![false; n];
        let mut heap = BinaryHeap::new();
        search.labels[origin] = Some(Label { cost: 0.0, hops: 0, pred_edge: None });
        heap.push(QueueEntry { cost: 0.0, hops: 0, node: origin });

        while let Some(QueueEntry { cost, hops, node: u }) = heap.pop() {
            if settled[u] {
                continue;
            }
            let label = search.labels[u].expect("queued nodes carry a label");
            if label.cost != cost || label.hops != hops {
                continue;
            }
            settled[u] = true;
            if Some(u) == target {
                break;
            }
            for &ei in net.out_edge_indices(u) {
                let (_, v) = net.edge_endpoints(ei);
                if settled[v] {
                    continue;
                }
                let cand = Label { cost: cost + net.edges()[ei].traversal_s(), hops: hops + 1, pred_edge: Some(ei) };
                let better = match search.labels[v] {
                    None => true,
                    Some(cur) => match cand.cost.total_cmp(&cur.cost).then(cand.hops.cmp(&cur.hops)) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => search.lex_less(ei, cur.pred_edge.expect("non-origin label")),
                    },
                };
                if better {
                    search.labels[v] = Some(cand);
                    heap.push(QueueEntry { cost: cand.cost, hops: cand.hops, node: v });
                }
            }
        }
        search
    }

    /// Whether the path ending in edge `a` precedes the path ending in edge `b`
    /// in edge-id order. Both predecessors are settled, so their paths are final.
    /// Edge indices follow edge-id order.
    fn lex_less(&self, a: usize, b: usize) -> bool {
        let mut pa = self.edge_path(self.net.edge_endpoints(a).0);
        pa.push(a);
        let mut pb = self.edge_path(self.net.edge_endpoints(b).0);
        pb.push(b);
        pa < pb
    }
}

/// Minimum-traversal-time route from `origin` to `destination`.
///
/// Among equal-cost routes the one with fewer edges wins, then the
/// lexicographically smallest edge-id sequence.
pub fn shortest_path(net: &RoadNetwork, origin: NodeId, destination: NodeId) -> Result<Route, RoutingError> {
    let o = net.node_idx(origin).ok_or(RoutingError::UnknownNode(origin))?;
    let d = net.node_idx(destination).ok_or(RoutingError::UnknownNode(destination))?;
    let search = Search::run(net, o, Some(d));
    if search.labels[d].is_none() {
        return Err(RoutingError::Unreachable { origin, destination });
    }
    let edges = search.edge_path(d).into_iter().map(|ei| net.edges()[ei].id()).collect();
    Route::from_edges(net, origin, edges)
}

/// Minimal traversal time from `origin` to every reachable node, in node-id order.
pub fn travel_times_from(net: &RoadNetwork, origin: NodeId) -> Result<Vec<(NodeId, f64)>, RoutingError> {
    let o = net.node_idx(origin).ok_or(RoutingError::UnknownNode(origin))?;
    let search = Search::run(net, o, None);
    Ok(net.nodes().iter().zip(&search.labels).filter_map(|(n, l)| l.map(|l| (n.id, l.cost))).collect())
}

/// Routes every pair, in parallel, returning results in input order.
pub fn route_all(net: &RoadNetwork, pairs: &[OdPair]) -> Vec<Result<Route, RoutingError>> {
    pairs.par_iter().map(|p| shortest_path(net, p.origin, p.destination)).collect()
}

/// Number of distinct neighbours of each node when edge direction is ignored
/// (self-loops excluded), in node-id order.
pub fn street_degrees(net: &RoadNetwork) -> Vec<usize> {
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); net.node_count()];
    for ei in 0..net.edge_count() {
        let (u, v) = net.edge_endpoints(ei);
        if u != v {
            neighbours[u].push(v);
            neighbours[v].push(u);
        }
    }
    neighbours
        .into_iter()
        .map(|mut ns| {
            ns.sort_unstable();
            ns.dedup();
            ns.len()
        })
        .collect()
}

/// Intersections and dead ends: nodes whose street degree is not 2.
pub fn eligible_nodes(net: &RoadNetwork) -> Vec<NodeId> {
    net.nodes().iter().zip(street_degrees(net)).filter(|(_, deg)| *deg != 2).map(|(n, _)| n.id).collect()
}

/// Draws `count` OD pairs uniformly with replacement from the eligible nodes,
/// redrawing the destination whenever it equals the origin.
pub fn sample_od_pairs(net: &RoadNetwork, count: usize, seed: u64) -> Result<Vec<OdPair>, RoutingError> {
    let eligible = eligible_nodes(net);
    if eligible.len() < 2 {
        return Err(RoutingError::TooFewEligibleNodes(eligible.len()));
    }
    let mut rng = rng::rng_from_seed(seed);
    Ok((0..count as u64)
        .map(|pair_id| {
            let origin = eligible[rng.random_range(0..eligible.len())];
            let destination = loop {
                let d = eligible[rng.random_range(0..eligible.len())];
                if d != origin {
                    break d;
                }
            };
            OdPair { pair_id, origin, destination }
        })
        .collect())
}

/// Draws `count` pairs uniformly with replacement from an external whitelist.
/// Entries with unknown nodes or origin = destination are ignored.
pub fn sample_from_whitelist(
    net: &RoadNetwork,
    whitelist: &[(NodeId, NodeId)],
    count: usize,
    seed: u64,
) -> Result<Vec<OdPair>, RoutingError> {
    let mut seen = HashSet::new();
    let usable: Vec<(NodeId, NodeId)> = whitelist
        .iter()
        .copied()
        .filter(|&(o, d)| o != d && net.contains_node(o) && net.contains_node(d) && seen.insert((o, d)))
        .collect();
    if usable.is_empty() {
        return Err(RoutingError::EmptyWhitelist);
    }
    let mut rng = rng::rng_from_seed(seed);
    Ok((0..count as u64)
        .map(|pair_id| {
            let (origin, destination) = usable[rng.random_range(0..usable.len())];
            OdPair { pair_id, origin, destination }
        })
        .collect())
}
