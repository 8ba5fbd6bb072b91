//! Road network data model: geo points, control-tagged nodes, speed-attributed
//! edges and the largest-strongly-connected-component reduction.
//!
//! A [`RoadNetwork`] is an immutable directed multigraph. Node and edge ids are
//! the caller's (OSM ids, lattice ids, ...); internally both are kept in id
//! order with dense indices so routing can work on plain vectors.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Version tag written into the JSON network cache.
pub const NETWORK_FORMAT_VERSION: u32 = 1;

pub type NodeId = i64;
pub type EdgeId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid coordinate lat={lat} lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("coincident points: bearing undefined at ({lat}, {lon})")]
    CoincidentPoints { lat: f64, lon: f64 },
    #[error("non-positive input: length_m={length_m}, speed_kph={speed_kph}")]
    NonPositiveInput { length_m: f64, speed_kph: f64 },
    #[error("empty network")]
    EmptyNetwork,
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate edge id {0}")]
    DuplicateEdge(EdgeId),
    #[error("edge {edge} references missing node {node}")]
    DanglingEdge { edge: EdgeId, node: NodeId },
    #[error("edge {0} is a self-loop but was not constructed as one")]
    UnflaggedSelfLoop(EdgeId),
    #[error("edge {edge}: stored traversal time {stored} disagrees with length/speed ({expected})")]
    TraversalMismatch { edge: EdgeId, stored: f64, expected: f64 },
    #[error("adjacency of node {0} is inconsistent with the edge list")]
    BadAdjacency(NodeId),
    #[error("unsupported network format version {0}")]
    FormatVersion(u32),
    #[error("speed table: {0}")]
    SpeedTable(String),
}

/// A WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

impl GeoPoint {
    /// Accepts lat in [-90, 90] and lon in [-180, 180]; a longitude of exactly
    /// 180 is folded onto -180.
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, NetworkError> {
        let ok = lat_deg.is_finite()
            && lon_deg.is_finite()
            && (-90.0..=90.0).contains(&lat_deg)
            && (-180.0..=180.0).contains(&lon_deg);
        if !ok {
            return Err(NetworkError::InvalidCoordinate { lat: lat_deg, lon: lon_deg });
        }
        let lon_deg = if lon_deg == 180.0 { -180.0 } else { lon_deg };
        Ok(Self { lat_deg, lon_deg })
    }

    pub fn lat(&self) -> f64 {
        self.lat_deg
    }

    pub fn lon(&self) -> f64 {
        self.lon_deg
    }
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat_deg.to_radians();
    let phi2 = b.lat_deg.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon_deg - a.lon_deg).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial compass bearing from `a` to `b` in [0, 360), clockwise from north.
pub fn bearing_deg(a: GeoPoint, b: GeoPoint) -> Result<f64, NetworkError> {
    if a == b {
        return Err(NetworkError::CoincidentPoints { lat: a.lat_deg, lon: a.lon_deg });
    }
    let phi1 = a.lat_deg.to_radians();
    let phi2 = b.lat_deg.to_radians();
    let dlambda = (b.lon_deg - a.lon_deg).to_radians();
    let y = dlambda.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlambda.cos();
    let deg = y.atan2(x).to_degrees().rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    Ok(if deg >= 360.0 { 0.0 } else { deg })
}

/// Outcome of reading an OSM `maxspeed` value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxSpeed {
    Kph(f64),
    Unparsable,
}

impl MaxSpeed {
    pub fn kph(self) -> Option<f64> {
        match self {
            MaxSpeed::Kph(v) => Some(v),
            MaxSpeed::Unparsable => None,
        }
    }
}

const KPH_PER_MPH: f64 = 1.609344;

/// Parses a bare number (km/h) or a number followed by `mph`.
pub fn parse_maxspeed(raw: &str) -> MaxSpeed {
    let s = raw.trim();
    let (num, factor) = match s.strip_suffix("mph") {
        Some(rest) => (rest.trim_end(), KPH_PER_MPH),
        None => (s, 1.0),
    };
    match num.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => MaxSpeed::Kph(v * factor),
        _ => MaxSpeed::Unparsable,
    }
}

/// Seconds needed to cover `length_m` at `speed_kph`.
pub fn edge_traversal_time_s(length_m: f64, speed_kph: f64) -> Result<f64, NetworkError> {
    if !(length_m > 0.0 && speed_kph > 0.0 && length_m.is_finite() && speed_kph.is_finite()) {
        return Err(NetworkError::NonPositiveInput { length_m, speed_kph });
    }
    Ok(length_m / (speed_kph / 3.6))
}

/// Fallback speeds per `highway` class, used when `maxspeed` is missing or
/// unparsable.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedTable {
    by_class: HashMap<String, f64>,
    unknown_kph: f64,
}

impl Default for SpeedTable {
    fn default() -> Self {
        let by_class = [
            ("motorway", 100.0),
            ("trunk", 90.0),
            ("primary", 65.0),
            ("secondary", 55.0),
            ("tertiary", 50.0),
            ("unclassified", 40.0),
            ("residential", 30.0),
            ("living_street", 10.0),
            ("service", 20.0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self { by_class, unknown_kph: 40.0 }
    }
}

impl SpeedTable {
    /// Speed for a highway class. `*_link` classes fall back to their parent
    /// class when not listed themselves.
    pub fn kph_for(&self, class: &str) -> f64 {
        if let Some(v) = self.by_class.get(class) {
            return *v;
        }
        class.strip_suffix("_link").and_then(|base| self.by_class.get(base)).copied().unwrap_or(self.unknown_kph)
    }

    pub fn set(&mut self, class: &str, kph: f64) {
        self.by_class.insert(class.to_string(), kph);
    }

    /// Reads a `highway_class,kph` CSV. Rows override the defaults; the class
    /// name `unknown` sets the speed used for unlisted classes.
    pub fn from_csv_reader<R: std::io::Read>(rdr: R) -> Result<Self, NetworkError> {
        #[derive(Deserialize)]
        struct Row {
            highway_class: String,
            kph: f64,
        }
        let mut table = Self::default();
        let mut reader = csv::Reader::from_reader(rdr);
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| NetworkError::SpeedTable(format!("record {}: {e}", i + 1)))?;
            if !(row.kph > 0.0 && row.kph.is_finite()) {
                return Err(NetworkError::SpeedTable(format!(
                    "record {}: speed for {} must be positive",
                    i + 1,
                    row.highway_class
                )));
            }
            if row.highway_class == "unknown" {
                table.unknown_kph = row.kph;
            } else {
                table.set(&row.highway_class, row.kph);
            }
        }
        Ok(table)
    }
}

/// Traffic control element carried by a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ControlKind {
    Signal,
    Stop,
    Crossing,
    GiveWay,
    MiniRoundabout,
    #[default]
    None,
}

impl ControlKind {
    /// The five kinds that are counted as route features, in feature order.
    pub const COUNTED: [ControlKind; 5] = [
        ControlKind::Signal,
        ControlKind::Stop,
        ControlKind::Crossing,
        ControlKind::GiveWay,
        ControlKind::MiniRoundabout,
    ];

    /// Position among [`ControlKind::COUNTED`], `None` for [`ControlKind::None`].
    pub fn feature_slot(self) -> Option<usize> {
        Self::COUNTED.iter().position(|k| *k == self)
    }

    /// Maps an OSM node `highway=*` value.
    pub fn from_osm_highway(value: &str) -> Self {
        match value {
            "traffic_signals" => ControlKind::Signal,
            "stop" => ControlKind::Stop,
            "crossing" => ControlKind::Crossing,
            "give_way" => ControlKind::GiveWay,
            "mini_roundabout" => ControlKind::MiniRoundabout,
            _ => ControlKind::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadNode {
    pub id: NodeId,
    pub point: GeoPoint,
    pub control: ControlKind,
}

/// A directed road segment. Fields are private so that `traversal_s` always
/// matches `length_m / (speed_kph / 3.6)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadEdge {
    edge_id: EdgeId,
    from_node: NodeId,
    to_node: NodeId,
    length_m: f64,
    speed_kph: f64,
    traversal_s: f64,
}

impl RoadEdge {
    pub fn new(
        edge_id: EdgeId,
        from_node: NodeId,
        to_node: NodeId,
        length_m: f64,
        speed_kph: f64,
    ) -> Result<Self, NetworkError> {
        if from_node == to_node {
            return Err(NetworkError::UnflaggedSelfLoop(edge_id));
        }
        Self::build(edge_id, from_node, to_node, length_m, speed_kph)
    }

    /// A loop edge at `node`. Kept in the model; never part of a shortest path.
    pub fn self_loop(edge_id: EdgeId, node: NodeId, length_m: f64, speed_kph: f64) -> Result<Self, NetworkError> {
        Self::build(edge_id, node, node, length_m, speed_kph)
    }

    fn build(
        edge_id: EdgeId,
        from_node: NodeId,
        to_node: NodeId,
        length_m: f64,
        speed_kph: f64,
    ) -> Result<Self, NetworkError> {
        let traversal_s = edge_traversal_time_s(length_m, speed_kph)?;
        Ok(Self { edge_id, from_node, to_node, length_m, speed_kph, traversal_s })
    }

    pub fn id(&self) -> EdgeId {
        self.edge_id
    }
    pub fn from_node(&self) -> NodeId {
        self.from_node
    }
    pub fn to_node(&self) -> NodeId {
        self.to_node
    }
    pub fn length_m(&self) -> f64 {
        self.length_m
    }
    pub fn speed_kph(&self) -> f64 {
        self.speed_kph
    }
    pub fn traversal_s(&self) -> f64 {
        self.traversal_s
    }
    pub fn is_self_loop(&self) -> bool {
        self.from_node == self.to_node
    }
}

/// Immutable directed multigraph of road nodes and edges.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    nodes: Vec<RoadNode>,
    edges: Vec<RoadEdge>,
    node_index: HashMap<NodeId, usize>,
    edge_index: HashMap<EdgeId, usize>,
    // per node index: outgoing edge indices, ascending edge id
    out_adj: Vec<Vec<usize>>,
    // per edge index: (from node index, to node index)
    endpoints: Vec<(usize, usize)>,
}

impl RoadNetwork {
    /// Validates ids and endpoints and builds the adjacency.
    pub fn new(mut nodes: Vec<RoadNode>, mut edges: Vec<RoadEdge>) -> Result<Self, NetworkError> {
        nodes.sort_by_key(|n| n.id);
        edges.sort_by_key(|e| e.edge_id);
        if let Some(w) = nodes.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(NetworkError::DuplicateNode(w[0].id));
        }
        if let Some(w) = edges.windows(2).find(|w| w[0].edge_id == w[1].edge_id) {
            return Err(NetworkError::DuplicateEdge(w[0].edge_id));
        }
        let node_index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let edge_index: HashMap<EdgeId, usize> = edges.iter().enumerate().map(|(i, e)| (e.edge_id, i)).collect();
        let mut out_adj = vec![Vec::new(); nodes.len()];
        let mut endpoints = Vec::with_capacity(edges.len());
        for (ei, e) in edges.iter().enumerate() {
            let lookup = |node: NodeId| {
                node_index.get(&node).copied().ok_or(NetworkError::DanglingEdge { edge: e.edge_id, node })
            };
            let (u, v) = (lookup(e.from_node)?, lookup(e.to_node)?);
            out_adj[u].push(ei);
            endpoints.push((u, v));
        }
        Ok(Self { nodes, edges, node_index, edge_index, out_adj, endpoints })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> &[RoadNode] {
        &self.nodes
    }

    /// Edges in ascending id order.
    pub fn edges(&self) -> &[RoadEdge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Option<&RoadNode> {
        self.node_index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn edge(&self, id: EdgeId) -> Option<&RoadEdge> {
        self.edge_index.get(&id).map(|&i| &self.edges[i])
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.node_index.contains_key(&id)
    }

    /// Outgoing edges of `id` in ascending edge-id order.
    pub fn out_edges(&self, id: NodeId) -> impl Iterator<Item = &RoadEdge> {
        self.node_index.get(&id).into_iter().flat_map(move |&i| self.out_adj[i].iter().map(move |&ei| &self.edges[ei]))
    }

    // Dense-index accessors for graph algorithms within the crate.

    pub(crate) fn node_idx(&self, id: NodeId) -> Option<usize> {
        self.node_index.get(&id).copied()
    }

    pub(crate) fn out_edge_indices(&self, node_idx: usize) -> &[usize] {
        &self.out_adj[node_idx]
    }

    pub(crate) fn edge_endpoints(&self, edge_idx: usize) -> (usize, usize) {
        self.endpoints[edge_idx]
    }

    /// Sub-network induced by `keep` (node ids); edges with both endpoints kept
    /// survive with their ids unchanged.
    pub fn induced(&self, keep: &[NodeId]) -> Self {
        let keep_set: std::collections::HashSet<NodeId> = keep.iter().copied().collect();
        let nodes = self.nodes.iter().filter(|n| keep_set.contains(&n.id)).copied().collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| keep_set.contains(&e.from_node) && keep_set.contains(&e.to_node))
            .copied()
            .collect();
        Self::new(nodes, edges).expect("induced sub-network of a valid network is valid")
    }

    pub fn to_cache(&self) -> NetworkCache {
        NetworkCache {
            format_version: NETWORK_FORMAT_VERSION,
            nodes: self
                .nodes
                .iter()
                .map(|n| CachedNode { id: n.id, lat: n.point.lat(), lon: n.point.lon(), control: n.control })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| CachedEdge {
                    edge_id: e.edge_id,
                    from: e.from_node,
                    to: e.to_node,
                    length_m: e.length_m,
                    speed_kph: e.speed_kph,
                    traversal_s: e.traversal_s,
                })
                .collect(),
            adjacency: self
                .nodes
                .iter()
                .zip(&self.out_adj)
                .map(|(n, adj)| CachedAdjacency {
                    node: n.id,
                    out_edges: adj.iter().map(|&ei| self.edges[ei].edge_id).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds a network from its cache form, checking every stored derived
    /// value against the primary fields.
    pub fn from_cache(cache: NetworkCache) -> Result<Self, NetworkError> {
        if cache.format_version != NETWORK_FORMAT_VERSION {
            return Err(NetworkError::FormatVersion(cache.format_version));
        }
        let nodes = cache
            .nodes
            .iter()
            .map(|n| Ok(RoadNode { id: n.id, point: GeoPoint::new(n.lat, n.lon)?, control: n.control }))
            .collect::<Result<Vec<_>, NetworkError>>()?;
        let edges = cache
            .edges
            .iter()
            .map(|e| {
                let edge = if e.from == e.to {
                    RoadEdge::self_loop(e.edge_id, e.from, e.length_m, e.speed_kph)?
                } else {
                    RoadEdge::new(e.edge_id, e.from, e.to, e.length_m, e.speed_kph)?
                };
                let tol = 1e-9 * edge.traversal_s.abs();
                if (edge.traversal_s - e.traversal_s).abs() > tol {
                    return Err(NetworkError::TraversalMismatch {
                        edge: e.edge_id,
                        stored: e.traversal_s,
                        expected: edge.traversal_s,
                    });
                }
                Ok(edge)
            })
            .collect::<Result<Vec<_>, NetworkError>>()?;
        let net = Self::new(nodes, edges)?;
        let mut seen = vec![false; net.node_count()];
        for adj in &cache.adjacency {
            let idx = net.node_idx(adj.node).ok_or(NetworkError::BadAdjacency(adj.node))?;
            let mut listed = adj.out_edges.clone();
            listed.sort_unstable();
            let actual: Vec<EdgeId> = net.out_adj[idx].iter().map(|&ei| net.edges[ei].edge_id).collect();
            if seen[idx] || listed != actual {
                return Err(NetworkError::BadAdjacency(adj.node));
            }
            seen[idx] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            if !net.out_adj[i].is_empty() {
                return Err(NetworkError::BadAdjacency(net.nodes[i].id));
            }
        }
        Ok(net)
    }

    pub fn load_json(path: &Path) -> anyhow::Result<Self> {
        use anyhow::Context;
        let file = std::fs::File::open(path).with_context(|| format!("{}: cannot open network", path.display()))?;
        let cache: NetworkCache = serde_json::from_reader(std::io::BufReader::new(file))
            .with_context(|| format!("{}: malformed network JSON", path.display()))?;
        Self::from_cache(cache).with_context(|| format!("{}: invalid network", path.display()))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_cache()).expect("network cache serializes")
    }
}

/// JSON cache form of a [`RoadNetwork`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCache {
    pub format_version: u32,
    pub nodes: Vec<CachedNode>,
    pub edges: Vec<CachedEdge>,
    pub adjacency: Vec<CachedAdjacency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedNode {
    pub id: NodeId,
    pub lat: f64,
    pub lon: f64,
    pub control: ControlKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedEdge {
    pub edge_id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub length_m: f64,
    pub speed_kph: f64,
    pub traversal_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedAdjacency {
    pub node: NodeId,
    pub out_edges: Vec<EdgeId>,
}

/// Strongly connected components as lists of node indices (iterative Tarjan).
fn tarjan_scc(net: &RoadNetwork) -> Vec<Vec<usize>> {
    const UNVISITED: usize = usize::MAX;
    let n = net.node_count();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next_index = 0usize;
    // (node, position in its out-edge list)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call.push((root, 0));
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            let out = net.out_edge_indices(v);
            if *pos < out.len() {
                let (_, w) = net.edge_endpoints(out[*pos]);
                *pos += 1;
                if index[w] == UNVISITED {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack holds the component");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comps.push(comp);
            }
        }
    }
    comps
}

/// Sub-network induced by the largest strongly connected component.
///
/// Ties are broken by more nodes, then more induced edges, then the smallest
/// minimum node id.
pub fn largest_scc(net: &RoadNetwork) -> Result<RoadNetwork, NetworkError> {
    if net.is_empty() {
        return Err(NetworkError::EmptyNetwork);
    }
    let comps = tarjan_scc(net);
    let mut comp_of = vec![0usize; net.node_count()];
    for (c, members) in comps.iter().enumerate() {
        for &v in members {
            comp_of[v] = c;
        }
    }
    let mut internal_edges = vec![0usize; comps.len()];
    for ei in 0..net.edge_count() {
        let (u, v) = net.edge_endpoints(ei);
        if comp_of[u] == comp_of[v] {
            internal_edges[comp_of[u]] += 1;
        }
    }
    // node indices follow id order, so the smallest index is the smallest id
    let best = (0..comps.len())
        .max_by(|&a, &b| {
            let min_a = comps[a].iter().min();
            let min_b = comps[b].iter().min();
            comps[a].len().cmp(&comps[b].len()).then(internal_edges[a].cmp(&internal_edges[b])).then(min_b.cmp(&min_a))
        })
        .expect("non-empty network has a component");
    let keep: Vec<NodeId> = comps[best].iter().map(|&i| net.nodes[i].id).collect();
    Ok(net.induced(&keep))
}
