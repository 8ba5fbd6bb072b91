//! OSM XML subset reader and drivable network assembly.
//!
//! Only `node`, `way`, `nd` and `tag` elements are read; everything else
//! (relations, bounds, changesets) is skipped.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

use crate::netmodel::{
    haversine_m, largest_scc, parse_maxspeed, ControlKind, EdgeId, GeoPoint, NetworkError, NodeId, RoadEdge,
    RoadNetwork, RoadNode, SpeedTable,
};

/// `highway=*` way classes that are routable by car.
pub const DRIVABLE_CLASSES: [&str; 9] = [
    "motorway",
    "trunk",
    "primary",
    "secondary",
    "tertiary",
    "unclassified",
    "residential",
    "living_street",
    "service",
];

#[derive(Debug, Error)]
pub enum OsmError {
    #[error("malformed XML at byte {position}: {message}")]
    MalformedXml { position: u64, message: String },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: i64 },
    #[error("way {way} references missing node {node}")]
    DanglingNodeRef { way: i64, node: i64 },
    #[error("no drivable network remains")]
    EmptyNetwork,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawNode {
    pub id: i64,
    pub lat: f64,
    pub lon: f64,
    pub tags: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawWay {
    pub id: i64,
    pub refs: Vec<i64>,
    pub tags: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OsmData {
    pub nodes: Vec<RawNode>,
    pub ways: Vec<RawWay>,
}

enum Open {
    None,
    Node(RawNode),
    Way(RawWay),
}

fn malformed(reader_pos: u64, message: impl Into<String>) -> OsmError {
    OsmError::MalformedXml { position: reader_pos, message: message.into() }
}

fn attrs(e: &BytesStart<'_>, pos: u64) -> Result<HashMap<String, String>, OsmError> {
    let mut out = HashMap::new();
    for a in e.attributes() {
        let a = a.map_err(|err| malformed(pos, err.to_string()))?;
        let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
        let value = a.unescape_value().map_err(|err| malformed(pos, err.to_string()))?.into_owned();
        out.insert(key, value);
    }
    Ok(out)
}

fn required<T: std::str::FromStr>(
    map: &HashMap<String, String>,
    key: &str,
    element: &str,
    pos: u64,
) -> Result<T, OsmError> {
    let raw = map.get(key).ok_or_else(|| malformed(pos, format!("<{element}> missing attribute `{key}`")))?;
    raw.trim().parse().map_err(|_| malformed(pos, format!("<{element}> attribute `{key}` has invalid value {raw:?}")))
}

/// Reads an OSM XML document.
///
/// Nodes without `lat`/`lon` (as found in some diff formats) are skipped;
/// nodes with non-numeric coordinates are a [`OsmError::MalformedXml`].
pub fn parse_osm_xml<R: BufRead>(input: R) -> Result<OsmData, OsmError> {
    let mut reader = Reader::from_reader(input);
    let mut buf = Vec::new();
    let mut data = OsmData::default();
    let mut node_ids = HashSet::new();
    let mut way_ids = HashSet::new();
    let mut open = Open::None;
    let mut saw_root = false;
    let mut depth = 0usize;

    loop {
        buf.clear();
        let pos = reader.buffer_position();
        let event = reader.read_event_into(&mut buf).map_err(|e| malformed(pos, e.to_string()))?;
        let (start, is_empty) = match &event {
            Event::Start(e) => (Some(e), false),
            Event::Empty(e) => (Some(e), true),
            _ => (None, false),
        };
        if let Some(e) = start {
            let name = e.name();
            let name = name.as_ref();
            if depth == 0 {
                if name != b"osm" {
                    return Err(malformed(pos, "root element must be <osm>"));
                }
                saw_root = true;
            }
            match (name, &mut open) {
                (b"node", Open::None) if depth == 1 => {
                    let a = attrs(e, pos)?;
                    let id: i64 = required(&a, "id", "node", pos)?;
                    if !node_ids.insert(id) {
                        return Err(OsmError::DuplicateId { kind: "node", id });
                    }
                    if a.contains_key("lat") || a.contains_key("lon") {
                        let node = RawNode {
                            id,
                            lat: required(&a, "lat", "node", pos)?,
                            lon: required(&a, "lon", "node", pos)?,
                            tags: BTreeMap::new(),
                        };
                        if is_empty {
                            data.nodes.push(node);
                        } else {
                            open = Open::Node(node);
                        }
                    }
                }
                (b"way", Open::None) if depth == 1 => {
                    let a = attrs(e, pos)?;
                    let id: i64 = required(&a, "id", "way", pos)?;
                    if !way_ids.insert(id) {
                        return Err(OsmError::DuplicateId { kind: "way", id });
                    }
                    let way = RawWay { id, refs: Vec::new(), tags: BTreeMap::new() };
                    if is_empty {
                        data.ways.push(way);
                    } else {
                        open = Open::Way(way);
                    }
                }
                (b"nd", Open::Way(way)) => {
                    let a = attrs(e, pos)?;
                    way.refs.push(required(&a, "ref", "nd", pos)?);
                }
                (b"tag", Open::Node(RawNode { tags, .. }) | Open::Way(RawWay { tags, .. })) => {
                    let a = attrs(e, pos)?;
                    let k = a.get("k").ok_or_else(|| malformed(pos, "<tag> missing attribute `k`"))?;
                    let v = a.get("v").ok_or_else(|| malformed(pos, "<tag> missing attribute `v`"))?;
                    tags.insert(k.clone(), v.clone());
                }
                _ => {}
            }
            if !is_empty {
                depth += 1;
            }
            continue;
        }
        match event {
            Event::End(e) => {
                depth = depth.saturating_sub(1);
                if depth == 1 {
                    match (e.name().as_ref(), std::mem::replace(&mut open, Open::None)) {
                        (b"node", Open::Node(n)) => data.nodes.push(n),
                        (b"way", Open::Way(w)) => data.ways.push(w),
                        (_, other) => open = other,
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !saw_root {
        return Err(malformed(reader.buffer_position(), "document has no <osm> root element"));
    }
    if depth != 0 {
        return Err(malformed(reader.buffer_position(), "unexpected end of document"));
    }
    Ok(data)
}

/// Whether a way's `highway` class is routable by car.
pub fn is_drivable(class: &str) -> bool {
    let base = class.strip_suffix("_link").unwrap_or(class);
    DRIVABLE_CLASSES.contains(&base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Both,
    Forward,
    Reverse,
}

fn direction(tags: &BTreeMap<String, String>) -> Direction {
    match tags.get("oneway").map(|s| s.trim()) {
        Some("yes" | "true" | "1") => Direction::Forward,
        Some("-1" | "reverse") => Direction::Reverse,
        _ => Direction::Both,
    }
}

/// Assembles the drivable, strongly connected road network.
///
/// Each consecutive node pair of a drivable way yields one directed edge per
/// allowed direction. Edge ids are assigned sequentially in (way order, segment
/// order, forward before reverse). Segments of zero length (repeated refs or
/// coincident coordinates) are dropped.
pub fn build_network(data: &OsmData, speeds: &SpeedTable) -> Result<RoadNetwork, OsmError> {
    let raw_by_id: HashMap<i64, &RawNode> = data.nodes.iter().map(|n| (n.id, n)).collect();
    let mut points: HashMap<NodeId, GeoPoint> = HashMap::new();
    let mut edges = Vec::new();
    let mut next_edge: EdgeId = 0;

    for way in &data.ways {
        let Some(class) = way.tags.get("highway") else { continue };
        if !is_drivable(class) || way.refs.len() < 2 {
            continue;
        }
        let kph =
            way.tags.get("maxspeed").and_then(|raw| parse_maxspeed(raw).kph()).unwrap_or_else(|| speeds.kph_for(class));
        let dir = direction(&way.tags);
        for pair in way.refs.windows(2) {
            let mut ends = [GeoPoint::new(0.0, 0.0)?; 2];
            for (slot, &id) in ends.iter_mut().zip(pair) {
                let raw = raw_by_id.get(&id).ok_or(OsmError::DanglingNodeRef { way: way.id, node: id })?;
                *slot = GeoPoint::new(raw.lat, raw.lon)?;
                points.insert(id, *slot);
            }
            let (a, b) = (pair[0], pair[1]);
            let length = haversine_m(ends[0], ends[1]);
            if a == b || length <= 0.0 {
                continue;
            }
            if dir != Direction::Reverse {
                edges.push(RoadEdge::new(next_edge, a, b, length, kph)?);
                next_edge += 1;
            }
            if dir != Direction::Forward {
                edges.push(RoadEdge::new(next_edge, b, a, length, kph)?);
                next_edge += 1;
            }
        }
    }
    if points.is_empty() {
        return Err(OsmError::EmptyNetwork);
    }
    let nodes = points
        .into_iter()
        .map(|(id, point)| {
            let control =
                raw_by_id[&id].tags.get("highway").map(|v| ControlKind::from_osm_highway(v)).unwrap_or_default();
            RoadNode { id, point, control }
        })
        .collect();
    let net = RoadNetwork::new(nodes, edges)?;
    largest_scc(&net).map_err(|e| match e {
        NetworkError::EmptyNetwork => OsmError::EmptyNetwork,
        other => other.into(),
    })
}
