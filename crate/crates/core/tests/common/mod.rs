//! Brute-force reference implementations shared by the integration tests.
//! Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tte_core::netmodel::{ControlKind, EdgeId, GeoPoint, NodeId, RoadEdge, RoadNetwork, RoadNode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Arc list (edge id, from, to, weight).
pub type Arcs = Vec<(EdgeId, NodeId, NodeId, f64)>;

/// Network whose edge traversal times equal the given weights: length = weight
/// metres at 3.6 km/h (1 m/s).
pub fn network_from_arcs(ids: &[NodeId], arcs: &Arcs) -> RoadNetwork {
    let nodes = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| RoadNode {
            id,
            point: GeoPoint::new(0.0, i as f64 * 0.001).unwrap(),
            control: ControlKind::None,
        })
        .collect();
    let edges = arcs
        .iter()
        .map(|&(eid, a, b, w)| {
            if a == b {
                RoadEdge::self_loop(eid, a, w, 3.6).unwrap()
            } else {
                RoadEdge::new(eid, a, b, w, 3.6).unwrap()
            }
        })
        .collect();
    RoadNetwork::new(nodes, edges).unwrap()
}

/// Random strongly connected digraph: a Hamiltonian cycle through shuffled
/// nodes plus random extra arcs (parallel arcs allowed), at most `max_edges`
/// arcs in total. Edge ids are a random permutation.
pub fn random_strongly_connected(
    r: &mut ChaCha8Rng,
    max_nodes: usize,
    max_edges: usize,
    integer_weights: bool,
) -> (Vec<NodeId>, Arcs) {
    let n = r.random_range(2..=max_nodes);
    let mut ids: Vec<NodeId> = (0..n as NodeId).map(|i| i * 3 + 1).collect();
    shuffle(r, &mut ids);
    let mut pairs: Vec<(NodeId, NodeId)> = (0..n).map(|i| (ids[i], ids[(i + 1) % n])).collect();
    let extra = r.random_range(0..=max_edges - n);
    for _ in 0..extra {
        let a = ids[r.random_range(0..n)];
        let b = ids[r.random_range(0..n)];
        if a != b {
            pairs.push((a, b));
        }
    }
    let mut edge_ids: Vec<EdgeId> = (0..pairs.len() as EdgeId).collect();
    shuffle(r, &mut edge_ids);
    let arcs = pairs
        .into_iter()
        .zip(edge_ids)
        .map(|((a, b), eid)| {
            let w = if integer_weights { r.random_range(1..=6) as f64 } else { r.random_range(0.05..5.0) };
            (eid, a, b, w)
        })
        .collect();
    (ids, arcs)
}

pub fn shuffle<T>(r: &mut ChaCha8Rng, v: &mut [T]) {
    for i in (1..v.len()).rev() {
        let j = r.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Every simple path from `from` to `to` as (summed weight in path order,
/// edge-id sequence).
pub fn all_simple_paths(arcs: &Arcs, from: NodeId, to: NodeId) -> Vec<(f64, Vec<EdgeId>)> {
    fn walk(
        arcs: &Arcs,
        at: NodeId,
        to: NodeId,
        visited: &mut BTreeSet<NodeId>,
        path: &mut Vec<EdgeId>,
        cost: f64,
        out: &mut Vec<(f64, Vec<EdgeId>)>,
    ) {
        if at == to {
            out.push((cost, path.clone()));
            return;
        }
        for &(eid, a, b, w) in arcs {
            if a == at && !visited.contains(&b) {
                visited.insert(b);
                path.push(eid);
                walk(arcs, b, to, visited, path, cost + w, out);
                path.pop();
                visited.remove(&b);
            }
        }
    }
    let mut out = Vec::new();
    let mut visited = BTreeSet::from([from]);
    walk(arcs, from, to, &mut visited, &mut Vec::new(), 0.0, &mut out);
    out
}

/// Largest SCC by mutual reachability from a transitive-closure matrix, with
/// ties broken by node count, then internal arc count, then smallest id.
/// Returns (sorted node ids, sorted edge ids).
pub fn brute_force_largest_scc(ids: &[NodeId], arcs: &[(EdgeId, NodeId, NodeId)]) -> (Vec<NodeId>, Vec<EdgeId>) {
    let n = ids.len();
    let pos = |id: NodeId| ids.iter().position(|&x| x == id).unwrap();
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(_, a, b) in arcs {
        reach[pos(a)][pos(b)] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    type Candidate = (usize, usize, NodeId, Vec<NodeId>, Vec<EdgeId>);
    let mut best: Option<Candidate> = None;
    for (i, row) in reach.iter().enumerate() {
        let mut comp: Vec<NodeId> = (0..n).filter(|&j| row[j] && reach[j][i]).map(|j| ids[j]).collect();
        comp.sort_unstable();
        let mut edges: Vec<EdgeId> =
            arcs.iter().filter(|(_, a, b)| comp.contains(a) && comp.contains(b)).map(|(e, _, _)| *e).collect();
        edges.sort_unstable();
        let key = (comp.len(), edges.len(), comp[0]);
        let better = match &best {
            None => true,
            Some((nodes, ne, min_id, _, _)) => {
                key.0 > *nodes || (key.0 == *nodes && (key.1 > *ne || (key.1 == *ne && key.2 < *min_id)))
            }
        };
        if better {
            best = Some((key.0, key.1, key.2, comp, edges));
        }
    }
    let (_, _, _, nodes, edges) = best.unwrap();
    (nodes, edges)
}

/// Root split found by trying every (feature, midpoint) pair and computing
/// child sums of squared errors directly. `None` when no candidate reduces the
/// parent SSE. Ties resolve to the lowest feature, then the lowest threshold.
pub fn exhaustive_root_split(rows: &[Vec<f64>], y: &[f64]) -> Option<(usize, f64)> {
    let sse = |vals: &[f64]| {
        if vals.is_empty() {
            return 0.0;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
    };
    let parent = sse(y);
    if rows.len() < 2 || parent == 0.0 {
        return None;
    }
    let mut candidates = Vec::new();
    for f in 0..rows[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let left: Vec<f64> = rows.iter().zip(y).filter(|(r, _)| r[f] <= t).map(|(_, v)| *v).collect();
            let right: Vec<f64> = rows.iter().zip(y).filter(|(r, _)| r[f] > t).map(|(_, v)| *v).collect();
            candidates.push((f, t, sse(&left) + sse(&right)));
        }
    }
    let min = candidates.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    if min >= parent - 1e-9 * parent {
        return None;
    }
    candidates.into_iter().find(|c| c.2 <= min + 1e-9 * parent).map(|(f, t, _)| (f, t))
}
