//! Directed IP communication graph and its node features.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::nwdaf::StoredUsageReport;

/// Relative tolerance when comparing shortest-path lengths.
pub const PATH_TIE_TOLERANCE: f64 = 1e-12;

/// Column names of the feature vector, in order.
pub const FEATURE_SCHEMA: [&str; 5] = ["inDegree", "outDegree", "wInDegree", "wOutDegree", "wBetweenness"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("node {0} is not in the graph")]
    UnknownNode(Ipv4Addr),
}

/// Directed graph keyed by IPv4 address. Parallel edges are merged by
/// summing their weights; self-loops are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommGraph {
    nodes: BTreeSet<Ipv4Addr>,
    edges: BTreeMap<(Ipv4Addr, Ipv4Addr), u64>,
}

impl CommGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, a: Ipv4Addr) {
        self.nodes.insert(a);
    }

    /// Adds `weight` to edge `src -> dst`. Zero weights and self-loops only
    /// register the endpoints.
    pub fn add_edge(&mut self, src: Ipv4Addr, dst: Ipv4Addr, weight: u64) {
        self.nodes.insert(src);
        self.nodes.insert(dst);
        if src == dst || weight == 0 {
            return;
        }
        *self.edges.entry((src, dst)).or_insert(0) += weight;
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.nodes.iter().copied()
    }

    pub fn contains(&self, a: Ipv4Addr) -> bool {
        self.nodes.contains(&a)
    }

    pub fn weight(&self, src: Ipv4Addr, dst: Ipv4Addr) -> Option<u64> {
        self.edges.get(&(src, dst)).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Ipv4Addr, Ipv4Addr, u64)> + '_ {
        self.edges.iter().map(|(&(s, d), &w)| (s, d, w))
    }

    /// Node addresses in index order plus out-adjacency lists by index.
    fn indexed(&self) -> (Vec<Ipv4Addr>, Vec<Vec<(usize, u64)>>) {
        let addrs: Vec<Ipv4Addr> = self.nodes.iter().copied().collect();
        let index: BTreeMap<Ipv4Addr, usize> = addrs.iter().enumerate().map(|(i, a)| (*a, i)).collect();
        let mut adj = vec![Vec::new(); addrs.len()];
        for (&(s, d), &w) in &self.edges {
            adj[index[&s]].push((index[&d], w));
        }
        (addrs, adj)
    }
}

/// Outcome of graph construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphBuild {
    pub graph: CommGraph,
    /// Measurement items skipped because they carried no flow description.
    pub missing_flow_info: usize,
}

/// Builds the communication graph from per-flow usage reports.
///
/// Each flow adds its uplink packet count to `src -> dst` and its downlink
/// packet count to `dst -> src`.
pub fn build_comm_graph(reports: &[StoredUsageReport]) -> GraphBuild {
    let mut out = GraphBuild::default();
    for r in reports {
        for item in &r.notification.user_data_usage_measurements {
            let Some(flow) = item.flow_info.as_ref().and_then(|f| f.flow_key()) else {
                out.missing_flow_info += 1;
                continue;
            };
            let (ul, dl) = item
                .volume_measurement
                .map(|v| (v.ul_nb_of_packets, v.dl_nb_of_packets))
                .unwrap_or((0, 0));
            out.graph.add_edge(flow.src_ip, flow.dst_ip, ul);
            out.graph.add_edge(flow.dst_ip, flow.src_ip, dl);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Degrees {
    pub in_degree: u64,
    pub out_degree: u64,
    pub weighted_in: u64,
    pub weighted_out: u64,
}

pub fn node_degrees(g: &CommGraph, v: Ipv4Addr) -> Result<Degrees, GraphError> {
    if !g.contains(v) {
        return Err(GraphError::UnknownNode(v));
    }
    let mut d = Degrees::default();
    for (s, t, w) in g.edges() {
        if s == v {
            d.out_degree += 1;
            d.weighted_out += w;
        }
        if t == v {
            d.in_degree += 1;
            d.weighted_in += w;
        }
    }
    Ok(d)
}

/// Edge length used for weighted shortest paths: heavier links are closer.
#[inline]
pub fn edge_distance(weight: u64) -> f64 {
    1.0 / weight as f64
}

/// True when `a` and `b` are equal path lengths within the tie tolerance.
#[inline]
pub fn same_length(a: f64, b: f64) -> bool {
    (a - b).abs() <= PATH_TIE_TOLERANCE * a.abs().max(b.abs())
}

#[derive(PartialEq)]
struct Pending(f64, usize);

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Unnormalized weighted betweenness centrality (Brandes with Dijkstra).
pub fn weighted_betweenness(g: &CommGraph) -> BTreeMap<Ipv4Addr, f64> {
    let (addrs, adj) = g.indexed();
    let n = addrs.len();
    let mut centrality = vec![0.0f64; n];

    let mut dist = vec![f64::INFINITY; n];
    let mut sigma = vec![0.0f64; n];
    let mut delta = vec![0.0f64; n];
    let mut settled = vec![false; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut order = Vec::with_capacity(n);

    for s in 0..n {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        sigma.iter_mut().for_each(|x| *x = 0.0);
        delta.iter_mut().for_each(|x| *x = 0.0);
        settled.iter_mut().for_each(|x| *x = false);
        preds.iter_mut().for_each(Vec::clear);
        order.clear();

        dist[s] = 0.0;
        sigma[s] = 1.0;
        let mut heap = BinaryHeap::new();
        heap.push(Pending(0.0, s));
        while let Some(Pending(d, v)) = heap.pop() {
            if settled[v] || d > dist[v] {
                continue;
            }
            settled[v] = true;
            order.push(v);
            for &(w, weight) in &adj[v] {
                if settled[w] {
                    continue;
                }
                let alt = dist[v] + edge_distance(weight);
                if dist[w].is_infinite() || (alt < dist[w] && !same_length(alt, dist[w])) {
                    dist[w] = alt;
                    sigma[w] = sigma[v];
                    preds[w].clear();
                    preds[w].push(v);
                    heap.push(Pending(alt, w));
                } else if same_length(alt, dist[w]) {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }

        for &w in order.iter().rev() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                centrality[w] += delta[w];
            }
        }
    }

    addrs.into_iter().zip(centrality).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeFeatures {
    pub in_degree: u64,
    pub out_degree: u64,
    pub weighted_in_degree: u64,
    pub weighted_out_degree: u64,
    pub weighted_betweenness: f64,
}

impl NodeFeatures {
    /// Feature vector in `FEATURE_SCHEMA` order.
    pub fn to_vector(&self) -> [f64; 5] {
        [
            self.in_degree as f64,
            self.out_degree as f64,
            self.weighted_in_degree as f64,
            self.weighted_out_degree as f64,
            self.weighted_betweenness,
        ]
    }
}

pub fn extract_features(g: &CommGraph) -> BTreeMap<Ipv4Addr, NodeFeatures> {
    let mut feats: BTreeMap<Ipv4Addr, NodeFeatures> =
        g.nodes().map(|a| (a, NodeFeatures::default())).collect();
    for (s, t, w) in g.edges() {
        let out = feats.get_mut(&s).expect("edge endpoint is a node");
        out.out_degree += 1;
        out.weighted_out_degree += w;
        let inc = feats.get_mut(&t).expect("edge endpoint is a node");
        inc.in_degree += 1;
        inc.weighted_in_degree += w;
    }
    for (a, b) in weighted_betweenness(g) {
        feats.get_mut(&a).expect("betweenness covers nodes").weighted_betweenness = b;
    }
    feats
}
