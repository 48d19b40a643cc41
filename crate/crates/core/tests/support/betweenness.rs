//! Exhaustive betweenness by enumerating every simple path.
//!
//! Edge weights are restricted to 1..=12 so that each edge length 1/w is an
//! integer number of 1/27720 units and path lengths compare exactly.

#![allow(dead_code)]

use std::net::Ipv4Addr;

use nwdaf_loop::engine::CommGraph;
use rand::Rng;

/// lcm(1..=12)
pub const UNITS: u64 = 27_720;
pub const MAX_WEIGHT: u64 = 12;

#[derive(Debug, Clone)]
pub struct SmallGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, u64)>,
}

pub fn addr(i: usize) -> Ipv4Addr {
    Ipv4Addr::new(10, 0, 0, i as u8 + 1)
}

impl SmallGraph {
    pub fn random(rng: &mut impl Rng, max_nodes: usize) -> Self {
        let n = rng.gen_range(1..=max_nodes);
        let density = rng.gen_range(0.1..0.9);
        // Few distinct weights make equal-length paths common.
        let palette: Vec<u64> = if rng.gen_bool(0.5) { vec![1, 2, 3, 4, 6, 12] } else { (1..=MAX_WEIGHT).collect() };
        let mut edges = Vec::new();
        for s in 0..n {
            for t in 0..n {
                if s != t && rng.gen_bool(density) {
                    edges.push((s, t, palette[rng.gen_range(0..palette.len())]));
                }
            }
        }
        SmallGraph { n, edges }
    }

    pub fn to_comm_graph(&self) -> CommGraph {
        let mut g = CommGraph::new();
        for i in 0..self.n {
            g.add_node(addr(i));
        }
        for &(s, t, w) in &self.edges {
            g.add_edge(addr(s), addr(t), w);
        }
        g
    }
}

struct Best {
    len: u64,
    paths: u64,
    through: Vec<u64>,
}

/// Σ over ordered pairs (s, t) of the share of shortest s→t paths that pass
/// through each node as an interior vertex.
pub fn oracle(g: &SmallGraph) -> Vec<f64> {
    let n = g.n;
    let mut adj = vec![Vec::new(); n];
    for &(s, t, w) in &g.edges {
        assert!((1..=MAX_WEIGHT).contains(&w), "oracle needs weights in 1..=12");
        adj[s].push((t, UNITS / w));
    }
    let mut bc = vec![0.0; n];
    for s in 0..n {
        let mut best: Vec<Option<Best>> = (0..n).map(|_| None).collect();
        let mut path = vec![s];
        let mut on_path = vec![false; n];
        on_path[s] = true;
        walk(&adj, &mut path, &mut on_path, 0, &mut best);
        for b in best.into_iter().flatten() {
            for (v, &c) in b.through.iter().enumerate() {
                bc[v] += c as f64 / b.paths as f64;
            }
        }
    }
    bc
}

fn walk(adj: &[Vec<(usize, u64)>], path: &mut Vec<usize>, on_path: &mut [bool], len: u64, best: &mut [Option<Best>]) {
    let here = *path.last().unwrap();
    for &(next, d) in &adj[here] {
        if on_path[next] {
            continue;
        }
        let total = len + d;
        path.push(next);
        on_path[next] = true;
        let interior = &path[1..path.len() - 1];
        let slot = &mut best[next];
        match slot {
            Some(b) if total > b.len => {}
            Some(b) if total == b.len => {
                b.paths += 1;
                for &v in interior {
                    b.through[v] += 1;
                }
            }
            _ => {
                let mut through = vec![0; on_path.len()];
                for &v in interior {
                    through[v] += 1;
                }
                *slot = Some(Best { len: total, paths: 1, through });
            }
        }
        walk(adj, path, on_path, total, best);
        on_path[next] = false;
        path.pop();
    }
}
