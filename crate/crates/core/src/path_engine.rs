//! Single-source shortest paths with canonical predecessor trees.
//!
//! Vertices are settled in ascending `(distance, id)` order and a tentative
//! distance is only replaced on strict improvement. Together with id-sorted
//! adjacency this pins down one shortest path per (source, target).

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::knn_graph::KnnGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPathTree {
    source: usize,
    dist: Vec<f64>,
    pred: Vec<Option<usize>>,
    /// Vertices in the order they were settled, starting with `source`.
    settled: Vec<usize>,
}

impl ShortestPathTree {
    pub fn source(&self) -> usize {
        self.source
    }

    /// Distance to `v`; `f64::INFINITY` if unreachable (or not settled
    /// before an early stop).
    pub fn dist(&self, v: usize) -> f64 {
        self.dist[v]
    }

    pub fn distances(&self) -> &[f64] {
        &self.dist
    }

    pub fn pred(&self, v: usize) -> Option<usize> {
        self.pred[v]
    }

    pub fn predecessors(&self) -> &[Option<usize>] {
        &self.pred
    }

    pub fn settle_order(&self) -> &[usize] {
        &self.settled
    }

    pub fn is_reachable(&self, v: usize) -> bool {
        self.dist[v].is_finite()
    }
}

/// Vertex sequence from source to target, endpoints included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path(Vec<usize>);

impl Path {
    pub fn vertices(&self) -> &[usize] {
        &self.0
    }

    /// Number of edges.
    pub fn hops(&self) -> usize {
        self.0.len() - 1
    }

    /// Vertices strictly between the endpoints.
    pub fn interior(&self) -> &[usize] {
        if self.0.len() <= 2 {
            &[]
        } else {
            &self.0[1..self.0.len() - 1]
        }
    }
}

impl From<Vec<usize>> for Path {
    fn from(v: Vec<usize>) -> Self {
        assert!(!v.is_empty(), "a path has at least one vertex");
        Path(v)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    vertex: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.vertex.cmp(&other.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn sssp(graph: &KnnGraph, source: usize) -> ShortestPathTree {
    sssp_until(graph, source, None)
}

/// Dijkstra from `source`. With `targets`, stops as soon as every listed
/// vertex is settled; settled vertices carry the same distances and
/// predecessors as an unrestricted run.
pub fn sssp_until(graph: &KnnGraph, source: usize, targets: Option<&[usize]>) -> ShortestPathTree {
    let n = graph.n();
    assert!(source < n, "source {source} out of range (n={n})");

    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut done = vec![false; n];
    let mut settled = Vec::new();

    let mut pending = match targets {
        Some(ts) => {
            let mut want = vec![false; n];
            let mut count = 0usize;
            for &t in ts {
                if !want[t] {
                    want[t] = true;
                    count += 1;
                }
            }
            Some((want, count))
        }
        None => None,
    };

    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Entry {
        dist: 0.0,
        vertex: source,
    }));

    while let Some(Reverse(Entry { dist: du, vertex: u })) = heap.pop() {
        if done[u] || du > dist[u] {
            continue;
        }
        done[u] = true;
        settled.push(u);

        if let Some((want, count)) = pending.as_mut() {
            if want[u] {
                *count -= 1;
                if *count == 0 {
                    break;
                }
            }
        }

        for &(v, w) in graph.neighbors(u) {
            if done[v] {
                continue;
            }
            let alt = du + w;
            if alt < dist[v] {
                dist[v] = alt;
                pred[v] = Some(u);
                heap.push(Reverse(Entry { dist: alt, vertex: v }));
            }
        }
    }

    // Anything left unsettled after an early stop has no final value.
    if pending.is_some() {
        for v in 0..n {
            if !done[v] {
                dist[v] = f64::INFINITY;
                pred[v] = None;
            }
        }
    }

    ShortestPathTree {
        source,
        dist,
        pred,
        settled,
    }
}

/// Canonical path from the tree's source to `target`, or `None` when
/// `target` is unreachable.
pub fn reconstruct_path(tree: &ShortestPathTree, target: usize) -> Option<Path> {
    if !tree.is_reachable(target) {
        return None;
    }
    let mut vertices = vec![target];
    let mut cur = target;
    while let Some(p) = tree.pred[cur] {
        vertices.push(p);
        cur = p;
        debug_assert!(vertices.len() <= tree.dist.len(), "predecessor cycle");
    }
    debug_assert_eq!(cur, tree.source);
    vertices.reverse();
    Some(Path(vertices))
}
