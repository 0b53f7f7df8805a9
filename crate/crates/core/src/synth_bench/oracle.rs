//! Brute-force reference for the convexity pipeline.
//!
//! Deliberately naive and single-threaded: a dense distance matrix, fully
//! sorted neighbor rows, a dense adjacency matrix, array-scan Dijkstra and an
//! explicit double loop over same-class pairs with explicit paths. It shares
//! the tie-breaking contract with the engine but none of its code.

use thiserror::Error;

use crate::convexity_score::{ClassOutcome, ClassScore, LayerScore, SkippedClass};
use crate::embed_io::{EmbeddingMatrix, LabelVector};

pub const MAX_ORACLE_POINTS: usize = 500;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("oracle refuses n={0} (limit {MAX_ORACLE_POINTS})")]
    TooLarge(usize),
    #[error("no class has at least two points")]
    NoScorableClass,
}

/// Dense undirected graph: `weight[u][v]` is `Some(w)` for an edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGraph {
    pub weight: Vec<Vec<Option<f64>>>,
}

impl DenseGraph {
    pub fn n(&self) -> usize {
        self.weight.len()
    }
}

#[allow(clippy::needless_range_loop)]
pub fn distance_matrix(embeddings: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    let n = embeddings.n();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0f64;
            for (a, b) in embeddings.row(i).iter().zip(embeddings.row(j)) {
                let diff = *a as f64 - *b as f64;
                s += diff * diff;
            }
            dist[i][j] = s.sqrt();
        }
    }
    dist
}

pub fn knn_dense_graph(embeddings: &EmbeddingMatrix, k: usize) -> DenseGraph {
    let n = embeddings.n();
    let k = k.min(n - 1);
    let dist = distance_matrix(embeddings);
    let mut weight = vec![vec![None; n]; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist[i][a].partial_cmp(&dist[i][b]).unwrap().then(a.cmp(&b)));
        for &j in &order[..k] {
            weight[i][j] = Some(dist[i][j]);
            weight[j][i] = Some(dist[i][j]);
        }
    }
    DenseGraph { weight }
}

/// O(n^2) Dijkstra: pick the unsettled vertex with the smallest
/// `(distance, id)`, relax neighbors in ascending id, replace only on strict
/// improvement. Returns `(dist, pred)`.
pub fn naive_dijkstra(graph: &DenseGraph, source: usize) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = graph.n();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut settled = vec![false; n];
    dist[source] = 0.0;
    loop {
        let mut u = None;
        for v in 0..n {
            if settled[v] || dist[v] == f64::INFINITY {
                continue;
            }
            // Strict `<` while scanning ascending ids keeps the smaller id on ties.
            if u.is_none_or(|best: usize| dist[v] < dist[best]) {
                u = Some(v);
            }
        }
        let Some(u) = u else { break };
        settled[u] = true;
        for v in 0..n {
            if let Some(w) = graph.weight[u][v] {
                if !settled[v] && dist[u] + w < dist[v] {
                    dist[v] = dist[u] + w;
                    pred[v] = Some(u);
                }
            }
        }
    }
    (dist, pred)
}

/// Shortest simple-path lengths from `source` by enumerating every simple
/// path. Exponential; for tiny graphs only.
pub fn exhaustive_distances(graph: &DenseGraph, source: usize) -> Vec<f64> {
    fn walk(g: &DenseGraph, u: usize, len: f64, on_path: &mut Vec<bool>, best: &mut Vec<f64>) {
        if len < best[u] {
            best[u] = len;
        }
        for v in 0..g.n() {
            if let Some(w) = g.weight[u][v] {
                if !on_path[v] {
                    on_path[v] = true;
                    walk(g, v, len + w, on_path, best);
                    on_path[v] = false;
                }
            }
        }
    }
    assert!(graph.n() <= 12, "exhaustive enumeration is limited to 12 vertices");
    let mut best = vec![f64::INFINITY; graph.n()];
    let mut on_path = vec![false; graph.n()];
    on_path[source] = true;
    walk(graph, source, 0.0, &mut on_path, &mut best);
    best
}

fn path_to(pred: &[Option<usize>], dist: &[f64], source: usize, target: usize) -> Option<Vec<usize>> {
    if dist[target] == f64::INFINITY {
        return None;
    }
    let mut path = vec![target];
    while *path.last().unwrap() != source {
        path.push(pred[*path.last().unwrap()].unwrap());
    }
    path.reverse();
    Some(path)
}

pub fn oracle_convexity(embeddings: &EmbeddingMatrix, labels: &LabelVector, k: usize) -> Result<LayerScore, OracleError> {
    let n = embeddings.n();
    if n > MAX_ORACLE_POINTS {
        return Err(OracleError::TooLarge(n));
    }
    let graph = knn_dense_graph(embeddings, k);

    let mut outcomes = Vec::new();
    for class in 0..labels.num_classes() as u32 {
        let members: Vec<usize> = (0..n).filter(|&i| labels.label(i) == class).collect();
        if members.len() < 2 {
            outcomes.push(ClassOutcome::Skipped(SkippedClass {
                class_id: class,
                num_points: members.len(),
            }));
            continue;
        }
        let mut sum = 0.0;
        let mut pairs = 0u64;
        let mut unreachable = 0u64;
        for a in 0..members.len() {
            let i = members[a];
            let (dist, pred) = naive_dijkstra(&graph, i);
            for &j in &members[a + 1..] {
                pairs += 1;
                match path_to(&pred, &dist, i, j) {
                    None => unreachable += 1,
                    Some(path) => {
                        let interior = &path[1..path.len() - 1];
                        if interior.is_empty() {
                            sum += 1.0;
                        } else {
                            let same = interior.iter().filter(|&&v| labels.label(v) == class).count();
                            sum += same as f64 / interior.len() as f64;
                        }
                    }
                }
            }
        }
        let m = members.len() as u64;
        outcomes.push(ClassOutcome::Scored(ClassScore {
            class_id: class,
            class_name: labels.class_names().and_then(|c| c.get(class as usize).cloned()),
            num_points: members.len(),
            num_pairs_total: m * (m - 1) / 2,
            num_pairs_evaluated: pairs,
            num_pairs_unreachable: unreachable,
            pair_score_sum: sum,
            mean_pair_score: sum / pairs as f64,
            sampled: None,
        }));
    }
    LayerScore::from_outcomes(0, k, k.min(n - 1), outcomes).map_err(|_| OracleError::NoScorableClass)
}
