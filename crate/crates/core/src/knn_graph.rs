//! Exact k-nearest-neighbor graph with Euclidean edge weights.
//!
//! Distances are `sqrt(sum((a_i - b_i)^2))` with every term and the running
//! sum in f64, summed in ascending coordinate order. The directed kNN relation
//! (ties broken by smaller vertex id) is symmetrized by union.

use std::io::{self, Write};
use std::ops::Range;

use rayon::prelude::*;

use crate::embed_io::EmbeddingMatrix;

pub const DEFAULT_K: usize = 10;
/// Query rows per distance block. Peak scratch memory is `block * n` f64s
/// per worker.
pub const DEFAULT_BLOCK_ROWS: usize = 64;

/// Undirected weighted graph; adjacency lists are sorted by neighbor id.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    n: usize,
    k_requested: usize,
    k_effective: usize,
    adjacency: Vec<Vec<(usize, f64)>>,
    warnings: Vec<String>,
}

impl KnnGraph {
    /// Builds a graph from an explicit undirected edge list. Each edge is
    /// inserted in both directions; `k` is recorded as 0.
    ///
    /// Panics on self-loops, out-of-range ids, negative or non-finite weights
    /// and conflicting duplicate edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v, w) in edges {
            assert!(u < n && v < n, "edge ({u},{v}) out of range");
            assert!(u != v, "self-loop at {u}");
            assert!(w.is_finite() && w >= 0.0, "bad weight {w}");
            adjacency[u].push((v, w));
            adjacency[v].push((u, w));
        }
        finish_adjacency(&mut adjacency);
        Self {
            n,
            k_requested: 0,
            k_effective: 0,
            adjacency,
            warnings: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_requested(&self) -> usize {
        self.k_requested
    }

    /// `k` after clamping to `n - 1`.
    pub fn k_effective(&self) -> usize {
        self.k_effective
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adjacency[u]
    }

    pub fn adjacency(&self) -> &[Vec<(usize, f64)>] {
        &self.adjacency
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Undirected edges `(u, v, w)` with `u < v`, ordered by `(u, v)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, nbrs)| {
            nbrs.iter()
                .filter(move |&&(v, _)| u < v)
                .map(move |&(v, w)| (u, v, w))
        })
    }

    /// Neighbor ids only, per vertex.
    pub fn structure(&self) -> Vec<Vec<usize>> {
        self.adjacency
            .iter()
            .map(|nbrs| nbrs.iter().map(|&(v, _)| v).collect())
            .collect()
    }

    /// Whether the subgraph induced by `members` is connected. An empty or
    /// single-vertex set counts as connected.
    pub fn induced_connected(&self, members: &[usize]) -> bool {
        if members.len() <= 1 {
            return true;
        }
        let mut inside = vec![false; self.n];
        for &m in members {
            inside[m] = true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![members[0]];
        seen[members[0]] = true;
        let mut reached = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adjacency[u] {
                if inside[v] && !seen[v] {
                    seen[v] = true;
                    reached += 1;
                    stack.push(v);
                }
            }
        }
        reached == members.len()
    }

    /// Writes `u,v,weight` rows (u < v), weights with 17 significant digits.
    pub fn write_edge_csv(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "u,v,weight")?;
        for (u, v, w) in self.edges() {
            writeln!(out, "{u},{v},{w:.16e}")?;
        }
        Ok(())
    }
}

fn finish_adjacency(adjacency: &mut [Vec<(usize, f64)>]) {
    for nbrs in adjacency.iter_mut() {
        nbrs.sort_by_key(|e| e.0);
        nbrs.dedup_by(|b, a| {
            if a.0 == b.0 {
                assert!(
                    a.1.to_bits() == b.1.to_bits(),
                    "conflicting weights for the same edge"
                );
                true
            } else {
                false
            }
        });
    }
}

/// Embeddings widened to f64 once, so the distance kernel never converts.
struct Points {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl Points {
    fn new(embeddings: &EmbeddingMatrix) -> Self {
        Self {
            n: embeddings.n(),
            d: embeddings.d(),
            values: embeddings.values().iter().map(|&v| f64::from(v)).collect(),
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }
}

/// Fills `out[q * n + j]` with the distance from query `queries.start + q`
/// to point `j`.
fn block_distances(points: &Points, queries: Range<usize>, out: &mut [f64]) {
    let n = points.n;
    let nq = queries.len();
    debug_assert_eq!(out.len(), nq * n);
    for j in 0..n {
        let b = points.row(j);
        let mut q = 0;
        // Four independent accumulators per pass; each one is still a plain
        // left-to-right sum over coordinates.
        while q + 4 <= nq {
            let a0 = points.row(queries.start + q);
            let a1 = points.row(queries.start + q + 1);
            let a2 = points.row(queries.start + q + 2);
            let a3 = points.row(queries.start + q + 3);
            let mut s = [0.0f64; 4];
            for t in 0..b.len() {
                let bt = b[t];
                let x0 = a0[t] - bt;
                let x1 = a1[t] - bt;
                let x2 = a2[t] - bt;
                let x3 = a3[t] - bt;
                s[0] += x0 * x0;
                s[1] += x1 * x1;
                s[2] += x2 * x2;
                s[3] += x3 * x3;
            }
            for (r, sr) in s.iter().enumerate() {
                out[(q + r) * n + j] = sr.sqrt();
            }
            q += 4;
        }
        while q < nq {
            let a = points.row(queries.start + q);
            let mut s = 0.0f64;
            for t in 0..b.len() {
                let x = a[t] - b[t];
                s += x * x;
            }
            out[q * n + j] = s.sqrt();
            q += 1;
        }
    }
}

#[inline]
fn closer(a: (usize, f64), b: (usize, f64)) -> bool {
    match a.1.total_cmp(&b.1) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Equal => a.0 < b.0,
        std::cmp::Ordering::Greater => false,
    }
}

/// The `k` smallest `(id, dist)` entries of one distance row, skipping `skip`,
/// ordered by `(dist, id)`.
fn select_topk(row: &[f64], skip: usize, k: usize) -> Vec<(usize, f64)> {
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
    if k == 0 {
        return best;
    }
    for (j, &dist) in row.iter().enumerate() {
        if j == skip {
            continue;
        }
        let cand = (j, dist);
        if best.len() == k && !closer(cand, best[k - 1]) {
            continue;
        }
        let pos = best.partition_point(|&e| closer(e, cand));
        best.insert(pos, cand);
        best.truncate(k);
    }
    best
}

fn topk_rows(points: &Points, queries: Range<usize>, k: usize, block_rows: usize) -> Vec<Vec<(usize, f64)>> {
    let block_rows = block_rows.max(1);
    let starts: Vec<usize> = queries.clone().step_by(block_rows).collect();
    let blocks: Vec<Vec<Vec<(usize, f64)>>> = starts
        .par_iter()
        .map(|&start| {
            let block = start..(start + block_rows).min(queries.end);
            let mut scratch = vec![0.0f64; block.len() * points.n];
            block_distances(points, block.clone(), &mut scratch);
            scratch
                .chunks_exact(points.n)
                .zip(block)
                .map(|(row, q)| select_topk(row, q, k))
                .collect()
        })
        .collect();
    blocks.into_iter().flatten().collect()
}

/// Top-`k` neighbors for each query row in `queries`, computed block by block
/// so the full `n x n` distance matrix is never held. Results are identical
/// for every `block_rows`.
pub fn pairwise_topk(
    embeddings: &EmbeddingMatrix,
    queries: Range<usize>,
    k: usize,
    block_rows: usize,
) -> Vec<Vec<(usize, f64)>> {
    assert!(queries.end <= embeddings.n(), "query block out of bounds");
    let points = Points::new(embeddings);
    topk_rows(&points, queries, k, block_rows)
}

pub fn build_knn_graph(embeddings: &EmbeddingMatrix, k: usize) -> KnnGraph {
    build_knn_graph_blocked(embeddings, k, DEFAULT_BLOCK_ROWS)
}

pub fn build_knn_graph_blocked(embeddings: &EmbeddingMatrix, k: usize, block_rows: usize) -> KnnGraph {
    assert!(k >= 1, "k must be at least 1");
    let n = embeddings.n();
    let mut warnings = Vec::new();
    let k_effective = if k >= n {
        let msg = format!("k={k} >= n={n}; clamped to {}", n - 1);
        log::warn!("{msg}");
        warnings.push(msg);
        n - 1
    } else {
        k
    };

    let points = Points::new(embeddings);
    let directed = topk_rows(&points, 0..n, k_effective, block_rows);

    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(2 * k_effective); n];
    for (u, nbrs) in directed.iter().enumerate() {
        for &(v, w) in nbrs {
            adjacency[u].push((v, w));
            adjacency[v].push((u, w));
        }
    }
    finish_adjacency(&mut adjacency);

    KnnGraph {
        n,
        k_requested: k,
        k_effective,
        adjacency,
        warnings,
    }
}
