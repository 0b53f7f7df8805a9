//! Per-class and per-layer graph convexity.
//!
//! For every unordered same-class pair `(i, j)`, `i < j`, the canonical
//! shortest path is taken from the tree rooted at `i`. The pair scores the
//! fraction of interior path vertices that carry the class label; a direct
//! edge scores 1 and an unreachable pair scores 0.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_io::LabelVector;
use crate::knn_graph::KnnGraph;
use crate::path_engine::{sssp_until, Path};

/// Pair count above which `--max-pairs` sampling is suggested.
pub const DEFAULT_SAMPLING_THRESHOLD: u64 = 2_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("graph has {graph} vertices but there are {labels} labels")]
    SizeMismatch { graph: usize, labels: usize },
    #[error("class {class_id} is out of range ({num_classes} classes)")]
    UnknownClass { class_id: u32, num_classes: usize },
    #[error("no class has at least two points")]
    NoScorableClass,
    #[error("pair sampling needs max_pairs >= 1")]
    EmptyBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairBudget {
    #[default]
    All,
    /// Classes with more than `max_pairs` pairs are scored on a uniform
    /// sample of `max_pairs` pairs drawn without replacement.
    Sampled { max_pairs: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub seed: u64,
    pub max_pairs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    pub num_points: usize,
    /// All unordered same-class pairs, whether or not evaluated.
    pub num_pairs_total: u64,
    pub num_pairs_evaluated: u64,
    pub num_pairs_unreachable: u64,
    pub pair_score_sum: f64,
    pub mean_pair_score: f64,
    pub sampled: Option<SampleInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedClass {
    pub class_id: u32,
    pub num_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassOutcome {
    Scored(ClassScore),
    /// Fewer than two points: no pair exists.
    Skipped(SkippedClass),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer_index: usize,
    pub k: usize,
    pub k_effective: usize,
    #[serde(rename = "macro")]
    pub macro_score: f64,
    #[serde(rename = "micro")]
    pub micro_score: f64,
    pub baseline: f64,
    pub classes: Vec<ClassScore>,
    pub skipped_classes: Vec<SkippedClass>,
}

impl LayerScore {
    /// Assembles a layer score from per-class outcomes in class-id order.
    pub fn from_outcomes(
        layer_index: usize,
        k: usize,
        k_effective: usize,
        outcomes: Vec<ClassOutcome>,
    ) -> Result<Self, ScoreError> {
        let mut classes = Vec::new();
        let mut skipped_classes = Vec::new();
        for o in outcomes {
            match o {
                ClassOutcome::Scored(s) => classes.push(s),
                ClassOutcome::Skipped(s) => skipped_classes.push(s),
            }
        }
        if classes.is_empty() {
            return Err(ScoreError::NoScorableClass);
        }
        let c = classes.len() as f64;
        let macro_score = classes.iter().map(|s| s.mean_pair_score).sum::<f64>() / c;
        let total_pairs: u64 = classes.iter().map(|s| s.num_pairs_evaluated).sum();
        let micro_score = classes.iter().map(|s| s.pair_score_sum).sum::<f64>() / total_pairs as f64;
        Ok(Self {
            layer_index,
            k,
            k_effective,
            macro_score,
            micro_score,
            baseline: 1.0 / c,
            classes,
            skipped_classes,
        })
    }
}

/// Score of one pair given its path (or `None` when unreachable).
pub fn pair_score(path: Option<&Path>, labels: &LabelVector, class_id: u32) -> f64 {
    let Some(path) = path else {
        return 0.0;
    };
    let interior = path.interior();
    if interior.is_empty() {
        return 1.0;
    }
    let inside = interior.iter().filter(|&&v| labels.label(v) == class_id).count();
    inside as f64 / interior.len() as f64
}

#[derive(Debug, Clone, Copy, Default)]
struct Partial {
    sum: f64,
    evaluated: u64,
    unreachable: u64,
}

/// Scores every `(source, target)` pair with one Dijkstra run. Hop counts
/// and in-class counts along the canonical paths are accumulated over the
/// settle order, where each vertex's predecessor always comes first.
fn score_source(graph: &KnnGraph, labels: &LabelVector, class_id: u32, source: usize, targets: &[usize]) -> Partial {
    let tree = sssp_until(graph, source, Some(targets));
    let n = graph.n();
    let mut hops = vec![0u32; n];
    let mut inside = vec![0u32; n];
    for &v in &tree.settle_order()[1..] {
        let p = tree.pred(v).expect("settled non-source vertex has a predecessor");
        hops[v] = hops[p] + 1;
        inside[v] = inside[p] + u32::from(labels.label(v) == class_id);
    }

    let mut part = Partial::default();
    for &t in targets {
        part.evaluated += 1;
        if !tree.is_reachable(t) {
            part.unreachable += 1;
            continue;
        }
        let interior = hops[t] - 1;
        // `inside[t]` counts the target itself, which is in the class.
        part.sum += if interior == 0 {
            1.0
        } else {
            f64::from(inside[t] - 1) / f64::from(interior)
        };
    }
    part
}

/// `(source, targets)` groups, sources ascending, targets ascending.
type PairPlan = Vec<(usize, Vec<usize>)>;

/// Pairs grouped by their smaller endpoint.
fn plan_pairs(members: &[usize], budget: PairBudget, class_id: u32) -> Result<(PairPlan, Option<SampleInfo>), ScoreError> {
    let m = members.len() as u64;
    let total = m * (m - 1) / 2;
    match budget {
        PairBudget::Sampled { max_pairs: 0, .. } => Err(ScoreError::EmptyBudget),
        PairBudget::Sampled { max_pairs, seed } if total > max_pairs => {
            let mut rng = ChaCha8Rng::seed_from_u64(class_seed(seed, class_id));
            let mut picked = index::sample(&mut rng, total as usize, max_pairs as usize).into_vec();
            picked.sort_unstable();
            let mut plan: Vec<(usize, Vec<usize>)> = Vec::new();
            for p in picked {
                let (a, b) = unrank_pair(p as u64, m);
                let (s, t) = (members[a as usize], members[b as usize]);
                match plan.last_mut() {
                    Some((src, ts)) if *src == s => ts.push(t),
                    _ => plan.push((s, vec![t])),
                }
            }
            Ok((plan, Some(SampleInfo { seed, max_pairs })))
        }
        _ => {
            let plan = members
                .iter()
                .enumerate()
                .take(members.len() - 1)
                .map(|(a, &s)| (s, members[a + 1..].to_vec()))
                .collect();
            Ok((plan, None))
        }
    }
}

/// Per-class sampling stream derived from the user seed.
fn class_seed(seed: u64, class_id: u32) -> u64 {
    seed ^ (u64::from(class_id) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Maps a row-major rank over `{(a, b) : a < b < m}` back to `(a, b)`.
fn unrank_pair(rank: u64, m: u64) -> (u64, u64) {
    // Row `a` starts at a*m - a*(a+1)/2.
    let start = |a: u64| a * m - a * (a + 1) / 2;
    let (mut lo, mut hi) = (0u64, m - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if start(mid) <= rank {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = lo;
    (a, a + 1 + (rank - start(a)))
}

pub fn class_convexity(
    graph: &KnnGraph,
    labels: &LabelVector,
    class_id: u32,
    budget: PairBudget,
) -> Result<ClassOutcome, ScoreError> {
    if graph.n() != labels.len() {
        return Err(ScoreError::SizeMismatch {
            graph: graph.n(),
            labels: labels.len(),
        });
    }
    if class_id as usize >= labels.num_classes() {
        return Err(ScoreError::UnknownClass {
            class_id,
            num_classes: labels.num_classes(),
        });
    }
    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels.label(i) == class_id).collect();
    score_members(graph, labels, class_id, &members, budget)
}

fn score_members(
    graph: &KnnGraph,
    labels: &LabelVector,
    class_id: u32,
    members: &[usize],
    budget: PairBudget,
) -> Result<ClassOutcome, ScoreError> {
    if members.len() < 2 {
        return Ok(ClassOutcome::Skipped(SkippedClass {
            class_id,
            num_points: members.len(),
        }));
    }
    let (plan, sampled) = plan_pairs(members, budget, class_id)?;
    let partials: Vec<Partial> = plan
        .par_iter()
        .map(|(s, ts)| score_source(graph, labels, class_id, *s, ts))
        .collect();

    // Fixed ascending-source reduction order.
    let total = partials.iter().fold(Partial::default(), |acc, p| Partial {
        sum: acc.sum + p.sum,
        evaluated: acc.evaluated + p.evaluated,
        unreachable: acc.unreachable + p.unreachable,
    });
    let m = members.len() as u64;
    Ok(ClassOutcome::Scored(ClassScore {
        class_id,
        class_name: labels
            .class_names()
            .and_then(|names| names.get(class_id as usize).cloned()),
        num_points: members.len(),
        num_pairs_total: m * (m - 1) / 2,
        num_pairs_evaluated: total.evaluated,
        num_pairs_unreachable: total.unreachable,
        pair_score_sum: total.sum,
        mean_pair_score: total.sum / total.evaluated as f64,
        sampled,
    }))
}

pub fn layer_convexity(
    layer_index: usize,
    graph: &KnnGraph,
    labels: &LabelVector,
    budget: PairBudget,
) -> Result<LayerScore, ScoreError> {
    if graph.n() != labels.len() {
        return Err(ScoreError::SizeMismatch {
            graph: graph.n(),
            labels: labels.len(),
        });
    }
    let outcomes = labels
        .members_by_class()
        .iter()
        .enumerate()
        .map(|(c, members)| score_members(graph, labels, c as u32, members, budget))
        .collect::<Result<Vec<_>, _>>()?;
    LayerScore::from_outcomes(layer_index, graph.k_requested(), graph.k_effective(), outcomes)
}
