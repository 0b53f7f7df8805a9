//! Graph convexity of class regions in per-layer latent representations,
//! and convexity-guided selection of where to cut a transformer stack.
//!
//! The pipeline for one layer is: read embeddings ([`embed_io`]), build the
//! exact kNN graph ([`knn_graph`]), walk canonical shortest paths between
//! same-class points ([`path_engine`]) and average the in-class fraction of
//! interior path vertices ([`convexity_score`]). [`prune_rule`] turns a
//! per-layer curve into a layer choice; [`report`] wires it into a CLI.

pub mod convexity_score;
pub mod embed_io;
pub mod knn_graph;
pub mod path_engine;
pub mod prune_rule;
pub mod report;
pub mod synth_bench;

pub use convexity_score::{class_convexity, layer_convexity, pair_score, ClassScore, LayerScore, PairBudget};
pub use embed_io::{load_dataset, read_embeddings, write_embeddings, EmbeddingMatrix, LabelVector};
pub use knn_graph::{build_knn_graph, KnnGraph};
pub use path_engine::{reconstruct_path, sssp, Path, ShortestPathTree};
pub use prune_rule::{select_prune_layer, ConvexityCurve, PruneDecision, PruneMode};
