//! Acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line each; exits non-zero if any criterion fails.
//!
//! `cargo test --test acceptance -- <substring>` runs only matching criteria.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::fs;
use std::time::{Duration, Instant};

use common::*;
use latent_convexity::convexity_score::{layer_convexity, LayerScore, PairBudget};
use latent_convexity::embed_io::EmbeddingMatrix;
use latent_convexity::knn_graph::build_knn_graph;
use latent_convexity::prune_rule::{select_prune_layer, ConvexityCurve, PruneMode};
use latent_convexity::report::{cmd_plot, cmd_prune_point, cmd_score, Aggregate, ExecOptions, RunConfig};
use latent_convexity::synth_bench::oracle::oracle_convexity;
use latent_convexity::synth_bench::{generate_clusters, generate_layer_stack, ClusterSpec, LayerStackSpec};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn engine_score(m: &EmbeddingMatrix, l: &latent_convexity::LabelVector, k: usize) -> LayerScore {
    let g = build_knn_graph(m, k);
    layer_convexity(0, &g, l, PairBudget::All).expect("scorable")
}

fn compare_with_oracle(engine: &LayerScore, oracle: &LayerScore, tol: f64) -> Result<(), String> {
    ensure!(engine.classes.len() == oracle.classes.len(), "scored class count differs");
    ensure!(engine.skipped_classes == oracle.skipped_classes, "skipped classes differ");
    for (e, o) in engine.classes.iter().zip(&oracle.classes) {
        ensure!(
            (e.class_id, e.num_points, e.num_pairs_evaluated, e.num_pairs_unreachable)
                == (o.class_id, o.num_points, o.num_pairs_evaluated, o.num_pairs_unreachable),
            "class {} counts differ: engine {:?} oracle {:?}",
            e.class_id,
            (e.num_points, e.num_pairs_evaluated, e.num_pairs_unreachable),
            (o.num_points, o.num_pairs_evaluated, o.num_pairs_unreachable)
        );
        ensure!(
            (e.mean_pair_score - o.mean_pair_score).abs() <= tol,
            "class {} mean {} vs oracle {}",
            e.class_id,
            e.mean_pair_score,
            o.mean_pair_score
        );
    }
    ensure!((engine.macro_score - oracle.macro_score).abs() <= tol, "macro differs");
    ensure!((engine.micro_score - oracle.micro_score).abs() <= tol, "micro differs");
    Ok(())
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(20240901);
    let mut max_diff = 0.0f64;
    for case in 0..100 {
        let n = r.random_range(20..=200);
        let d = r.random_range(2..=8);
        let c = r.random_range(2..=4);
        let k = r.random_range(1..=6);
        let (m, l) = match case % 3 {
            0 => blobs(n, d, c, r.random_range(0.05..0.6), &mut r),
            1 => {
                let m = uniform_points(n, d, &mut r);
                (m, random_labels(n, c, &mut r))
            }
            _ => {
                let m = grid_points(n, d, 4, &mut r);
                (m, random_labels(n, c, &mut r))
            }
        };
        let engine = engine_score(&m, &l, k);
        let oracle = oracle_convexity(&m, &l, k).map_err(|e| e.to_string())?;
        compare_with_oracle(&engine, &oracle, 1e-12)
            .map_err(|e| format!("case {case} (n={n} d={d} c={c} k={k}): {e}"))?;
        max_diff = max_diff
            .max((engine.macro_score - oracle.macro_score).abs())
            .max((engine.micro_score - oracle.micro_score).abs());
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?} (limit 60 s)");
    Ok(format!("100 instances, max |engine - oracle| = {max_diff:.1e}, {:.1} s", elapsed.as_secs_f64()))
}

fn baseline_recovery() -> Outcome {
    let start = Instant::now();
    let mut r = rng(7);
    let mut details = Vec::new();
    for c in [2usize, 5, 10] {
        let m = uniform_points(2000, 8, &mut r);
        let l = balanced_labels(2000, c, &mut r);
        let s = engine_score(&m, &l, 10);
        let target = 1.0 / c as f64;
        ensure!(
            (s.macro_score - target).abs() <= 0.05,
            "c={c}: macro {} not within 0.05 of {target}",
            s.macro_score
        );
        ensure!(s.baseline == target, "reported baseline {} != {target}", s.baseline);
        details.push(format!("c={c}: {:.4}", s.macro_score));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?} (limit 30 s)");
    Ok(format!("{} ({:.1} s)", details.join(", "), elapsed.as_secs_f64()))
}

fn perfect_separation() -> Outcome {
    let spec = ClusterSpec {
        n_per_class: 200,
        d: 8,
        classes: 5,
        std: 1.0,
        separation: 100.0,
        seed: 5,
    };
    let (m, l) = generate_clusters(&spec).map_err(|e| e.to_string())?;
    let g = build_knn_graph(&m, 10);
    for (c, members) in l.members_by_class().iter().enumerate() {
        ensure!(g.induced_connected(members), "class {c} subgraph is not connected");
    }
    let s = layer_convexity(0, &g, &l, PairBudget::All).map_err(|e| e.to_string())?;
    ensure!(s.macro_score == 1.0, "macro = {} (expected exactly 1.0)", s.macro_score);
    Ok(format!("macro = {}, micro = {}", s.macro_score, s.micro_score))
}

fn invariance_suite() -> Outcome {
    let mut r = rng(99);

    // Similarity transform: identical adjacency, bitwise identical scores.
    let (m, l) = blobs(300, 8, 3, 0.35, &mut r);
    let rot = random_rotation(8, &mut r);
    let shift: Vec<f64> = (0..8).map(|_| r.random_range(-10.0..10.0)).collect();
    let moved = similarity_transform(&m, &rot, &shift, 3.7);
    let (g0, g1) = (build_knn_graph(&m, 6), build_knn_graph(&moved, 6));
    ensure!(g0.structure() == g1.structure(), "transform changed kNN adjacency");
    let (s0, s1) = (
        layer_convexity(0, &g0, &l, PairBudget::All).unwrap(),
        layer_convexity(0, &g1, &l, PairBudget::All).unwrap(),
    );
    ensure!(s0.macro_score.to_bits() == s1.macro_score.to_bits(), "macro changed under isometry");
    ensure!(s0.micro_score.to_bits() == s1.micro_score.to_bits(), "micro changed under isometry");
    for (a, b) in s0.classes.iter().zip(&s1.classes) {
        ensure!(a.mean_pair_score.to_bits() == b.mean_pair_score.to_bits(), "class {} changed", a.class_id);
    }

    // Point-order permutation on general-position data.
    let (m, l) = blobs(250, 5, 4, 0.4, &mut r);
    ensure!(general_position(&m), "generated data is not in general position");
    let mut order: Vec<usize> = (0..m.n()).collect();
    order.shuffle(&mut r);
    let (pm, pl) = (m.permute_rows(&order), l.permute(&order));
    let (a, b) = (engine_score(&m, &l, 7), engine_score(&pm, &pl, 7));
    let perm_diff = (a.macro_score - b.macro_score).abs().max((a.micro_score - b.micro_score).abs());
    ensure!(perm_diff <= 1e-12, "permutation changed scores by {perm_diff:e}");
    for (x, y) in a.classes.iter().zip(&b.classes) {
        ensure!(x.num_pairs_unreachable == y.num_pairs_unreachable, "unreachable counts differ");
    }

    // Fuzzing: scores stay in [0, 1], including degenerate inputs.
    let unit = |x: f64| (0.0..=1.0).contains(&x);
    for case in 0..300 {
        let n = r.random_range(2..=120);
        let d = r.random_range(1..=6);
        let c = r.random_range(1..=5);
        let k = r.random_range(1..=12);
        let m = match case % 3 {
            0 => uniform_points(n, d, &mut r),
            1 => grid_points(n, d, 2, &mut r),
            _ => blobs(n, d, c, 0.01, &mut r).0,
        };
        let l = random_labels(n, c, &mut r);
        let g = build_knn_graph(&m, k);
        let Ok(s) = layer_convexity(0, &g, &l, PairBudget::All) else {
            continue;
        };
        ensure!(
            unit(s.macro_score) && unit(s.micro_score) && s.classes.iter().all(|c| unit(c.mean_pair_score)),
            "fuzz case {case}: score out of range"
        );
    }
    Ok(format!("isometry bitwise equal, permutation diff {perm_diff:.1e}, 300 fuzz cases in [0,1]"))
}

fn pruning_rule_units() -> Outcome {
    let curve = ConvexityCurve::from_scores(0, &[0.10, 0.50, 0.70, 0.75, 0.755, 0.752]).unwrap();
    let d = select_prune_layer(&curve, PruneMode::Plateau, 0.01).unwrap();
    ensure!(d.selected_layer == 3, "plateau example selected {}", d.selected_layer);

    let rising = ConvexityCurve::from_scores(1, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
    let d = select_prune_layer(&rising, PruneMode::Plateau, 0.0).unwrap();
    ensure!(d.selected_layer == 6, "increasing curve selected {}", d.selected_layer);

    let tie = ConvexityCurve::new(vec![(2, 0.4), (4, 0.5), (6, 0.6), (8, 0.7), (10, 0.7), (12, 0.68)]).unwrap();
    let d = select_prune_layer(&tie, PruneMode::Argmax, 0.0).unwrap();
    ensure!(d.selected_layer == 8, "argmax tie selected {}", d.selected_layer);

    let mut r = rng(3);
    for case in 0..2000 {
        let len = r.random_range(1..=24);
        let scores: Vec<f64> = (0..len).map(|_| r.random::<f64>()).collect();
        let c = ConvexityCurve::from_scores(0, &scores).unwrap();
        let mut eps: Vec<f64> = (0..6).map(|_| r.random_range(0.0..0.3)).collect();
        eps.push(0.0);
        eps.sort_by(f64::total_cmp);
        let picks: Vec<usize> = eps
            .iter()
            .map(|&e| select_prune_layer(&c, PruneMode::Plateau, e).unwrap().selected_layer)
            .collect();
        ensure!(picks.windows(2).all(|w| w[1] <= w[0]), "case {case}: not monotone in epsilon: {picks:?}");
    }
    Ok("3 examples exact, 2000 random curves monotone in epsilon".into())
}

fn stack_spec() -> LayerStackSpec {
    LayerStackSpec {
        num_layers: 6,
        schedule: vec![1.0, 2.0, 4.0, 8.0, 8.0, 8.0],
        base: ClusterSpec {
            n_per_class: 80,
            d: 16,
            classes: 5,
            std: 1.0,
            separation: 0.0,
            seed: 11,
        },
    }
}

fn end_to_end_pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    generate_layer_stack(&stack_spec(), dir.path()).map_err(|e| e.to_string())?;
    let out = dir.path().join("report.json");
    let config = RunConfig::new(dir.path().join("manifest.json").display().to_string());
    let report = cmd_score(
        &config,
        &ExecOptions {
            threads: 0,
            out: Some(out.clone()),
        },
    )
    .map_err(|e| e.to_string())?;
    let scores: Vec<f64> = report.layers.iter().map(|l| l.macro_score).collect();
    let noise = 0.01;
    ensure!(
        scores[..4].windows(2).all(|w| w[1] >= w[0] - noise),
        "rising part decreases: {scores:?}"
    );
    ensure!(scores[3] - scores[2] > noise, "no clear rise into the plateau: {scores:?}");
    let flat = &scores[3..];
    let spread = flat.iter().cloned().fold(f64::MIN, f64::max) - flat.iter().cloned().fold(f64::MAX, f64::min);
    ensure!(spread <= noise, "plateau not flat within {noise}: {scores:?}");

    let decision = cmd_prune_point(&out, PruneMode::Plateau, 0.01, Aggregate::Macro).map_err(|e| e.to_string())?;
    ensure!(decision.selected_layer == 4, "selected layer {} (expected 4): {scores:?}", decision.selected_layer);
    let pretty: Vec<String> = scores.iter().map(|s| format!("{s:.3}")).collect();
    Ok(format!("curve [{}] -> prune after layer {}", pretty.join(", "), decision.selected_layer))
}

fn performance() -> Outcome {
    let spec = ClusterSpec {
        n_per_class: 1000,
        d: 768,
        classes: 10,
        std: 1.0,
        separation: 1.5,
        seed: 17,
    };
    let (m, l) = generate_clusters(&spec).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let g = build_knn_graph(&m, 10);
    let knn_time = start.elapsed();
    let s = layer_convexity(0, &g, &l, PairBudget::All).map_err(|e| e.to_string())?;
    let total = start.elapsed();
    let rss = peak_rss_bytes();
    ensure!(knn_time < Duration::from_secs(120), "kNN stage took {knn_time:?} (limit 120 s)");
    ensure!(total < Duration::from_secs(600), "full scoring took {total:?} (limit 600 s)");
    if let Some(bytes) = rss {
        ensure!(bytes < 4 << 30, "peak RSS {} MiB (limit 4096 MiB)", bytes >> 20);
    }
    Ok(format!(
        "n=10000 d=768 k=10 on {} thread(s): kNN {:.1} s, total {:.1} s, peak RSS {} MiB, macro {:.4}",
        rayon::current_num_threads(),
        knn_time.as_secs_f64(),
        total.as_secs_f64(),
        rss.map_or("?".into(), |b| (b >> 20).to_string()),
        s.macro_score
    ))
}

fn determinism() -> Outcome {
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = stack_spec();
    spec.base.n_per_class = 40;
    generate_layer_stack(&spec, data.path()).map_err(|e| e.to_string())?;
    let config = RunConfig::new(data.path().join("manifest.json").display().to_string());

    let mut outputs: Vec<(usize, [Vec<u8>; 3])> = Vec::new();
    for threads in [1usize, 4, 1, 3] {
        let out_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let json = out_dir.path().join("report.json");
        cmd_score(
            &config,
            &ExecOptions {
                threads,
                out: Some(json.clone()),
            },
        )
        .map_err(|e| e.to_string())?;
        let svg = out_dir.path().join("report.svg");
        cmd_plot(&json, &svg).map_err(|e| e.to_string())?;
        let read = |p: &std::path::Path| fs::read(p).map_err(|e| e.to_string());
        outputs.push((threads, [read(&json)?, read(&json.with_extension("csv"))?, read(&svg)?]));
    }
    let (t0, first) = &outputs[0];
    for (threads, files) in &outputs[1..] {
        for (name, (a, b)) in ["json", "csv", "svg"].iter().zip(first.iter().zip(files)) {
            ensure!(a == b, "{name} differs between threads={t0} and threads={threads}");
        }
    }
    Ok("JSON/CSV/SVG byte-identical over 4 runs with 1, 4, 1, 3 threads".into())
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 8] = [
        ("oracle_equivalence", oracle_equivalence),
        ("baseline_recovery", baseline_recovery),
        ("perfect_separation", perfect_separation),
        ("invariance_suite", invariance_suite),
        ("pruning_rule_units", pruning_rule_units),
        ("end_to_end_pipeline", end_to_end_pipeline),
        ("performance", performance),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name:<22} {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name:<22} {why} [{secs:.1} s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
