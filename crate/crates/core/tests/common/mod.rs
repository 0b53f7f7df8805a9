#![allow(dead_code)]

use latent_convexity::embed_io::{EmbeddingMatrix, LabelVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_points(n: usize, d: usize, rng: &mut impl Rng) -> EmbeddingMatrix {
    EmbeddingMatrix::new(n, d, (0..n * d).map(|_| rng.random::<f32>()).collect()).unwrap()
}

/// Small integer coordinates: lots of exactly tied distances.
pub fn grid_points(n: usize, d: usize, side: u32, rng: &mut impl Rng) -> EmbeddingMatrix {
    EmbeddingMatrix::new(n, d, (0..n * d).map(|_| rng.random_range(0..side) as f32).collect()).unwrap()
}

/// Gaussian blobs around random centers; label = blob.
pub fn blobs(n: usize, d: usize, c: usize, spread: f64, rng: &mut impl Rng) -> (EmbeddingMatrix, LabelVector) {
    let centers: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut values = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = if i < c { i } else { rng.random_range(0..c) };
        labels.push(class as u32);
        for &ct in &centers[class] {
            let z: f64 = StandardNormal.sample(rng);
            values.push((ct + spread * z) as f32);
        }
    }
    (
        EmbeddingMatrix::new(n, d, values).unwrap(),
        LabelVector::new(labels, c).unwrap(),
    )
}

/// Random labels with every class present (when n >= c).
pub fn random_labels(n: usize, c: usize, rng: &mut impl Rng) -> LabelVector {
    let labels = (0..n)
        .map(|i| if i < c { i as u32 } else { rng.random_range(0..c as u32) })
        .collect();
    LabelVector::new(labels, c).unwrap()
}

/// Exactly balanced labels in random order.
pub fn balanced_labels(n: usize, c: usize, rng: &mut impl Rng) -> LabelVector {
    let mut labels: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();
    labels.shuffle(rng);
    LabelVector::new(labels, c).unwrap()
}

/// Random orthogonal matrix (Gram-Schmidt on Gaussian columns), row-major.
pub fn random_rotation(d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// `x -> scale * R x + shift`, computed in f64 and stored as f32.
pub fn similarity_transform(m: &EmbeddingMatrix, rot: &[Vec<f64>], shift: &[f64], scale: f64) -> EmbeddingMatrix {
    m.map_rows(|src, dst| {
        for (i, out) in dst.iter_mut().enumerate() {
            let y: f64 = rot[i].iter().zip(src).map(|(r, &x)| r * f64::from(x)).sum();
            *out = (scale * y + shift[i]) as f32;
        }
    })
    .unwrap()
}

/// True when all pairwise distances (as computed in f64) are distinct.
pub fn general_position(m: &EmbeddingMatrix) -> bool {
    let mut all = Vec::new();
    for i in 0..m.n() {
        for j in i + 1..m.n() {
            let s: f64 = m
                .row(i)
                .iter()
                .zip(m.row(j))
                .map(|(&a, &b)| {
                    let x = f64::from(a) - f64::from(b);
                    x * x
                })
                .sum();
            all.push(s);
        }
    }
    all.sort_by(f64::total_cmp);
    all.windows(2).all(|w| w[0] != w[1])
}

/// Peak resident set size of this process in bytes (Linux only).
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
