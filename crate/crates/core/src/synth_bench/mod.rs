//! Seeded Gaussian-mixture datasets and layer stacks for tests and benchmarks.
//!
//! Cluster centers sit on the vertices of a regular simplex, so every pair of
//! centers is exactly `separation * std` apart.

pub mod oracle;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed_io::{
    write_embeddings, write_labels, DatasetManifest, EmbeddingMatrix, FormatError, LabelVector, LayerEntry,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("dimension {d} is too small to place {classes} equidistant centers (need d >= {})", .classes - 1)]
    DimensionTooSmall { d: usize, classes: usize },
    #[error("invalid cluster spec: {0}")]
    InvalidSpec(String),
    #[error("schedule has {schedule} entries but num_layers is {num_layers}")]
    ScheduleLength { schedule: usize, num_layers: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n_per_class: usize,
    pub d: usize,
    pub classes: usize,
    pub std: f64,
    /// Center-to-center distance in units of `std`.
    pub separation: f64,
    pub seed: u64,
}

impl ClusterSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if self.n_per_class == 0 || self.d == 0 || self.classes == 0 {
            return Err(SynthError::InvalidSpec(
                "n_per_class, d and classes must be positive".into(),
            ));
        }
        if !(self.std.is_finite() && self.std > 0.0) {
            return Err(SynthError::InvalidSpec(format!("std must be positive, got {}", self.std)));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(SynthError::InvalidSpec(format!(
                "separation must be >= 0, got {}",
                self.separation
            )));
        }
        if self.d + 1 < self.classes {
            return Err(SynthError::DimensionTooSmall {
                d: self.d,
                classes: self.classes,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStackSpec {
    pub num_layers: usize,
    /// Separation for each layer, overriding `base.separation`.
    pub schedule: Vec<f64>,
    pub base: ClusterSpec,
}

/// `classes` points in `R^d` with all pairwise distances equal to `edge`.
///
/// The standard basis vectors of `R^c` are pairwise `sqrt(2)` apart; they are
/// expressed in the Helmert basis of the hyperplane orthogonal to the all-ones
/// vector, which needs only `c - 1` coordinates.
pub fn simplex_centers(classes: usize, d: usize, edge: f64) -> Result<Vec<Vec<f64>>, SynthError> {
    if classes == 0 || d + 1 < classes {
        return Err(SynthError::DimensionTooSmall { d, classes });
    }
    let scale = edge / std::f64::consts::SQRT_2;
    let centers = (0..classes)
        .map(|i| {
            let mut c = vec![0.0; d];
            for (k, ck) in c.iter_mut().enumerate().take(classes - 1) {
                // Helmert row k+1: ones on 0..=k, -(k+1) at k+1, over sqrt((k+1)(k+2)).
                let kk = (k + 1) as f64;
                let norm = (kk * (kk + 1.0)).sqrt();
                let coord = if i <= k {
                    1.0
                } else if i == k + 1 {
                    -kk
                } else {
                    0.0
                };
                *ck = scale * coord / norm;
            }
            c
        })
        .collect();
    Ok(centers)
}

/// Labels cycle through the classes: point `i` belongs to class `i % classes`.
pub fn generate_clusters(spec: &ClusterSpec) -> Result<(EmbeddingMatrix, LabelVector), SynthError> {
    spec.validate()?;
    let centers = simplex_centers(spec.classes, spec.d, spec.separation * spec.std)?;
    let n = spec.n_per_class * spec.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Vec::with_capacity(n * spec.d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.classes;
        labels.push(class as u32);
        for &c in &centers[class] {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push((c + spec.std * z) as f32);
        }
    }
    let matrix = EmbeddingMatrix::new(n, spec.d, values)?;
    let labels = LabelVector::new(labels, spec.classes)?;
    Ok((matrix, labels))
}

/// Per-layer noise stream, distinct for every layer of one stack.
fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed.wrapping_add((layer as u64 + 1).wrapping_mul(0xD134_2543_DE82_EF95))
}

/// Writes `labels.cvxl`, `layer_XX.cvxe` (layers numbered from 1) and
/// `manifest.json` into `out_dir`.
pub fn generate_layer_stack(spec: &LayerStackSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest, SynthError> {
    let out_dir = out_dir.as_ref();
    if spec.schedule.len() != spec.num_layers {
        return Err(SynthError::ScheduleLength {
            schedule: spec.schedule.len(),
            num_layers: spec.num_layers,
        });
    }
    if spec.num_layers == 0 {
        return Err(SynthError::InvalidSpec("num_layers must be at least 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|source| SynthError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let mut layers = Vec::with_capacity(spec.num_layers);
    let mut labels = None;
    for (l, &separation) in spec.schedule.iter().enumerate() {
        let layer_spec = ClusterSpec {
            separation,
            seed: layer_seed(spec.base.seed, l),
            ..spec.base.clone()
        };
        let (matrix, layer_labels) = generate_clusters(&layer_spec)?;
        debug_assert!(labels.as_ref().is_none_or(|prev| prev == &layer_labels));
        let index = l + 1;
        let name = format!("layer_{index:02}.cvxe");
        write_embeddings(&matrix, out_dir.join(&name))?;
        layers.push(LayerEntry { index, path: name });
        labels.get_or_insert(layer_labels);
    }
    let labels = labels.expect("at least one layer");
    write_labels(&labels, out_dir.join("labels.cvxl"))?;

    let manifest = DatasetManifest {
        dataset_name: format!(
            "synthetic-c{}-n{}-d{}-seed{}",
            spec.base.classes, spec.base.n_per_class, spec.base.d, spec.base.seed
        ),
        num_points: labels.len(),
        labels_path: "labels.cvxl".into(),
        class_names: (0..spec.base.classes).map(|c| format!("class{c}")).collect(),
        layers,
        pooling: None,
        layer_convention: Some("1-based synthetic layers".into()),
    };
    manifest.write(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
