//! Binary embedding/label files and the JSON dataset manifest.
//!
//! Embeddings file (`.cvxe`), all fields little-endian:
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `CVXE`              |
//! | 4      | 2    | version (u16) = 1         |
//! | 6      | 2    | dtype (u16) = 1 (f32)     |
//! | 8      | 8    | n (u64)                   |
//! | 16     | 8    | d (u64)                   |
//! | 24     | n·d·4| payload, f32 row-major    |
//!
//! Labels file (`.cvxl`): magic `CVXL` | version u16 = 1 | n u64 | n × i32.
//!
//! A dataset is one manifest, one labels file and one embeddings file per
//! layer. Paths inside the manifest are relative to the manifest's directory.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EMBEDDINGS_MAGIC: [u8; 4] = *b"CVXE";
pub const LABELS_MAGIC: [u8; 4] = *b"CVXL";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u16 = 1;
/// Size of the `.cvxe` header in bytes.
pub const EMBEDDINGS_HEADER_LEN: u64 = 24;
/// Size of the `.cvxl` header in bytes.
pub const LABELS_HEADER_LEN: u64 = 14;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },
    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u16 },
    #[error("{path}: unsupported dtype {dtype}")]
    UnsupportedDtype { path: PathBuf, dtype: u16 },
    #[error("{path}: truncated: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{path}: {extra} trailing bytes after payload")]
    TrailingBytes { path: PathBuf, extra: u64 },
    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f32 },
    #[error("invalid shape {n}x{d}: both dimensions must be at least 1")]
    EmptyShape { n: usize, d: usize },
    #[error("value buffer has {len} entries, expected {n}x{d}")]
    ShapeMismatch { n: usize, d: usize, len: usize },
    #[error("negative label {label} at position {index}")]
    NegativeLabel { index: usize, label: i32 },
    #[error("label {label} at position {index} exceeds declared class count {num_classes}")]
    LabelOutOfRange {
        index: usize,
        label: u32,
        num_classes: usize,
    },
    #[error("label vector is empty")]
    NoLabels,
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("manifest lists no layers")]
    NoLayers,
    #[error("layer {layer_index}: {message}")]
    Layer { layer_index: usize, message: String },
    #[error("point count mismatch: {what} has {found}, expected {expected}")]
    CountMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
}

impl FormatError {
    /// `true` for plain I/O failures, as opposed to malformed content.
    pub fn is_io(&self) -> bool {
        matches!(self, FormatError::Io { .. })
    }

    fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// Activations of one layer: `n` points by `d` dimensions, row-major f32.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(FormatError::EmptyShape { n, d });
        }
        if values.len() != n * d {
            return Err(FormatError::ShapeMismatch {
                n,
                d,
                len: values.len(),
            });
        }
        check_finite(&values, d)?;
        Ok(Self { n, d, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.d)
    }

    /// Applies `f` to every row, producing a matrix of the same shape.
    pub fn map_rows(&self, mut f: impl FnMut(&[f32], &mut [f32])) -> Result<Self> {
        let mut out = vec![0.0f32; self.values.len()];
        for (src, dst) in self.rows().zip(out.chunks_exact_mut(self.d)) {
            f(src, dst);
        }
        Self::new(self.n, self.d, out)
    }

    /// Reorders points so that row `i` of the result is row `order[i]` of `self`.
    pub fn permute_rows(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.n, "permutation length");
        let mut values = Vec::with_capacity(self.values.len());
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n: self.n,
            d: self.d,
            values,
        }
    }
}

fn check_finite(values: &[f32], d: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(pos) => Err(FormatError::NonFinite {
            row: pos / d,
            col: pos % d,
            value: values[pos],
        }),
    }
}

/// Per-point class ids. Every label is below `num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<u32>,
    num_classes: usize,
    class_names: Option<Vec<String>>,
}

impl LabelVector {
    pub fn new(labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(FormatError::NoLabels);
        }
        if let Some((index, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= num_classes)
        {
            return Err(FormatError::LabelOutOfRange {
                index,
                label,
                num_classes,
            });
        }
        Ok(Self {
            labels,
            num_classes,
            class_names: None,
        })
    }

    /// Labels with the class count inferred as `max(label) + 1`.
    pub fn from_labels(labels: Vec<u32>) -> Result<Self> {
        let num_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
        Self::new(labels, num_classes)
    }

    /// Attaches a class-name table; the table length becomes the class count.
    pub fn with_class_names(self, names: Vec<String>) -> Result<Self> {
        let mut out = Self::new(self.labels, names.len())?;
        out.class_names = Some(names);
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    /// Point ids of each class, ascending.
    pub fn members_by_class(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l as usize].push(i);
        }
        members
    }

    pub fn permute(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.labels.len(), "permutation length");
        Self {
            labels: order.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }
}

pub fn encode_embeddings(matrix: &EmbeddingMatrix, out: &mut impl Write) -> io::Result<()> {
    out.write_all(&EMBEDDINGS_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&DTYPE_F32.to_le_bytes())?;
    out.write_all(&(matrix.n as u64).to_le_bytes())?;
    out.write_all(&(matrix.d as u64).to_le_bytes())?;
    for v in &matrix.values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // Matrices built through `new` are already finite; re-check anyway since
    // the file is the interchange point.
    check_finite(&matrix.values, matrix.d)?;
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_embeddings(matrix, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| FormatError::io(path, e))
}

/// Header fields of an embeddings file, validated against the file length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingsHeader {
    pub n: usize,
    pub d: usize,
}

impl EmbeddingsHeader {
    pub fn file_len(&self) -> u64 {
        EMBEDDINGS_HEADER_LEN + (self.n as u64) * (self.d as u64) * 4
    }
}

fn parse_embeddings_header(path: &Path, bytes: &[u8], actual_len: u64) -> Result<EmbeddingsHeader> {
    if bytes.len() < EMBEDDINGS_HEADER_LEN as usize {
        return Err(FormatError::Truncated {
            path: path.to_path_buf(),
            expected: EMBEDDINGS_HEADER_LEN,
            found: actual_len,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != EMBEDDINGS_MAGIC {
        return Err(FormatError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: EMBEDDINGS_MAGIC,
        });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dtype = u16::from_le_bytes(bytes[6..8].try_into().unwrap());
    if dtype != DTYPE_F32 {
        return Err(FormatError::UnsupportedDtype {
            path: path.to_path_buf(),
            dtype,
        });
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if n == 0 || d == 0 {
        return Err(FormatError::EmptyShape {
            n: n as usize,
            d: d as usize,
        });
    }
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|p| p.checked_add(EMBEDDINGS_HEADER_LEN))
        .ok_or_else(|| FormatError::Truncated {
            path: path.to_path_buf(),
            expected: u64::MAX,
            found: actual_len,
        })?;
    if actual_len < expected {
        return Err(FormatError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: actual_len,
        });
    }
    if actual_len > expected {
        return Err(FormatError::TrailingBytes {
            path: path.to_path_buf(),
            extra: actual_len - expected,
        });
    }
    Ok(EmbeddingsHeader {
        n: n as usize,
        d: d as usize,
    })
}

/// Reads and validates only the header, checking it against the file length.
pub fn read_embeddings_header(path: impl AsRef<Path>) -> Result<EmbeddingsHeader> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let len = file.metadata().map_err(|e| FormatError::io(path, e))?.len();
    let mut buf = Vec::with_capacity(EMBEDDINGS_HEADER_LEN as usize);
    (&mut file)
        .take(EMBEDDINGS_HEADER_LEN)
        .read_to_end(&mut buf)
        .map_err(|e| FormatError::io(path, e))?;
    parse_embeddings_header(path, &buf, len)
}

pub fn decode_embeddings(path: &Path, bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let header = parse_embeddings_header(path, bytes, bytes.len() as u64)?;
    let values: Vec<f32> = bytes[EMBEDDINGS_HEADER_LEN as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(header.n, header.d, values)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode_embeddings(path, &bytes)
}

pub fn write_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> io::Result<()> {
        w.write_all(&LABELS_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(labels.len() as u64).to_le_bytes())?;
        for &l in &labels.labels {
            w.write_all(&(l as i32).to_le_bytes())?;
        }
        w.flush()
    };
    write().map_err(|e| FormatError::io(path, e))
}

/// Reads a labels file; the class count is inferred as `max(label) + 1`.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| FormatError::io(path, e))?;
    let actual = bytes.len() as u64;
    if actual < LABELS_HEADER_LEN {
        return Err(FormatError::Truncated {
            path: path.to_path_buf(),
            expected: LABELS_HEADER_LEN,
            found: actual,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != LABELS_MAGIC {
        return Err(FormatError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: LABELS_MAGIC,
        });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let n = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let expected = n
        .checked_mul(4)
        .and_then(|p| p.checked_add(LABELS_HEADER_LEN))
        .unwrap_or(u64::MAX);
    if actual < expected {
        return Err(FormatError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: actual,
        });
    }
    if actual > expected {
        return Err(FormatError::TrailingBytes {
            path: path.to_path_buf(),
            extra: actual - expected,
        });
    }
    let mut labels = Vec::with_capacity(n as usize);
    for (index, chunk) in bytes[LABELS_HEADER_LEN as usize..].chunks_exact(4).enumerate() {
        let label = i32::from_le_bytes(chunk.try_into().unwrap());
        if label < 0 {
            return Err(FormatError::NegativeLabel { index, label });
        }
        labels.push(label as u32);
    }
    LabelVector::from_labels(labels)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub index: usize,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub num_points: usize,
    pub labels_path: String,
    pub class_names: Vec<String>,
    pub layers: Vec<LayerEntry>,
    /// How variable-length activations were reduced to one vector per point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooling: Option<String>,
    /// Free-form note on what layer index 0 means for this dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_convention: Option<String>,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| FormatError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| FormatError::io(path, e))
    }
}

/// A validated dataset. Layer matrices are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: DatasetManifest,
    labels: LabelVector,
    root: PathBuf,
    headers: Vec<EmbeddingsHeader>,
}

/// Loads a manifest, its labels, and validates the header of every layer file.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::read(manifest_path)?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let bad = |message: String| FormatError::Manifest {
        path: manifest_path.to_path_buf(),
        message,
    };

    if manifest.layers.is_empty() {
        return Err(FormatError::NoLayers);
    }
    for pair in manifest.layers.windows(2) {
        if pair[1].index <= pair[0].index {
            return Err(bad(format!(
                "layer indices must be strictly increasing ({} after {})",
                pair[1].index, pair[0].index
            )));
        }
    }

    let labels = read_labels(root.join(&manifest.labels_path))?;
    let labels = if manifest.class_names.is_empty() {
        labels
    } else {
        labels.with_class_names(manifest.class_names.clone())?
    };
    if labels.len() != manifest.num_points {
        return Err(FormatError::CountMismatch {
            what: "labels file".into(),
            expected: manifest.num_points,
            found: labels.len(),
        });
    }

    let mut headers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let header = read_embeddings_header(root.join(&entry.path)).map_err(|e| FormatError::Layer {
            layer_index: entry.index,
            message: e.to_string(),
        })?;
        if header.n != manifest.num_points {
            return Err(FormatError::Layer {
                layer_index: entry.index,
                message: format!(
                    "embeddings have n={} but labels have n={}",
                    header.n, manifest.num_points
                ),
            });
        }
        headers.push(header);
    }

    Ok(Dataset {
        manifest,
        labels,
        root,
        headers,
    })
}

impl Dataset {
    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn num_layers(&self) -> usize {
        self.manifest.layers.len()
    }

    /// Layer indices in ascending order.
    pub fn layer_indices(&self) -> Vec<usize> {
        self.manifest.layers.iter().map(|l| l.index).collect()
    }

    pub fn layer_header(&self, position: usize) -> EmbeddingsHeader {
        self.headers[position]
    }

    /// Reads the matrix at `position` in the ascending layer list.
    pub fn read_layer(&self, position: usize) -> Result<(usize, EmbeddingMatrix)> {
        let entry = &self.manifest.layers[position];
        let matrix = read_embeddings(self.root.join(&entry.path)).map_err(|e| match e {
            FormatError::Io { .. } => e,
            other => FormatError::Layer {
                layer_index: entry.index,
                message: other.to_string(),
            },
        })?;
        if matrix.n() != self.labels.len() {
            return Err(FormatError::Layer {
                layer_index: entry.index,
                message: format!(
                    "embeddings have n={} but labels have n={}",
                    matrix.n(),
                    self.labels.len()
                ),
            });
        }
        Ok((entry.index, matrix))
    }
}
