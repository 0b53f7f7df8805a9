//! The `score`, `prune-point`, `plot` and `synth` commands and their outputs.
//!
//! JSON reports are the machine interface, CSV the spreadsheet one, SVG a
//! quick look. Every output is a pure function of the dataset bytes and the
//! result-affecting configuration, so repeated runs are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convexity_score::{layer_convexity, LayerScore, PairBudget, ScoreError};
use crate::embed_io::{load_dataset, FormatError};
use crate::knn_graph::{build_knn_graph, DEFAULT_K};
use crate::prune_rule::{select_prune_layer, ConvexityCurve, PruneDecision, PruneError, PruneMode, DEFAULT_EPSILON};
use crate::synth_bench::{generate_layer_stack, LayerStackSpec, SynthError};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Validation(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl CliError {
    /// 0 success, 2 validation error, 3 I/O error, 4 internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Format(e) if e.is_io() => 3,
            CliError::Synth(SynthError::Io { .. }) => 3,
            CliError::Synth(SynthError::Format(e)) if e.is_io() => 3,
            CliError::Io { .. } => 3,
            CliError::Score(ScoreError::SizeMismatch { .. }) | CliError::Internal(_) => 4,
            _ => 2,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Macro,
    Micro,
}

impl Aggregate {
    pub fn key(self) -> &'static str {
        match self {
            Aggregate::Macro => "macro",
            Aggregate::Micro => "micro",
        }
    }
}

/// Settings that determine report content. Thread count and output paths
/// are deliberately absent: they do not change results, and embedding them
/// would make otherwise identical reports differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: String,
    pub k: usize,
    pub pair_budget: PairBudget,
    pub aggregate: Aggregate,
    pub mode: PruneMode,
    pub epsilon: f64,
}

impl RunConfig {
    pub fn new(manifest: impl Into<String>) -> Self {
        Self {
            manifest: manifest.into(),
            k: DEFAULT_K,
            pair_budget: PairBudget::All,
            aggregate: Aggregate::Macro,
            mode: PruneMode::Plateau,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Execution settings that never affect results.
#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    /// 0 means one worker per available core.
    pub threads: usize,
    /// JSON report path; the CSV goes next to it with a `.csv` extension.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub tool: String,
    pub version: String,
    pub dataset_name: String,
    pub class_names: Vec<String>,
    pub config: RunConfig,
    pub layers: Vec<LayerScore>,
}

impl ConvexityReport {
    pub fn curve(&self, aggregate: Aggregate) -> Result<ConvexityCurve, PruneError> {
        ConvexityCurve::new(
            self.layers
                .iter()
                .map(|l| {
                    let s = match aggregate {
                        Aggregate::Macro => l.macro_score,
                        Aggregate::Micro => l.micro_score,
                    };
                    (l.layer_index, s)
                })
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per layer: layer, macro, micro, baseline, k_effective, then one
    /// column per declared class (empty when the class was skipped).
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "layer".to_string(),
            "macro".into(),
            "micro".into(),
            "baseline".into(),
            "k_effective".into(),
        ];
        header.extend(self.class_names.iter().map(|c| format!("class:{c}")));
        w.write_record(&header).expect("in-memory write");
        for layer in &self.layers {
            let mut row = vec![
                layer.layer_index.to_string(),
                layer.macro_score.to_string(),
                layer.micro_score.to_string(),
                layer.baseline.to_string(),
                layer.k_effective.to_string(),
            ];
            for c in 0..self.class_names.len() {
                row.push(
                    layer
                        .classes
                        .iter()
                        .find(|s| s.class_id as usize == c)
                        .map(|s| s.mean_pair_score.to_string())
                        .unwrap_or_default(),
                );
            }
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn check_layer(layer: &LayerScore) -> Result<(), CliError> {
    let unit = |x: f64| (0.0..=1.0).contains(&x);
    if !unit(layer.macro_score) || !unit(layer.micro_score) || layer.classes.iter().any(|c| !unit(c.mean_pair_score)) {
        return Err(CliError::Internal(format!(
            "layer {} has a score outside [0, 1]",
            layer.layer_index
        )));
    }
    Ok(())
}

/// Scores every layer of a dataset, ascending by layer index.
pub fn compute_report(config: &RunConfig, threads: usize) -> Result<ConvexityReport, CliError> {
    if config.k == 0 {
        return Err(CliError::Validation("k must be at least 1".into()));
    }
    let dataset = load_dataset(&config.manifest)?;
    let labels = dataset.labels();
    let mut layers = Vec::with_capacity(dataset.num_layers());
    for pos in 0..dataset.num_layers() {
        let (layer_index, matrix) = dataset.read_layer(pos)?;
        log::info!("layer {layer_index}: n={} d={}", matrix.n(), matrix.d());
        let score = with_threads(threads, || {
            let graph = build_knn_graph(&matrix, config.k);
            layer_convexity(layer_index, &graph, labels, config.pair_budget)
        })??;
        check_layer(&score)?;
        layers.push(score);
    }
    let class_names = match labels.class_names() {
        Some(names) => names.to_vec(),
        None => (0..labels.num_classes()).map(|c| c.to_string()).collect(),
    };
    Ok(ConvexityReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        dataset_name: dataset.manifest().dataset_name.clone(),
        class_names,
        config: config.clone(),
        layers,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// `score`: computes the report and writes JSON (and CSV) to `exec.out`.
pub fn cmd_score(config: &RunConfig, exec: &ExecOptions) -> Result<ConvexityReport, CliError> {
    let report = compute_report(config, exec.threads)?;
    if let Some(out) = &exec.out {
        write_file(out, &report.to_json())?;
        write_file(&out.with_extension("csv"), &report.to_csv())?;
    }
    Ok(report)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<serde_json::Value, CliError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Pulls `(layer_index, aggregate)` pairs out of a report document.
fn curve_from_json(doc: &serde_json::Value, aggregate: Aggregate) -> Result<ConvexityCurve, CliError> {
    let layers = doc
        .get("layers")
        .and_then(|l| l.as_array())
        .ok_or_else(|| CliError::Validation("report has no \"layers\" array".into()))?;
    if layers.is_empty() {
        return Err(CliError::Validation("report contains no layers".into()));
    }
    let mut points = Vec::with_capacity(layers.len());
    for (pos, layer) in layers.iter().enumerate() {
        let index = layer
            .get("layer_index")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| CliError::Validation(format!("layer entry {pos} has no layer_index")))?;
        let score = layer.get(aggregate.key()).and_then(|v| v.as_f64()).ok_or_else(|| {
            CliError::Validation(format!("layer {index} has no \"{}\" score", aggregate.key()))
        })?;
        points.push((index as usize, score));
    }
    Ok(ConvexityCurve::new(points)?)
}

/// `prune-point`: applies the selection rule to one aggregate of a report.
pub fn cmd_prune_point(
    report_path: impl AsRef<Path>,
    mode: PruneMode,
    epsilon: f64,
    aggregate: Aggregate,
) -> Result<PruneDecision, CliError> {
    let doc = read_report(report_path)?;
    let curve = curve_from_json(&doc, aggregate)?;
    Ok(select_prune_layer(&curve, mode, epsilon)?)
}

pub fn decision_json(decision: &PruneDecision) -> String {
    let mut s = serde_json::to_string_pretty(decision).expect("decision serializes");
    s.push('\n');
    s
}

pub fn prune_summary(decision: &PruneDecision) -> String {
    format!("prune after layer {}", decision.selected_layer)
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 56.0;

struct Series<'a> {
    name: &'a str,
    color: &'a str,
    dash: Option<&'a str>,
    points: Vec<(usize, f64)>,
}

/// Line chart of macro and micro convexity per layer over the 1/c baseline.
pub fn render_svg(report: &ConvexityReport) -> String {
    let layers = &report.layers;
    let lo = layers.first().map_or(0, |l| l.layer_index) as f64;
    let hi = layers.last().map_or(0, |l| l.layer_index) as f64;
    let plot_w = SVG_W - LEFT - RIGHT;
    let plot_h = SVG_H - TOP - BOTTOM;
    let x = |layer: usize| {
        if hi > lo {
            LEFT + (layer as f64 - lo) / (hi - lo) * plot_w
        } else {
            LEFT + plot_w / 2.0
        }
    };
    let y = |score: f64| TOP + (1.0 - score.clamp(0.0, 1.0)) * plot_h;

    let series = [
        Series {
            name: "macro",
            color: "#1f77b4",
            dash: None,
            points: layers.iter().map(|l| (l.layer_index, l.macro_score)).collect(),
        },
        Series {
            name: "micro",
            color: "#d62728",
            dash: None,
            points: layers.iter().map(|l| (l.layer_index, l.micro_score)).collect(),
        },
        Series {
            name: "baseline 1/c",
            color: "#7f7f7f",
            dash: Some("6 4"),
            points: layers.iter().map(|l| (l.layer_index, l.baseline)).collect(),
        },
    ];

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="16" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        xml_escape(&report.dataset_name)
    );

    // Axes and grid.
    let (x0, x1, y0, y1) = (LEFT, LEFT + plot_w, TOP + plot_h, TOP);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{x0:.2}" y1="{yy:.2}" x2="{x1:.2}" y2="{yy:.2}" stroke="#e0e0e0"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
            x0 - 6.0,
            yy + 4.0
        );
    }
    let stride = layers.len().div_ceil(24).max(1);
    for l in layers.iter().step_by(stride) {
        let xx = x(l.layer_index);
        let _ = writeln!(s, r#"<line x1="{xx:.2}" y1="{y0:.2}" x2="{xx:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 4.0);
        let _ = writeln!(
            s,
            r#"<text x="{xx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 18.0,
            l.layer_index
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">layer</text>"#,
        LEFT + plot_w / 2.0,
        SVG_H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">convexity</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(l, v)| format!("{:.2},{:.2}", x(l), y(v)))
            .collect();
        let dash = ser.dash.map(|d| format!(r#" stroke-dasharray="{d}""#)).unwrap_or_default();
        let _ = writeln!(
            s,
            r#"<polyline class="{}" fill="none" stroke="{}" stroke-width="2"{dash} points="{}"/>"#,
            ser.name.split(' ').next().unwrap_or(ser.name),
            ser.color,
            pts.join(" ")
        );
        if ser.dash.is_none() {
            for &(l, v) in &ser.points {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                    x(l),
                    y(v),
                    ser.color
                );
            }
        }
        let ly = TOP + 12.0 + 18.0 * i as f64;
        let lx = SVG_W - RIGHT + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"{dash}/>"#,
            lx + 24.0,
            ser.color
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 30.0, ly + 4.0, ser.name);
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// `plot`: renders a report to SVG.
pub fn cmd_plot(report_path: impl AsRef<Path>, svg_path: impl AsRef<Path>) -> Result<(), CliError> {
    let doc = read_report(report_path)?;
    let report: ConvexityReport =
        serde_json::from_value(doc).map_err(|e| CliError::Validation(format!("malformed report: {e}")))?;
    write_file(svg_path.as_ref(), &render_svg(&report))
}

/// `synth`: writes a synthetic layer stack and returns the manifest path.
pub fn cmd_synth(spec: &LayerStackSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf, CliError> {
    let out_dir = out_dir.as_ref();
    generate_layer_stack(spec, out_dir)?;
    Ok(out_dir.join("manifest.json"))
}
