//! On-disk dataset representation.
//!
//! A dataset root holds `dataset.json` (train/test split), `prompt_pool.json`
//! and one directory per video:
//!
//! ```text
//! <root>/<video_id>/manifest.json      counts and image size
//! <root>/<video_id>/detections.jsonl   one Detection per line, sorted by frame
//! <root>/<video_id>/features.bin       row-major little-endian f32
//! <root>/<video_id>/features.idx.json  {"dim": D, "rows": N}
//! <root>/<video_id>/labels.json        optional per-frame 0/1 array
//! ```

mod geometry;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::{iou, merge_overlapping, squarify, BBox, CROP_SIZE};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const FEATURES_FILE: &str = "features.bin";
pub const FEATURES_INDEX_FILE: &str = "features.idx.json";
pub const LABELS_FILE: &str = "labels.json";
pub const DATASET_FILE: &str = "dataset.json";
pub const PROMPT_POOL_FILE: &str = "prompt_pool.json";

/// Default feature width: 32 query tokens of 256 channels each.
pub const DEFAULT_FEATURE_DIM: usize = 32 * 256;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: feature_ref out of range ({feature_ref} >= {rows} rows)")]
    FeatureRefOutOfRange {
        path: PathBuf,
        line: usize,
        feature_ref: usize,
        rows: usize,
    },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("{0}")]
    Invalid(String),
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn json(path: &Path, source: serde_json::Error) -> Self {
        IngestError::Json {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One object observation in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub bbox: BBox,
    pub confidence: f64,
    pub feature_ref: usize,
    /// prompt_id -> answer token
    #[serde(default)]
    pub answers: BTreeMap<String, String>,
}

/// Dense row store of per-detection semantic features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    data: Vec<f32>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature dim must be positive");
        FeatureStore {
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self, IngestError> {
        if dim == 0 {
            return Err(IngestError::Invalid("feature dim must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(IngestError::DimensionMismatch {
                what: "feature store length".into(),
                expected: dim,
                found: data.len() % dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::NonFinite {
                what: format!("feature row {}", pos / dim),
            });
        }
        Ok(FeatureStore { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Appends a row and returns its index.
    pub fn push(&mut self, row: &[f32]) -> usize {
        assert_eq!(row.len(), self.dim, "feature row width");
        self.data.extend_from_slice(row);
        self.rows() - 1
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    video_id: String,
    frame_count: usize,
    image_width: u32,
    image_height: u32,
    detection_count: usize,
    feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureIndex {
    dim: usize,
    rows: usize,
}

/// A fully loaded and validated video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoManifest {
    pub video_id: String,
    pub frame_count: usize,
    pub image_width: u32,
    pub image_height: u32,
    /// Sorted by frame.
    pub detections: Vec<Detection>,
    pub features: FeatureStore,
    /// Per-frame 0/1, `1` = anomalous. Absent for training videos.
    pub labels: Option<Vec<u8>>,
}

impl VideoManifest {
    /// Checks the cross-file invariants. Boxes are clamped to the image first.
    pub fn validate(&mut self) -> Result<(), IngestError> {
        if self.frame_count == 0 {
            return Err(IngestError::Invalid(format!(
                "{}: frame_count must be positive",
                self.video_id
            )));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(IngestError::Invalid(format!(
                "{}: image size must be positive",
                self.video_id
            )));
        }
        let (w, h) = (self.image_width as f64, self.image_height as f64);
        let rows = self.features.rows();
        let det_path = PathBuf::from(&self.video_id).join(DETECTIONS_FILE);
        let mut last_frame = 0;
        for (i, det) in self.detections.iter_mut().enumerate() {
            let line = i + 1;
            let malformed = |message: String| IngestError::Malformed {
                path: det_path.clone(),
                line,
                message,
            };
            if det.frame >= self.frame_count {
                return Err(malformed(format!(
                    "frame {} >= frame_count {}",
                    det.frame, self.frame_count
                )));
            }
            if det.frame < last_frame {
                return Err(malformed("detections not sorted by frame".into()));
            }
            last_frame = det.frame;
            if !(0.0..=1.0).contains(&det.confidence) {
                return Err(malformed(format!(
                    "confidence {} outside [0, 1]",
                    det.confidence
                )));
            }
            if det.feature_ref >= rows {
                return Err(IngestError::FeatureRefOutOfRange {
                    path: det_path.clone(),
                    line,
                    feature_ref: det.feature_ref,
                    rows,
                });
            }
            let clamped = det.bbox.clamp_to(w, h);
            clamped
                .validate()
                .map_err(|e| malformed(format!("bbox outside image: {e}")))?;
            det.bbox = clamped;
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.frame_count {
                return Err(IngestError::DimensionMismatch {
                    what: format!("{} labels", self.video_id),
                    expected: self.frame_count,
                    found: labels.len(),
                });
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(IngestError::Invalid(format!(
                    "{}: labels must be 0 or 1",
                    self.video_id
                )));
            }
        }
        Ok(())
    }

    /// Detection indices grouped by frame.
    pub fn detections_by_frame(&self) -> Vec<Vec<usize>> {
        let mut by_frame = vec![Vec::new(); self.frame_count];
        for (i, d) in self.detections.iter().enumerate() {
            by_frame[d.frame].push(i);
        }
        by_frame
    }

    pub fn feature(&self, det: &Detection) -> &[f32] {
        self.features.row(det.feature_ref)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| IngestError::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IngestError::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| IngestError::io(path, e))
}

/// Loads and validates one video directory.
pub fn load_manifest(dir: &Path) -> Result<VideoManifest, IngestError> {
    let header: ManifestHeader = read_json(&dir.join(MANIFEST_FILE))?;
    let index: FeatureIndex = read_json(&dir.join(FEATURES_INDEX_FILE))?;
    if index.dim != header.feature_dim {
        return Err(IngestError::DimensionMismatch {
            what: format!("{} feature dim", header.video_id),
            expected: header.feature_dim,
            found: index.dim,
        });
    }

    let features = read_features(&dir.join(FEATURES_FILE), index.dim, index.rows)?;

    let det_path = dir.join(DETECTIONS_FILE);
    let file = fs::File::open(&det_path).map_err(|e| IngestError::io(&det_path, e))?;
    let mut detections = Vec::with_capacity(header.detection_count);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| IngestError::io(&det_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let det: Detection =
            serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
                path: det_path.clone(),
                line: line_no,
                message: e.to_string(),
            })?;
        if det.feature_ref >= features.rows() {
            return Err(IngestError::FeatureRefOutOfRange {
                path: det_path.clone(),
                line: line_no,
                feature_ref: det.feature_ref,
                rows: features.rows(),
            });
        }
        detections.push(det);
    }
    if detections.len() != header.detection_count {
        return Err(IngestError::DimensionMismatch {
            what: format!("{} detection_count", header.video_id),
            expected: header.detection_count,
            found: detections.len(),
        });
    }

    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.exists() {
        Some(read_json::<Vec<u8>>(&labels_path)?)
    } else {
        None
    };

    let mut manifest = VideoManifest {
        video_id: header.video_id,
        frame_count: header.frame_count,
        image_width: header.image_width,
        image_height: header.image_height,
        detections,
        features,
        labels,
    };
    manifest.validate()?;
    Ok(manifest)
}

fn read_features(path: &Path, dim: usize, rows: usize) -> Result<FeatureStore, IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let expected = dim * rows * 4;
    if bytes.len() != expected {
        return Err(IngestError::DimensionMismatch {
            what: format!("{} byte length", path.display()),
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureStore::from_flat(dim, data)
}

/// Writes a video directory. Output is a pure function of the manifest.
pub fn save_manifest(dir: &Path, m: &VideoManifest) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    write_json(
        &dir.join(MANIFEST_FILE),
        &ManifestHeader {
            video_id: m.video_id.clone(),
            frame_count: m.frame_count,
            image_width: m.image_width,
            image_height: m.image_height,
            detection_count: m.detections.len(),
            feature_dim: m.features.dim(),
        },
    )?;
    write_json(
        &dir.join(FEATURES_INDEX_FILE),
        &FeatureIndex {
            dim: m.features.dim(),
            rows: m.features.rows(),
        },
    )?;

    let feat_path = dir.join(FEATURES_FILE);
    let mut bytes = Vec::with_capacity(m.features.as_flat().len() * 4);
    for v in m.features.as_flat() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&feat_path, bytes).map_err(|e| IngestError::io(&feat_path, e))?;

    let det_path = dir.join(DETECTIONS_FILE);
    let mut out = Vec::new();
    for det in &m.detections {
        serde_json::to_writer(&mut out, det).map_err(|e| IngestError::json(&det_path, e))?;
        out.push(b'\n');
    }
    fs::write(&det_path, out).map_err(|e| IngestError::io(&det_path, e))?;

    let labels_path = dir.join(LABELS_FILE);
    match &m.labels {
        Some(labels) => {
            let mut text =
                serde_json::to_string(labels).map_err(|e| IngestError::json(&labels_path, e))?;
            text.push('\n');
            fs::write(&labels_path, text).map_err(|e| IngestError::io(&labels_path, e))?;
        }
        None if labels_path.exists() => {
            fs::remove_file(&labels_path).map_err(|e| IngestError::io(&labels_path, e))?;
        }
        None => {}
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_id: String,
    pub text: String,
}

/// Ordered, non-empty list of candidate prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPool {
    pub prompts: Vec<Prompt>,
}

impl PromptPool {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.prompts.is_empty() {
            return Err(IngestError::Invalid("prompt pool is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for p in &self.prompts {
            if !seen.insert(p.prompt_id.as_str()) {
                return Err(IngestError::Invalid(format!(
                    "duplicate prompt_id {:?}",
                    p.prompt_id
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, prompt_id: &str) -> bool {
        self.prompts.iter().any(|p| p.prompt_id == prompt_id)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let pool: PromptPool = read_json(path)?;
        pool.validate()?;
        Ok(pool)
    }

    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        write_json(path, self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// All videos of a dataset root, validated together.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub pool: PromptPool,
    pub train: Vec<VideoManifest>,
    pub test: Vec<VideoManifest>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self, IngestError> {
        let split: DatasetSplit = read_json(&root.join(DATASET_FILE))?;
        let pool = PromptPool::load(&root.join(PROMPT_POOL_FILE))?;
        let load_all = |ids: &[String]| -> Result<Vec<VideoManifest>, IngestError> {
            ids.iter().map(|id| load_manifest(&root.join(id))).collect()
        };
        let dataset = Dataset {
            root: root.to_path_buf(),
            train: load_all(&split.train)?,
            test: load_all(&split.test)?,
            pool,
        };
        dataset.check_consistency()?;
        Ok(dataset)
    }

    /// Feature dims agree across videos and every answer names a pool prompt.
    pub fn check_consistency(&self) -> Result<(), IngestError> {
        let mut dim = None;
        for v in self.videos() {
            let d = v.features.dim();
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(IngestError::DimensionMismatch {
                        what: format!("{} feature dim", v.video_id),
                        expected,
                        found: d,
                    })
                }
                _ => {}
            }
            for (i, det) in v.detections.iter().enumerate() {
                if let Some(id) = det.answers.keys().find(|id| !self.pool.contains(id)) {
                    return Err(IngestError::Malformed {
                        path: PathBuf::from(&v.video_id).join(DETECTIONS_FILE),
                        line: i + 1,
                        message: format!("prompt_id {id:?} not in prompt pool"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn videos(&self) -> impl Iterator<Item = &VideoManifest> {
        self.train.iter().chain(self.test.iter())
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.videos().next().map(|v| v.features.dim())
    }

    pub fn split(&self) -> DatasetSplit {
        DatasetSplit {
            train: self.train.iter().map(|v| v.video_id.clone()).collect(),
            test: self.test.iter().map(|v| v.video_id.clone()).collect(),
        }
    }

    pub fn save(&self, root: &Path) -> Result<(), IngestError> {
        fs::create_dir_all(root).map_err(|e| IngestError::io(root, e))?;
        write_json(&root.join(DATASET_FILE), &self.split())?;
        self.pool.save(&root.join(PROMPT_POOL_FILE))?;
        for v in self.videos() {
            save_manifest(&root.join(&v.video_id), v)?;
        }
        Ok(())
    }
}

/// Writes `value` as JSON Lines.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IngestError> {
    let mut out = fs::File::create(path).map_err(|e| IngestError::io(path, e))?;
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| IngestError::json(path, e))?;
        writeln!(out, "{line}").map_err(|e| IngestError::io(path, e))?;
    }
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, IngestError> {
    let file = fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(items)
}
