//! Synthetic datasets with known ground truth.
//!
//! Every object's features follow a hidden stable linear system
//! `f_{t+1} = M f_t + noise`. Inside a dynamics anomaly window the affected
//! object switches to an independent matrix `M'`; inside a caption anomaly
//! window its answers come from a shifted distribution. Boxes move along
//! separate horizontal lanes so tracking is unambiguous.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    BBox, Dataset, Detection, FeatureStore, IngestError, Prompt, PromptPool, VideoManifest,
};
use crate::seeds::derive_seed;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

const BURN_IN: usize = 50;
const MAX_RADIUS: f64 = 0.9;
const MIN_TV: f64 = 0.5;
const MIN_SWITCH_DISTANCE: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    Dynamics,
    Caption,
    Both,
}

impl AnomalyKind {
    pub fn has_dynamics(self) -> bool {
        matches!(self, AnomalyKind::Dynamics | AnomalyKind::Both)
    }

    pub fn has_caption(self) -> bool {
        matches!(self, AnomalyKind::Caption | AnomalyKind::Both)
    }
}

/// Frames `start..end` of one object in one test video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyWindow {
    /// Index into the test videos.
    pub test_video: usize,
    pub object: usize,
    pub start: usize,
    pub end: usize,
    pub kind: AnomalyKind,
}

impl AnomalyWindow {
    pub fn contains(&self, frame: usize) -> bool {
        (self.start..self.end).contains(&frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prompt_id: String,
    pub text: String,
    /// `(answer, weight)`; weights need not sum to 1.
    pub normal: Vec<(String, f64)>,
    /// Distribution inside caption windows. Empty means same as normal.
    #[serde(default)]
    pub anomalous: Vec<(String, f64)>,
}

impl PromptSpec {
    fn anomalous_or_normal(&self) -> &[(String, f64)] {
        if self.anomalous.is_empty() {
            &self.normal
        } else {
            &self.anomalous
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub frames_per_video: usize,
    pub objects_per_video: usize,
    pub feature_dim: usize,
    /// Spectral radius both transition matrices are rescaled to.
    pub spectral_radius: f64,
    pub noise_std: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub windows: Vec<AnomalyWindow>,
    pub prompts: Vec<PromptSpec>,
}

fn answers(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
    pairs.iter().map(|(a, w)| (a.to_string(), *w)).collect()
}

/// Three prompts: an informative action question plus two whose answers do
/// not react to anomalies.
pub fn default_prompts() -> Vec<PromptSpec> {
    vec![
        PromptSpec {
            prompt_id: "clothing".into(),
            text: "What is the person wearing?".into(),
            normal: answers(&[("jacket", 1.0), ("t-shirt", 1.0), ("coat", 1.0), ("dress", 1.0)]),
            anomalous: vec![],
        },
        PromptSpec {
            prompt_id: "action".into(),
            text: "What is the person doing?".into(),
            normal: answers(&[("walking", 0.94), ("standing", 0.05), ("running", 0.01)]),
            anomalous: answers(&[
                ("riding a bike", 0.5),
                ("fighting", 0.3),
                ("throwing something", 0.15),
                ("walking", 0.05),
            ]),
        },
        PromptSpec {
            prompt_id: "carrying".into(),
            text: "What is the person carrying?".into(),
            normal: answers(&[("nothing", 0.6), ("a bag", 0.3), ("an umbrella", 0.1)]),
            anomalous: vec![],
        },
    ]
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::acceptance()
    }
}

impl SynthConfig {
    /// The standard instance: seed 7, 8 normal training videos, 4 test
    /// videos with one 30-frame window each, 200 frames, 3 objects, D = 16.
    pub fn acceptance() -> Self {
        let kinds = [
            AnomalyKind::Dynamics,
            AnomalyKind::Caption,
            AnomalyKind::Dynamics,
            AnomalyKind::Caption,
        ];
        let starts = [60, 110, 35, 140];
        let windows = (0..4)
            .map(|i| AnomalyWindow {
                test_video: i,
                object: i % 3,
                start: starts[i],
                end: starts[i] + 30,
                kind: kinds[i],
            })
            .collect();
        SynthConfig {
            seed: 7,
            n_train: 8,
            n_test: 4,
            frames_per_video: 200,
            objects_per_video: 3,
            feature_dim: 16,
            spectral_radius: 0.8,
            noise_std: 0.05,
            image_width: 640,
            image_height: 480,
            windows,
            prompts: default_prompts(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_train + self.n_test == 0 {
            return bad("need at least one video".into());
        }
        if self.frames_per_video < 2 || self.objects_per_video == 0 || self.feature_dim == 0 {
            return bad("frames >= 2, objects >= 1 and feature_dim >= 1 required".into());
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius <= MAX_RADIUS) {
            return bad(format!(
                "spectral_radius must be in (0, {MAX_RADIUS}], got {}",
                self.spectral_radius
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if self.image_width < 64 || self.image_height < 16 * self.objects_per_video as u32 {
            return bad("image too small for the object lanes".into());
        }
        if self.prompts.is_empty() {
            return bad("at least one prompt required".into());
        }
        for p in &self.prompts {
            for dist in [&p.normal, &p.anomalous] {
                if dist.iter().any(|(_, w)| !(*w >= 0.0 && w.is_finite())) {
                    return bad(format!("prompt {}: weights must be >= 0", p.prompt_id));
                }
            }
            if p.normal.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
                return bad(format!("prompt {}: empty normal distribution", p.prompt_id));
            }
        }
        for w in &self.windows {
            if w.test_video >= self.n_test {
                return bad(format!("window references test video {}", w.test_video));
            }
            if w.object >= self.objects_per_video {
                return bad(format!("window references object {}", w.object));
            }
            if w.start >= w.end || w.end > self.frames_per_video {
                return bad(format!("window {}..{} outside the video", w.start, w.end));
            }
        }
        if self.windows.iter().any(|w| w.kind.has_caption()) {
            let tv = self
                .prompts
                .iter()
                .map(|p| total_variation(&p.normal, p.anomalous_or_normal()))
                .fold(0.0, f64::max);
            if tv < MIN_TV {
                return bad(format!(
                    "caption anomalies need normal/anomalous total variation >= {MIN_TV}, got {tv}"
                ));
            }
        }
        Ok(())
    }
}

fn normalized(dist: &[(String, f64)]) -> BTreeMap<&str, f64> {
    let z: f64 = dist.iter().map(|(_, w)| w).sum();
    let mut out = BTreeMap::new();
    for (a, w) in dist {
        *out.entry(a.as_str()).or_insert(0.0) += w / z;
    }
    out
}

/// Total variation distance between two answer distributions.
pub fn total_variation(p: &[(String, f64)], q: &[(String, f64)]) -> f64 {
    let (p, q) = (normalized(p), normalized(q));
    let keys: std::collections::BTreeSet<&str> = p.keys().chain(q.keys()).copied().collect();
    0.5 * keys
        .iter()
        .map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn random_stable_matrix(dim: usize, radius: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rho = spectral_radius(&m);
        if rho > 1e-9 {
            return m * (radius / rho);
        }
    }
}

/// Hidden quantities for white-box tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub feature_dim: usize,
    /// Row-major `D x D`.
    pub transition: Vec<Vec<f64>>,
    pub anomalous_transition: Vec<Vec<f64>>,
    pub windows: Vec<AnomalyWindow>,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl GroundTruth {
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.transition)
    }

    pub fn anomalous_transition_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.anomalous_transition)
    }

    /// Windows of one test video, by id.
    pub fn windows_for(&self, video_id: &str) -> Vec<&AnomalyWindow> {
        let Some(idx) = self.test.iter().position(|v| v == video_id) else {
            return Vec::new();
        };
        self.windows.iter().filter(|w| w.test_video == idx).collect()
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let bytes = std::fs::read(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| {
            SynthError::Config(format!("{}: {e}", path.display()))
        })
    }
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, c, |i, j| rows[i][j])
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

impl SynthDataset {
    /// Writes the dataset layout plus `ground_truth.json`.
    pub fn write(&self, root: &Path) -> Result<(), SynthError> {
        self.dataset.save(root)?;
        let path = root.join(GROUND_TRUTH_FILE);
        let mut text = serde_json::to_string_pretty(&self.truth)
            .map_err(|e| SynthError::Config(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|source| SynthError::Io { path, source })
    }
}

fn sample_answer<'a>(dist: &'a [(String, f64)], rng: &mut ChaCha8Rng) -> &'a str {
    let z: f64 = dist.iter().map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * z;
    for (a, w) in dist {
        if u < *w {
            return a;
        }
        u -= w;
    }
    // rounding fell off the end
    &dist.iter().rev().find(|(_, w)| *w > 0.0).unwrap().0
}

fn lane_box(cfg: &SynthConfig, object: usize, frame: usize, phase: f64) -> BBox {
    let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
    let lane = h / cfg.objects_per_video as f64;
    let box_h = 0.6 * lane;
    let box_w = (0.5 * box_h).min(0.1 * w);
    let cy = lane * (object as f64 + 0.5);
    let amplitude = 0.3 * w - box_w;
    let cx = 0.5 * w + amplitude * (std::f64::consts::TAU * frame as f64 / 120.0 + phase).sin();
    BBox {
        x1: cx - 0.5 * box_w,
        y1: cy - 0.5 * box_h,
        x2: cx + 0.5 * box_w,
        y2: cy + 0.5 * box_h,
    }
}

/// Builds the dataset in memory. Deterministic for a fixed config.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset, SynthError> {
    cfg.validate()?;
    let dim = cfg.feature_dim;
    let mut mat_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth/matrices"));
    let normal_m = random_stable_matrix(dim, cfg.spectral_radius, &mut mat_rng);
    let anomalous_m = loop {
        let m = random_stable_matrix(dim, cfg.spectral_radius, &mut mat_rng);
        if (&m - &normal_m).norm() >= MIN_SWITCH_DISTANCE {
            break m;
        }
    };

    let pool = PromptPool {
        prompts: cfg
            .prompts
            .iter()
            .map(|p| Prompt {
                prompt_id: p.prompt_id.clone(),
                text: p.text.clone(),
            })
            .collect(),
    };

    let train_ids: Vec<String> = (0..cfg.n_train).map(|i| format!("train_{i:02}")).collect();
    let test_ids: Vec<String> = (0..cfg.n_test).map(|i| format!("test_{i:02}")).collect();

    let make_video = |video_id: &str, test_index: Option<usize>| -> VideoManifest {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("synth/{video_id}")));
        let windows: Vec<&AnomalyWindow> = match test_index {
            Some(i) => cfg.windows.iter().filter(|w| w.test_video == i).collect(),
            None => Vec::new(),
        };

        // per-object feature trajectories
        let mut trajectories = Vec::with_capacity(cfg.objects_per_video);
        for object in 0..cfg.objects_per_video {
            let noise = |rng: &mut ChaCha8Rng| {
                DVector::from_fn(dim, |_, _| cfg.noise_std * rng.sample::<f64, _>(StandardNormal))
            };
            let mut f = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            for _ in 0..BURN_IN {
                f = &normal_m * f + noise(&mut rng);
            }
            let mut rows: Vec<Vec<f32>> = Vec::with_capacity(cfg.frames_per_video);
            // stored values are what the model sees, so the recurrence runs
            // on the f32-rounded state
            let mut current: DVector<f64> = f.map(|v| v as f32 as f64);
            rows.push(current.iter().map(|&v| v as f32).collect());
            for frame in 1..cfg.frames_per_video {
                let switched = windows
                    .iter()
                    .any(|w| w.object == object && w.kind.has_dynamics() && w.contains(frame));
                let m = if switched { &anomalous_m } else { &normal_m };
                let next = m * &current + noise(&mut rng);
                current = next.map(|v| v as f32 as f64);
                rows.push(current.iter().map(|&v| v as f32).collect());
            }
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            trajectories.push((rows, phase));
        }

        let mut features = FeatureStore::new(dim);
        let mut detections = Vec::with_capacity(cfg.frames_per_video * cfg.objects_per_video);
        for frame in 0..cfg.frames_per_video {
            for (object, (rows, phase)) in trajectories.iter().enumerate() {
                let caption_anomaly = windows
                    .iter()
                    .any(|w| w.object == object && w.kind.has_caption() && w.contains(frame));
                let answers = cfg
                    .prompts
                    .iter()
                    .map(|p| {
                        let dist = if caption_anomaly {
                            p.anomalous_or_normal()
                        } else {
                            &p.normal
                        };
                        (p.prompt_id.clone(), sample_answer(dist, &mut rng).to_string())
                    })
                    .collect();
                let confidence = (0.7 + 0.3 * rng.random::<f64>()).min(1.0);
                let feature_ref = features.push(&rows[frame]);
                detections.push(Detection {
                    frame,
                    bbox: lane_box(cfg, object, frame, *phase),
                    confidence,
                    feature_ref,
                    answers,
                });
            }
        }

        let labels = test_index.map(|_| {
            (0..cfg.frames_per_video)
                .map(|f| windows.iter().any(|w| w.contains(f)) as u8)
                .collect()
        });
        VideoManifest {
            video_id: video_id.to_string(),
            frame_count: cfg.frames_per_video,
            image_width: cfg.image_width,
            image_height: cfg.image_height,
            detections,
            features,
            labels,
        }
    };

    let train: Vec<VideoManifest> = train_ids.iter().map(|id| make_video(id, None)).collect();
    let test: Vec<VideoManifest> = test_ids
        .iter()
        .enumerate()
        .map(|(i, id)| make_video(id, Some(i)))
        .collect();

    let mut dataset = Dataset {
        root: PathBuf::new(),
        pool,
        train,
        test,
    };
    for v in dataset.train.iter_mut().chain(dataset.test.iter_mut()) {
        v.validate()?;
    }
    dataset.check_consistency()?;

    Ok(SynthDataset {
        truth: GroundTruth {
            seed: cfg.seed,
            feature_dim: dim,
            transition: matrix_to_rows(&normal_m),
            anomalous_transition: matrix_to_rows(&anomalous_m),
            windows: cfg.windows.clone(),
            train: train_ids,
            test: test_ids,
        },
        dataset,
    })
}
