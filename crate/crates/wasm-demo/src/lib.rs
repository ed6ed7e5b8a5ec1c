//! Browser bindings: train once on a generated dataset, then re-fuse and
//! re-evaluate interactively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use semvad::fusion::{self, FusionConfig, ScoreSeries, SeriesKind};
use semvad::ingest::VideoManifest;
use semvad::pipeline::{self, PipelineConfig, VideoScores};
use semvad::s3m::TrainConfig;
use semvad::synth::{self, SynthConfig};

#[derive(Serialize)]
struct VideoView<'a> {
    id: &'a str,
    labels: &'a [u8],
    stat: &'a [f64],
    temporal: &'a [f64],
    fused: &'a [f64],
    smoothed: &'a [f64],
    auc: Option<f64>,
}

#[derive(Serialize)]
struct View<'a> {
    auc: f64,
    ap: f64,
    auc_static: f64,
    auc_temporal: f64,
    macro_auc: Option<f64>,
    roc: Vec<[f64; 2]>,
    videos: Vec<VideoView<'a>>,
}

/// A trained pipeline over a synthetic dataset.
pub struct Session {
    test: Vec<VideoManifest>,
    scores: Vec<VideoScores>,
    prompt: String,
    loss: Vec<f64>,
}

impl Session {
    pub fn train(seed: u64, epochs: usize, state_dim: usize) -> Result<Session, String> {
        let synth_cfg = SynthConfig {
            seed,
            n_train: 4,
            ..SynthConfig::acceptance()
        };
        let gen = synth::generate(&synth_cfg).map_err(|e| e.to_string())?;
        let cfg = PipelineConfig {
            seed,
            s3m: TrainConfig {
                epochs,
                state_dim,
                ..TrainConfig::default()
            },
            ..PipelineConfig::default()
        };
        let out = pipeline::run(&gen.dataset, &cfg).map_err(|e| e.to_string())?;
        Ok(Session {
            test: gen.dataset.test,
            scores: out.scores,
            prompt: out.trained.spa.prompt_id,
            loss: out.trained.s3m.log.iter().map(|e| e.mean_loss).collect(),
        })
    }

    pub fn rescore(&self, lambda: f64, sigma: f64) -> Result<String, String> {
        let cfg = FusionConfig { lambda, sigma };
        let fused = self
            .scores
            .iter()
            .map(|s| fusion::combine(&s.raw_static, &s.raw_temporal, &cfg))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let videos: Vec<&VideoManifest> = self.test.iter().collect();
        let report = pipeline::evaluate(&fused, &videos, &cfg, &Default::default())
            .map_err(|e| e.to_string())?;
        let view = View {
            auc: report.auc,
            ap: report.ap,
            auc_static: report.auc_static,
            auc_temporal: report.auc_temporal,
            macro_auc: report.macro_auc,
            roc: report.roc.iter().map(|p| [p.fpr, p.tpr]).collect(),
            videos: fused
                .iter()
                .zip(&self.test)
                .zip(&report.per_video)
                .map(|((f, v), r)| VideoView {
                    id: &v.video_id,
                    labels: v.labels.as_deref().unwrap_or(&[]),
                    stat: &f.stat.values,
                    temporal: &f.temporal.values,
                    fused: &f.fused.values,
                    smoothed: &f.smoothed.values,
                    auc: r.auc,
                })
                .collect(),
        };
        serde_json::to_string(&view).map_err(|e| e.to_string())
    }
}

pub fn smooth_values(values: Vec<f64>, sigma: f64) -> Result<Vec<f64>, String> {
    let series = ScoreSeries::new("input", SeriesKind::Fused, values);
    fusion::gaussian_smooth(&series, sigma)
        .map(|s| s.values)
        .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    inner: Session,
}

#[wasm_bindgen]
impl Demo {
    /// Generates a dataset from `seed` and trains both channels.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, epochs: u32, state_dim: u32) -> Result<Demo, JsError> {
        Session::train(seed as u64, epochs as usize, state_dim as usize)
            .map(|inner| Demo { inner })
            .map_err(|e| JsError::new(&e))
    }

    /// Fused scores and metrics for the given weight and smoothing width,
    /// as JSON.
    pub fn rescore(&self, lambda: f64, sigma: f64) -> Result<String, JsError> {
        self.inner.rescore(lambda, sigma).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(getter)]
    pub fn prompt(&self) -> String {
        self.inner.prompt.clone()
    }

    /// Mean training loss per epoch.
    #[wasm_bindgen(getter)]
    pub fn loss(&self) -> Vec<f64> {
        self.inner.loss.clone()
    }
}

/// Gaussian smoothing of an arbitrary series.
#[wasm_bindgen]
pub fn smooth(values: Vec<f64>, sigma: f64) -> Result<Vec<f64>, JsError> {
    smooth_values(values, sigma).map_err(|e| JsError::new(&e))
}
