//! End-to-end composition of the stages: track, fit the caption model,
//! train the temporal model, score test videos and evaluate.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, EvalError, LabeledScores, RocPoint};
use crate::fusion::{self, FrameAccumulator, FusedScores, FusionConfig, FusionError, ScoreSeries, SeriesKind};
use crate::ingest::{Dataset, IngestError, PromptPool, VideoManifest};
use crate::s3m::{self, S3mError, S3mParams, TrainConfig, TrainOutcome};
use crate::seeds::derive_seed;
use crate::spa::{self, SpaConfig, SpaError, SpaModel};
use crate::tracker::{build_tracks, segment_clips, Clip, Track, TrackerConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Spa(#[from] SpaError),
    #[error(transparent)]
    S3m(#[from] S3mError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("labels required: test video {0} has no labels.json")]
    LabelsRequired(String),
    #[error("no training clips: tracks are all shorter than the clip length {0}")]
    NoClips(usize),
    #[error("config file {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipConfig {
    pub length: usize,
    pub stride: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            length: 8,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Also report the mean per-video AUC.
    pub macro_auc: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { macro_auc: true }
    }
}

/// Every tunable of a pipeline run. The S3M seed is not configured directly:
/// it is derived from `seed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub tracker: TrackerConfig,
    pub clip: ClipConfig,
    pub spa: SpaConfig,
    pub s3m: TrainConfig,
    pub fusion: FusionConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.tracker.validate().map_err(PipelineError::Config)?;
        if self.clip.length < 2 || self.clip.stride < 1 {
            return Err(PipelineError::Config(format!(
                "clip length must be >= 2 and stride >= 1, got {} / {}",
                self.clip.length, self.clip.stride
            )));
        }
        if !(self.spa.alpha >= 0.0 && self.spa.alpha.is_finite()) {
            return Err(PipelineError::Config(format!(
                "spa alpha must be >= 0, got {}",
                self.spa.alpha
            )));
        }
        self.s3m.validate()?;
        if !(0.0..=1.0).contains(&self.fusion.lambda) {
            return Err(FusionError::BadWeight(self.fusion.lambda).into());
        }
        if !(self.fusion.sigma > 0.0 && self.fusion.sigma.is_finite()) {
            return Err(FusionError::BadSigma(self.fusion.sigma).into());
        }
        Ok(())
    }

    /// Reads a config file: JSON when the extension is `.json`, TOML
    /// otherwise. Missing keys take their defaults.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        parse_config_file(path)
    }

    /// Training config with the seed fanned out from the top-level seed.
    pub fn s3m_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "s3m"),
            ..self.s3m.clone()
        }
    }
}

/// TOML or JSON by extension, for any config type.
pub fn parse_config_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let err = |message: String| PipelineError::ConfigFile {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

pub fn track_video(video: &VideoManifest, cfg: &PipelineConfig) -> Vec<Track> {
    build_tracks(video, &cfg.tracker)
}

pub fn video_clips(video: &VideoManifest, tracks: &[Track], cfg: &ClipConfig) -> Vec<Clip> {
    tracks
        .iter()
        .flat_map(|t| segment_clips(t, cfg.length, cfg.stride, video))
        .collect()
}

/// Fits the caption model on every detection of the training videos.
pub fn fit_spa(
    pool: &PromptPool,
    train: &[VideoManifest],
    cfg: &SpaConfig,
) -> Result<SpaModel, PipelineError> {
    let dets: Vec<_> = train.iter().flat_map(|v| v.detections.iter()).collect();
    Ok(spa::select_prompt(pool, &dets, cfg)?)
}

/// Trains the temporal model on all clips of the training videos, in video,
/// track and window order.
pub fn train_s3m(
    train: &[(&VideoManifest, &[Track])],
    cfg: &PipelineConfig,
) -> Result<TrainOutcome, PipelineError> {
    let clips: Vec<DMatrix<f64>> = train
        .iter()
        .flat_map(|(v, tracks)| video_clips(v, tracks, &cfg.clip))
        .map(|c| c.features)
        .collect();
    if clips.is_empty() {
        return Err(PipelineError::NoClips(cfg.clip.length));
    }
    Ok(s3m::train(&clips, &cfg.s3m_train_config())?)
}

/// Raw and fused score series of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoScores {
    pub video_id: String,
    pub raw_static: ScoreSeries,
    pub raw_temporal: ScoreSeries,
    pub combined: FusedScores,
}

/// Per-frame max of per-detection caption scores.
pub fn static_series(video: &VideoManifest, spa: &SpaModel) -> ScoreSeries {
    let dist = spa.distribution();
    let mut acc = FrameAccumulator::new(video.frame_count);
    for det in &video.detections {
        acc.add(det.frame, spa.score(&dist, det));
    }
    ScoreSeries::new(video.video_id.clone(), SeriesKind::Static, acc.into_values())
}

/// Per-frame max over objects of the clip prediction error. Each clip
/// scores its frames 2..L; a frame covered by several clips of one track
/// takes the max, which the per-frame max over objects subsumes.
pub fn temporal_series(
    video: &VideoManifest,
    tracks: &[Track],
    params: &S3mParams,
    cfg: &ClipConfig,
) -> Result<ScoreSeries, PipelineError> {
    let mut acc = FrameAccumulator::new(video.frame_count);
    for clip in video_clips(video, tracks, cfg) {
        let scores = s3m::temporal_score(params, &clip.features)?;
        for (k, s) in scores.into_iter().enumerate() {
            acc.add(clip.start_frame + k + 1, s);
        }
    }
    Ok(ScoreSeries::new(
        video.video_id.clone(),
        SeriesKind::Temporal,
        acc.into_values(),
    ))
}

pub fn score_video(
    video: &VideoManifest,
    tracks: &[Track],
    spa: &SpaModel,
    params: &S3mParams,
    cfg: &PipelineConfig,
) -> Result<VideoScores, PipelineError> {
    let raw_static = static_series(video, spa);
    let raw_temporal = temporal_series(video, tracks, params, &cfg.clip)?;
    let combined = fusion::combine(&raw_static, &raw_temporal, &cfg.fusion)?;
    Ok(VideoScores {
        video_id: video.video_id.clone(),
        raw_static,
        raw_temporal,
        combined,
    })
}

/// Scores many videos, in parallel when the `parallel` feature is on. The
/// result order follows `videos`.
pub fn score_videos(
    videos: &[VideoManifest],
    tracks: &[Vec<Track>],
    spa: &SpaModel,
    params: &S3mParams,
    cfg: &PipelineConfig,
) -> Result<Vec<VideoScores>, PipelineError> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        videos
            .par_iter()
            .zip(tracks.par_iter())
            .map(|(v, t)| score_video(v, t, spa, params, cfg))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        videos
            .iter()
            .zip(tracks)
            .map(|(v, t)| score_video(v, t, spa, params, cfg))
            .collect()
    }
}

pub fn loss_log_csv(log: &[s3m::EpochLog]) -> String {
    let mut out = String::from("epoch,lr,mean_loss,clipped_steps\n");
    for e in log {
        writeln!(out, "{},{},{},{}", e.epoch, e.lr, e.mean_loss, e.clipped_steps).unwrap();
    }
    out
}

/// `scores.csv` with columns frame, static, temporal, fused, final. The
/// static and temporal columns hold the normalized channels.
pub fn scores_csv(scores: &FusedScores) -> String {
    let mut out = String::from("frame,static,temporal,fused,final\n");
    for i in 0..scores.fused.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            i,
            scores.stat.values[i],
            scores.temporal.values[i],
            scores.fused.values[i],
            scores.smoothed.values[i]
        )
        .unwrap();
    }
    out
}

/// Parses a `scores.csv` back into its four series.
pub fn parse_scores_csv(video_id: &str, text: &str) -> Result<FusedScores, PipelineError> {
    let mut cols: [Vec<f64>; 4] = Default::default();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let malformed = |m: String| {
            PipelineError::Ingest(IngestError::Malformed {
                path: PathBuf::from(video_id).join("scores.csv"),
                line: i + 1,
                message: m,
            })
        };
        if fields.len() != 5 {
            return Err(malformed(format!("expected 5 columns, found {}", fields.len())));
        }
        if fields[0].parse::<usize>().ok() != Some(cols[0].len()) {
            return Err(malformed(format!("unexpected frame index {:?}", fields[0])));
        }
        for (c, f) in cols.iter_mut().zip(&fields[1..]) {
            c.push(f.parse().map_err(|e| malformed(format!("{f:?}: {e}")))?);
        }
    }
    let [s, t, f, m] = cols;
    Ok(FusedScores {
        stat: ScoreSeries::new(video_id, SeriesKind::Static, s),
        temporal: ScoreSeries::new(video_id, SeriesKind::Temporal, t),
        fused: ScoreSeries::new(video_id, SeriesKind::Fused, f),
        smoothed: ScoreSeries::new(video_id, SeriesKind::Final, m),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub video_id: String,
    pub frames: usize,
    pub anomalous_frames: usize,
    /// `None` when the video holds a single class.
    pub auc: Option<f64>,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Micro AUC of the final (fused and smoothed) score.
    pub auc: f64,
    pub ap: f64,
    /// Micro AUC of each normalized channel smoothed on its own.
    pub auc_static: f64,
    pub auc_temporal: f64,
    pub macro_auc: Option<f64>,
    pub per_video: Vec<VideoReport>,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Static,
    Temporal,
}

/// Smoothed single normalized channel, as if fused with weight 1 on it.
pub fn channel_only(scores: &FusedScores, sigma: f64, channel: Channel) -> Result<Vec<f64>, PipelineError> {
    let src = match channel {
        Channel::Static => &scores.stat,
        Channel::Temporal => &scores.temporal,
    };
    Ok(fusion::gaussian_smooth(src, sigma)?.values)
}

/// Micro AUC of one channel over a subset of videos (for example those
/// whose anomalies are all of one kind).
pub fn channel_micro_auc(
    scores: &[FusedScores],
    videos: &[&VideoManifest],
    sigma: f64,
    channel: Channel,
) -> Result<f64, PipelineError> {
    let sets = scores
        .iter()
        .zip(videos)
        .map(|(s, v)| labeled(channel_only(s, sigma, channel)?, v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(eval::micro_auc(&sets)?)
}

pub fn labeled(values: Vec<f64>, video: &VideoManifest) -> Result<LabeledScores, PipelineError> {
    let labels = video
        .labels
        .clone()
        .ok_or_else(|| PipelineError::LabelsRequired(video.video_id.clone()))?;
    Ok(LabeledScores::new(values, labels)?)
}

/// Frame-level evaluation over all test videos. `scores` and `videos` are
/// matched by position.
pub fn evaluate(
    scores: &[FusedScores],
    videos: &[&VideoManifest],
    fusion_cfg: &FusionConfig,
    cfg: &EvalConfig,
) -> Result<EvalReport, PipelineError> {
    let mut finals = Vec::new();
    let mut statics = Vec::new();
    let mut temporals = Vec::new();
    let mut per_video = Vec::new();
    for (s, v) in scores.iter().zip(videos) {
        let fin = labeled(s.smoothed.values.clone(), v)?;
        statics.push(labeled(channel_only(s, fusion_cfg.sigma, Channel::Static)?, v)?);
        temporals.push(labeled(channel_only(s, fusion_cfg.sigma, Channel::Temporal)?, v)?);
        per_video.push(VideoReport {
            video_id: v.video_id.clone(),
            frames: v.frame_count,
            anomalous_frames: fin.labels.iter().filter(|&&l| l != 0).count(),
            auc: eval::auc(&fin).ok(),
            ap: eval::average_precision(&fin).ok(),
        });
        finals.push(fin);
    }
    let all = eval::concat(&finals);
    let roc = eval::roc_curve(&all)?;
    Ok(EvalReport {
        auc: eval::area_under(&roc),
        ap: eval::average_precision(&all)?,
        auc_static: eval::micro_auc(&statics)?,
        auc_temporal: eval::micro_auc(&temporals)?,
        macro_auc: if cfg.macro_auc {
            eval::macro_auc(&finals)
        } else {
            None
        },
        per_video,
        roc,
    })
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
    }
    out
}

/// Trained models plus per-video tracks.
#[derive(Debug, Clone)]
pub struct Trained {
    pub spa: SpaModel,
    pub s3m: TrainOutcome,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trained: Trained,
    pub tracks: Vec<(String, Vec<Track>)>,
    pub scores: Vec<VideoScores>,
    pub report: Option<EvalReport>,
}

/// Runs every stage in memory: fit on the training split, score the test
/// split and evaluate when every test video is labeled.
pub fn run(dataset: &Dataset, cfg: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    let train_tracks: Vec<Vec<Track>> = dataset.train.iter().map(|v| track_video(v, cfg)).collect();
    let test_tracks: Vec<Vec<Track>> = dataset.test.iter().map(|v| track_video(v, cfg)).collect();

    let spa = fit_spa(&dataset.pool, &dataset.train, &cfg.spa)?;
    let pairs: Vec<(&VideoManifest, &[Track])> = dataset
        .train
        .iter()
        .zip(&train_tracks)
        .map(|(v, t)| (v, t.as_slice()))
        .collect();
    let s3m = train_s3m(&pairs, cfg)?;

    let scores = score_videos(&dataset.test, &test_tracks, &spa, &s3m.params, cfg)?;

    let report = if dataset.test.iter().all(|v| v.labels.is_some()) && !dataset.test.is_empty() {
        let fused: Vec<FusedScores> = scores.iter().map(|s| s.combined.clone()).collect();
        let videos: Vec<&VideoManifest> = dataset.test.iter().collect();
        Some(evaluate(&fused, &videos, &cfg.fusion, &cfg.eval)?)
    } else {
        None
    };

    let tracks = dataset
        .train
        .iter()
        .zip(train_tracks)
        .chain(dataset.test.iter().zip(test_tracks))
        .map(|(v, t)| (v.video_id.clone(), t))
        .collect();
    Ok(RunOutput {
        trained: Trained { spa, s3m },
        tracks,
        scores,
        report,
    })
}
