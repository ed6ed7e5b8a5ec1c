//! Per-frame score assembly: max over objects, per-video min-max
//! normalization, convex fusion of the static and temporal channels and
//! Gaussian smoothing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("series length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("fusion weight must lie in [0, 1], got {0}")]
    BadWeight(f64),
    #[error("smoothing sigma must be > 0, got {0}")]
    BadSigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Static,
    Temporal,
    Fused,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub video_id: String,
    pub kind: SeriesKind,
    pub values: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(video_id: impl Into<String>, kind: SeriesKind, values: Vec<f64>) -> Self {
        ScoreSeries {
            video_id: video_id.into(),
            kind,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Weight of the static channel.
    pub lambda: f64,
    /// Smoothing kernel width in frames.
    pub sigma: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            lambda: 0.5,
            sigma: 2.0,
        }
    }
}

/// Most anomalous object score in a frame; 0 when the frame has no objects.
pub fn frame_max_pool(object_scores: &[f64]) -> f64 {
    object_scores.iter().copied().fold(0.0, f64::max)
}

/// Accumulates per-object scores into a per-frame max.
#[derive(Debug, Clone)]
pub struct FrameAccumulator {
    values: Vec<Option<f64>>,
}

impl FrameAccumulator {
    pub fn new(frame_count: usize) -> Self {
        FrameAccumulator {
            values: vec![None; frame_count],
        }
    }

    pub fn add(&mut self, frame: usize, score: f64) {
        let slot = &mut self.values[frame];
        *slot = Some(slot.map_or(score, |v| v.max(score)));
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values.into_iter().map(|v| v.unwrap_or(0.0)).collect()
    }
}

/// Maps the series onto `[0, 1]`; a constant series maps to all zeros.
pub fn minmax_normalize(series: &ScoreSeries) -> ScoreSeries {
    let lo = series.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let values = if span > 0.0 {
        series.values.iter().map(|v| (v - lo) / span).collect()
    } else {
        vec![0.0; series.len()]
    };
    ScoreSeries {
        values,
        ..series.clone()
    }
}

/// `lambda * static + (1 - lambda) * temporal`.
pub fn fuse(
    stat: &ScoreSeries,
    temporal: &ScoreSeries,
    lambda: f64,
) -> Result<ScoreSeries, FusionError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(FusionError::BadWeight(lambda));
    }
    if stat.len() != temporal.len() {
        return Err(FusionError::LengthMismatch(stat.len(), temporal.len()));
    }
    let values = stat
        .values
        .iter()
        .zip(&temporal.values)
        .map(|(s, t)| lambda * s + (1.0 - lambda) * t)
        .collect();
    Ok(ScoreSeries::new(stat.video_id.clone(), SeriesKind::Fused, values))
}

/// Unnormalized kernel taps `exp(-i^2 / 2 sigma^2)` for `i` in `-r..=r`,
/// `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Truncated Gaussian smoothing. Near the ends the kernel is renormalized
/// over the taps that fall inside the series, so every output is a convex
/// combination of inputs.
pub fn gaussian_smooth(series: &ScoreSeries, sigma: f64) -> Result<ScoreSeries, FusionError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(FusionError::BadSigma(sigma));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let n = series.len() as isize;
    let values = (0..n)
        .map(|i| {
            let lo = (i - radius).max(0);
            let hi = (i + radius).min(n - 1);
            let mut acc = 0.0;
            let mut weight = 0.0;
            for j in lo..=hi {
                let w = kernel[(j - i + radius) as usize];
                acc += w * series.values[j as usize];
                weight += w;
            }
            acc / weight
        })
        .collect();
    Ok(ScoreSeries {
        values,
        kind: SeriesKind::Final,
        video_id: series.video_id.clone(),
    })
}

/// All four series of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedScores {
    pub stat: ScoreSeries,
    pub temporal: ScoreSeries,
    pub fused: ScoreSeries,
    pub smoothed: ScoreSeries,
}

/// Normalizes both raw channels, fuses and smooths them.
pub fn combine(
    raw_static: &ScoreSeries,
    raw_temporal: &ScoreSeries,
    cfg: &FusionConfig,
) -> Result<FusedScores, FusionError> {
    let stat = minmax_normalize(raw_static);
    let temporal = minmax_normalize(raw_temporal);
    let fused = fuse(&stat, &temporal, cfg.lambda)?;
    let smoothed = gaussian_smooth(&fused, cfg.sigma)?;
    Ok(FusedScores {
        stat,
        temporal,
        fused,
        smoothed,
    })
}
