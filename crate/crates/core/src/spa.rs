//! Selective prompt adapter: caption-answer frequency models fitted on normal
//! data, prompt selection, and the static per-object anomaly score.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Detection, PromptPool};

#[derive(Debug, Error)]
pub enum SpaError {
    #[error("no training detections to fit prompt {0:?}")]
    Empty(String),
    #[error("detection {index} has no answer for prompt {prompt_id:?}")]
    MissingAnswer { prompt_id: String, index: usize },
    #[error("smoothing constant must be finite and >= 0, got {0}")]
    BadAlpha(f64),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpaConfig {
    /// Laplace smoothing constant.
    pub alpha: f64,
    /// Trim and lowercase answers before counting and lookup.
    pub normalize: bool,
}

impl Default for SpaConfig {
    fn default() -> Self {
        SpaConfig {
            alpha: 1.0,
            normalize: true,
        }
    }
}

pub fn normalize_answer(answer: &str, normalize: bool) -> String {
    if normalize {
        answer.trim().to_lowercase()
    } else {
        answer.to_string()
    }
}

/// Answer counts for one prompt, smoothed over the observed vocabulary plus a
/// single bucket shared by every unseen answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub prompt_id: String,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

impl AnswerDistribution {
    pub fn from_counts(
        prompt_id: impl Into<String>,
        counts: BTreeMap<String, u64>,
        alpha: f64,
    ) -> Self {
        let total = counts.values().sum();
        AnswerDistribution {
            prompt_id: prompt_id.into(),
            counts,
            total,
            alpha,
            normalize: true,
        }
    }

    fn denominator(&self) -> f64 {
        self.total as f64 + self.alpha * (self.counts.len() as f64 + 1.0)
    }

    /// Smoothed probability of an answer; unseen answers get the unseen
    /// bucket's mass.
    pub fn probability(&self, answer: &str) -> f64 {
        let key = normalize_answer(answer, self.normalize);
        let count = self.counts.get(&key).copied().unwrap_or(0);
        (count as f64 + self.alpha) / self.denominator()
    }

    pub fn unseen_probability(&self) -> f64 {
        self.alpha / self.denominator()
    }

    /// Smoothed probabilities of the observed vocabulary followed by the
    /// unseen bucket.
    pub fn smoothed(&self) -> Vec<f64> {
        let z = self.denominator();
        self.counts
            .values()
            .map(|&c| (c as f64 + self.alpha) / z)
            .chain(std::iter::once(self.alpha / z))
            .collect()
    }
}

/// Counts the answers every training detection gives to `prompt_id`.
pub fn fit_distribution<'a>(
    detections: impl IntoIterator<Item = &'a Detection>,
    prompt_id: &str,
    cfg: &SpaConfig,
) -> Result<AnswerDistribution, SpaError> {
    if !(cfg.alpha.is_finite() && cfg.alpha >= 0.0) {
        return Err(SpaError::BadAlpha(cfg.alpha));
    }
    let mut counts = BTreeMap::new();
    let mut total = 0u64;
    for (index, det) in detections.into_iter().enumerate() {
        let answer = det
            .answers
            .get(prompt_id)
            .ok_or_else(|| SpaError::MissingAnswer {
                prompt_id: prompt_id.to_string(),
                index,
            })?;
        *counts
            .entry(normalize_answer(answer, cfg.normalize))
            .or_insert(0) += 1;
        total += 1;
    }
    if total == 0 {
        return Err(SpaError::Empty(prompt_id.to_string()));
    }
    Ok(AnswerDistribution {
        prompt_id: prompt_id.to_string(),
        counts,
        total,
        alpha: cfg.alpha,
        normalize: cfg.normalize,
    })
}

/// Shannon entropy in bits of the smoothed distribution.
pub fn entropy(dist: &AnswerDistribution) -> f64 {
    dist.smoothed()
        .into_iter()
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.log2())
        .sum::<f64>()
        .max(0.0)
}

/// `1 - p(answer)`. Rarer answers score higher; unseen answers score highest.
pub fn static_object_score(dist: &AnswerDistribution, answer: &str) -> f64 {
    1.0 - dist.probability(answer)
}

/// Fitted adapter: the chosen prompt's distribution plus the entropy of every
/// candidate, in pool order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaModel {
    pub prompt_id: String,
    pub counts: BTreeMap<String, u64>,
    pub alpha: f64,
    pub normalize: bool,
    pub candidates: Vec<PromptEntropy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEntropy {
    pub prompt_id: String,
    pub entropy_bits: f64,
}

impl SpaModel {
    pub fn distribution(&self) -> AnswerDistribution {
        AnswerDistribution {
            normalize: self.normalize,
            ..AnswerDistribution::from_counts(self.prompt_id.clone(), self.counts.clone(), self.alpha)
        }
    }

    /// Static score of one detection under the selected prompt. A detection
    /// without an answer for that prompt is scored as an unseen answer.
    pub fn score(&self, dist: &AnswerDistribution, det: &Detection) -> f64 {
        match det.answers.get(&self.prompt_id) {
            Some(a) => static_object_score(dist, a),
            None => 1.0 - dist.unseen_probability(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), SpaError> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| SpaError::Io(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| SpaError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, SpaError> {
        let bytes =
            std::fs::read(path).map_err(|e| SpaError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| SpaError::Io(format!("{}: {e}", path.display())))
    }
}

/// Picks the prompt whose answers on normal data have the lowest entropy;
/// ties go to the earlier prompt in the pool.
pub fn select_prompt(
    pool: &PromptPool,
    detections: &[&Detection],
    cfg: &SpaConfig,
) -> Result<SpaModel, SpaError> {
    let mut candidates = Vec::with_capacity(pool.prompts.len());
    let mut best: Option<(f64, AnswerDistribution)> = None;
    for prompt in &pool.prompts {
        let dist = fit_distribution(detections.iter().copied(), &prompt.prompt_id, cfg)?;
        let h = entropy(&dist);
        candidates.push(PromptEntropy {
            prompt_id: prompt.prompt_id.clone(),
            entropy_bits: h,
        });
        if best.as_ref().is_none_or(|(bh, _)| h < *bh) {
            best = Some((h, dist));
        }
    }
    let (_, dist) = best.ok_or_else(|| SpaError::Empty("<empty pool>".into()))?;
    Ok(SpaModel {
        prompt_id: dist.prompt_id,
        counts: dist.counts,
        alpha: dist.alpha,
        normalize: dist.normalize,
        candidates,
    })
}
