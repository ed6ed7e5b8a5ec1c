//! Two-stage IoU association of per-frame detections into object tracks, and
//! sliding-window segmentation of tracks into fixed-length clips.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ingest::{iou, VideoManifest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Detections at or above this confidence take part in the first stage
    /// and may start new tracks.
    pub conf_high: f64,
    /// Detections in `[conf_low, conf_high)` can only extend existing tracks.
    pub conf_low: f64,
    pub iou_min: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            conf_high: 0.6,
            conf_low: 0.1,
            iou_min: 0.3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.conf_low)
            || !(0.0..=1.0).contains(&self.conf_high)
            || self.conf_low > self.conf_high
        {
            return Err(format!(
                "tracker thresholds need 0 <= conf_low <= conf_high <= 1, got {} / {}",
                self.conf_low, self.conf_high
            ));
        }
        if !(0.0..=1.0).contains(&self.iou_min) {
            return Err(format!("iou_min {} outside [0, 1]", self.iou_min));
        }
        Ok(())
    }
}

/// A run of detections of one object over strictly consecutive frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: usize,
    /// `(frame, detection index)` pairs, frames `f_begin..=f_end` without gaps.
    pub entries: Vec<(usize, usize)>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first_frame(&self) -> usize {
        self.entries[0].0
    }

    pub fn last_frame(&self) -> usize {
        self.entries[self.entries.len() - 1].0
    }
}

/// Greedy matching by descending IoU; ties go to the lower track id, then
/// the lower detection index. Returns `(slot in tracks, detection index)`.
fn greedy_match(
    manifest: &VideoManifest,
    tracks: &[usize],
    last_det: &[usize],
    dets: &[usize],
    iou_min: f64,
) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (slot, &t) in tracks.iter().enumerate() {
        let prev = &manifest.detections[last_det[t]].bbox;
        for &d in dets {
            let v = iou(prev, &manifest.detections[d].bbox);
            if v >= iou_min && v > 0.0 {
                candidates.push((v, t, d, slot));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut used_track = vec![false; tracks.len()];
    let mut used_det = BTreeSet::new();
    let mut matches = Vec::new();
    for (_, _, d, slot) in candidates {
        if used_track[slot] || used_det.contains(&d) {
            continue;
        }
        used_track[slot] = true;
        used_det.insert(d);
        matches.push((slot, d));
    }
    matches
}

/// Associates detections into tracks frame by frame.
///
/// A track that finds no match in a frame ends there; an object that
/// reappears later starts a new track.
pub fn build_tracks(manifest: &VideoManifest, cfg: &TrackerConfig) -> Vec<Track> {
    let mut tracks: Vec<Track> = Vec::new();
    // per track: index of its latest detection
    let mut last_det: Vec<usize> = Vec::new();
    let mut active: Vec<usize> = Vec::new();

    for (frame, frame_dets) in manifest.detections_by_frame().into_iter().enumerate() {
        let (high, low): (Vec<usize>, Vec<usize>) = frame_dets
            .into_iter()
            .filter(|&d| manifest.detections[d].confidence >= cfg.conf_low)
            .partition(|&d| manifest.detections[d].confidence >= cfg.conf_high);

        let mut next_active = Vec::new();

        let m1 = greedy_match(manifest, &active, &last_det, &high, cfg.iou_min);
        let mut matched_slot = vec![false; active.len()];
        let mut matched_high = vec![false; high.len()];
        for &(slot, d) in &m1 {
            matched_slot[slot] = true;
            matched_high[high.iter().position(|&h| h == d).unwrap()] = true;
        }

        let remaining: Vec<usize> = active
            .iter()
            .zip(&matched_slot)
            .filter(|(_, &m)| !m)
            .map(|(&t, _)| t)
            .collect();
        let m2 = greedy_match(manifest, &remaining, &last_det, &low, cfg.iou_min);

        let mut extended: Vec<(usize, usize)> = m1
            .iter()
            .map(|&(slot, d)| (active[slot], d))
            .chain(m2.iter().map(|&(slot, d)| (remaining[slot], d)))
            .collect();
        extended.sort_unstable();
        for (t, d) in extended {
            tracks[t].entries.push((frame, d));
            last_det[t] = d;
            next_active.push(t);
        }

        for (i, &d) in high.iter().enumerate() {
            if !matched_high[i] {
                let t = tracks.len();
                tracks.push(Track {
                    track_id: t,
                    entries: vec![(frame, d)],
                });
                last_det.push(d);
                next_active.push(t);
            }
        }
        active = next_active;
    }
    tracks
}

/// A fixed-length window of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub track_id: usize,
    pub start_frame: usize,
    /// `L x D` features, one row per frame.
    pub features: DMatrix<f64>,
    pub detections: Vec<usize>,
    pub answers: Vec<BTreeMap<String, String>>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

/// Number of windows `segment_clips` produces for a track of `track_len`.
pub fn clip_count(track_len: usize, clip_len: usize, stride: usize) -> usize {
    if track_len < clip_len {
        0
    } else {
        (track_len - clip_len) / stride + 1
    }
}

/// Windows `[s, s + clip_len)` at `s = 0, stride, 2 * stride, ...` that fit
/// entirely inside the track.
pub fn segment_clips(
    track: &Track,
    clip_len: usize,
    stride: usize,
    manifest: &VideoManifest,
) -> Vec<Clip> {
    assert!(clip_len >= 2, "clip length must be at least 2");
    assert!(stride >= 1, "stride must be at least 1");
    let dim = manifest.features.dim();
    (0..clip_count(track.len(), clip_len, stride))
        .map(|k| {
            let window = &track.entries[k * stride..k * stride + clip_len];
            let features = DMatrix::from_fn(clip_len, dim, |r, c| {
                manifest.feature(&manifest.detections[window[r].1])[c] as f64
            });
            Clip {
                track_id: track.track_id,
                start_frame: window[0].0,
                features,
                detections: window.iter().map(|&(_, d)| d).collect(),
                answers: window
                    .iter()
                    .map(|&(_, d)| manifest.detections[d].answers.clone())
                    .collect(),
            }
        })
        .collect()
}
