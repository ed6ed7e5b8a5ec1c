//! Axis-aligned box geometry and the crop preprocessing applied before
//! feature extraction (neighbor merging, short-side enlargement).

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Side length crops are resized to before feature extraction. Recorded as
/// metadata only; no pixels are touched in this crate.
pub const CROP_SIZE: u32 = 224;

/// Pixel-space box with `x1 < x2` and `y1 < y2`.
///
/// Serialized as a 4-element array `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, IngestError> {
        let b = BBox { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let all = [self.x1, self.y1, self.x2, self.y2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(IngestError::NonFinite {
                what: format!("bbox {all:?}"),
            });
        }
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(IngestError::Invalid(format!(
                "degenerate bbox {all:?}: need x1 < x2 and y1 < y2"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// Clamp to `[0, width] x [0, height]`. May produce a degenerate box if
    /// the input lies entirely outside the image.
    pub fn clamp_to(&self, width: f64, height: f64) -> BBox {
        BBox {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = IngestError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Repeatedly replaces any pair with IoU above `tau_merge` by its union until
/// no such pair remains. Output is sorted by `(x1, y1, x2, y2)`.
pub fn merge_overlapping(boxes: &[BBox], tau_merge: f64) -> Vec<BBox> {
    let mut out: Vec<BBox> = boxes.to_vec();
    sort_boxes(&mut out);
    'outer: loop {
        for i in 0..out.len() {
            for j in (i + 1)..out.len() {
                if iou(&out[i], &out[j]) > tau_merge {
                    let merged = out[i].union(&out[j]);
                    out.swap_remove(j);
                    out[i] = merged;
                    sort_boxes(&mut out);
                    continue 'outer;
                }
            }
        }
        break;
    }
    out
}

fn sort_boxes(boxes: &mut [BBox]) {
    boxes.sort_by(|a, b| {
        a.x1.total_cmp(&b.x1)
            .then(a.y1.total_cmp(&b.y1))
            .then(a.x2.total_cmp(&b.x2))
            .then(a.y2.total_cmp(&b.y2))
    });
}

/// Expand the short side symmetrically to match the long side, then clamp to
/// the image. The result is square unless clamping cut it at a border.
pub fn squarify(b: &BBox, image_width: f64, image_height: f64) -> BBox {
    let (w, h) = (b.width(), b.height());
    let grown = if w > h {
        let cy = 0.5 * (b.y1 + b.y2);
        BBox {
            y1: cy - 0.5 * w,
            y2: cy + 0.5 * w,
            ..*b
        }
    } else if h > w {
        let cx = 0.5 * (b.x1 + b.x2);
        BBox {
            x1: cx - 0.5 * h,
            x2: cx + 0.5 * h,
            ..*b
        }
    } else {
        *b
    };
    grown.clamp_to(image_width, image_height)
}
