//! Frame-level ROC-AUC and average precision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("AUC needs both anomalous and normal frames")]
    SingleClass,
    #[error("average precision needs at least one anomalous frame")]
    NoPositives,
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    pub scores: Vec<f64>,
    /// 1 = anomalous
    pub labels: Vec<u8>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, EvalError> {
        if scores.len() != labels.len() {
            return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(EvalError::NonFinite(i));
        }
        Ok(LabeledScores { scores, labels })
    }

    fn counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l != 0).count();
        (pos, self.labels.len() - pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve over every distinct score, highest threshold first. Starts at
/// `(0, 0)` with an infinite threshold.
pub fn roc_curve(data: &LabeledScores) -> Result<Vec<RocPoint>, EvalError> {
    let (pos, neg) = data.counts();
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..data.scores.len()).collect();
    order.sort_by(|&a, &b| data.scores[b].total_cmp(&data.scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = data.scores[order[i]];
        // a tie group crosses the threshold together
        while i < order.len() && data.scores[order[i]] == threshold {
            if data.labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC curve.
pub fn area_under(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5)
        .sum()
}

pub fn auc(data: &LabeledScores) -> Result<f64, EvalError> {
    Ok(area_under(&roc_curve(data)?))
}

/// Concatenates all videos and computes a single ROC-AUC.
pub fn micro_auc(datasets: &[LabeledScores]) -> Result<f64, EvalError> {
    auc(&concat(datasets))
}

/// Mean per-video AUC over videos that contain both classes.
pub fn macro_auc(datasets: &[LabeledScores]) -> Option<f64> {
    let per: Vec<f64> = datasets.iter().filter_map(|d| auc(d).ok()).collect();
    if per.is_empty() {
        None
    } else {
        Some(per.iter().sum::<f64>() / per.len() as f64)
    }
}

pub fn concat(datasets: &[LabeledScores]) -> LabeledScores {
    LabeledScores {
        scores: datasets.iter().flat_map(|d| d.scores.iter().copied()).collect(),
        labels: datasets.iter().flat_map(|d| d.labels.iter().copied()).collect(),
    }
}

/// Non-interpolated average precision: mean of the precision at the rank of
/// every positive. Ranks come from a stable descending sort, so tied scores
/// keep their input order.
pub fn average_precision(data: &LabeledScores) -> Result<f64, EvalError> {
    let (pos, _) = data.counts();
    if pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let mut order: Vec<usize> = (0..data.scores.len()).collect();
    order.sort_by(|&a, &b| data.scores[b].total_cmp(&data.scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if data.labels[i] != 0 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / pos as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ls(scores: &[f64], labels: &[u8]) -> LabeledScores {
        LabeledScores::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    /// P(s+ > s-) + 0.5 P(s+ = s-) over all positive/negative pairs.
    fn pairwise(d: &LabeledScores) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..d.scores.len() {
            for j in 0..d.scores.len() {
                if d.labels[i] == 1 && d.labels[j] == 0 {
                    den += 1.0;
                    if d.scores[i] > d.scores[j] {
                        num += 1.0;
                    } else if d.scores[i] == d.scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(micro_auc(&[ls(&[0.1, 0.9], &[0, 1])]).unwrap(), 1.0);
        assert_eq!(micro_auc(&[ls(&[0.9, 0.1], &[0, 1])]).unwrap(), 0.0);
        let d = ls(&[0.2, 0.4, 0.4, 0.8], &[0, 0, 1, 1]);
        assert_eq!(micro_auc(&[d]).unwrap(), 0.875);
        assert_eq!(
            micro_auc(&[ls(&[0.3, 0.4], &[1, 1])]),
            Err(EvalError::SingleClass)
        );
    }

    #[test]
    fn micro_concatenates_videos() {
        // each video alone is perfect, but the score scales differ
        let a = ls(&[0.0, 0.5], &[0, 1]);
        let b = ls(&[0.6, 0.9], &[0, 1]);
        assert_eq!(macro_auc(&[a.clone(), b.clone()]), Some(1.0));
        assert_eq!(micro_auc(&[a, b]).unwrap(), 0.75);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&ls(&[0.9, 0.8, 0.1], &[1, 1, 0])).unwrap(), 1.0);
        assert_eq!(average_precision(&ls(&[0.9, 0.1], &[0, 1])).unwrap(), 0.5);
        let v = average_precision(&ls(&[0.9, 0.8, 0.7], &[1, 0, 1])).unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(
            average_precision(&ls(&[0.1], &[0])),
            Err(EvalError::NoPositives)
        );
        // ties keep input order: negative first costs precision
        assert_eq!(average_precision(&ls(&[0.5, 0.5], &[0, 1])).unwrap(), 0.5);
        assert_eq!(average_precision(&ls(&[0.5, 0.5], &[1, 0])).unwrap(), 1.0);
    }

    #[test]
    fn roc_points_monotone() {
        let d = ls(&[0.1, 0.4, 0.35, 0.8, 0.4], &[0, 0, 1, 1, 1]);
        let pts = roc_curve(&d).unwrap();
        assert_eq!(pts.len(), 5);
        assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in pts.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(LabeledScores::new(vec![0.1], vec![]).is_err());
        assert_eq!(
            LabeledScores::new(vec![0.0, f64::NAN], vec![0, 1]),
            Err(EvalError::NonFinite(1))
        );
    }

    fn arb_labeled(ties: bool) -> impl Strategy<Value = LabeledScores> {
        (2usize..200).prop_flat_map(move |n| {
            let score = if ties {
                (0u8..6).prop_map(|k| k as f64 / 5.0).boxed()
            } else {
                (-1e3..1e3f64).boxed()
            };
            (
                prop::collection::vec(score, n),
                prop::collection::vec(0u8..2, n),
            )
                .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
                .prop_map(|(s, l)| LabeledScores::new(s, l).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(150))]

        #[test]
        fn auc_matches_pairwise_oracle(d in arb_labeled(true)) {
            prop_assert!((auc(&d).unwrap() - pairwise(&d)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_increasing_transform(d in arb_labeled(true)) {
            let t = LabeledScores {
                scores: d.scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect(),
                labels: d.labels.clone(),
            };
            prop_assert!((auc(&d).unwrap() - auc(&t).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn negation_and_label_swap_complement(d in arb_labeled(false)) {
            let distinct = {
                let mut s = d.scores.clone();
                s.sort_by(f64::total_cmp);
                s.windows(2).all(|w| w[0] != w[1])
            };
            prop_assume!(distinct);
            let a = auc(&d).unwrap();
            let neg = LabeledScores {
                scores: d.scores.iter().map(|s| -s).collect(),
                labels: d.labels.clone(),
            };
            prop_assert!((a + auc(&neg).unwrap() - 1.0).abs() < 1e-12);
            let swapped = LabeledScores {
                scores: d.scores.clone(),
                labels: d.labels.iter().map(|l| 1 - l).collect(),
            };
            prop_assert!((auc(&swapped).unwrap() - (1.0 - a)).abs() < 1e-12);
        }

        #[test]
        fn ap_in_unit_interval(d in arb_labeled(true)) {
            let ap = average_precision(&d).unwrap();
            prop_assert!(ap > 0.0 && ap <= 1.0);
        }
    }
}
