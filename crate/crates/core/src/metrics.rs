//! Binarization and the overlap metrics.
//!
//! Every metric is a ratio of integer confusion counts; the only floating
//! point operation is the final division. When prediction and ground truth
//! are both empty, Dice and IoU are defined as 1.0: predicting "nothing"
//! on an image that contains nothing is a perfect answer.

use crate::error::{Error, Result};
use crate::types::{BinaryMask, ConfusionCounts, MetricTriple, ProbabilityMap};

pub(crate) fn check_threshold(threshold: f64) -> Result<()> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [0, 1]"
        )))
    }
}

/// Foreground iff `p > threshold`. A pixel exactly at the threshold is
/// background, so threshold 1.0 always gives an empty mask.
pub fn binarize(map: &ProbabilityMap, threshold: f64) -> Result<BinaryMask> {
    check_threshold(threshold)?;
    BinaryMask::new(
        map.width(),
        map.height(),
        map.values()
            .iter()
            .map(|&p| f64::from(p) > threshold)
            .collect(),
    )
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    pred.same_shape(truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.values().iter().zip(truth.values()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `2·tp / (2·tp + fp + fn)`, or 1.0 when both masks are empty.
pub fn dice(counts: &ConfusionCounts) -> f64 {
    let denom = 2 * counts.tp + counts.fp + counts.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * counts.tp) as f64 / denom as f64
    }
}

/// `tp / (tp + fp + fn)`, or 1.0 when both masks are empty.
pub fn iou(counts: &ConfusionCounts) -> f64 {
    let union = counts.tp + counts.fp + counts.fn_;
    if union == 0 {
        1.0
    } else {
        counts.tp as f64 / union as f64
    }
}

pub fn pixel_accuracy(counts: &ConfusionCounts) -> Result<f64> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "pixel accuracy of zero pixels".into(),
        ));
    }
    Ok((counts.tp + counts.tn) as f64 / total as f64)
}

impl MetricTriple {
    pub fn from_counts(counts: &ConfusionCounts) -> Result<Self> {
        Ok(MetricTriple {
            dice: dice(counts),
            iou: iou(counts),
            pixel_accuracy: pixel_accuracy(counts)?,
        })
    }
}

/// Binarize, count, score.
pub fn evaluate_pair(
    map: &ProbabilityMap,
    truth: &BinaryMask,
    threshold: f64,
) -> Result<MetricTriple> {
    let pred = binarize(map, threshold)?;
    MetricTriple::from_counts(&confusion(&pred, truth)?)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Naive per-pixel double loop, written without the counting helpers above.

    use crate::types::{BinaryMask, ProbabilityMap};

    pub fn counts(map: &ProbabilityMap, truth: &BinaryMask, t: f64) -> [u64; 4] {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for y in 0..map.height() {
            for x in 0..map.width() {
                let p = map.get(x, y) as f64 > t;
                let g = truth.get(x, y);
                if p && g {
                    tp += 1;
                } else if p {
                    fp += 1;
                } else if g {
                    fn_ += 1;
                } else {
                    tn += 1;
                }
            }
        }
        [tp, fp, tn, fn_]
    }

    pub fn metrics(map: &ProbabilityMap, truth: &BinaryMask, t: f64) -> (f64, f64, f64) {
        let [tp, fp, tn, fn_] = counts(map, truth, t);
        let inter = tp as f64;
        let pred = (tp + fp) as f64;
        let gt = (tp + fn_) as f64;
        let union = (tp + fp + fn_) as f64;
        let dice = if pred + gt == 0.0 { 1.0 } else { 2.0 * inter / (pred + gt) };
        let iou = if union == 0.0 { 1.0 } else { inter / union };
        let acc = (tp + tn) as f64 / (tp + fp + tn + fn_) as f64;
        (dice, iou, acc)
    }
}
