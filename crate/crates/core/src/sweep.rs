//! Threshold sweeps, macro aggregation and operating-point selection.
//!
//! A sweep never rescans the image per threshold. Probabilities are split by
//! ground-truth class and sorted once; because the grid is increasing, one
//! forward walk over each sorted list yields the count of values `<= T` for
//! every grid point, and the confusion counts follow by subtraction. Cost is
//! `O(N log N + n)` for `N` pixels and `n` thresholds.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    BinaryMask, ConfusionCounts, EvaluationTag, MetricTriple, ObjectiveWeights, ProbabilityMap,
    ThresholdGrid,
};

/// Whether images with an empty ground truth take part in the mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyTruthPolicy {
    #[default]
    Include,
    Exclude,
}

impl EmptyTruthPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            EmptyTruthPolicy::Include => "include",
            EmptyTruthPolicy::Exclude => "exclude",
        }
    }
}

impl std::fmt::Display for EmptyTruthPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EmptyTruthPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "include" => Ok(EmptyTruthPolicy::Include),
            "exclude" => Ok(EmptyTruthPolicy::Exclude),
            other => Err(Error::InvalidArgument(format!(
                "policy must be include or exclude, got {other:?}"
            ))),
        }
    }
}

/// Confusion counts of one image at every grid threshold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerImageCurve {
    pub id: String,
    pub counts: Vec<ConfusionCounts>,
}

impl PerImageCurve {
    /// Ground truth has no foreground. Constant along the curve.
    pub fn truth_is_empty(&self) -> bool {
        self.counts
            .first()
            .is_some_and(|c| c.truth_positives() == 0)
    }
}

/// One probability map with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub id: String,
    pub map: ProbabilityMap,
    pub truth: BinaryMask,
}

impl EvalSample {
    pub fn new(id: impl Into<String>, map: ProbabilityMap, truth: BinaryMask) -> Self {
        EvalSample {
            id: id.into(),
            map,
            truth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub grid: ThresholdGrid,
    pub per_threshold: Vec<MetricTriple>,
    pub objectives: Vec<f64>,
    pub optimal_index: usize,
    pub optimal_threshold: f64,
    pub weights: ObjectiveWeights,
    pub images_evaluated: usize,
    pub empty_truth_policy: EmptyTruthPolicy,
    pub tag: EvaluationTag,
}

impl SweepResult {
    pub fn optimal_metrics(&self) -> MetricTriple {
        self.per_threshold[self.optimal_index]
    }

    pub fn optimal_objective(&self) -> f64 {
        self.objectives[self.optimal_index]
    }
}

fn sorted_by_class(map: &ProbabilityMap, truth: &BinaryMask) -> (Vec<f32>, Vec<f32>) {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&p, &g) in map.values().iter().zip(truth.values()) {
        if g {
            fg.push(p);
        } else {
            bg.push(p);
        }
    }
    fg.sort_unstable_by(f32::total_cmp);
    bg.sort_unstable_by(f32::total_cmp);
    (fg, bg)
}

/// For each threshold (increasing), how many sorted values are `<= T`.
fn at_or_below(sorted: &[f32], thresholds: &[f64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(thresholds.len());
    let mut i = 0;
    for &t in thresholds {
        while i < sorted.len() && f64::from(sorted[i]) <= t {
            i += 1;
        }
        out.push(i as u64);
    }
    out
}

/// Confusion counts at every grid threshold, identical to binarizing and
/// counting at each threshold separately.
pub fn sweep_image(
    id: impl Into<String>,
    map: &ProbabilityMap,
    truth: &BinaryMask,
    grid: &ThresholdGrid,
) -> Result<PerImageCurve> {
    crate::types::ensure_same_shape(
        (map.width(), map.height()),
        (truth.width(), truth.height()),
    )?;
    let (fg, bg) = sorted_by_class(map, truth);
    let fg_below = at_or_below(&fg, grid.thresholds());
    let bg_below = at_or_below(&bg, grid.thresholds());
    let (n_fg, n_bg) = (fg.len() as u64, bg.len() as u64);
    let counts = fg_below
        .into_iter()
        .zip(bg_below)
        .map(|(f, b)| ConfusionCounts {
            tp: n_fg - f,
            fn_: f,
            fp: n_bg - b,
            tn: b,
        })
        .collect();
    Ok(PerImageCurve {
        id: id.into(),
        counts,
    })
}

/// Macro average: per-image metrics, then the unweighted mean over images.
///
/// Images are summed in id order so the result does not depend on the order
/// curves arrive in.
pub fn aggregate(
    curves: &[PerImageCurve],
    grid: &ThresholdGrid,
    policy: EmptyTruthPolicy,
) -> Result<Vec<MetricTriple>> {
    if curves.is_empty() {
        return Err(Error::EmptyDataset("no images to aggregate".into()));
    }
    if let Some(c) = curves.iter().find(|c| c.counts.len() != grid.len()) {
        return Err(Error::InvalidArgument(format!(
            "curve for {} has {} points, grid has {}",
            c.id,
            c.counts.len(),
            grid.len()
        )));
    }
    let mut kept: Vec<&PerImageCurve> = curves
        .iter()
        .filter(|c| policy == EmptyTruthPolicy::Include || !c.truth_is_empty())
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(
            "every image has an empty ground truth and the policy excludes them".into(),
        ));
    }
    kept.sort_by(|a, b| a.id.cmp(&b.id));

    let n = kept.len() as f64;
    (0..grid.len())
        .map(|i| {
            let mut sum = [0.0f64; 3];
            for curve in &kept {
                let m = MetricTriple::from_counts(&curve.counts[i])
                    .map_err(|e| Error::in_image(curve.id.clone(), e))?;
                sum[0] += m.dice;
                sum[1] += m.iou;
                sum[2] += m.pixel_accuracy;
            }
            Ok(MetricTriple::new(sum[0] / n, sum[1] / n, sum[2] / n))
        })
        .collect()
}

/// Weighted sum of the three metrics.
pub fn objective(triple: &MetricTriple, weights: &ObjectiveWeights) -> f64 {
    weights.dice() * triple.dice
        + weights.iou() * triple.iou
        + weights.pixel_accuracy() * triple.pixel_accuracy
}

/// Picks the grid threshold with the largest objective; ties go to the
/// lowest threshold.
pub fn optimize(
    per_threshold: &[MetricTriple],
    grid: &ThresholdGrid,
    weights: &ObjectiveWeights,
) -> Result<SweepResult> {
    if per_threshold.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} metric triples for a grid of {} thresholds",
            per_threshold.len(),
            grid.len()
        )));
    }
    let objectives: Vec<f64> = per_threshold.iter().map(|m| objective(m, weights)).collect();
    let mut best = 0;
    for (i, &v) in objectives.iter().enumerate().skip(1) {
        if v > objectives[best] {
            best = i;
        }
    }
    Ok(SweepResult {
        grid: grid.clone(),
        per_threshold: per_threshold.to_vec(),
        optimal_threshold: grid.thresholds()[best],
        optimal_index: best,
        objectives,
        weights: *weights,
        images_evaluated: 0,
        empty_truth_policy: EmptyTruthPolicy::default(),
        tag: EvaluationTag::default(),
    })
}

/// Per-image curves for a whole dataset, computed in parallel on the current
/// rayon pool. Output order follows input order.
pub fn sweep_dataset(samples: &[EvalSample], grid: &ThresholdGrid) -> Result<Vec<PerImageCurve>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no images to sweep".into()));
    }
    let mut seen = HashSet::with_capacity(samples.len());
    if let Some(dup) = samples.iter().find(|s| !seen.insert(s.id.as_str())) {
        return Err(Error::InvalidArgument(format!("duplicate image id {}", dup.id)));
    }
    let results: Vec<Result<PerImageCurve>> = samples
        .par_iter()
        .map(|s| {
            sweep_image(s.id.clone(), &s.map, &s.truth, grid)
                .map_err(|e| Error::in_image(s.id.clone(), e))
        })
        .collect();
    results.into_iter().collect()
}

/// `optimize(aggregate(sweep_image(...) for each sample))`.
pub fn run_sweep(
    samples: &[EvalSample],
    grid: &ThresholdGrid,
    weights: &ObjectiveWeights,
    policy: EmptyTruthPolicy,
) -> Result<SweepResult> {
    let curves = sweep_dataset(samples, grid)?;
    let images_evaluated = curves
        .iter()
        .filter(|c| policy == EmptyTruthPolicy::Include || !c.truth_is_empty())
        .count();
    let per_threshold = aggregate(&curves, grid, policy)?;
    let mut result = optimize(&per_threshold, grid, weights)?;
    result.images_evaluated = images_evaluated;
    result.empty_truth_policy = policy;
    Ok(result)
}
