//! Evaluation and decision-threshold selection for binary segmentation.
//!
//! A model's per-pixel probabilities are binarized against a grid of
//! thresholds and scored against ground truth with Dice, IoU and pixel
//! accuracy. The threshold maximizing a weighted sum of the three is
//! selected. Around that core sit the preprocessing and morphological
//! clean-up stages, a synthetic data generator with a known optimal
//! threshold, and the file formats and commands used by the `segthresh`
//! binary.

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod morphology;
pub mod preprocess;
pub mod report;
pub mod sweep;
pub mod synth;
pub mod types;

pub use error::{Error, PmapFault, Result};
pub use metrics::{binarize, confusion, dice, evaluate_pair, iou, pixel_accuracy};
pub use sweep::{
    aggregate, objective, optimize, run_sweep, sweep_image, EmptyTruthPolicy, EvalSample,
    PerImageCurve, SweepResult,
};
pub use types::{
    BinaryMask, ConfusionCounts, EvaluationTag, MetricTriple, ObjectiveWeights, ProbabilityMap,
    Split, ThresholdGrid,
};
