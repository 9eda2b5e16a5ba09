//! Shared domain types.
//!
//! All rasters are row-major with the origin at the top-left pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "dimensions must be positive, got {width}x{height}"
        )));
    }
    let expected = width.checked_mul(height).ok_or_else(|| {
        Error::InvalidArgument(format!("dimensions {width}x{height} overflow"))
    })?;
    if len != expected {
        return Err(Error::InvalidArgument(format!(
            "{width}x{height} raster needs {expected} values, got {len}"
        )));
    }
    Ok(())
}

/// Per-pixel foreground probabilities, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidArgument(format!(
                "probability at index {i} is {v}, outside [0, 1]"
            )));
        }
        Ok(ProbabilityMap {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Two-valued raster; `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        Ok(BinaryMask {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    /// Builds a mask from a per-pixel predicate `f(x, y)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        check_dims(width, height, width.saturating_mul(height))?;
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Ok(BinaryMask {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        ensure_same_shape((self.width, self.height), (other.width, other.height))
    }

    /// Pixelwise inversion. Turns a prediction into its predicted background
    /// and a ground truth into its background.
    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| !v).collect(),
        }
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(&a, &b)| !a || b)
    }
}

pub(crate) fn ensure_same_shape(left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::Shape {
            left_w: left.0,
            left_h: left.1,
            right_w: right.0,
            right_h: right.1,
        })
    }
}

/// Pixel tallies of a prediction against a ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Ground-truth foreground pixel count.
    pub fn truth_positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn predicted_positives(&self) -> u64 {
        self.tp + self.fp
    }
}

/// Dice, IoU and pixel accuracy for one image or one aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub dice: f64,
    pub iou: f64,
    pub pixel_accuracy: f64,
}

impl MetricTriple {
    pub fn new(dice: f64, iou: f64, pixel_accuracy: f64) -> Self {
        MetricTriple {
            dice,
            iou,
            pixel_accuracy,
        }
    }
}

/// Objective weights for Dice, IoU and pixel accuracy, normalized to sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveWeights {
    dice: f64,
    iou: f64,
    pixel_accuracy: f64,
}

impl ObjectiveWeights {
    pub fn new(dice: f64, iou: f64, pixel_accuracy: f64) -> Result<Self> {
        let raw = [dice, iou, pixel_accuracy];
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weights must be finite and non-negative, got {dice},{iou},{pixel_accuracy}"
            )));
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidArgument(
                "at least one weight must be positive".into(),
            ));
        }
        Ok(ObjectiveWeights {
            dice: dice / sum,
            iou: iou / sum,
            pixel_accuracy: pixel_accuracy / sum,
        })
    }

    /// Equal weighting. This is a tool default, not a recommended setting.
    pub fn equal() -> Self {
        Self::new(1.0, 1.0, 1.0).expect("positive weights")
    }

    pub fn dice_only() -> Self {
        Self::new(1.0, 0.0, 0.0).expect("positive weights")
    }

    pub fn dice(&self) -> f64 {
        self.dice
    }

    pub fn iou(&self) -> f64 {
        self.iou
    }

    pub fn pixel_accuracy(&self) -> f64 {
        self.pixel_accuracy
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.dice, self.iou, self.pixel_accuracy]
    }
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self::equal()
    }
}

impl std::str::FromStr for ObjectiveWeights {
    type Err = Error;

    /// Parses `d,i,p`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "weights must be three comma-separated numbers, got {s:?}"
            )));
        }
        let mut w = [0.0; 3];
        for (slot, p) in w.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad weight {p:?}")))?;
        }
        ObjectiveWeights::new(w[0], w[1], w[2])
    }
}

/// Strictly increasing, non-empty set of thresholds in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdGrid(Vec<f64>);

impl ThresholdGrid {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::InvalidArgument("threshold grid is empty".into()));
        }
        if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::InvalidArgument(format!(
                "threshold {t} outside [0, 1]"
            )));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "thresholds must be strictly increasing".into(),
            ));
        }
        Ok(ThresholdGrid(thresholds))
    }

    /// `start, start + step, ...` up to and including `stop` (within half a step).
    ///
    /// Points are rounded to 12 decimals so `0.01 * 30` comes out as the
    /// literal `0.30`.
    pub fn range(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(Error::InvalidArgument("grid bounds must be finite".into()));
        }
        if step <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "grid step must be positive, got {step}"
            )));
        }
        if start > stop {
            return Err(Error::InvalidArgument(format!(
                "grid start {start} exceeds stop {stop}"
            )));
        }
        let n = ((stop - start) / step + 0.5).floor() as usize + 1;
        let points = (0..n)
            .map(|i| round_to(start + i as f64 * step, 12))
            .collect();
        Self::new(points)
    }

    pub fn single(threshold: f64) -> Result<Self> {
        Self::new(vec![threshold])
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ThresholdGrid {
    /// 0.01 to 0.99 in steps of 0.01.
    fn default() -> Self {
        Self::range(0.01, 0.99, 0.01).expect("valid default grid")
    }
}

impl TryFrom<Vec<f64>> for ThresholdGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ThresholdGrid> for Vec<f64> {
    fn from(g: ThresholdGrid) -> Self {
        g.0
    }
}

impl std::str::FromStr for ThresholdGrid {
    type Err = Error;

    /// Parses `start:stop:step`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "grid must be start:stop:step, got {s:?}"
            )));
        }
        let mut v = [0.0; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad grid value {p:?}")))?;
        }
        ThresholdGrid::range(v[0], v[1], v[2])
    }
}

pub(crate) fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).round() / scale
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    #[default]
    Unspecified,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unspecified => "unspecified",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "unspecified" | "" => Ok(Split::Unspecified),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// Descriptive label attached to an evaluation. Never affects computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvaluationTag {
    pub epoch: Option<u32>,
    pub split: Split,
}
