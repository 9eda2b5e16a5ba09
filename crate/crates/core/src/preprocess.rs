//! Resizing, intensity normalization, mask binarization and seeded
//! augmentation.
//!
//! Geometric transforms use inverse mapping with pixel-centre alignment:
//! output pixel `(x, y)` samples the source at its own centre mapped back
//! through the transform. Reads outside the source clamp to the nearest
//! edge pixel. Images are sampled bilinearly, masks by nearest neighbour.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ensure_same_shape, BinaryMask, ProbabilityMap};

/// Single-channel intensities of arbitrary range.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} image cannot hold {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite intensity at index {i}"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Reinterprets an image already in `[0, 1]` as a probability map.
    pub fn to_probability_map(&self) -> Result<ProbabilityMap> {
        ProbabilityMap::new(
            self.width,
            self.height,
            self.values.iter().map(|&v| v as f32).collect(),
        )
    }
}

fn check_target(w: usize, h: usize) -> Result<()> {
    if w == 0 || h == 0 {
        Err(Error::InvalidArgument(format!(
            "target size must be positive, got {w}x{h}"
        )))
    } else {
        Ok(())
    }
}

fn bilinear(img: &GrayImage, sx: f64, sy: f64) -> f64 {
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    let sx = sx.clamp(0.0, max_x);
    let sy = sy.clamp(0.0, max_y);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn nearest(mask: &BinaryMask, sx: f64, sy: f64) -> bool {
    let x = sx.round().clamp(0.0, (mask.width() - 1) as f64) as usize;
    let y = sy.round().clamp(0.0, (mask.height() - 1) as f64) as usize;
    mask.get(x, y)
}

/// Bilinear resize with edge clamping.
pub fn resize_image(img: &GrayImage, target_w: usize, target_h: usize) -> Result<GrayImage> {
    check_target(target_w, target_h)?;
    if (target_w, target_h) == (img.width, img.height) {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / target_w as f64;
    let sy = img.height as f64 / target_h as f64;
    let mut values = Vec::with_capacity(target_w * target_h);
    for y in 0..target_h {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..target_w {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            values.push(bilinear(img, src_x, src_y));
        }
    }
    GrayImage::new(target_w, target_h, values)
}

/// Nearest-neighbour resize; the output stays strictly binary.
pub fn resize_mask(mask: &BinaryMask, target_w: usize, target_h: usize) -> Result<BinaryMask> {
    check_target(target_w, target_h)?;
    let sx = mask.width() as f64 / target_w as f64;
    let sy = mask.height() as f64 / target_h as f64;
    BinaryMask::from_fn(target_w, target_h, |x, y| {
        let src_x = (((x as f64 + 0.5) * sx).floor() as usize).min(mask.width() - 1);
        let src_y = (((y as f64 + 0.5) * sy).floor() as usize).min(mask.height() - 1);
        mask.get(src_x, src_y)
    })
}

/// Min-max normalization to `[0, 1]`. A constant image maps to all zeros.
pub fn normalize(img: &GrayImage) -> GrayImage {
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    let values = if range > 0.0 {
        img.values.iter().map(|&v| (v - lo) / range).collect()
    } else {
        vec![0.0; img.values.len()]
    };
    GrayImage {
        width: img.width,
        height: img.height,
        values,
    }
}

/// Foreground iff the normalized intensity exceeds 0.5.
///
/// A constant image has no contrast to normalize against; it is all
/// foreground when its value is positive and all background otherwise.
pub fn binarize_mask_image(img: &GrayImage) -> BinaryMask {
    let (lo, hi) = img.min_max();
    let values = if hi > lo {
        normalize(img).values.iter().map(|&v| v > 0.5).collect()
    } else {
        vec![lo > 0.0; img.values.len()]
    };
    BinaryMask::new(img.width, img.height, values).expect("same dimensions")
}

/// Random transform parameters for [`augment`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    pub seed: u64,
    /// Rotation angle drawn uniformly from `[-r, r]` degrees.
    pub rotation_degrees: f64,
    pub hflip_probability: f64,
    pub vflip_probability: f64,
    /// Additive shift drawn uniformly from `[-s, s]`, in normalized units.
    pub intensity_shift: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            seed: 0,
            rotation_degrees: 15.0,
            hflip_probability: 0.5,
            vflip_probability: 0.5,
            intensity_shift: 0.1,
        }
    }
}

impl AugmentationSpec {
    /// Leaves every input unchanged.
    pub fn identity(seed: u64) -> Self {
        AugmentationSpec {
            seed,
            rotation_degrees: 0.0,
            hflip_probability: 0.0,
            vflip_probability: 0.0,
            intensity_shift: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.hflip_probability, self.vflip_probability];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(
                "flip probabilities must be in [0, 1]".into(),
            ));
        }
        let ranges = [self.rotation_degrees, self.intensity_shift];
        if ranges.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidArgument(
                "augmentation ranges must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Transform parameters drawn for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationDraw {
    pub hflip: bool,
    pub vflip: bool,
    pub angle_degrees: f64,
    pub shift: f64,
}

impl AugmentationDraw {
    /// Draws from the substream keyed by `(spec.seed, sample_index)`. The four
    /// values are always drawn in the same order so the stream layout never
    /// depends on the spec's ranges.
    pub fn sample(spec: &AugmentationSpec, sample_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(sample_index);
        let u_h: f64 = rng.gen();
        let u_v: f64 = rng.gen();
        let u_a: f64 = rng.gen();
        let u_s: f64 = rng.gen();
        AugmentationDraw {
            hflip: u_h < spec.hflip_probability,
            vflip: u_v < spec.vflip_probability,
            angle_degrees: (2.0 * u_a - 1.0) * spec.rotation_degrees,
            shift: (2.0 * u_s - 1.0) * spec.intensity_shift,
        }
    }
}

fn flipped<T: Copy>(values: &[T], w: usize, h: usize, hflip: bool, vflip: bool) -> Vec<T> {
    let mut out = Vec::with_capacity(values.len());
    for y in 0..h {
        let sy = if vflip { h - 1 - y } else { y };
        for x in 0..w {
            let sx = if hflip { w - 1 - x } else { x };
            out.push(values[sy * w + sx]);
        }
    }
    out
}

/// Inverse-maps output pixel centres through a rotation about the image centre.
fn rotation_sources(w: usize, h: usize, degrees: f64) -> impl Iterator<Item = (f64, f64)> {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    (0..h).flat_map(move |y| {
        (0..w).map(move |x| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            (cos * dx + sin * dy + cx, -sin * dx + cos * dy + cy)
        })
    })
}

/// Applies a randomly drawn flip/rotation to both image and mask, and an
/// intensity shift (clamped to `[0, 1]`) to the image alone.
pub fn augment(
    img: &GrayImage,
    mask: &BinaryMask,
    spec: &AugmentationSpec,
    sample_index: u64,
) -> Result<(GrayImage, BinaryMask)> {
    spec.validate()?;
    ensure_same_shape((img.width, img.height), (mask.width(), mask.height()))?;
    let draw = AugmentationDraw::sample(spec, sample_index);
    Ok(apply_draw(img, mask, &draw))
}

pub fn apply_draw(img: &GrayImage, mask: &BinaryMask, draw: &AugmentationDraw) -> (GrayImage, BinaryMask) {
    let (w, h) = (img.width, img.height);
    let mut image = GrayImage {
        width: w,
        height: h,
        values: flipped(&img.values, w, h, draw.hflip, draw.vflip),
    };
    let mut out_mask = BinaryMask::new(w, h, flipped(mask.values(), w, h, draw.hflip, draw.vflip))
        .expect("same dimensions");

    if draw.angle_degrees != 0.0 {
        let values = rotation_sources(w, h, draw.angle_degrees)
            .map(|(sx, sy)| bilinear(&image, sx, sy))
            .collect();
        let bits = rotation_sources(w, h, draw.angle_degrees)
            .map(|(sx, sy)| nearest(&out_mask, sx, sy))
            .collect();
        image.values = values;
        out_mask = BinaryMask::new(w, h, bits).expect("same dimensions");
    }

    if draw.shift != 0.0 {
        for v in &mut image.values {
            *v = (*v + draw.shift).clamp(0.0, 1.0);
        }
    }
    (image, out_mask)
}
