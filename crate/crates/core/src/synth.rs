//! Synthetic masks and probability maps.
//!
//! Masks are unions of rotated ellipses. Probability maps start from the
//! mask, get a box blur and uniform noise, and can then be pushed through a
//! monotone piecewise-linear curve that moves the image's Dice-optimal cut
//! onto a chosen "planted" threshold. Binarization only depends on the order
//! of values, so the monotone remap keeps the Dice curve's shape and shifts
//! its peak to the plant. Every planted sample is re-checked by brute force.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{binarize, confusion, dice};
use crate::types::{BinaryMask, ProbabilityMap, ThresholdGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Chance that an image contains any foreground.
    pub presence_probability: f64,
    pub blob_count: (u32, u32),
    /// Minor semi-axis range, pixels.
    pub blob_radius: (f64, f64),
    /// Major/minor axis ratio range.
    pub elongation: (f64, f64),
    pub blur_radius: usize,
    pub noise_amplitude: f64,
    /// Threshold to make Dice-optimal per image; `None` leaves the degraded
    /// map uncompressed.
    pub planted_threshold: Option<f64>,
    /// Step of the grid used to verify the plant.
    pub verify_step: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            width: 256,
            height: 256,
            presence_probability: 0.6,
            blob_count: (1, 3),
            blob_radius: (5.0, 10.0),
            elongation: (2.0, 4.0),
            blur_radius: 2,
            noise_amplitude: 0.2,
            planted_threshold: None,
            verify_step: 0.01,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synth spec: {m}")));
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if !(0.0..=1.0).contains(&self.presence_probability) {
            return bad("presence probability must be in [0, 1]");
        }
        if self.blob_count.0 > self.blob_count.1 {
            return bad("blob count range is inverted");
        }
        let (r0, r1) = self.blob_radius;
        if !(r0.is_finite() && r1.is_finite() && 0.0 <= r0 && r0 <= r1) {
            return bad("blob radius range must be non-negative and ordered");
        }
        let (e0, e1) = self.elongation;
        if !(e0.is_finite() && e1.is_finite() && 1.0 <= e0 && e0 <= e1) {
            return bad("elongation range must be ordered and at least 1");
        }
        if !(self.noise_amplitude.is_finite() && self.noise_amplitude >= 0.0) {
            return bad("noise amplitude must be non-negative");
        }
        if let Some(t) = self.planted_threshold {
            if !(t > 0.0 && t < 1.0) {
                return bad("planted threshold must be in (0, 1)");
            }
        }
        if !(self.verify_step > 0.0 && self.verify_step < 0.5) {
            return bad("verification step must be in (0, 0.5)");
        }
        Ok(())
    }

    fn rng(&self, index: u64, lane: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_mul(2).wrapping_add(lane));
        rng
    }

    fn verify_grid(&self) -> ThresholdGrid {
        ThresholdGrid::range(self.verify_step, 1.0 - self.verify_step, self.verify_step)
            .expect("step validated")
    }
}

/// Ground-truth mask for sample `index`.
pub fn gen_mask(spec: &SynthSpec, index: u64) -> BinaryMask {
    let (w, h) = (spec.width, spec.height);
    let mut rng = spec.rng(index, 0);
    let mut values = vec![false; w * h];
    if rng.gen::<f64>() < spec.presence_probability {
        let count = rng.gen_range(spec.blob_count.0..=spec.blob_count.1);
        for _ in 0..count {
            let minor = rng.gen_range(spec.blob_radius.0..=spec.blob_radius.1).max(0.5);
            let major = minor * rng.gen_range(spec.elongation.0..=spec.elongation.1);
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            let cx = rng.gen_range(0..w) as f64;
            let cy = rng.gen_range(0..h) as f64;
            paint_ellipse(&mut values, w, h, (cx, cy), major, minor, angle);
        }
    }
    BinaryMask::new(w, h, values).expect("spec dimensions")
}

fn paint_ellipse(
    values: &mut [bool],
    w: usize,
    h: usize,
    (cx, cy): (f64, f64),
    major: f64,
    minor: f64,
    angle: f64,
) {
    let (sin, cos) = angle.sin_cos();
    let reach = major.ceil() as isize;
    let (x0, x1) = (cx as isize - reach, cx as isize + reach);
    let (y0, y1) = (cy as isize - reach, cy as isize + reach);
    for y in y0.max(0)..=y1.min(h as isize - 1) {
        for x in x0.max(0)..=x1.min(w as isize - 1) {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let u = (dx * cos + dy * sin) / major;
            let v = (-dx * sin + dy * cos) / minor;
            if u * u + v * v <= 1.0 {
                values[y as usize * w + x as usize] = true;
            }
        }
    }
}

/// Mean over the `(2r+1)^2` window, clipped to the image.
fn box_blur(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return src.to_vec();
    }
    let stride = w + 1;
    let mut integral = vec![0.0; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += src[y * w + x];
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (ya, yb) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (xa, xb) = (x.saturating_sub(r), (x + r + 1).min(w));
            let sum = integral[yb * stride + xb] - integral[ya * stride + xb]
                - integral[yb * stride + xa]
                + integral[ya * stride + xa];
            out.push(sum / ((yb - ya) * (xb - xa)) as f64);
        }
    }
    out
}

/// Threshold midway inside the interval of thresholds that maximise Dice.
///
/// Thresholds between consecutive distinct values give the same prediction,
/// so only one candidate per interval is scored. Ties keep the lowest.
fn dice_optimal_cut(values: &[f32], truth: &BinaryMask) -> f64 {
    let mut labelled: Vec<(f32, bool)> = values
        .iter()
        .copied()
        .zip(truth.values().iter().copied())
        .collect();
    labelled.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let n_fg = labelled.iter().filter(|(_, g)| *g).count() as u64;
    let n_bg = labelled.len() as u64 - n_fg;

    let score = |fg_below: u64, bg_below: u64| {
        let tp = n_fg - fg_below;
        let fp = n_bg - bg_below;
        dice(&crate::types::ConfusionCounts::new(tp, fp, bg_below, fg_below))
    };

    let first = labelled[0].0 as f64;
    // predicting everything is reachable only when no value sits at 0
    let mut best = if first > 0.0 {
        Some((score(0, 0), first / 2.0))
    } else {
        None
    };

    let (mut fg_below, mut bg_below) = (0u64, 0u64);
    let mut i = 0;
    while i < labelled.len() {
        let v = labelled[i].0;
        while i < labelled.len() && labelled[i].0 == v {
            if labelled[i].1 {
                fg_below += 1;
            } else {
                bg_below += 1;
            }
            i += 1;
        }
        let upper = labelled.get(i).map_or(1.0, |next| next.0 as f64);
        let cut = if i == labelled.len() && v as f64 >= 1.0 {
            1.0
        } else {
            (v as f64 + upper) / 2.0
        };
        let s = score(fg_below, bg_below);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, cut));
        }
    }
    best.expect("non-empty image").1
}

/// Largest f32 whose value does not exceed `t`, and smallest one above it.
fn f32_bracket(t: f64) -> (f32, f32) {
    let mut lo = t as f32;
    while f64::from(lo) > t {
        lo = f32::from_bits(lo.to_bits() - 1);
    }
    let mut hi = lo;
    while f64::from(hi) <= t {
        hi = f32::from_bits(hi.to_bits() + 1);
    }
    (lo, hi)
}

/// Monotone remap sending `cut` to `plant`. Values at or below the cut stay
/// at or below the plant after f32 rounding; values above stay above.
fn plant(values: &[f32], cut: f64, plant: f64) -> Vec<f32> {
    let (at_most, above) = f32_bracket(plant);
    values
        .iter()
        .map(|&v| {
            let v = f64::from(v);
            if v <= cut {
                ((plant * v / cut) as f32).min(at_most)
            } else {
                ((plant + (1.0 - plant) * (v - cut) / (1.0 - cut)) as f32).clamp(above, 1.0)
            }
        })
        .collect()
}

/// Degraded prediction for `mask`. Deterministic in `(spec, index)`.
pub fn gen_probability_map(mask: &BinaryMask, spec: &SynthSpec, index: u64) -> ProbabilityMap {
    let (w, h) = (mask.width(), mask.height());
    let base: Vec<f64> = mask.values().iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    let mut values = box_blur(&base, w, h, spec.blur_radius);
    if spec.noise_amplitude > 0.0 {
        let mut rng = spec.rng(index, 1);
        let a = spec.noise_amplitude;
        for v in &mut values {
            *v += rng.gen_range(-a..=a);
        }
    }
    let mut degraded: Vec<f32> = values.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    if let Some(t) = spec.planted_threshold {
        let cut = dice_optimal_cut(&degraded, mask);
        degraded = plant(&degraded, cut, t);
    }
    ProbabilityMap::new(w, h, degraded).expect("values clamped to [0, 1]")
}

/// One generated image with its plant metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub index: u64,
    pub mask: BinaryMask,
    pub map: ProbabilityMap,
    pub planted_threshold: Option<f64>,
    /// Lowest verification-grid threshold attaining this image's best Dice.
    pub best_grid_threshold: Option<f64>,
}

/// Per-threshold Dice of one image over `grid`, by direct binarization.
fn dice_curve(map: &ProbabilityMap, truth: &BinaryMask, grid: &ThresholdGrid) -> Result<Vec<f64>> {
    grid.thresholds()
        .iter()
        .map(|&t| Ok(dice(&confusion(&binarize(map, t)?, truth)?)))
        .collect()
}

/// Generates sample `index` and, when a plant is set, checks by brute force
/// that a verification-grid threshold within one step of the plant attains
/// the image's best Dice.
pub fn gen_sample(spec: &SynthSpec, index: u64) -> Result<SynthSample> {
    spec.validate()?;
    let mask = gen_mask(spec, index);
    let map = gen_probability_map(&mask, spec, index);
    let mut best_grid_threshold = None;
    if let Some(t) = spec.planted_threshold {
        let grid = spec.verify_grid();
        let curve = dice_curve(&map, &mask, &grid)?;
        let best = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lowest = grid.thresholds()[curve.iter().position(|&d| d == best).expect("max exists")];
        best_grid_threshold = Some(lowest);
        let near = grid
            .thresholds()
            .iter()
            .zip(&curve)
            .any(|(&g, &d)| (g - t).abs() <= spec.verify_step + 1e-9 && d == best);
        if !near {
            return Err(Error::PlantVerification {
                index,
                reason: format!("best Dice {best:.6} first reached at {lowest}, plant {t}"),
            });
        }
    }
    Ok(SynthSample {
        index,
        mask,
        map,
        planted_threshold: spec.planted_threshold,
        best_grid_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            seed,
            width: 64,
            height: 64,
            ..Default::default()
        }
    }

    #[test]
    fn absent_nerve_gives_empty_mask() {
        let spec = SynthSpec { presence_probability: 0.0, ..small(3) };
        for i in 0..20 {
            assert_eq!(gen_mask(&spec, i).foreground_count(), 0);
        }
    }

    #[test]
    fn masks_are_deterministic_and_vary() {
        let spec = SynthSpec { presence_probability: 1.0, ..small(11) };
        assert_eq!(gen_mask(&spec, 4), gen_mask(&spec, 4));
        let distinct: std::collections::HashSet<_> = (0..10).map(|i| gen_mask(&spec, i)).collect();
        assert!(distinct.len() > 5);
    }

    #[test]
    fn present_masks_have_bounded_area() {
        let spec = SynthSpec {
            presence_probability: 1.0,
            blob_radius: (5.0, 10.0),
            ..SynthSpec::default()
        };
        // count <= 3, each ellipse <= pi * 40 * 10
        let bound = 3.0 * std::f64::consts::PI * 400.0 / (256.0 * 256.0);
        assert!(bound < 0.5);
        for i in 0..30 {
            let m = gen_mask(&spec, i);
            let frac = m.foreground_count() as f64 / m.len() as f64;
            assert!(frac > 0.0 && frac <= bound, "sample {i}: {frac}");
        }
    }

    #[test]
    fn clean_map_reproduces_mask() {
        let spec = SynthSpec {
            blur_radius: 0,
            noise_amplitude: 0.0,
            planted_threshold: None,
            presence_probability: 1.0,
            ..small(5)
        };
        for i in 0..5 {
            let mask = gen_mask(&spec, i);
            let map = gen_probability_map(&mask, &spec, i);
            for t in [0.001, 0.2, 0.5, 0.999] {
                assert_eq!(binarize(&map, t).unwrap(), mask);
            }
        }
    }

    #[test]
    fn maps_are_deterministic() {
        let spec = SynthSpec { planted_threshold: Some(0.3), ..small(8) };
        let a = gen_sample(&spec, 2).unwrap();
        let b = gen_sample(&spec, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plant_is_verified_per_image() {
        for plant_at in [0.3, 0.55, 0.8] {
            let spec = SynthSpec { planted_threshold: Some(plant_at), ..small(21) };
            for i in 0..30 {
                let s = gen_sample(&spec, i).unwrap();
                let curve = dice_curve(&s.map, &s.mask, &spec.verify_grid()).unwrap();
                let best = curve.iter().cloned().fold(0.0, f64::max);
                let k = spec.verify_grid().thresholds().iter().position(|&g| g == plant_at).unwrap();
                assert_eq!(curve[k], best, "plant {plant_at} sample {i}");
            }
        }
    }

    #[test]
    fn f32_bracket_straddles() {
        for t in [0.3, 0.14, 0.5, 0.01] {
            let (lo, hi) = f32_bracket(t);
            assert!(f64::from(lo) <= t && f64::from(hi) > t);
            assert_eq!(hi.to_bits(), lo.to_bits() + 1);
        }
    }

    #[test]
    fn box_blur_preserves_constants() {
        let src = vec![0.7; 35];
        assert!(box_blur(&src, 7, 5, 2).iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(SynthSpec { presence_probability: 1.2, ..Default::default() }.validate().is_err());
        assert!(SynthSpec { planted_threshold: Some(1.0), ..Default::default() }.validate().is_err());
        assert!(SynthSpec { blob_count: (3, 1), ..Default::default() }.validate().is_err());
        assert!(SynthSpec { width: 0, ..Default::default() }.validate().is_err());
    }
}
