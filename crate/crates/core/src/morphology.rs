//! Binary morphology for mask clean-up.
//!
//! Pixels outside the image count as background for both erosion and
//! dilation. The `*_with_border` variants take the padding value explicitly;
//! the complement duality `dilate(m) = !erode(!m)` holds exactly only when
//! the erosion pads with the opposite value (foreground).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BinaryMask;

/// Odd-sized boolean neighbourhood anchored at its centre cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    width: usize,
    height: usize,
    cells: Vec<bool>,
    offsets: Vec<(isize, isize)>,
}

impl StructuringElement {
    pub fn new(width: usize, height: usize, cells: Vec<bool>) -> Result<Self> {
        if width % 2 == 0 || height % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "structuring element must have odd dimensions, got {width}x{height}"
            )));
        }
        if cells.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} structuring element needs {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        let (cx, cy) = (width / 2, height / 2);
        if !cells[cy * width + cx] {
            return Err(Error::InvalidArgument(
                "structuring element anchor must be set".into(),
            ));
        }
        let mut offsets = Vec::new();
        for y in 0..height {
            for x in 0..width {
                if cells[y * width + x] {
                    offsets.push((x as isize - cx as isize, y as isize - cy as isize));
                }
            }
        }
        Ok(StructuringElement {
            width,
            height,
            cells,
            offsets,
        })
    }

    /// 3x3 plus shape (4-connected).
    pub fn cross3() -> Self {
        Self::new(
            3,
            3,
            vec![false, true, false, true, true, true, false, true, false],
        )
        .expect("valid element")
    }

    pub fn square3() -> Self {
        Self::new(3, 3, vec![true; 9]).expect("valid element")
    }

    pub fn point() -> Self {
        Self::new(1, 1, vec![true]).expect("valid element")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    /// Set cells as `(dx, dy)` offsets from the anchor.
    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }

    /// Unchanged by point reflection through the anchor.
    pub fn is_symmetric(&self) -> bool {
        self.cells.iter().eq(self.cells.iter().rev())
    }

    pub fn reflected(&self) -> Self {
        Self::new(
            self.width,
            self.height,
            self.cells.iter().rev().copied().collect(),
        )
        .expect("reflection keeps the anchor")
    }
}

/// Named elements selectable from the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementShape {
    #[default]
    Cross3,
    Square3,
}

impl ElementShape {
    pub fn element(&self) -> StructuringElement {
        match self {
            ElementShape::Cross3 => StructuringElement::cross3(),
            ElementShape::Square3 => StructuringElement::square3(),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ElementShape::Cross3 => "cross3",
            ElementShape::Square3 => "square3",
        }
    }
}

impl std::str::FromStr for ElementShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross3" => Ok(ElementShape::Cross3),
            "square3" => Ok(ElementShape::Square3),
            other => Err(Error::InvalidArgument(format!(
                "structuring element must be cross3 or square3, got {other:?}"
            ))),
        }
    }
}

#[inline]
fn sample(mask: &BinaryMask, x: isize, y: isize, border: bool) -> bool {
    if x < 0 || y < 0 || x >= mask.width() as isize || y >= mask.height() as isize {
        border
    } else {
        mask.values()[y as usize * mask.width() + x as usize]
    }
}

fn neighbourhood(
    mask: &BinaryMask,
    offsets: &[(isize, isize)],
    border: bool,
    all: bool,
) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        let mut hits = offsets
            .iter()
            .map(|&(dx, dy)| sample(mask, x + dx, y + dy, border));
        if all {
            hits.all(|v| v)
        } else {
            hits.any(|v| v)
        }
    })
    .expect("same dimensions as a valid mask")
}

/// Foreground where every set element cell lands on foreground.
pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    erode_with_border(mask, se, false)
}

pub fn erode_with_border(mask: &BinaryMask, se: &StructuringElement, border: bool) -> BinaryMask {
    neighbourhood(mask, se.offsets(), border, true)
}

/// Foreground where the element, placed there, touches foreground.
///
/// Uses the reflected element (Minkowski sum) so opening and closing stay
/// idempotent for asymmetric elements too; for symmetric elements this is
/// the same as probing with the element directly.
pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    dilate_with_border(mask, se, false)
}

pub fn dilate_with_border(mask: &BinaryMask, se: &StructuringElement, border: bool) -> BinaryMask {
    let reflected: Vec<(isize, isize)> = se.offsets().iter().map(|&(dx, dy)| (-dx, -dy)).collect();
    neighbourhood(mask, &reflected, border, false)
}

/// Erode then dilate; removes specks smaller than the element.
pub fn open(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    dilate(&erode(mask, se), se)
}

/// Dilate then erode; bridges gaps narrower than the element.
pub fn close(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    erode(&dilate(mask, se), se)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostprocessOrder {
    #[default]
    OpenClose,
    CloseOpen,
}

impl PostprocessOrder {
    pub fn as_str(&self) -> &'static str {
        match self {
            PostprocessOrder::OpenClose => "open-close",
            PostprocessOrder::CloseOpen => "close-open",
        }
    }
}

impl std::str::FromStr for PostprocessOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open-close" => Ok(PostprocessOrder::OpenClose),
            "close-open" => Ok(PostprocessOrder::CloseOpen),
            other => Err(Error::InvalidArgument(format!(
                "order must be open-close or close-open, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostprocessPlan {
    pub shape: ElementShape,
    pub order: PostprocessOrder,
}

impl PostprocessPlan {
    pub fn apply(&self, mask: &BinaryMask) -> BinaryMask {
        let se = self.shape.element();
        match self.order {
            PostprocessOrder::OpenClose => close(&open(mask, &se), &se),
            PostprocessOrder::CloseOpen => open(&close(mask, &se), &se),
        }
    }
}

/// Opening then closing with the 3x3 cross.
pub fn postprocess(mask: &BinaryMask) -> BinaryMask {
    PostprocessPlan::default().apply(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force reference: scans the full element grid cell by cell.
    fn naive(mask: &BinaryMask, se: &StructuringElement, erode: bool) -> BinaryMask {
        let (cx, cy) = (se.width() as isize / 2, se.height() as isize / 2);
        BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
            let mut all = true;
            let mut any = false;
            for j in 0..se.height() as isize {
                for i in 0..se.width() as isize {
                    if !se.cells()[(j * se.width() as isize + i) as usize] {
                        continue;
                    }
                    let (dx, dy) = (i - cx, j - cy);
                    let (sx, sy) = if erode {
                        (x as isize + dx, y as isize + dy)
                    } else {
                        (x as isize - dx, y as isize - dy)
                    };
                    let inside = sx >= 0
                        && sy >= 0
                        && sx < mask.width() as isize
                        && sy < mask.height() as isize;
                    let v = inside && mask.get(sx as usize, sy as usize);
                    all &= v;
                    any |= v;
                }
            }
            if erode {
                all
            } else {
                any
            }
        })
        .unwrap()
    }

    fn from_rows(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#').unwrap()
    }

    #[test]
    fn element_validation() {
        assert!(StructuringElement::new(2, 3, vec![true; 6]).is_err());
        assert!(StructuringElement::new(3, 3, vec![true; 8]).is_err());
        let mut no_anchor = vec![true; 9];
        no_anchor[4] = false;
        assert!(StructuringElement::new(3, 3, no_anchor).is_err());
        assert!(StructuringElement::cross3().is_symmetric());
        assert_eq!(StructuringElement::cross3().offsets().len(), 5);
    }

    #[test]
    fn erode_examples() {
        let all = BinaryMask::filled(3, 3, true).unwrap();
        let e = erode(&all, &StructuringElement::cross3());
        assert_eq!(e, BinaryMask::from_fn(3, 3, |x, y| x == 1 && y == 1).unwrap());
        assert_eq!(e, naive(&all, &StructuringElement::cross3(), true));

        let empty = BinaryMask::filled(5, 4, false).unwrap();
        assert_eq!(erode(&empty, &StructuringElement::cross3()), empty);

        let m = from_rows(&["#.#", "##.", ".##"]);
        assert_eq!(erode(&m, &StructuringElement::point()), m);
    }

    #[test]
    fn dilate_examples() {
        let dot = BinaryMask::from_fn(5, 5, |x, y| x == 2 && y == 2).unwrap();
        let expected = from_rows(&[".....", "..#..", ".###.", "..#..", "....."]);
        assert_eq!(dilate(&dot, &StructuringElement::cross3()), expected);

        let empty = BinaryMask::filled(5, 5, false).unwrap();
        assert_eq!(dilate(&empty, &StructuringElement::cross3()), empty);
        let full = BinaryMask::filled(5, 5, true).unwrap();
        assert_eq!(dilate(&full, &StructuringElement::cross3()), full);
    }

    #[test]
    fn open_removes_isolated_pixel() {
        let dot = BinaryMask::from_fn(7, 7, |x, y| x == 3 && y == 3).unwrap();
        assert_eq!(open(&dot, &StructuringElement::cross3()).foreground_count(), 0);
    }

    #[test]
    fn close_fills_one_pixel_gap() {
        let holed = from_rows(&[
            ".........",
            ".........",
            ".#######.",
            ".###.###.",
            ".#######.",
            ".........",
            ".........",
        ]);
        let bar = from_rows(&[
            ".........",
            ".........",
            ".#######.",
            ".#######.",
            ".#######.",
            ".........",
            ".........",
        ]);
        let se = StructuringElement::cross3();
        assert_eq!(naive(&naive(&holed, &se, false), &se, true), bar);
        assert_eq!(close(&holed, &se), bar);

        // A cut through the whole bar: the cross only bridges the middle row,
        // the square bridges all three.
        let cut = from_rows(&[
            ".........",
            ".........",
            ".###.###.",
            ".###.###.",
            ".###.###.",
            ".........",
            ".........",
        ]);
        let middle = from_rows(&[
            ".........",
            ".........",
            ".###.###.",
            ".#######.",
            ".###.###.",
            ".........",
            ".........",
        ]);
        assert_eq!(naive(&naive(&cut, &se, false), &se, true), middle);
        assert_eq!(close(&cut, &se), middle);
        assert_eq!(close(&cut, &StructuringElement::square3()), bar);
    }

    #[test]
    fn postprocess_rectangle() {
        // 6x6 block in a 10x10 canvas
        let rect = BinaryMask::from_fn(10, 10, |x, y| (2..8).contains(&x) && (2..8).contains(&y))
            .unwrap();
        // The cross cannot regrow the four corners after opening.
        let cornerless = BinaryMask::from_fn(10, 10, |x, y| {
            rect.get(x, y) && !((x == 2 || x == 7) && (y == 2 || y == 7))
        })
        .unwrap();
        let se = StructuringElement::cross3();
        let oracle = {
            let o = naive(&naive(&rect, &se, true), &se, false);
            naive(&naive(&o, &se, false), &se, true)
        };
        assert_eq!(oracle, cornerless);
        assert_eq!(postprocess(&rect), cornerless);

        let square = PostprocessPlan { shape: ElementShape::Square3, order: PostprocessOrder::OpenClose };
        assert_eq!(square.apply(&rect), rect);
    }

    #[test]
    fn postprocess_removes_speckle() {
        let blob = BinaryMask::from_fn(16, 16, |x, y| {
            let (dx, dy) = (x as f64 - 9.0, y as f64 - 9.0);
            dx * dx / 16.0 + dy * dy / 9.0 <= 1.0
        })
        .unwrap();
        let speckled = BinaryMask::from_fn(16, 16, |x, y| {
            blob.get(x, y) || (x, y) == (1, 1) || (x, y) == (14, 2) || (x, y) == (2, 14)
        })
        .unwrap();
        let cleaned = postprocess(&speckled);
        assert_eq!(cleaned, postprocess(&blob));
        assert!(!cleaned.get(1, 1) && !cleaned.get(14, 2) && !cleaned.get(2, 14));
        assert!(cleaned.get(9, 9));
        // boundary changes stay within one pixel of the blob
        let grown = dilate(&blob, &StructuringElement::square3());
        let shrunk = erode(&blob, &StructuringElement::square3());
        assert!(shrunk.is_subset_of(&cleaned) && cleaned.is_subset_of(&grown));

        let empty = BinaryMask::filled(8, 8, false).unwrap();
        assert_eq!(postprocess(&empty), empty);
    }

    fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            prop::collection::vec(any::<bool>(), w * h)
                .prop_map(move |v| BinaryMask::new(w, h, v).unwrap())
        })
    }

    fn element_strategy() -> impl Strategy<Value = StructuringElement> {
        (0usize..3, 0usize..3).prop_flat_map(|(hw, hh)| {
            let (w, h) = (2 * hw + 1, 2 * hh + 1);
            prop::collection::vec(any::<bool>(), w * h).prop_map(move |mut v| {
                v[(h / 2) * w + w / 2] = true;
                StructuringElement::new(w, h, v).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn matches_naive(m in mask_strategy(), se in element_strategy()) {
            prop_assert_eq!(erode(&m, &se), naive(&m, &se, true));
            prop_assert_eq!(dilate(&m, &se), naive(&m, &se, false));
        }

        #[test]
        fn extensivity_and_idempotence(m in mask_strategy(), se in element_strategy()) {
            prop_assert!(erode(&m, &se).is_subset_of(&m));
            prop_assert!(m.is_subset_of(&dilate(&m, &se)));
            let o = open(&m, &se);
            prop_assert_eq!(open(&o, &se), o);
            let c = close(&m, &se);
            prop_assert_eq!(close(&c, &se), c);
        }

        #[test]
        fn duality_with_opposite_padding(m in mask_strategy(), se in element_strategy()) {
            let reflected = se.reflected();
            prop_assert_eq!(
                dilate(&m, &se),
                erode_with_border(&m.complement(), &reflected, true).complement()
            );
            prop_assert_eq!(
                erode(&m, &se),
                dilate_with_border(&m.complement(), &reflected, true).complement()
            );
        }

        #[test]
        fn monotone(a in prop::collection::vec(any::<bool>(), 64), b in prop::collection::vec(any::<bool>(), 64)) {
            let small = BinaryMask::new(8, 8, a.iter().zip(&b).map(|(x, y)| *x && *y).collect()).unwrap();
            let big = BinaryMask::new(8, 8, a).unwrap();
            let se = StructuringElement::cross3();
            prop_assert!(erode(&small, &se).is_subset_of(&erode(&big, &se)));
            prop_assert!(dilate(&small, &se).is_subset_of(&dilate(&big, &se)));
            prop_assert!(open(&small, &se).is_subset_of(&open(&big, &se)));
            prop_assert!(close(&small, &se).is_subset_of(&close(&big, &se)));
        }
    }
}
