//! Axis-aligned box geometry over real coordinates.
//!
//! Boxes carry a top-left origin with y growing downward; `w` and `h` extend
//! right and down. Frame changes all go through [`map_box`], so a box can be
//! moved between any two frames; the unit square [`ImageSize::UNIT`] serves
//! as the common space in which boxes from differently sized images are fused.

use thiserror::Error;

/// Axis-aligned rectangle in real coordinates, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Area, treating non-positive extents as empty.
    pub fn area(&self) -> f64 {
        if self.w > 0.0 && self.h > 0.0 {
            self.w * self.h
        } else {
            0.0
        }
    }

    /// Corner coordinates in clockwise order from the top-left.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.x, self.y],
            [self.right(), self.y],
            [self.right(), self.bottom()],
            [self.x, self.bottom()],
        ]
    }

    /// Whether `other` lies entirely inside `self` (shared edges count).
    pub fn contains(&self, other: &BoundingBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    /// Smallest box covering both `self` and `other`. Containment of the
    /// inputs holds exactly: an input spanning an axis keeps its extent
    /// verbatim, and a mixed-edge extent is widened past any rounding gap.
    pub fn hull(&self, other: &BoundingBox) -> BoundingBox {
        let span = |a0: f64, a1: f64, ae: f64, b0: f64, b1: f64, be: f64| {
            let lo = a0.min(b0);
            let hi = a1.max(b1);
            if lo == a0 && hi == a1 {
                (lo, ae)
            } else if lo == b0 && hi == b1 {
                (lo, be)
            } else {
                let mut e = hi - lo;
                while lo + e < hi {
                    e = e.next_up();
                }
                (lo, e)
            }
        };
        let (x, w) = span(self.x, self.right(), self.w, other.x, other.right(), other.w);
        let (y, h) = span(self.y, self.bottom(), self.h, other.y, other.bottom(), other.h);
        BoundingBox::new(x, y, w, h)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }
}

/// Frame dimensions in the same units as box coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

impl ImageSize {
    /// The unit square, the common space boxes are fused in.
    pub const UNIT: ImageSize = ImageSize { width: 1.0, height: 1.0 };

    pub const fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()
    }

    /// The full frame as a box anchored at the origin.
    pub fn frame_box(&self) -> BoundingBox {
        BoundingBox::new(0.0, 0.0, self.width, self.height)
    }
}

/// How a set of boxes in a shared frame is combined into one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    /// Smallest box covering every input.
    #[default]
    Union,
    /// Component-wise mean of (x, y, w, h).
    Average,
    /// Common overlap of every input; errors when none exists.
    Intersection,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Union, FusionMode::Average, FusionMode::Intersection];

    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::Union => "union",
            FusionMode::Average => "average",
            FusionMode::Intersection => "intersection",
        }
    }
}

impl core::str::FromStr for FusionMode {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "union" => Ok(FusionMode::Union),
            "average" => Ok(FusionMode::Average),
            "intersection" => Ok(FusionMode::Intersection),
            _ => Err(GeometryError::UnknownFusionMode),
        }
    }
}

impl core::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("frame size {width}x{height} is not positive and finite")]
    InvalidSize { width: f64, height: f64 },
    #[error("no boxes to fuse")]
    EmptyFusion,
    #[error("intersection fusion: inputs share no overlap")]
    NoOverlap,
    #[error("box ({x}, {y}, {w}, {h}) has no interior inside frame {width}x{height}")]
    OutsideFrame { x: f64, y: f64, w: f64, h: f64, width: f64, height: f64 },
    #[error("fusion mode must be one of: union, average, intersection")]
    UnknownFusionMode,
    #[error("box coordinates must be finite")]
    NonFiniteBox,
}

/// Rescale `b` from the coordinate frame `from` into `to`.
///
/// Out-of-frame boxes are mapped like any other; no clamping happens here.
pub fn map_box(
    b: BoundingBox,
    from: ImageSize,
    to: ImageSize,
) -> Result<BoundingBox, GeometryError> {
    for s in [from, to] {
        if !s.is_valid() {
            return Err(GeometryError::InvalidSize { width: s.width, height: s.height });
        }
    }
    let sx = to.width / from.width;
    let sy = to.height / from.height;
    Ok(BoundingBox::new(b.x * sx, b.y * sy, b.w * sx, b.h * sy))
}

/// Combine boxes that already share a frame. Inputs must have positive extents.
pub fn fuse_boxes(boxes: &[BoundingBox], mode: FusionMode) -> Result<BoundingBox, GeometryError> {
    let (first, rest) = boxes.split_first().ok_or(GeometryError::EmptyFusion)?;
    match mode {
        FusionMode::Union => Ok(rest.iter().fold(*first, |acc, b| acc.hull(b))),
        FusionMode::Average => {
            let n = boxes.len() as f64;
            let mut sum = [0.0f64; 4];
            for b in boxes {
                sum[0] += b.x;
                sum[1] += b.y;
                sum[2] += b.w;
                sum[3] += b.h;
            }
            Ok(BoundingBox::new(sum[0] / n, sum[1] / n, sum[2] / n, sum[3] / n))
        }
        FusionMode::Intersection => {
            let mut x0 = first.x;
            let mut y0 = first.y;
            let mut x1 = first.right();
            let mut y1 = first.bottom();
            for b in rest {
                x0 = x0.max(b.x);
                y0 = y0.max(b.y);
                x1 = x1.min(b.right());
                y1 = y1.min(b.bottom());
            }
            if x1 <= x0 || y1 <= y0 {
                return Err(GeometryError::NoOverlap);
            }
            Ok(BoundingBox::new(x0, y0, x1 - x0, y1 - y0))
        }
    }
}

/// Intersection over union. Boxes without positive area contribute 0.
///
/// Areas come from the same edge subtractions as the overlap, so identical
/// boxes score exactly 1 and the ratio never exceeds 1.
pub fn iou(a: BoundingBox, b: BoundingBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let edge_area = |v: BoundingBox| (v.right() - v.x) * (v.bottom() - v.y);
    let inter = iw * ih;
    let union = edge_area(a) + edge_area(b) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Restrict `b` to the frame, erroring when nothing with interior remains.
pub fn clamp_box(b: BoundingBox, frame: ImageSize) -> Result<BoundingBox, GeometryError> {
    if !frame.is_valid() {
        return Err(GeometryError::InvalidSize { width: frame.width, height: frame.height });
    }
    if !b.is_finite() {
        return Err(GeometryError::NonFiniteBox);
    }
    let x0 = b.x.max(0.0);
    let y0 = b.y.max(0.0);
    let x1 = b.right().min(frame.width);
    let y1 = b.bottom().min(frame.height);
    if x1 <= x0 || y1 <= y0 {
        return Err(GeometryError::OutsideFrame {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
            width: frame.width,
            height: frame.height,
        });
    }
    // Untouched axes keep their extents verbatim; recomputing `x1 - x0`
    // there would perturb in-frame boxes by an ulp. Trimmed extents shrink
    // until the recomputed far edge respects the frame.
    let trim = |lo: f64, hi: f64, extent: f64| {
        let mut e = (hi - lo).min(extent);
        while lo + e > hi {
            e = e.next_down();
        }
        e
    };
    let w = if x0 == b.x && x1 == b.right() { b.w } else { trim(x0, x1, b.w) };
    let h = if y0 == b.y && y1 == b.bottom() { b.h } else { trim(y0, y1, b.h) };
    Ok(BoundingBox::new(x0, y0, w, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h)
    }

    #[test]
    fn map_box_identity() {
        let size = ImageSize::new(100.0, 100.0);
        let b = bb(10.0, 10.0, 20.0, 20.0);
        assert_eq!(map_box(b, size, size).unwrap(), b);
    }

    #[test]
    fn map_box_rescales_each_axis() {
        let got = map_box(
            bb(10.0, 20.0, 30.0, 40.0),
            ImageSize::new(100.0, 200.0),
            ImageSize::new(50.0, 50.0),
        )
        .unwrap();
        assert_eq!(got, bb(5.0, 5.0, 15.0, 10.0));
    }

    #[test]
    fn map_box_rejects_degenerate_frames() {
        let b = bb(0.0, 0.0, 1.0, 1.0);
        let bad = ImageSize::new(0.0, 100.0);
        let ok = ImageSize::new(10.0, 10.0);
        assert!(matches!(map_box(b, bad, ok), Err(GeometryError::InvalidSize { .. })));
        assert!(matches!(map_box(b, ok, bad), Err(GeometryError::InvalidSize { .. })));
        let neg = ImageSize::new(10.0, -5.0);
        assert!(matches!(map_box(b, neg, ok), Err(GeometryError::InvalidSize { .. })));
    }

    #[test]
    fn fuse_union_covers_both() {
        let got = fuse_boxes(&[bb(10.0, 10.0, 20.0, 20.0), bb(15.0, 15.0, 30.0, 30.0)], FusionMode::Union)
            .unwrap();
        assert_eq!(got, bb(10.0, 10.0, 35.0, 35.0));
    }

    #[test]
    fn fuse_average_is_componentwise_mean() {
        let got =
            fuse_boxes(&[bb(10.0, 10.0, 20.0, 20.0), bb(15.0, 15.0, 30.0, 30.0)], FusionMode::Average)
                .unwrap();
        assert_eq!(got, bb(12.5, 12.5, 25.0, 25.0));
    }

    #[test]
    fn fuse_intersection_keeps_overlap() {
        let got =
            fuse_boxes(&[bb(0.0, 0.0, 10.0, 10.0), bb(5.0, 5.0, 10.0, 10.0)], FusionMode::Intersection)
                .unwrap();
        assert_eq!(got, bb(5.0, 5.0, 5.0, 5.0));
    }

    #[test]
    fn fuse_intersection_disjoint_errors() {
        let err = fuse_boxes(&[bb(0.0, 0.0, 2.0, 2.0), bb(5.0, 5.0, 2.0, 2.0)], FusionMode::Intersection)
            .unwrap_err();
        assert_eq!(err, GeometryError::NoOverlap);
    }

    #[test]
    fn fuse_empty_errors() {
        assert_eq!(fuse_boxes(&[], FusionMode::Union).unwrap_err(), GeometryError::EmptyFusion);
    }

    #[test]
    fn fuse_single_box_is_identity_in_every_mode() {
        let b = bb(3.0, 4.0, 5.0, 6.0);
        for mode in FusionMode::ALL {
            assert_eq!(fuse_boxes(&[b], mode).unwrap(), b);
        }
    }

    #[test]
    fn iou_identical_is_one() {
        let b = bb(1.0, 2.0, 3.0, 4.0);
        assert_eq!(iou(b, b), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        assert_eq!(iou(bb(0.0, 0.0, 1.0, 1.0), bb(2.0, 2.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn iou_half_overlap_is_one_third() {
        assert_eq!(iou(bb(0.0, 0.0, 2.0, 2.0), bb(1.0, 0.0, 2.0, 2.0)), 1.0 / 3.0);
    }

    #[test]
    fn iou_zero_area_is_zero() {
        assert_eq!(iou(bb(0.0, 0.0, 0.0, 5.0), bb(0.0, 0.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn clamp_trims_negative_origin() {
        let got = clamp_box(bb(-5.0, -5.0, 20.0, 20.0), ImageSize::new(100.0, 100.0)).unwrap();
        assert_eq!(got, bb(0.0, 0.0, 15.0, 15.0));
    }

    #[test]
    fn clamp_trims_far_edge() {
        let got = clamp_box(bb(90.0, 90.0, 20.0, 20.0), ImageSize::new(100.0, 100.0)).unwrap();
        assert_eq!(got, bb(90.0, 90.0, 10.0, 10.0));
    }

    #[test]
    fn clamp_outside_frame_errors() {
        let err = clamp_box(bb(200.0, 200.0, 10.0, 10.0), ImageSize::new(100.0, 100.0)).unwrap_err();
        assert!(matches!(err, GeometryError::OutsideFrame { .. }));
    }

    #[test]
    fn clamp_rejects_non_finite_boxes() {
        let err = clamp_box(bb(f64::NAN, 0.0, 1.0, 1.0), ImageSize::new(10.0, 10.0)).unwrap_err();
        assert_eq!(err, GeometryError::NonFiniteBox);
    }

    #[test]
    fn clamp_touching_edge_has_no_interior() {
        let err = clamp_box(bb(100.0, 0.0, 5.0, 5.0), ImageSize::new(100.0, 100.0)).unwrap_err();
        assert!(matches!(err, GeometryError::OutsideFrame { .. }));
    }

    #[test]
    fn fusion_mode_round_trips_through_names() {
        for mode in FusionMode::ALL {
            assert_eq!(mode.name().parse::<FusionMode>().unwrap(), mode);
        }
        assert!("hull".parse::<FusionMode>().is_err());
    }

    fn box_strategy() -> impl Strategy<Value = BoundingBox> {
        (-1e3..1e3f64, -1e3..1e3f64, 1e-3..1e3f64, 1e-3..1e3f64)
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h))
    }

    fn size_strategy() -> impl Strategy<Value = ImageSize> {
        (1e-2..1e4f64, 1e-2..1e4f64).prop_map(|(w, h)| ImageSize::new(w, h))
    }

    proptest! {
        #[test]
        fn map_box_round_trips(b in box_strategy(), from in size_strategy(), to in size_strategy()) {
            let there = map_box(b, from, to).unwrap();
            let back = map_box(there, to, from).unwrap();
            let scale = b.x.abs().max(b.y.abs()).max(b.w).max(b.h).max(1.0);
            prop_assert!((back.x - b.x).abs() <= 1e-9 * scale);
            prop_assert!((back.y - b.y).abs() <= 1e-9 * scale);
            prop_assert!((back.w - b.w).abs() <= 1e-9 * scale);
            prop_assert!((back.h - b.h).abs() <= 1e-9 * scale);
        }

        #[test]
        fn union_contains_every_input(boxes in proptest::collection::vec(box_strategy(), 1..8)) {
            let fused = fuse_boxes(&boxes, FusionMode::Union).unwrap();
            for b in &boxes {
                prop_assert!(fused.contains(b));
            }
        }

        #[test]
        fn hull_of_identical_boxes_is_identity(b in box_strategy()) {
            prop_assert_eq!(b.hull(&b), b);
            prop_assert_eq!(iou(b, b), 1.0);
        }

        #[test]
        fn iou_is_symmetric_and_bounded(a in box_strategy(), b in box_strategy()) {
            let ab = iou(a, b);
            prop_assert_eq!(ab, iou(b, a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn clamped_box_stays_inside_frame(b in box_strategy(), frame in size_strategy()) {
            if let Ok(c) = clamp_box(b, frame) {
                prop_assert!(c.x >= 0.0 && c.y >= 0.0);
                prop_assert!(c.right() <= frame.width && c.bottom() <= frame.height);
                prop_assert!(c.w > 0.0 && c.h > 0.0);
                prop_assert!(c.w <= b.w && c.h <= b.h);
            }
        }
    }
}
