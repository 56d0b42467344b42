//! Normalized axis-aligned boxes and overlap measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on `x + w` and `y + h` exceeding the unit square.
pub const EDGE_EPS: f64 = 1e-6;

/// A box `(x, y, w, h)` in normalized image coordinates, `(x, y)` top-left.
///
/// The all-zero box is the distinguished "absent" location used for findings
/// that are not present in the image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const ZERO: BBox = BBox {
        x: 0.0,
        y: 0.0,
        w: 0.0,
        h: 0.0,
    };

    /// Builds a box, rejecting coordinates outside the unit square.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        BBox {
            x: v[0],
            y: v[1],
            w: v[2],
            h: v[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Converts a pixel-space box by dividing by the image dimensions.
    pub fn from_pixels(x: f64, y: f64, w: f64, h: f64, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        BBox::new(x / width, y / height, w / width, h / height)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = [self.x, self.y, self.w, self.h].iter().all(|v| in_unit(*v))
            && self.x + self.w <= 1.0 + EDGE_EPS
            && self.y + self.h <= 1.0 + EDGE_EPS;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("box {self:?} leaves the unit square")))
        }
    }

    pub fn is_zero(&self) -> bool {
        self.x == 0.0 && self.y == 0.0 && self.w == 0.0 && self.h == 0.0
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = (self.x2().min(other.x2()) - self.x.max(other.x)).max(0.0);
        let ih = (self.y2().min(other.y2()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }

    /// Smallest box enclosing both (the convex hull of two axis-aligned boxes).
    pub fn hull(&self, other: &BBox) -> BBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        BBox {
            x,
            y,
            w: self.x2().max(other.x2()) - x,
            h: self.y2().max(other.y2()) - y,
        }
    }

    /// Axis-aligned union of a set of boxes; zero boxes are ignored.
    pub fn union_all<'a>(boxes: impl IntoIterator<Item = &'a BBox>) -> BBox {
        boxes
            .into_iter()
            .filter(|b| !b.is_zero())
            .fold(None::<BBox>, |acc, b| Some(acc.map_or(*b, |a| a.hull(b))))
            .unwrap_or(BBox::ZERO)
    }

    /// Clamps every coordinate into the unit square.
    pub fn clamped(self) -> BBox {
        let x = self.x.clamp(0.0, 1.0);
        let y = self.y.clamp(0.0, 1.0);
        BBox {
            x,
            y,
            w: self.w.clamp(0.0, 1.0 - x),
            h: self.h.clamp(0.0, 1.0 - y),
        }
    }
}

/// Intersection over union. Two zero-area boxes count as a perfect match.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (aa, ab) = (a.area(), b.area());
    if (aa == 0.0 && ab == 0.0) || a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    inter / (aa + ab - inter)
}

/// Generalized IoU: `IoU - |hull \ union| / |hull|`, in `[-1, 1]`.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let (aa, ab) = (a.area(), b.area());
    if aa == 0.0 && ab == 0.0 {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    let union = aa + ab - inter;
    let hull = a.hull(b).area();
    inter / union - (hull - union) / hull
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjoint_corner_boxes() {
        let a = BBox::new(0.0, 0.0, 0.2, 0.2).unwrap();
        let b = BBox::new(0.8, 0.8, 0.2, 0.2).unwrap();
        assert_eq!(iou(&a, &b), 0.0);
        assert_eq!(a.hull(&b).area(), 1.0);
        assert!((giou(&a, &b) + 0.92).abs() < 1e-12);
    }

    #[test]
    fn giou_equals_iou_when_hull_is_union() {
        let a = BBox::new(0.1, 0.1, 0.4, 0.4).unwrap();
        assert_eq!(giou(&a, &a), 1.0);
        let inner = BBox::new(0.2, 0.2, 0.1, 0.1).unwrap();
        assert!((giou(&a, &inner) - iou(&a, &inner)).abs() < 1e-12);
    }

    #[test]
    fn zero_boxes() {
        assert_eq!(iou(&BBox::ZERO, &BBox::ZERO), 1.0);
        let a = BBox::new(0.1, 0.1, 0.4, 0.4).unwrap();
        assert_eq!(iou(&BBox::ZERO, &a), 0.0);
        assert!(BBox::new(0.9, 0.0, 0.2, 0.1).is_err());
        assert!(BBox::new(0.5, 0.0, 0.5 + 1e-7, 0.1).is_ok());
    }

    #[test]
    fn pixel_normalization() {
        let b = BBox::from_pixels(250.0, 100.0, 500.0, 1200.0, 2500.0, 2000.0).unwrap();
        assert_eq!(b, BBox { x: 0.1, y: 0.05, w: 0.2, h: 0.6 });
    }

    #[test]
    fn union_ignores_zero() {
        let a = BBox::new(0.1, 0.2, 0.3, 0.4).unwrap();
        let b = BBox::new(0.5, 0.1, 0.2, 0.2).unwrap();
        let u = BBox::union_all([&a, &BBox::ZERO, &b]);
        assert!((u.x - 0.1).abs() < 1e-12 && (u.y - 0.1).abs() < 1e-12);
        assert!((u.x2() - 0.7).abs() < 1e-12 && (u.y2() - 0.6).abs() < 1e-12);
        assert_eq!(BBox::union_all([&BBox::ZERO]), BBox::ZERO);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_box() -> impl Strategy<Value = BBox> {
            (0.0..0.9f64, 0.0..0.9f64, 0.01..0.1f64, 0.01..0.1f64)
                .prop_map(|(x, y, w, h)| BBox { x, y, w, h })
        }

        proptest! {
            #[test]
            fn overlap_ranges(a in any_box(), b in any_box()) {
                let i = iou(&a, &b);
                let g = giou(&a, &b);
                prop_assert!((0.0..=1.0).contains(&i));
                prop_assert!((-1.0..=1.0).contains(&g));
                prop_assert!(g <= i + 1e-12);
            }
        }
    }
}
