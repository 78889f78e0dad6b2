use serde::{Deserialize, Serialize};

use crate::image::ContractError;

/// Axis-aligned box in pixel units: `(x, y)` is the top-left corner.
///
/// Width and height are always strictly positive and finite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct RawBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = ContractError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        BoundingBox::new(raw.x, raw.y, raw.w, raw.h)
    }
}

impl From<BoundingBox> for RawBox {
    fn from(b: BoundingBox) -> Self {
        RawBox { x: b.x, y: b.y, w: b.w, h: b.h }
    }
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, ContractError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(ContractError::invalid(format!(
                "box ({x}, {y}, {w}, {h}) has non-finite coordinates"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(ContractError::invalid(format!(
                "box ({x}, {y}, {w}, {h}) must have positive width and height"
            )));
        }
        Ok(BoundingBox { x, y, w, h })
    }

    /// Box with the given center and size.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, ContractError> {
        BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    /// Smallest axis-aligned box containing every `(x, y)` point.
    pub fn enclosing(points: &[(f64, f64)]) -> Result<Self, ContractError> {
        if points.is_empty() {
            return Err(ContractError::invalid("cannot enclose an empty point set"));
        }
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        BoundingBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Whether the box lies inside a `width x height` frame (edges may touch).
    pub fn within(&self, width: usize, height: usize) -> bool {
        const SLACK: f64 = 1e-9;
        self.x >= -SLACK
            && self.y >= -SLACK
            && self.right() <= width as f64 + SLACK
            && self.bottom() <= height as f64 + SLACK
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox { x: self.x + dx, y: self.y + dy, ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn deserialization_enforces_invariants() {
        let ok: BoundingBox = serde_json::from_str(r#"{"x":1,"y":2,"w":3,"h":4}"#).unwrap();
        assert_eq!(ok.area(), 12.0);
        assert!(serde_json::from_str::<BoundingBox>(r#"{"x":1,"y":2,"w":0,"h":4}"#).is_err());
    }

    #[test]
    fn enclosing_box_of_rotated_corners() {
        let b = BoundingBox::enclosing(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]).unwrap();
        assert_eq!(b, BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap());
        let tilted = BoundingBox::enclosing(&[(5.0, 0.0), (10.0, 5.0), (5.0, 10.0), (0.0, 5.0)]).unwrap();
        assert_eq!(tilted, BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap());
    }

    #[test]
    fn edge_touching_box_is_within() {
        let b = BoundingBox::new(0.0, 0.0, 16.0, 8.0).unwrap();
        assert!(b.within(16, 8));
        assert!(!b.translated(0.5, 0.0).within(16, 8));
    }
}
