//! Box overlap measures and the attack's fused score.

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::image::ContractError;

/// Intersection over union of two closed rectangles.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    // Exact for identical boxes, where `right() - x()` may not round back to `w`.
    if a == b {
        return 1.0;
    }
    let iw = (a.right().min(b.right()) - a.x().max(b.x())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y().max(b.y())).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between box centers.
pub fn center_error(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoUScores {
    pub spatial: f64,
    pub temporal: f64,
    pub fused: f64,
}

/// Scores a prediction against the clean-run box of the same frame
/// (`spatial_ref`) and the clean-run box of the previous frame
/// (`temporal_ref`), blended as `lambda * spatial + (1 - lambda) * temporal`.
pub fn fused_score(
    pred: &BoundingBox,
    spatial_ref: &BoundingBox,
    temporal_ref: &BoundingBox,
    lambda_fuse: f64,
) -> Result<IoUScores, ContractError> {
    if !(0.0..=1.0).contains(&lambda_fuse) {
        return Err(ContractError::invalid(format!("lambda_fuse {lambda_fuse} outside [0, 1]")));
    }
    let spatial = iou(pred, spatial_ref);
    let temporal = iou(pred, temporal_ref);
    Ok(IoUScores { spatial, temporal, fused: lambda_fuse * spatial + (1.0 - lambda_fuse) * temporal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    /// Counts unit pixels covered by each integer box on a grid.
    fn raster_iou(a: (i32, i32, i32, i32), c: (i32, i32, i32, i32)) -> f64 {
        let inside = |r: (i32, i32, i32, i32), px: i32, py: i32| {
            px >= r.0 && px < r.0 + r.2 && py >= r.1 && py < r.1 + r.3
        };
        let (mut inter, mut union) = (0u64, 0u64);
        let x0 = a.0.min(c.0);
        let y0 = a.1.min(c.1);
        let x1 = (a.0 + a.2).max(c.0 + c.2);
        let y1 = (a.1 + a.3).max(c.1 + c.3);
        for py in y0..y1 {
            for px in x0..x1 {
                let (ia, ic) = (inside(a, px, py), inside(c, px, py));
                inter += u64::from(ia && ic);
                union += u64::from(ia || ic);
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn identity_and_disjoint() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 5.0, 5.0)), 0.0);
    }

    #[test]
    fn half_shift_gives_one_third() {
        let got = iou(&b(0.0, 0.0, 10.0, 10.0), &b(5.0, 0.0, 10.0, 10.0));
        assert_eq!(raster_iou((0, 0, 10, 10), (5, 0, 10, 10)), 1.0 / 3.0);
        assert_eq!(got, 1.0 / 3.0);
    }

    #[test]
    fn touching_edges_do_not_overlap() {
        assert_eq!(iou(&b(0.0, 0.0, 4.0, 4.0), &b(4.0, 0.0, 4.0, 4.0)), 0.0);
    }

    #[test]
    fn center_error_cases() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(center_error(&a, &a), 0.0);
        assert_eq!(center_error(&a, &b(3.0, 4.0, 10.0, 10.0)), 5.0);
    }

    #[test]
    fn fused_score_cases() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let s = fused_score(&a, &a, &a, 0.7).unwrap();
        assert_eq!(s.fused, 1.0);

        // spatial 0.8: pred covers 80% of a ref; temporal 0.4.
        let pred = b(0.0, 0.0, 10.0, 10.0);
        let sref = b(0.0, 0.0, 10.0, 8.0);
        let tref = b(0.0, 0.0, 10.0, 4.0);
        let s = fused_score(&pred, &sref, &tref, 0.5).unwrap();
        assert!((s.spatial - 0.8).abs() < 1e-12);
        assert!((s.temporal - 0.4).abs() < 1e-12);
        assert!((s.fused - 0.6).abs() < 1e-12);

        let s = fused_score(&pred, &sref, &b(50.0, 50.0, 1.0, 1.0), 1.0).unwrap();
        assert_eq!(s.fused, s.spatial);
        assert!(fused_score(&pred, &sref, &tref, -0.1).is_err());
        assert!(fused_score(&pred, &sref, &tref, 1.1).is_err());
    }

    fn int_box() -> impl Strategy<Value = (i32, i32, i32, i32)> {
        (-20i32..20, -20i32..20, 1i32..15, 1i32..15)
    }

    fn real_box() -> impl Strategy<Value = BoundingBox> {
        (-50.0f64..50.0, -50.0f64..50.0, 0.1f64..40.0, 0.1f64..40.0)
            .prop_map(|(x, y, w, h)| b(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_matches_raster_oracle(a in int_box(), c in int_box()) {
            let got = iou(&b(a.0 as f64, a.1 as f64, a.2 as f64, a.3 as f64),
                          &b(c.0 as f64, c.1 as f64, c.2 as f64, c.3 as f64));
            prop_assert_eq!(got, raster_iou(a, c));
        }

        #[test]
        fn iou_is_bounded_and_symmetric(a in real_box(), c in real_box()) {
            let v = iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn center_error_matches_formula(a in real_box(), c in real_box()) {
            let (ax, ay) = (a.x() + a.w() / 2.0, a.y() + a.h() / 2.0);
            let (cx, cy) = (c.x() + c.w() / 2.0, c.y() + c.h() / 2.0);
            let direct = ((ax - cx).powi(2) + (ay - cy).powi(2)).sqrt();
            prop_assert!((center_error(&a, &c) - direct).abs() <= 1e-9 * (1.0 + direct));
        }

        #[test]
        fn degenerate_weights_ignore_the_other_reference(
            pred in real_box(), s1 in real_box(), s2 in real_box(), t1 in real_box(), t2 in real_box(),
            lambda in 0.0f64..=1.0,
        ) {
            let only_spatial_a = fused_score(&pred, &s1, &t1, 1.0).unwrap().fused;
            let only_spatial_b = fused_score(&pred, &s1, &t2, 1.0).unwrap().fused;
            prop_assert_eq!(only_spatial_a, only_spatial_b);
            let only_temporal_a = fused_score(&pred, &s1, &t1, 0.0).unwrap().fused;
            let only_temporal_b = fused_score(&pred, &s2, &t1, 0.0).unwrap().fused;
            prop_assert_eq!(only_temporal_a, only_temporal_b);
            let s = fused_score(&pred, &s1, &t1, lambda).unwrap();
            prop_assert!((s.fused - (lambda * s.spatial + (1.0 - lambda) * s.temporal)).abs() <= 1e-9);
        }
    }
}
