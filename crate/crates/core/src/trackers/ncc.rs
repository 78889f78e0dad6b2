use crate::bbox::BoundingBox;
use crate::image::{ImageBuffer, Shape};

use super::{parabolic_offset, pixel_window, TrackerError, TrackerSession};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NccParams {
    /// Half-width of the square search window around the last position, in
    /// pixels. `None` uses half the template diagonal.
    pub search_radius: Option<usize>,
    /// Refine the correlation peak to sub-pixel precision with a parabola
    /// fit on each axis. The search window itself stays on integer pixels.
    pub subpixel: bool,
}

impl Default for NccParams {
    fn default() -> Self {
        NccParams { search_radius: None, subpixel: true }
    }
}

/// Template tracker with a frozen first-frame template, localized by
/// zero-mean normalized cross-correlation inside a search window.
#[derive(Clone, Debug, Default)]
pub struct NccTracker {
    params: NccParams,
    state: Option<NccState>,
}

#[derive(Clone, Debug)]
struct NccState {
    shape: Shape,
    /// Zero-mean template luma, row-major `tw x th`.
    template: Vec<f64>,
    template_norm: f64,
    tw: usize,
    th: usize,
    radius: usize,
    pos: (usize, usize),
}

impl NccTracker {
    pub fn new(params: NccParams) -> Self {
        NccTracker { params, state: None }
    }

    /// Integer peak position plus its sub-pixel refinement.
    fn locate(&self, frame: &ImageBuffer) -> Result<((usize, usize), (f64, f64)), TrackerError> {
        let st = self.state.as_ref().ok_or(TrackerError::Uninitialized)?;
        if frame.shape() != st.shape {
            return Err(TrackerError::ShapeMismatch { expected: st.shape, got: frame.shape() });
        }
        let luma = frame.to_luma();
        let (w, h) = (st.shape.width, st.shape.height);
        let (tw, th) = (st.tw, st.th);
        let n = (tw * th) as f64;

        let x_lo = st.pos.0.saturating_sub(st.radius);
        let x_hi = (st.pos.0 + st.radius).min(w - tw);
        let y_lo = st.pos.1.saturating_sub(st.radius);
        let y_hi = (st.pos.1 + st.radius).min(h - th);

        // Summed-area tables over the region the search can touch.
        let rx0 = x_lo;
        let ry0 = y_lo;
        let rw = x_hi + tw - rx0;
        let rh = y_hi + th - ry0;
        let stride = rw + 1;
        let mut sum = vec![0.0; stride * (rh + 1)];
        let mut sum_sq = vec![0.0; stride * (rh + 1)];
        for j in 0..rh {
            let mut row = 0.0;
            let mut row_sq = 0.0;
            for i in 0..rw {
                let v = luma[(ry0 + j) * w + rx0 + i];
                row += v;
                row_sq += v * v;
                sum[(j + 1) * stride + i + 1] = sum[j * stride + i + 1] + row;
                sum_sq[(j + 1) * stride + i + 1] = sum_sq[j * stride + i + 1] + row_sq;
            }
        }
        let rect = |table: &[f64], x: usize, y: usize| {
            let (x0, y0) = (x - rx0, y - ry0);
            table[(y0 + th) * stride + x0 + tw] - table[y0 * stride + x0 + tw] - table[(y0 + th) * stride + x0]
                + table[y0 * stride + x0]
        };

        let gw = x_hi - x_lo + 1;
        let mut scores = Vec::with_capacity(gw * (y_hi - y_lo + 1));
        let mut best = st.pos;
        let mut best_score = f64::NEG_INFINITY;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let s = rect(&sum, x, y);
                let var = rect(&sum_sq, x, y) - s * s / n;
                let score = if var <= 1e-9 || st.template_norm <= 1e-9 {
                    0.0
                } else {
                    let mut cross = 0.0;
                    for (ty, trow) in st.template.chunks_exact(tw).enumerate() {
                        let irow = &luma[(y + ty) * w + x..(y + ty) * w + x + tw];
                        cross += trow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    cross / (st.template_norm * var.sqrt())
                };
                scores.push(score);
                if score > best_score {
                    best_score = score;
                    best = (x, y);
                }
            }
        }
        let mut frac = (0.0, 0.0);
        if self.params.subpixel && best_score.is_finite() {
            let at = |x: usize, y: usize| scores[(y - y_lo) * gw + (x - x_lo)];
            let (bx, by) = best;
            if bx > x_lo && bx < x_hi {
                frac.0 = parabolic_offset(at(bx - 1, by), best_score, at(bx + 1, by));
            }
            if by > y_lo && by < y_hi {
                frac.1 = parabolic_offset(at(bx, by - 1), best_score, at(bx, by + 1));
            }
        }
        Ok((best, frac))
    }

    fn box_at(&self, pos: (usize, usize), frac: (f64, f64)) -> BoundingBox {
        let st = self.state.as_ref().expect("initialized");
        let (w, h) = (st.shape.width as f64, st.shape.height as f64);
        let x = (pos.0 as f64 + frac.0).clamp(0.0, w - st.tw as f64);
        let y = (pos.1 as f64 + frac.1).clamp(0.0, h - st.th as f64);
        BoundingBox::new(x, y, st.tw as f64, st.th as f64).expect("template has positive size")
    }
}

impl TrackerSession for NccTracker {
    fn init(&mut self, _frame_index: usize, frame: &ImageBuffer, bbox: BoundingBox) -> Result<(), TrackerError> {
        let shape = frame.shape();
        let (x, y, tw, th) = pixel_window(&bbox, shape.width, shape.height)?;
        let luma = frame.to_luma();
        let mut template = Vec::with_capacity(tw * th);
        for row in y..y + th {
            template.extend_from_slice(&luma[row * shape.width + x..row * shape.width + x + tw]);
        }
        let mean = template.iter().sum::<f64>() / template.len() as f64;
        template.iter_mut().for_each(|v| *v -= mean);
        let template_norm = template.iter().map(|v| v * v).sum::<f64>().sqrt();
        let radius = self
            .params
            .search_radius
            .unwrap_or_else(|| ((tw * tw + th * th) as f64).sqrt() as usize / 2);
        self.state = Some(NccState { shape, template, template_norm, tw, th, radius, pos: (x, y) });
        Ok(())
    }

    fn track(&mut self, _frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        let (pos, frac) = self.locate(frame)?;
        self.state.as_mut().expect("located implies initialized").pos = pos;
        Ok(self.box_at(pos, frac))
    }

    fn probe(&mut self, _frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        let (pos, frac) = self.locate(frame)?;
        Ok(self.box_at(pos, frac))
    }

    fn reset(&mut self) -> Result<(), TrackerError> {
        self.state = None;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textured 20x20 patch on a flat background, pasted at `(px, py)`.
    fn scene(px: usize, py: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patch: Vec<f64> = (0..400).map(|_| rng.random_range(20.0..235.0)).collect();
        ImageBuffer::from_fn(Shape::new(64, 64, 1).unwrap(), |x, y, _| {
            if (px..px + 20).contains(&x) && (py..py + 20).contains(&y) {
                patch[(y - py) * 20 + (x - px)]
            } else {
                120.0
            }
        })
    }

    fn bx(x: f64, y: f64) -> BoundingBox {
        BoundingBox::new(x, y, 20.0, 20.0).unwrap()
    }

    #[test]
    fn self_match_on_identical_frame() {
        let frame = scene(20, 22, 1);
        let mut t = NccTracker::default();
        t.init(0, &frame, bx(20.0, 22.0)).unwrap();
        let out = t.track(1, &frame).unwrap();
        let (cx, cy) = out.center();
        assert!((cx - 30.0).abs() <= 1.0 && (cy - 32.0).abs() <= 1.0);
    }

    fn integer_only() -> NccTracker {
        NccTracker::new(NccParams { subpixel: false, ..Default::default() })
    }

    #[test]
    fn static_scene_keeps_box() {
        let frame = scene(10, 10, 2);
        let mut t = integer_only();
        t.init(0, &frame, bx(10.0, 10.0)).unwrap();
        for i in 1..5 {
            assert_eq!(t.track(i, &frame).unwrap(), bx(10.0, 10.0));
        }
        let mut t = NccTracker::default();
        t.init(0, &frame, bx(10.0, 10.0)).unwrap();
        let first = t.track(1, &frame).unwrap();
        assert!((first.x() - 10.0).abs() <= 0.5 && (first.y() - 10.0).abs() <= 0.5);
        for i in 2..5 {
            assert_eq!(t.track(i, &frame).unwrap(), first);
        }
    }

    #[test]
    fn subpixel_peak_tracks_half_pixel_shift() {
        // Smooth blob sampled at a half-pixel offset from the template.
        let blob = |cx: f64| {
            ImageBuffer::from_fn(Shape::new(64, 64, 1).unwrap(), move |x, y, _| {
                let (dx, dy) = (x as f64 - cx, y as f64 - 30.0);
                60.0 + 150.0 * (-(dx * dx + dy * dy) / 40.0).exp()
            })
        };
        let mut t = NccTracker::default();
        t.init(0, &blob(30.0), bx(20.0, 20.0)).unwrap();
        let out = t.track(1, &blob(30.5)).unwrap();
        assert!((out.x() - 20.5).abs() < 0.05, "{out:?}");
        assert!((out.y() - 20.0).abs() < 0.05, "{out:?}");
    }

    #[test]
    fn follows_translation_within_radius() {
        let mut t = NccTracker::default();
        t.init(0, &scene(20, 20, 3), bx(20.0, 20.0)).unwrap();
        let out = t.track(1, &scene(23, 24, 3)).unwrap();
        let (cx, cy) = out.center();
        assert!((cx - 33.0).abs() <= 1.0 && (cy - 34.0).abs() <= 1.0, "{out:?}");
    }

    #[test]
    fn large_jump_stays_near_previous_location() {
        let mut t = NccTracker::new(NccParams { search_radius: Some(4), ..Default::default() });
        t.init(0, &scene(2, 2, 4), bx(2.0, 2.0)).unwrap();
        let out = t.track(1, &scene(40, 40, 4)).unwrap();
        assert!(out.x() <= 6.0 && out.y() <= 6.0, "{out:?}");
    }

    #[test]
    fn probe_does_not_move_the_search_window() {
        let mut t = NccTracker::default();
        t.init(0, &scene(20, 20, 5), bx(20.0, 20.0)).unwrap();
        let moved = scene(26, 20, 5);
        let probed = t.probe(1, &moved).unwrap();
        assert_eq!(t.probe(1, &moved).unwrap(), probed);
        assert_eq!(t.track(1, &moved).unwrap(), probed);
    }

    #[test]
    fn edge_touching_init_and_error_paths() {
        let frame = scene(44, 44, 6);
        let mut t = integer_only();
        assert!(matches!(t.track(1, &frame), Err(TrackerError::Uninitialized)));
        t.init(0, &frame, bx(44.0, 44.0)).unwrap();
        assert_eq!(t.track(1, &frame).unwrap(), bx(44.0, 44.0));
        assert!(t.init(0, &frame, bx(50.0, 44.0)).is_err());
        let other = ImageBuffer::filled(Shape::new(32, 32, 1).unwrap(), 0.0);
        assert!(matches!(t.track(2, &other), Err(TrackerError::ShapeMismatch { .. })));
    }
}
