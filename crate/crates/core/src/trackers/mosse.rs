use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::bbox::BoundingBox;
use crate::image::{ImageBuffer, Shape};

use super::{parabolic_offset, TrackerError, TrackerSession};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MosseParams {
    pub learning_rate: f64,
    pub regularization: f64,
    /// Correlation window size as a multiple of the target size.
    pub padding: f64,
    /// Width of the desired Gaussian response, in pixels.
    pub sigma: f64,
}

impl Default for MosseParams {
    fn default() -> Self {
        MosseParams { learning_rate: 0.125, regularization: 1e-4, padding: 2.0, sigma: 2.0 }
    }
}

/// Correlation filter tracker updated online after every committed frame.
#[derive(Clone, Default)]
pub struct MosseTracker {
    params: MosseParams,
    state: Option<MosseState>,
}

impl fmt::Debug for MosseTracker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MosseTracker")
            .field("params", &self.params)
            .field("initialized", &self.state.is_some())
            .finish()
    }
}

#[derive(Clone)]
struct MosseState {
    shape: Shape,
    fft: Fft2,
    window: Vec<f64>,
    target: Vec<Complex<f64>>,
    numerator: Vec<Complex<f64>>,
    denominator: Vec<Complex<f64>>,
    center: (f64, f64),
    size: (f64, f64),
}

/// Fixed warps applied to the first patch so the initial filter does not
/// overfit a single sample: (rotation radians, scale).
const INIT_WARPS: [(f64, f64); 8] = [
    (0.05, 1.0),
    (-0.05, 1.0),
    (0.1, 1.0),
    (-0.1, 1.0),
    (0.0, 0.95),
    (0.0, 1.05),
    (0.05, 0.97),
    (-0.05, 1.03),
];

impl MosseTracker {
    pub fn new(params: MosseParams) -> Self {
        MosseTracker { params, state: None }
    }

    fn check_frame(&self, frame: &ImageBuffer) -> Result<&MosseState, TrackerError> {
        let st = self.state.as_ref().ok_or(TrackerError::Uninitialized)?;
        if frame.shape() != st.shape {
            return Err(TrackerError::ShapeMismatch { expected: st.shape, got: frame.shape() });
        }
        Ok(st)
    }

    /// New target center predicted for `luma`, clamped so the box stays in frame.
    fn localize(st: &MosseState, luma: &[f64], reg: f64) -> (f64, f64) {
        let (ww, wh) = (st.fft.width, st.fft.height);
        let mut spectrum = preprocess(&sample_patch(luma, st.shape, st.center, ww, wh, 0.0, 1.0), &st.window);
        st.fft.forward(&mut spectrum);
        for ((f, a), b) in spectrum.iter_mut().zip(&st.numerator).zip(&st.denominator) {
            *f = *f * (a / (b + reg));
        }
        st.fft.inverse(&mut spectrum);
        let (mut peak, mut best) = (0, f64::NEG_INFINITY);
        for (i, v) in spectrum.iter().enumerate() {
            if v.re > best {
                best = v.re;
                peak = i;
            }
        }
        let (px, py) = (peak % ww, peak / ww);
        // The response is circular, so neighbours wrap around.
        let at = |x: usize, y: usize| spectrum[y * ww + x].re;
        let fx = parabolic_offset(at((px + ww - 1) % ww, py), best, at((px + 1) % ww, py));
        let fy = parabolic_offset(at(px, (py + wh - 1) % wh), best, at(px, (py + 1) % wh));
        let dx = px as f64 - (ww / 2) as f64 + fx;
        let dy = py as f64 - (wh / 2) as f64 + fy;
        let (w, h) = st.size;
        let cx = (st.center.0 + dx).clamp(w / 2.0, st.shape.width as f64 - w / 2.0);
        let cy = (st.center.1 + dy).clamp(h / 2.0, st.shape.height as f64 - h / 2.0);
        (cx, cy)
    }

    fn box_for(st: &MosseState, center: (f64, f64)) -> BoundingBox {
        BoundingBox::from_center(center.0, center.1, st.size.0, st.size.1).expect("positive target size")
    }
}

impl TrackerSession for MosseTracker {
    fn init(&mut self, _frame_index: usize, frame: &ImageBuffer, bbox: BoundingBox) -> Result<(), TrackerError> {
        let shape = frame.shape();
        if !bbox.within(shape.width, shape.height) {
            return Err(TrackerError::OutOfBounds { bbox, width: shape.width, height: shape.height });
        }
        let ww = ((bbox.w() * self.params.padding).round() as usize).max(4);
        let wh = ((bbox.h() * self.params.padding).round() as usize).max(4);
        let fft = Fft2::new(ww, wh);
        let window = hann(ww, wh);

        let mut target: Vec<Complex<f64>> = (0..ww * wh)
            .map(|i| {
                let dx = (i % ww) as f64 - (ww / 2) as f64;
                let dy = (i / ww) as f64 - (wh / 2) as f64;
                Complex::new((-(dx * dx + dy * dy) / (2.0 * self.params.sigma.powi(2))).exp(), 0.0)
            })
            .collect();
        fft.forward(&mut target);

        let luma = frame.to_luma();
        let center = bbox.center();
        let mut numerator = vec![Complex::new(0.0, 0.0); ww * wh];
        let mut denominator = vec![Complex::new(0.0, 0.0); ww * wh];
        let samples = std::iter::once((0.0, 1.0)).chain(INIT_WARPS);
        for (angle, scale) in samples {
            let mut f = preprocess(&sample_patch(&luma, shape, center, ww, wh, angle, scale), &window);
            fft.forward(&mut f);
            for i in 0..f.len() {
                numerator[i] += target[i] * f[i].conj();
                denominator[i] += f[i] * f[i].conj();
            }
        }
        self.state = Some(MosseState {
            shape,
            fft,
            window,
            target,
            numerator,
            denominator,
            center,
            size: (bbox.w(), bbox.h()),
        });
        Ok(())
    }

    fn track(&mut self, _frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        self.check_frame(frame)?;
        let luma = frame.to_luma();
        let rate = self.params.learning_rate;
        let reg = self.params.regularization;
        let st = self.state.as_mut().expect("checked");
        let center = Self::localize(st, &luma, reg);
        st.center = center;

        let (ww, wh) = (st.fft.width, st.fft.height);
        let mut f = preprocess(&sample_patch(&luma, st.shape, center, ww, wh, 0.0, 1.0), &st.window);
        st.fft.forward(&mut f);
        for i in 0..f.len() {
            st.numerator[i] = st.target[i] * f[i].conj() * rate + st.numerator[i] * (1.0 - rate);
            st.denominator[i] = f[i] * f[i].conj() * rate + st.denominator[i] * (1.0 - rate);
        }
        Ok(Self::box_for(st, center))
    }

    fn probe(&mut self, _frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        let st = self.check_frame(frame)?;
        let center = Self::localize(st, &frame.to_luma(), self.params.regularization);
        Ok(Self::box_for(st, center))
    }

    fn reset(&mut self) -> Result<(), TrackerError> {
        self.state = None;
        Ok(())
    }
}

/// Bilinear sample of a `ww x wh` patch around `center`, rotated by `angle`
/// and zoomed by `scale`, with edge replication outside the frame.
fn sample_patch(
    luma: &[f64],
    shape: Shape,
    center: (f64, f64),
    ww: usize,
    wh: usize,
    angle: f64,
    scale: f64,
) -> Vec<f64> {
    let (w, h) = (shape.width, shape.height);
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        luma[y * w + x]
    };
    let (sin, cos) = angle.sin_cos();
    let mut out = Vec::with_capacity(ww * wh);
    for j in 0..wh {
        for i in 0..ww {
            let u = i as f64 - (ww / 2) as f64;
            let v = j as f64 - (wh / 2) as f64;
            let sx = center.0 + (cos * u - sin * v) / scale;
            let sy = center.1 + (sin * u + cos * v) / scale;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
            let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

fn preprocess(patch: &[f64], window: &[f64]) -> Vec<Complex<f64>> {
    let logged: Vec<f64> = patch.iter().map(|p| (p + 1.0).ln()).collect();
    let mean = logged.iter().sum::<f64>() / logged.len() as f64;
    let norm = logged.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
    let norm = if norm > 1e-12 { norm } else { 1.0 };
    logged
        .iter()
        .zip(window)
        .map(|(v, win)| Complex::new((v - mean) / norm * win, 0.0))
        .collect()
}

fn hann(w: usize, h: usize) -> Vec<f64> {
    let wx: Vec<f64> = (0..w).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (w - 1) as f64).cos()).collect();
    let wy: Vec<f64> = (0..h).map(|j| 0.5 - 0.5 * (2.0 * PI * j as f64 / (h - 1) as f64).cos()).collect();
    wy.iter().flat_map(|y| wx.iter().map(move |x| x * y)).collect()
}

/// Row-major 2D FFT built from 1D plans.
#[derive(Clone)]
struct Fft2 {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn forward(&self, data: &mut [Complex<f64>]) {
        self.row_fwd.process(data);
        let mut t = transpose(data, self.width, self.height);
        self.col_fwd.process(&mut t);
        data.copy_from_slice(&transpose(&t, self.height, self.width));
    }

    fn inverse(&self, data: &mut [Complex<f64>]) {
        self.row_inv.process(data);
        let mut t = transpose(data, self.width, self.height);
        self.col_inv.process(&mut t);
        let scale = 1.0 / (self.width * self.height) as f64;
        for (dst, src) in data.iter_mut().zip(transpose(&t, self.height, self.width)) {
            *dst = src * scale;
        }
    }
}

fn transpose(data: &[Complex<f64>], width: usize, height: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); data.len()];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = data[y * width + x];
        }
    }
    out
}
