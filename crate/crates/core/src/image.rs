//! Float-domain images and signed perturbation fields.
//!
//! Intensities live in `[0, 255]` as `f64` for the whole attack; the only
//! quantization to 8 bits happens when frames are written to PNG or handed to
//! a quantizing tracker session.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use ::image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Violation of a documented precondition or type invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContractError {
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },
    #[error("{0}")]
    Invalid(String),
}

impl ContractError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ContractError::Invalid(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("image codec error: {0}")]
    Codec(#[from] ::image::ImageError),
    #[error(transparent)]
    Contract(#[from] ContractError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self, ContractError> {
        if width == 0 || height == 0 {
            return Err(ContractError::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(ContractError::invalid(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        Ok(Shape { width, height, channels })
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn ensure_same(self, other: Shape) -> Result<(), ContractError> {
        if self == other {
            Ok(())
        } else {
            Err(ContractError::ShapeMismatch { left: self, right: other })
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

/// Row-major, channel-interleaved image with intensities in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Builds an image from raw intensities, rejecting values outside `[0, 255]`.
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, ContractError> {
        check_len(shape, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(ContractError::invalid(format!(
                "intensity {bad} outside [0, 255]"
            )));
        }
        Ok(ImageBuffer { shape, data })
    }

    /// Builds an image from arbitrary values, clamping each into `[0, 255]`.
    /// NaN maps to 0.
    pub fn clamped(shape: Shape, mut data: Vec<f64>) -> Result<Self, ContractError> {
        check_len(shape, data.len())?;
        data.iter_mut().for_each(|v| *v = clamp_intensity(*v));
        Ok(ImageBuffer { shape, data })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        ImageBuffer { shape, data: vec![clamp_intensity(value); shape.len()] }
    }

    /// Builds an image by evaluating `f(x, y, channel)`; results are clamped.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    data.push(clamp_intensity(f(x, y, c)));
                }
            }
        }
        ImageBuffer { shape, data }
    }

    pub fn from_u8(shape: Shape, bytes: &[u8]) -> Result<Self, ContractError> {
        check_len(shape, bytes.len())?;
        Ok(ImageBuffer { shape, data: bytes.iter().map(|&b| f64::from(b)).collect() })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, channel: usize) -> f64 {
        self.data[(y * self.shape.width + x) * self.shape.channels + channel]
    }

    /// Single-plane luma using (0.299, 0.587, 0.114) weights; a 1-channel
    /// image is returned as-is.
    pub fn to_luma(&self) -> Vec<f64> {
        match self.shape.channels {
            1 => self.data.clone(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
                .collect(),
        }
    }

    /// 8-bit view, rounding to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v.round() as u8).collect()
    }

    /// The image as an 8-bit file would store it, back in the float domain.
    pub fn quantized(&self) -> ImageBuffer {
        ImageBuffer { shape: self.shape, data: self.data.iter().map(|v| v.round()).collect() }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageIoError> {
        let dynamic = self.to_dynamic();
        let mut out = Cursor::new(Vec::new());
        dynamic.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImageIoError> {
        let dynamic = ::image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Self::from_dynamic(dynamic)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
        self.to_dynamic().save_with_format(path, ImageFormat::Png)?;
        Ok(())
    }

    /// Loads PNG or JPEG; grayscale files become 1-channel, everything else 3-channel.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageIoError> {
        Self::from_dynamic(::image::open(path)?)
    }

    fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.shape.width as u32, self.shape.height as u32);
        let bytes = self.to_u8();
        match self.shape.channels {
            1 => DynamicImage::ImageLuma8(
                ::image::GrayImage::from_raw(w, h, bytes).expect("buffer length matches shape"),
            ),
            _ => DynamicImage::ImageRgb8(
                ::image::RgbImage::from_raw(w, h, bytes).expect("buffer length matches shape"),
            ),
        }
    }

    fn from_dynamic(dynamic: DynamicImage) -> Result<Self, ImageIoError> {
        let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
        let out = match dynamic {
            DynamicImage::ImageLuma8(gray) => {
                ImageBuffer::from_u8(Shape::new(w, h, 1)?, gray.as_raw())?
            }
            other => ImageBuffer::from_u8(Shape::new(w, h, 3)?, other.to_rgb8().as_raw())?,
        };
        Ok(out)
    }
}

fn check_len(shape: Shape, len: usize) -> Result<(), ContractError> {
    Shape::new(shape.width, shape.height, shape.channels)?;
    if len != shape.len() {
        return Err(ContractError::invalid(format!(
            "data length {len} does not match shape {shape} ({} values)",
            shape.len()
        )));
    }
    Ok(())
}

fn clamp_intensity(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 255.0)
    }
}

/// Signed per-pixel delta sharing an [`ImageBuffer`]'s shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationField {
    shape: Shape,
    data: Vec<f64>,
}

impl PerturbationField {
    pub fn zeros(shape: Shape) -> Self {
        PerturbationField { shape, data: vec![0.0; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self, ContractError> {
        check_len(shape, data.len())?;
        Ok(PerturbationField { shape, data })
    }

    /// `to - from`, element-wise.
    pub fn between(from: &ImageBuffer, to: &ImageBuffer) -> Result<Self, ContractError> {
        from.shape.ensure_same(to.shape)?;
        let data = to.data.iter().zip(&from.data).map(|(b, a)| b - a).collect();
        Ok(PerturbationField { shape: from.shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn dot(&self, other: &PerturbationField) -> Result<f64, ContractError> {
        self.shape.ensure_same(other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, factor: f64) -> PerturbationField {
        PerturbationField { shape: self.shape, data: self.data.iter().map(|v| v * factor).collect() }
    }

    pub fn add(&self, other: &PerturbationField) -> Result<PerturbationField, ContractError> {
        self.shape.ensure_same(other.shape)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(PerturbationField { shape: self.shape, data })
    }

    pub fn sub(&self, other: &PerturbationField) -> Result<PerturbationField, ContractError> {
        self.shape.ensure_same(other.shape)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(PerturbationField { shape: self.shape, data })
    }
}

/// Euclidean distance over all pixels and channels.
pub fn l2_distance(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ContractError> {
    a.shape.ensure_same(b.shape)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// `base + delta`, clamped into the valid intensity range.
pub fn clamp_to_image(base: &ImageBuffer, delta: &PerturbationField) -> Result<ImageBuffer, ContractError> {
    base.shape.ensure_same(delta.shape)?;
    let data = base
        .data
        .iter()
        .zip(&delta.data)
        .map(|(b, d)| clamp_intensity(b + d))
        .collect();
    Ok(ImageBuffer { shape: base.shape, data })
}
