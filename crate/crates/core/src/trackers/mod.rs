//! The tracker oracle contract and the built-in black-box targets.
//!
//! A session is the only view the attack gets of a tracker: it is initialized
//! with a frame and a box, and afterwards returns exactly one box per frame.
//! Every call carries the frame index so that index-aware doubles (and remote
//! peers, which echo it on the wire) can line up with the sequence.
//!
//! [`TrackerSession::track`] advances the tracker's internal state (search
//! region, online model). [`TrackerSession::probe`] answers the same question
//! but leaves the state exactly as it was; the attack uses it for candidate
//! queries so that only the finally chosen adversarial frame is committed.

mod doubles;
mod mosse;
mod ncc;

use std::sync::Arc;

use thiserror::Error;

pub use doubles::{ConstantTracker, GroundTruthTracker, ScriptedTracker};
pub use mosse::{MosseParams, MosseTracker};
pub use ncc::{NccParams, NccTracker};

use crate::bbox::BoundingBox;
use crate::bridge::BridgeError;
use crate::image::{ContractError, ImageBuffer, Shape};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("uninitialized")]
    Uninitialized,
    #[error("frame shape {got} does not match the init frame {expected}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("box {bbox:?} lies outside the {width}x{height} frame")]
    OutOfBounds { bbox: BoundingBox, width: usize, height: usize },
    #[error("frame index {index} is past the end of the sequence ({len} frames)")]
    PastEnd { index: usize, len: usize },
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
}

pub trait TrackerSession: Send {
    /// (Re)initializes on `frame` with the target at `bbox`.
    fn init(&mut self, frame_index: usize, frame: &ImageBuffer, bbox: BoundingBox) -> Result<(), TrackerError>;

    /// Localizes the target and updates the session state.
    fn track(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError>;

    /// Returns what [`track`](Self::track) would return, without updating state.
    fn probe(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError>;

    /// Drops all state; the session must be initialized again before use.
    fn reset(&mut self) -> Result<(), TrackerError>;
}

impl<T: TrackerSession + ?Sized> TrackerSession for Box<T> {
    fn init(&mut self, frame_index: usize, frame: &ImageBuffer, bbox: BoundingBox) -> Result<(), TrackerError> {
        (**self).init(frame_index, frame, bbox)
    }

    fn track(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        (**self).track(frame_index, frame)
    }

    fn probe(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        (**self).probe(frame_index, frame)
    }

    fn reset(&mut self) -> Result<(), TrackerError> {
        (**self).reset()
    }
}

/// Creates independent sessions; each sequence run owns the sessions it makes.
pub trait TrackerFactory: Send + Sync {
    fn create(&self) -> Result<Box<dyn TrackerSession>, TrackerError>;
}

impl<F> TrackerFactory for F
where
    F: Fn() -> Result<Box<dyn TrackerSession>, TrackerError> + Send + Sync,
{
    fn create(&self) -> Result<Box<dyn TrackerSession>, TrackerError> {
        self()
    }
}

impl<T: TrackerFactory + ?Sized> TrackerFactory for Arc<T> {
    fn create(&self) -> Result<Box<dyn TrackerSession>, TrackerError> {
        (**self).create()
    }
}

/// Rounds every frame to 8-bit precision before the inner tracker sees it.
///
/// Remote trackers only ever receive 8-bit PNG frames; wrapping in-process
/// trackers the same way makes both paths observe identical pixels.
pub struct Quantized<S> {
    inner: S,
}

impl<S: TrackerSession> Quantized<S> {
    pub fn new(inner: S) -> Self {
        Quantized { inner }
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: TrackerSession> TrackerSession for Quantized<S> {
    fn init(&mut self, frame_index: usize, frame: &ImageBuffer, bbox: BoundingBox) -> Result<(), TrackerError> {
        self.inner.init(frame_index, &frame.quantized(), bbox)
    }

    fn track(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        self.inner.track(frame_index, &frame.quantized())
    }

    fn probe(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        self.inner.probe(frame_index, &frame.quantized())
    }

    fn reset(&mut self) -> Result<(), TrackerError> {
        self.inner.reset()
    }
}

/// Offset in `[-0.5, 0.5]` of the vertex of the parabola through three
/// equally spaced samples around a discrete maximum. Zero when the samples
/// do not bracket a peak.
pub(crate) fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let curvature = left - 2.0 * center + right;
    if curvature >= 0.0 || !curvature.is_finite() {
        return 0.0;
    }
    (0.5 * (left - right) / curvature).clamp(-0.5, 0.5)
}

/// Integer-pixel window that a frame-bound box occupies.
pub(crate) fn pixel_window(bbox: &BoundingBox, width: usize, height: usize) -> Result<(usize, usize, usize, usize), TrackerError> {
    if !bbox.within(width, height) {
        return Err(TrackerError::OutOfBounds { bbox: *bbox, width, height });
    }
    let w = (bbox.w().round() as usize).clamp(1, width);
    let h = (bbox.h().round() as usize).clamp(1, height);
    let x = (bbox.x().round().max(0.0) as usize).min(width - w);
    let y = (bbox.y().round().max(0.0) as usize).min(height - h);
    Ok((x, y, w, h))
}
