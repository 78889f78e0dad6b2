use crate::bbox::BoundingBox;
use crate::image::{ImageBuffer, Shape};

use super::TrackerError;
use super::TrackerSession;

/// Replays a fixed list of boxes by frame index, ignoring pixels.
#[derive(Clone, Debug)]
pub struct ScriptedTracker {
    boxes: Vec<BoundingBox>,
    shape: Option<Shape>,
}

impl ScriptedTracker {
    pub fn new(boxes: Vec<BoundingBox>) -> Self {
        ScriptedTracker { boxes, shape: None }
    }

    fn answer(&self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        let expected = self.shape.ok_or(TrackerError::Uninitialized)?;
        if frame.shape() != expected {
            return Err(TrackerError::ShapeMismatch { expected, got: frame.shape() });
        }
        self.boxes
            .get(frame_index)
            .copied()
            .ok_or(TrackerError::PastEnd { index: frame_index, len: self.boxes.len() })
    }
}

impl TrackerSession for ScriptedTracker {
    fn init(&mut self, frame_index: usize, frame: &ImageBuffer, bbox: BoundingBox) -> Result<(), TrackerError> {
        if frame_index >= self.boxes.len() {
            return Err(TrackerError::PastEnd { index: frame_index, len: self.boxes.len() });
        }
        if !bbox.within(frame.width(), frame.height()) {
            return Err(TrackerError::OutOfBounds { bbox, width: frame.width(), height: frame.height() });
        }
        self.shape = Some(frame.shape());
        Ok(())
    }

    fn track(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        self.answer(frame_index, frame)
    }

    fn probe(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        self.answer(frame_index, frame)
    }

    fn reset(&mut self) -> Result<(), TrackerError> {
        self.shape = None;
        Ok(())
    }
}

/// Unattackable oracle: always answers with the ground-truth box of the
/// requested frame, whatever the pixels.
#[derive(Clone, Debug)]
pub struct GroundTruthTracker(ScriptedTracker);

impl GroundTruthTracker {
    pub fn new(ground_truth: Vec<BoundingBox>) -> Self {
        GroundTruthTracker(ScriptedTracker::new(ground_truth))
    }

    /// Fails when the sequence carries no ground truth.
    pub fn for_sequence(seq: &crate::sequence::Sequence) -> Result<Self, TrackerError> {
        let gt = seq.ground_truth().ok_or_else(|| {
            crate::image::ContractError::invalid(format!("sequence {} has no ground truth", seq.name()))
        })?;
        Ok(GroundTruthTracker::new(gt.to_vec()))
    }
}

impl TrackerSession for GroundTruthTracker {
    fn init(&mut self, frame_index: usize, frame: &ImageBuffer, bbox: BoundingBox) -> Result<(), TrackerError> {
        self.0.init(frame_index, frame, bbox)
    }

    fn track(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        self.0.track(frame_index, frame)
    }

    fn probe(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        self.0.probe(frame_index, frame)
    }

    fn reset(&mut self) -> Result<(), TrackerError> {
        self.0.reset()
    }
}

/// Returns one fixed box for every frame.
#[derive(Clone, Debug)]
pub struct ConstantTracker {
    bbox: BoundingBox,
    initialized: bool,
}

impl ConstantTracker {
    pub fn new(bbox: BoundingBox) -> Self {
        ConstantTracker { bbox, initialized: false }
    }
}

impl TrackerSession for ConstantTracker {
    fn init(&mut self, _frame_index: usize, _frame: &ImageBuffer, _bbox: BoundingBox) -> Result<(), TrackerError> {
        self.initialized = true;
        Ok(())
    }

    fn track(&mut self, _frame_index: usize, _frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        if !self.initialized {
            return Err(TrackerError::Uninitialized);
        }
        Ok(self.bbox)
    }

    fn probe(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        self.track(frame_index, frame)
    }

    fn reset(&mut self) -> Result<(), TrackerError> {
        self.initialized = false;
        Ok(())
    }
}
