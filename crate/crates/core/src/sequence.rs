use crate::bbox::BoundingBox;
use crate::image::{ContractError, ImageBuffer, Shape};

/// An ordered run of same-shaped frames with the target's first-frame box and
/// optional per-frame ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    name: String,
    frames: Vec<ImageBuffer>,
    ground_truth: Option<Vec<BoundingBox>>,
    init_box: BoundingBox,
}

impl Sequence {
    pub fn new(
        name: impl Into<String>,
        frames: Vec<ImageBuffer>,
        ground_truth: Option<Vec<BoundingBox>>,
        init_box: BoundingBox,
    ) -> Result<Self, ContractError> {
        if frames.len() < 2 {
            return Err(ContractError::invalid(format!(
                "a sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let shape = frames[0].shape();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != shape) {
            return Err(ContractError::invalid(format!(
                "frame {i} has shape {} but frame 0 has {shape}",
                f.shape()
            )));
        }
        if let Some(gt) = &ground_truth {
            if gt.len() != frames.len() {
                return Err(ContractError::invalid(format!(
                    "{} ground-truth boxes for {} frames",
                    gt.len(),
                    frames.len()
                )));
            }
            if gt[0] != init_box {
                return Err(ContractError::invalid("ground_truth[0] must equal the init box"));
            }
        }
        if !init_box.within(shape.width, shape.height) {
            return Err(ContractError::invalid(format!(
                "init box {init_box:?} lies outside the {shape} frame"
            )));
        }
        Ok(Sequence { name: name.into(), frames, ground_truth, init_box })
    }

    /// Sequence whose init box is the first ground-truth box.
    pub fn with_ground_truth(
        name: impl Into<String>,
        frames: Vec<ImageBuffer>,
        ground_truth: Vec<BoundingBox>,
    ) -> Result<Self, ContractError> {
        let init = *ground_truth
            .first()
            .ok_or_else(|| ContractError::invalid("empty ground truth"))?;
        Sequence::new(name, frames, Some(ground_truth), init)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn frames(&self) -> &[ImageBuffer] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.frames[0].shape()
    }

    pub fn ground_truth(&self) -> Option<&[BoundingBox]> {
        self.ground_truth.as_deref()
    }

    pub fn init_box(&self) -> BoundingBox {
        self.init_box
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize) -> ImageBuffer {
        ImageBuffer::filled(Shape::new(w, 8, 1).unwrap(), 10.0)
    }

    #[test]
    fn validates_structure() {
        let b = BoundingBox::new(1.0, 1.0, 4.0, 4.0).unwrap();
        assert!(Sequence::new("s", vec![frame(8)], None, b).is_err());
        assert!(Sequence::new("s", vec![frame(8), frame(9)], None, b).is_err());
        assert!(Sequence::new("s", vec![frame(8), frame(8)], Some(vec![b]), b).is_err());
        let other = b.translated(1.0, 0.0);
        assert!(Sequence::new("s", vec![frame(8), frame(8)], Some(vec![other, b]), b).is_err());
        assert!(Sequence::new("s", vec![frame(8), frame(8)], Some(vec![b, b]), b).is_ok());
    }
}
