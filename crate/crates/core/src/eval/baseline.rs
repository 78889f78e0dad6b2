use rand::Rng;

use crate::attack::FrameAttackTrace;
use crate::image::{clamp_to_image, ContractError, ImageBuffer, PerturbationField, Shape};
use crate::sequence::Sequence;

/// Uniform noise in `[-1, 1)` rescaled to L2 norm `norm` exactly (before any
/// clamping). Zero norm gives a zero field.
pub fn matched_random_perturbation<R: Rng>(shape: Shape, norm: f64, rng: &mut R) -> PerturbationField {
    if norm == 0.0 {
        return PerturbationField::zeros(shape);
    }
    loop {
        let data: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let field = PerturbationField::from_vec(shape, data).expect("length matches shape");
        let n = field.l2_norm();
        if n > 0.0 {
            return field.scaled(norm / n);
        }
    }
}

/// Same-noise-level random counterpart of an attacked sequence: frame `t`
/// gets random noise of norm `traces[t - 1].final_noise_l2`. Frame 0 stays clean.
pub fn matched_random_baseline<R: Rng>(
    seq: &Sequence,
    traces: &[FrameAttackTrace],
    rng: &mut R,
) -> Result<Vec<ImageBuffer>, ContractError> {
    if traces.len() + 1 != seq.len() {
        return Err(ContractError::invalid(format!(
            "{} traces for a {}-frame sequence, expected {}",
            traces.len(),
            seq.len(),
            seq.len() - 1
        )));
    }
    let frames = seq.frames();
    let mut out = vec![frames[0].clone()];
    for (i, trace) in traces.iter().enumerate() {
        if trace.frame_index != i + 1 {
            return Err(ContractError::invalid(format!(
                "trace {i} is for frame {}, expected {}",
                trace.frame_index,
                i + 1
            )));
        }
        let frame = &frames[i + 1];
        let noise = matched_random_perturbation(frame.shape(), trace.final_noise_l2, rng);
        out.push(clamp_to_image(frame, &noise)?);
    }
    Ok(out)
}
