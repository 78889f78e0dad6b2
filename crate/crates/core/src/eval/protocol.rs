use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::geometry::{center_error, iou};
use crate::image::ImageBuffer;
use crate::sequence::Sequence;
use crate::trackers::TrackerFactory;

use super::EvalError;

/// Frames skipped after a failure before the tracker is reinitialized.
pub const REINIT_GAP: usize = 5;
/// Frames after a reinitialization that do not count toward accuracy.
pub const BURN_IN: usize = 10;
pub const SUCCESS_THRESHOLDS: usize = 21;
pub const MAX_PRECISION_PX: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VotResult {
    /// Mean IoU over included frames; 0 when no frame is included.
    pub mean_iou: f64,
    pub failures: usize,
    /// Failures per evaluated (non-init) frame.
    pub failure_rate: f64,
    /// IoU with ground truth for every tracked frame; `None` on init,
    /// reinit and skipped frames.
    pub per_frame_iou: Vec<Option<f64>>,
    /// Whether the frame counts toward `mean_iou`.
    pub included: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpeResult {
    /// `(threshold, fraction of frames with IoU > threshold)`; at threshold 1
    /// the count is of exact overlaps.
    pub success_curve: Vec<(f64, f64)>,
    pub auc: f64,
    /// `(threshold px, fraction of frames with center error <= threshold)`.
    pub precision_curve: Vec<(f64, f64)>,
    pub precision_at_20px: f64,
    pub mean_iou: f64,
    /// Tracker output per frame, starting with the init box.
    pub boxes: Vec<BoundingBox>,
}

fn checked_frames<'a>(
    seq: &'a Sequence,
    frames_override: Option<&'a [ImageBuffer]>,
) -> Result<(&'a [ImageBuffer], &'a [BoundingBox]), EvalError> {
    let gt = seq.ground_truth().ok_or(EvalError::MissingGroundTruth)?;
    let frames = match frames_override {
        None => seq.frames(),
        Some(frames) => {
            if frames.len() != seq.len() {
                return Err(EvalError::FrameOverride(format!(
                    "{} override frames for a {}-frame sequence",
                    frames.len(),
                    seq.len()
                )));
            }
            if let Some(i) = frames.iter().position(|f| f.shape() != seq.shape()) {
                return Err(EvalError::FrameOverride(format!(
                    "override frame {i} has shape {}, expected {}",
                    frames[i].shape(),
                    seq.shape()
                )));
            }
            frames
        }
    };
    Ok((frames, gt))
}

/// VOT-style supervised run: a frame with zero overlap is a failure, and the
/// tracker is reinitialized on ground truth `REINIT_GAP` frames later.
pub fn run_vot_protocol(
    seq: &Sequence,
    factory: &dyn TrackerFactory,
    frames_override: Option<&[ImageBuffer]>,
) -> Result<VotResult, EvalError> {
    let (frames, gt) = checked_frames(seq, frames_override)?;
    let tracker_err = |frame| move |source| EvalError::Tracker { frame, source };
    let mut session = factory.create().map_err(tracker_err(0))?;
    session.init(0, &frames[0], gt[0]).map_err(tracker_err(0))?;

    let m = frames.len();
    let mut per_frame_iou = vec![None; m];
    let mut included = vec![false; m];
    let mut failures = 0;
    let mut reinit_at: Option<usize> = None;
    let mut counted_from = 1;
    for t in 1..m {
        if let Some(r) = reinit_at {
            if t < r {
                continue;
            }
            session.init(t, &frames[t], gt[t]).map_err(tracker_err(t))?;
            reinit_at = None;
            counted_from = t + 1 + BURN_IN;
            continue;
        }
        let pred = session.track(t, &frames[t]).map_err(tracker_err(t))?;
        let overlap = iou(&pred, &gt[t]);
        per_frame_iou[t] = Some(overlap);
        if overlap == 0.0 {
            failures += 1;
            reinit_at = Some(t + REINIT_GAP);
        } else {
            included[t] = t >= counted_from;
        }
    }
    let kept: Vec<f64> = (0..m).filter(|&t| included[t]).filter_map(|t| per_frame_iou[t]).collect();
    let mean_iou = if kept.is_empty() { 0.0 } else { kept.iter().sum::<f64>() / kept.len() as f64 };
    Ok(VotResult { mean_iou, failures, failure_rate: failures as f64 / (m - 1) as f64, per_frame_iou, included })
}

/// One-pass run from the first frame to the last, no resets.
pub fn run_ope_protocol(
    seq: &Sequence,
    factory: &dyn TrackerFactory,
    frames_override: Option<&[ImageBuffer]>,
) -> Result<OpeResult, EvalError> {
    let (frames, gt) = checked_frames(seq, frames_override)?;
    let boxes = one_pass(factory, frames, gt[0])?;
    let mut out = ope_from_boxes(&boxes[1..], &gt[1..])?;
    out.boxes = boxes;
    Ok(out)
}

/// Tracker predictions for every frame, `boxes[0]` being `init`.
pub fn one_pass(
    factory: &dyn TrackerFactory,
    frames: &[ImageBuffer],
    init: BoundingBox,
) -> Result<Vec<BoundingBox>, EvalError> {
    let mut session = factory.create().map_err(|source| EvalError::Tracker { frame: 0, source })?;
    session.init(0, &frames[0], init).map_err(|source| EvalError::Tracker { frame: 0, source })?;
    let mut boxes = vec![init];
    for (t, frame) in frames.iter().enumerate().skip(1) {
        boxes.push(session.track(t, frame).map_err(|source| EvalError::Tracker { frame: t, source })?);
    }
    Ok(boxes)
}

/// Success and precision curves from logged prediction/ground-truth pairs.
/// The returned `boxes` is empty.
pub fn ope_from_boxes(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<OpeResult, EvalError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(EvalError::FrameOverride(format!(
            "{} predictions for {} ground-truth boxes",
            pred.len(),
            gt.len()
        )));
    }
    let n = pred.len() as f64;
    let overlaps: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect();
    let errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| center_error(p, g)).collect();

    let success_curve: Vec<(f64, f64)> = (0..SUCCESS_THRESHOLDS)
        .map(|i| {
            let tau = i as f64 / (SUCCESS_THRESHOLDS - 1) as f64;
            (tau, overlaps.iter().filter(|&&o| o > tau || o == 1.0).count() as f64 / n)
        })
        .collect();
    let auc = success_curve.iter().map(|&(_, s)| s).sum::<f64>() / SUCCESS_THRESHOLDS as f64;
    let precision_curve: Vec<(f64, f64)> = (0..=MAX_PRECISION_PX)
        .map(|px| {
            let tau = px as f64;
            (tau, errors.iter().filter(|&&e| e <= tau).count() as f64 / n)
        })
        .collect();
    let precision_at_20px = precision_curve[20].1;
    Ok(OpeResult {
        success_curve,
        auc,
        precision_curve,
        precision_at_20px,
        mean_iou: overlaps.iter().sum::<f64>() / n,
        boxes: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Shape;
    use crate::synth::{generate, SynthSpec};
    use crate::trackers::{GroundTruthTracker, NccTracker, ScriptedTracker, TrackerError, TrackerSession};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_sequence(len: usize) -> Sequence {
        let shape = Shape::new(64, 64, 1).unwrap();
        let gt: Vec<BoundingBox> = (0..len).map(|t| BoundingBox::new(4.0 + t as f64, 8.0, 10.0, 10.0).unwrap()).collect();
        Sequence::with_ground_truth("flat", vec![ImageBuffer::filled(shape, 50.0); len], gt).unwrap()
    }

    fn scripted(boxes: Vec<BoundingBox>) -> impl TrackerFactory {
        move || -> Result<Box<dyn TrackerSession>, TrackerError> { Ok(Box::new(ScriptedTracker::new(boxes.clone()))) }
    }

    #[test]
    fn ground_truth_double_is_perfect() {
        let seq = flat_sequence(12);
        let gt = seq.ground_truth().unwrap().to_vec();
        let factory = scripted(gt);
        let vot = run_vot_protocol(&seq, &factory, None).unwrap();
        assert_eq!((vot.failures, vot.mean_iou), (0, 1.0));
        let ope = run_ope_protocol(&seq, &factory, None).unwrap();
        assert_eq!((ope.auc, ope.precision_at_20px), (1.0, 1.0));
    }

    #[test]
    fn disjoint_predictions_score_zero() {
        let seq = flat_sequence(6);
        let far = BoundingBox::new(50.0, 50.0, 5.0, 5.0).unwrap();
        let mut boxes = vec![far; 6];
        boxes[0] = seq.init_box();
        let ope = run_ope_protocol(&seq, &scripted(boxes), None).unwrap();
        assert_eq!(ope.success_curve[0], (0.0, 0.0));
        assert_eq!(ope.auc, 0.0);
    }

    #[test]
    fn single_disjoint_frame_is_one_failure_with_reinit() {
        let seq = flat_sequence(30);
        let mut boxes = seq.ground_truth().unwrap().to_vec();
        boxes[4] = BoundingBox::new(50.0, 50.0, 5.0, 5.0).unwrap();
        let vot = run_vot_protocol(&seq, &scripted(boxes), None).unwrap();
        assert_eq!(vot.failures, 1);
        // Failure at 4, gap 5..8, reinit on 9, burn-in 10..=19.
        let tracked: Vec<usize> = (0..30).filter(|&t| vot.per_frame_iou[t].is_some()).collect();
        let expected: Vec<usize> = (1..=4).chain(10..30).collect();
        assert_eq!(tracked, expected);
        let counted: Vec<usize> = (0..30).filter(|&t| vot.included[t]).collect();
        let expected: Vec<usize> = (1..=3).chain(20..30).collect();
        assert_eq!(counted, expected);
        assert_eq!(vot.mean_iou, 1.0);
    }

    #[test]
    fn missing_ground_truth_is_contract_violation() {
        let seq = flat_sequence(3);
        let bare = Sequence::new("bare", seq.frames().to_vec(), None, seq.init_box()).unwrap();
        let factory = scripted(vec![seq.init_box(); 3]);
        assert!(matches!(run_vot_protocol(&bare, &factory, None), Err(EvalError::MissingGroundTruth)));
        assert!(matches!(run_ope_protocol(&bare, &factory, None), Err(EvalError::MissingGroundTruth)));
    }

    #[test]
    fn logged_boxes_replay_matches_direct_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rand_box = |rng: &mut ChaCha8Rng| {
            BoundingBox::new(rng.random_range(0.0..60.0), rng.random_range(0.0..60.0), rng.random_range(1.0..30.0), rng.random_range(1.0..30.0)).unwrap()
        };
        let pred: Vec<BoundingBox> = (0..200).map(|_| rand_box(&mut rng)).collect();
        let gt: Vec<BoundingBox> = (0..200).map(|_| rand_box(&mut rng)).collect();
        let out = ope_from_boxes(&pred, &gt).unwrap();

        // Row-by-row recount with an inline overlap formula.
        let overlap = |a: &BoundingBox, b: &BoundingBox| {
            let iw = (a.x() + a.w()).min(b.x() + b.w()) - a.x().max(b.x());
            let ih = (a.y() + a.h()).min(b.y() + b.h()) - a.y().max(b.y());
            let inter = iw.max(0.0) * ih.max(0.0);
            inter / (a.w() * a.h() + b.w() * b.h() - inter)
        };
        for (k, &(tau, s)) in out.success_curve.iter().enumerate() {
            let hits = pred
                .iter()
                .zip(&gt)
                .filter(|(p, g)| overlap(p, g) > k as f64 * 0.05 || (k == 20 && overlap(p, g) >= 1.0))
                .count();
            assert!((tau - k as f64 * 0.05).abs() < 1e-12);
            assert!((s - hits as f64 / 200.0).abs() < 1e-12);
        }
        for &(tau, p) in &out.precision_curve {
            let hits = pred
                .iter()
                .zip(&gt)
                .filter(|(p, g)| {
                    let (dx, dy) = (p.x() + p.w() / 2.0 - g.x() - g.w() / 2.0, p.y() + p.h() / 2.0 - g.y() - g.h() / 2.0);
                    (dx * dx + dy * dy).sqrt() <= tau
                })
                .count();
            assert_eq!(p, hits as f64 / 200.0);
        }
        assert!(out.success_curve.windows(2).all(|w| w[1].1 <= w[0].1));
        assert!(out.precision_curve.windows(2).all(|w| w[1].1 >= w[0].1));
        assert_eq!(ope_from_boxes(&pred, &gt).unwrap(), out);
    }

    #[test]
    fn ncc_on_easy_sequence_has_no_failures() {
        let seq = generate(&SynthSpec::easy(1)).unwrap();
        let factory = || -> Result<Box<dyn TrackerSession>, TrackerError> { Ok(Box::new(NccTracker::default())) };
        let vot = run_vot_protocol(&seq, &factory, None).unwrap();
        assert_eq!(vot.failures, 0);
        let ope = run_ope_protocol(&seq, &factory, None).unwrap();
        let gt = seq.ground_truth().unwrap();
        let replay: f64 = (1..seq.len()).map(|t| iou(&ope.boxes[t], &gt[t])).sum::<f64>() / (seq.len() - 1) as f64;
        assert_eq!(vot.mean_iou, replay);
        let gt_factory = || -> Result<Box<dyn TrackerSession>, TrackerError> {
            Ok(Box::new(GroundTruthTracker::for_sequence(&generate(&SynthSpec::easy(1)).unwrap()).unwrap()))
        };
        assert_eq!(run_vot_protocol(&seq, &gt_factory, None).unwrap().mean_iou, 1.0);
    }

    #[test]
    fn override_length_is_checked() {
        let seq = flat_sequence(4);
        let factory = scripted(seq.ground_truth().unwrap().to_vec());
        let short = &seq.frames()[..3];
        assert!(matches!(run_ope_protocol(&seq, &factory, Some(short)), Err(EvalError::FrameOverride(_))));
    }
}
