//! Tracking metrics under the three conditions: original frames, matched
//! random noise, and the attack.

mod baseline;
mod protocol;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::{matched_random_baseline, matched_random_perturbation};
pub use protocol::{
    one_pass, ope_from_boxes, run_ope_protocol, run_vot_protocol, OpeResult, VotResult, BURN_IN, MAX_PRECISION_PX,
    REINIT_GAP, SUCCESS_THRESHOLDS,
};
pub use report::{report_csv, write_report, CSV_HEADER};

use crate::attack::FrameAttackTrace;
use crate::bbox::BoundingBox;
use crate::geometry::iou;
use crate::image::{l2_distance, ContractError, ImageBuffer};
use crate::sequence::Sequence;
use crate::trackers::{TrackerError, TrackerFactory};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sequence has no ground truth")]
    MissingGroundTruth,
    #[error("{0}")]
    FrameOverride(String),
    #[error("tracker failed on frame {frame}: {source}")]
    Tracker { frame: usize, source: TrackerError },
    #[error(transparent)]
    Contract(#[from] ContractError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Original,
    RandomNoise,
    Attack,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Original => "original",
            Condition::RandomNoise => "random_noise",
            Condition::Attack => "attack",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub name: String,
    pub frames: usize,
    /// VOT-style accuracy.
    pub mean_iou: f64,
    pub failures: usize,
    pub failure_rate: f64,
    pub success_auc: f64,
    pub precision_at_20px: f64,
    /// Mean IoU with ground truth over the one-pass run.
    pub ope_mean_iou: f64,
    /// Mean IoU between this run's one-pass boxes and the clean run's, when
    /// the clean run is known.
    pub mean_spatial_iou: Option<f64>,
    pub mean_queries_per_frame: f64,
    /// Mean L2 distance of the evaluated frames from the clean frames,
    /// over frames 2..M.
    pub mean_noise_l2: f64,
    pub success_curve: Vec<(f64, f64)>,
    pub precision_curve: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub sequences: usize,
    pub mean_iou: f64,
    pub failures: f64,
    pub failure_rate: f64,
    pub success_auc: f64,
    pub precision_at_20px: f64,
    pub ope_mean_iou: f64,
    pub mean_spatial_iou: Option<f64>,
    pub mean_queries_per_frame: f64,
    pub mean_noise_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: Condition,
    pub per_sequence: Vec<SequenceMetrics>,
    /// Unweighted mean over sequences.
    pub aggregate: AggregateMetrics,
}

impl EvalReport {
    pub fn new(condition: Condition, per_sequence: Vec<SequenceMetrics>) -> Self {
        let aggregate = aggregate(&per_sequence);
        EvalReport { condition, per_sequence, aggregate }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn aggregate(rows: &[SequenceMetrics]) -> AggregateMetrics {
    if rows.is_empty() {
        return AggregateMetrics::default();
    }
    let spatial: Option<Vec<f64>> = rows.iter().map(|r| r.mean_spatial_iou).collect();
    AggregateMetrics {
        sequences: rows.len(),
        mean_iou: mean(rows.iter().map(|r| r.mean_iou)),
        failures: mean(rows.iter().map(|r| r.failures as f64)),
        failure_rate: mean(rows.iter().map(|r| r.failure_rate)),
        success_auc: mean(rows.iter().map(|r| r.success_auc)),
        precision_at_20px: mean(rows.iter().map(|r| r.precision_at_20px)),
        ope_mean_iou: mean(rows.iter().map(|r| r.ope_mean_iou)),
        mean_spatial_iou: spatial.map(|v| mean(v.into_iter())),
        mean_queries_per_frame: mean(rows.iter().map(|r| r.mean_queries_per_frame)),
        mean_noise_l2: mean(rows.iter().map(|r| r.mean_noise_l2)),
    }
}

/// Runs both protocols on `frames` (the sequence's own frames when `None`) and
/// collects the per-sequence row. `clean_boxes` is the one-pass trajectory on
/// clean frames; `traces` supplies query counts for the attack condition.
pub fn evaluate_sequence(
    seq: &Sequence,
    factory: &dyn TrackerFactory,
    frames: Option<&[ImageBuffer]>,
    clean_boxes: Option<&[BoundingBox]>,
    traces: Option<&[FrameAttackTrace]>,
) -> Result<SequenceMetrics, EvalError> {
    let vot = run_vot_protocol(seq, factory, frames)?;
    let ope = run_ope_protocol(seq, factory, frames)?;
    let m = seq.len();
    let mean_spatial_iou = match clean_boxes {
        Some(clean) if clean.len() == m => Some(mean((1..m).map(|t| iou(&ope.boxes[t], &clean[t])))),
        Some(clean) => {
            return Err(EvalError::FrameOverride(format!("{} clean boxes for {m} frames", clean.len())));
        }
        None => None,
    };
    let mean_noise_l2 = match frames {
        Some(frames) => {
            let d = (1..m).map(|t| l2_distance(&frames[t], &seq.frames()[t])).collect::<Result<Vec<_>, _>>()?;
            mean(d.into_iter())
        }
        None => 0.0,
    };
    let mean_queries_per_frame = traces.map(|t| mean(t.iter().map(|t| t.queries_used as f64))).unwrap_or(0.0);
    Ok(SequenceMetrics {
        name: seq.name().to_string(),
        frames: m,
        mean_iou: vot.mean_iou,
        failures: vot.failures,
        failure_rate: vot.failure_rate,
        success_auc: ope.auc,
        precision_at_20px: ope.precision_at_20px,
        ope_mean_iou: ope.mean_iou,
        mean_spatial_iou,
        mean_queries_per_frame,
        mean_noise_l2,
        success_curve: ope.success_curve,
        precision_curve: ope.precision_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};
    use crate::trackers::{GroundTruthTracker, TrackerSession};

    #[test]
    fn ground_truth_row_and_aggregate() {
        let seq = generate(&SynthSpec { length: 8, ..SynthSpec::easy(2) }).unwrap();
        let gt = seq.ground_truth().unwrap().to_vec();
        let factory = {
            let gt = gt.clone();
            move || -> Result<Box<dyn TrackerSession>, TrackerError> { Ok(Box::new(GroundTruthTracker::new(gt.clone()))) }
        };
        let row = evaluate_sequence(&seq, &factory, None, Some(&gt), None).unwrap();
        assert_eq!((row.mean_iou, row.failures, row.success_auc, row.precision_at_20px), (1.0, 0, 1.0, 1.0));
        assert_eq!(row.mean_spatial_iou, Some(1.0));
        let report = EvalReport::new(Condition::Original, vec![row.clone(), row]);
        assert_eq!(report.aggregate.sequences, 2);
        assert_eq!(report.aggregate.mean_iou, 1.0);
        assert_eq!(EvalReport::new(Condition::Attack, vec![]).aggregate, AggregateMetrics::default());
    }
}
