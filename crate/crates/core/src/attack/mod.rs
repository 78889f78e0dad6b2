//! The attack engine.
//!
//! Per frame: build a heavy-noise anchor, warm-start from the previous
//! frames' learned perturbation, then iterate. Each iteration draws
//! tangential candidates on the current iso-noise sphere, keeps the one whose
//! prediction scores lowest, and steps from it toward the anchor. A step is
//! kept only if the fused score did not go up; otherwise the step length is
//! backed off and the step retried.
//!
//! Per sequence: two sessions of the same tracker run side by side, one on
//! clean frames (the reference trajectory) and one on the frames the attack
//! produces.

mod steps;

use std::collections::VecDeque;
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use steps::{
    cosine_between, make_heavy_noise_image, normal_step, sample_tangential, select_tangential,
    tangential_from_draw, FrameRefs, Selection, StepController,
};

use crate::bbox::BoundingBox;
use crate::config::AttackConfig;
use crate::geometry::{fused_score, iou, IoUScores};
use crate::image::{clamp_to_image, ContractError, ImageBuffer, PerturbationField};
use crate::sequence::Sequence;
use crate::trackers::{TrackerError, TrackerFactory, TrackerSession};

/// The anchor must push the tracker at least this far off before normal
/// steps toward it are meaningful.
const ANCHOR_SPATIAL_GATE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("tangential step undefined at zero noise radius")]
    ZeroRadius,
    #[error("cosine undefined for a zero perturbation")]
    ZeroNorm,
    #[error("no tangential candidates to select from")]
    NoCandidates,
    #[error("oracle query failed on candidate {candidate}: {source}")]
    Candidate { candidate: usize, source: TrackerError },
    #[error("oracle query failed during {stage}: {source}")]
    Oracle { stage: &'static str, source: TrackerError },
    #[error(transparent)]
    Contract(#[from] ContractError),
}

impl AttackError {
    pub fn tracker_error(&self) -> Option<&TrackerError> {
        match self {
            AttackError::Candidate { source, .. } | AttackError::Oracle { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    IouBelowThreshold,
    NoiseBudgetExceeded,
    IterationCap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    /// The normal step was kept.
    Normal,
    /// Every normal step was rejected but the tangential point alone did not
    /// raise the score, so it was kept.
    Tangential,
    Rejected,
}

/// Where every oracle call of a frame went.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBreakdown {
    /// Clean-run prediction of this frame.
    pub clean: usize,
    /// Check that the heavy-noise anchor is off target.
    pub anchor: usize,
    /// Score of the warm-started frame.
    pub warm_start: usize,
    pub candidates: usize,
    pub normal: usize,
    /// The committed track call on the final adversarial frame.
    pub commit: usize,
}

impl QueryBreakdown {
    pub fn total(&self) -> usize {
        self.clean + self.anchor + self.warm_start + self.candidates + self.normal + self.commit
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub candidate_queries: usize,
    pub normal_queries: usize,
    pub selected: Option<usize>,
    /// Step length of the last normal step attempted.
    pub eps: f64,
    pub outcome: StepOutcome,
    /// Fused score held after this iteration.
    pub fused: f64,
    /// Noise level held after this iteration (unclamped offset norm).
    pub noise_l2: f64,
}

/// Equality ignores `query_wall_ms`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameAttackTrace {
    pub frame_index: usize,
    pub queries_used: usize,
    pub queries: QueryBreakdown,
    pub anchor_amplitude: f64,
    pub anchor_distance: f64,
    pub warm_start_l2: f64,
    pub initial_scores: Option<IoUScores>,
    /// Scores after every accepted iteration.
    pub iou_trajectory: Vec<IoUScores>,
    pub iterations: Vec<IterationRecord>,
    pub final_noise_l2: f64,
    /// Cosine similarity between consecutive accepted perturbations.
    pub cosine_steps: Vec<f64>,
    pub stop_reason: StopReason,
    pub error: Option<String>,
    /// `clamp(clean + offset) - clean` of the returned frame. Not serialized.
    #[serde(skip)]
    pub final_perturbation: Option<PerturbationField>,
    /// Wall time of every oracle call made by the engine, in milliseconds.
    /// Not serialized, so traces stay bit-reproducible.
    #[serde(skip)]
    pub query_wall_ms: Vec<f64>,
}

impl PartialEq for FrameAttackTrace {
    fn eq(&self, other: &Self) -> bool {
        let FrameAttackTrace {
            frame_index,
            queries_used,
            queries,
            anchor_amplitude,
            anchor_distance,
            warm_start_l2,
            initial_scores,
            iou_trajectory,
            iterations,
            final_noise_l2,
            cosine_steps,
            stop_reason,
            error,
            final_perturbation,
            query_wall_ms: _,
        } = self;
        *frame_index == other.frame_index
            && *queries_used == other.queries_used
            && *queries == other.queries
            && *anchor_amplitude == other.anchor_amplitude
            && *anchor_distance == other.anchor_distance
            && *warm_start_l2 == other.warm_start_l2
            && *initial_scores == other.initial_scores
            && *iou_trajectory == other.iou_trajectory
            && *iterations == other.iterations
            && *final_noise_l2 == other.final_noise_l2
            && *cosine_steps == other.cosine_steps
            && *stop_reason == other.stop_reason
            && *error == other.error
            && *final_perturbation == other.final_perturbation
    }
}

impl FrameAttackTrace {
    fn new(frame_index: usize) -> Self {
        FrameAttackTrace {
            frame_index,
            queries_used: 0,
            queries: QueryBreakdown { clean: 1, ..Default::default() },
            anchor_amplitude: 0.0,
            anchor_distance: 0.0,
            warm_start_l2: 0.0,
            initial_scores: None,
            iou_trajectory: Vec::new(),
            iterations: Vec::new(),
            final_noise_l2: 0.0,
            cosine_steps: Vec::new(),
            stop_reason: StopReason::IterationCap,
            error: None,
            final_perturbation: None,
            query_wall_ms: Vec::new(),
        }
    }

    /// Recomputes the query total from the per-iteration records.
    pub fn reconstructed_queries(&self) -> usize {
        let per_iter: usize = self.iterations.iter().map(|r| r.candidate_queries + r.normal_queries).sum();
        self.queries.clean + self.queries.anchor + self.queries.warm_start + per_iter + self.queries.commit
    }
}

/// Result of attacking one frame. On failure `adversarial` is the clean frame.
#[derive(Debug)]
pub struct FrameAttack {
    pub adversarial: ImageBuffer,
    pub trace: FrameAttackTrace,
    pub failure: Option<AttackError>,
}

/// Probes through a session while timing each call.
struct Oracle<'a> {
    session: &'a mut dyn TrackerSession,
    frame_index: usize,
    wall_ms: Vec<f64>,
}

impl Oracle<'_> {
    fn probe(&mut self, stage: &'static str, image: &ImageBuffer) -> Result<BoundingBox, AttackError> {
        let started = Instant::now();
        let out = self
            .session
            .probe(self.frame_index, image)
            .map_err(|source| AttackError::Oracle { stage, source })?;
        self.wall_ms.push(started.elapsed().as_secs_f64() * 1e3);
        Ok(out)
    }
}

/// Attacks one frame against `session`, which must already be positioned on
/// the previous frame. The clean-run prediction for this frame comes in as
/// `refs.spatial`; it is counted as one query in the trace.
pub fn attack_frame<R: Rng>(
    frame_index: usize,
    frame: &ImageBuffer,
    prior: &PerturbationField,
    session: &mut dyn TrackerSession,
    refs: FrameRefs,
    cfg: &AttackConfig,
    rng: &mut R,
) -> FrameAttack {
    let mut trace = FrameAttackTrace::new(frame_index);
    let mut oracle = Oracle { session, frame_index, wall_ms: Vec::new() };
    let result = run_frame(frame, prior, &mut oracle, refs, cfg, rng, &mut trace);
    trace.query_wall_ms = oracle.wall_ms;
    match result {
        Ok(offset) => {
            let adversarial = clamp_to_image(frame, &offset).expect("offset shaped like frame");
            let applied = PerturbationField::between(frame, &adversarial).expect("same shape");
            trace.final_noise_l2 = applied.l2_norm();
            trace.final_perturbation = Some(applied);
            trace.queries_used = trace.queries.total();
            FrameAttack { adversarial, trace, failure: None }
        }
        Err(err) => {
            trace.error = Some(err.to_string());
            trace.final_noise_l2 = 0.0;
            trace.final_perturbation = Some(PerturbationField::zeros(frame.shape()));
            trace.queries_used = trace.queries.total();
            FrameAttack { adversarial: frame.clone(), trace, failure: Some(err) }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_frame<R: Rng>(
    frame: &ImageBuffer,
    prior: &PerturbationField,
    oracle: &mut Oracle<'_>,
    refs: FrameRefs,
    cfg: &AttackConfig,
    rng: &mut R,
    trace: &mut FrameAttackTrace,
) -> Result<PerturbationField, AttackError> {
    cfg.validate()?;
    if prior.shape() != frame.shape() {
        return Err(ContractError::ShapeMismatch { left: frame.shape(), right: prior.shape() }.into());
    }
    let score = |pred: &BoundingBox| fused_score(pred, &refs.spatial, &refs.temporal, cfg.lambda_fuse);

    let warm = clamp_to_image(frame, &prior.scaled(cfg.alpha_transfer))?;
    let mut offset = PerturbationField::between(frame, &warm)?;
    if cfg.max_iters == 0 {
        trace.warm_start_l2 = offset.l2_norm();
        return Ok(offset);
    }

    // Heavy-noise anchor; one retry at double amplitude if it stays on target.
    let mut amplitude = cfg.heavy_noise_amplitude;
    let mut heavy = make_heavy_noise_image(frame, amplitude, rng);
    trace.queries.anchor += 1;
    let anchor_box = oracle.probe("anchor check", &heavy)?;
    if iou(&anchor_box, &refs.spatial) >= ANCHOR_SPATIAL_GATE && amplitude < 255.0 {
        amplitude = (2.0 * amplitude).min(255.0);
        heavy = make_heavy_noise_image(frame, amplitude, rng);
    }
    let heavy = PerturbationField::between(frame, &heavy)?;
    let anchor_distance = heavy.l2_norm();
    trace.anchor_amplitude = amplitude;
    trace.anchor_distance = anchor_distance;
    if anchor_distance == 0.0 {
        trace.warm_start_l2 = offset.l2_norm();
        return Ok(offset);
    }
    let budget = cfg.max_noise_l2.resolve(anchor_distance);
    let eps_init = cfg.eps_init.resolve(anchor_distance);

    // A transferred perturbation larger than this frame's budget is shrunk onto it.
    let warm_norm = offset.l2_norm();
    if warm_norm > budget {
        offset = offset.scaled(budget / warm_norm);
    }
    trace.warm_start_l2 = offset.l2_norm();

    trace.queries.warm_start += 1;
    let mut current = score(&oracle.probe("warm start", &clamp_to_image(frame, &offset)?)?)?;
    trace.initial_scores = Some(current);

    let mut steps = StepController::new(eps_init, cfg.eps_growth, cfg.eps_shrink);
    let mut stop = StopReason::IterationCap;
    for k in 0..cfg.max_iters {
        if current.fused < cfg.stop_iou {
            stop = StopReason::IouBelowThreshold;
            break;
        }
        let radius = offset.l2_norm();
        let mut record = IterationRecord {
            iteration: k,
            candidate_queries: 0,
            normal_queries: 0,
            selected: None,
            eps: steps.current(),
            outcome: StepOutcome::Rejected,
            fused: current.fused,
            noise_l2: radius,
        };

        // Tangential: best of n candidates at the current noise level.
        let (staged, staged_scores) = if radius > 0.0 {
            let candidates = (0..cfg.n_candidates)
                .map(|_| sample_tangential(&offset, cfg.tangent_scale, rng))
                .collect::<Result<Vec<_>, _>>()?;
            let sel = select_tangential(
                oracle.session,
                oracle.frame_index,
                frame,
                &offset,
                &candidates,
                refs,
                cfg.lambda_fuse,
            );
            // Partial candidate queries still count when one of them fails.
            let sel = match sel {
                Ok(sel) => sel,
                Err(err) => {
                    if let AttackError::Candidate { candidate, .. } = &err {
                        trace.queries.candidates += candidate + 1;
                        record.candidate_queries = candidate + 1;
                        trace.iterations.push(record);
                    }
                    return Err(err);
                }
            };
            oracle.wall_ms.extend_from_slice(&sel.wall_ms);
            trace.queries.candidates += sel.queries;
            record.candidate_queries = sel.queries;
            record.selected = Some(sel.index);
            (offset.add(&candidates[sel.index])?, Some(sel.scores))
        } else {
            (offset.clone(), None)
        };

        // Normal: step toward the anchor, backing off while the score rises.
        let mut accepted: Option<(PerturbationField, IoUScores)> = None;
        let mut over_budget = false;
        for _ in 0..=cfg.max_retries {
            let eps = steps.current();
            record.eps = eps;
            let next = normal_step(&heavy, &staged, eps);
            if next.l2_norm() > budget {
                over_budget = true;
                break;
            }
            trace.queries.normal += 1;
            record.normal_queries += 1;
            let probed = oracle.probe("normal step", &clamp_to_image(frame, &next)?);
            let s = match probed {
                Ok(b) => score(&b)?,
                Err(e) => {
                    trace.iterations.push(record);
                    return Err(e);
                }
            };
            if s.fused <= current.fused {
                steps.grow();
                accepted = Some((next, s));
                record.outcome = StepOutcome::Normal;
                break;
            }
            if !steps.shrink() {
                break;
            }
        }
        if accepted.is_none() {
            if let Some(s) = staged_scores.filter(|s| s.fused <= current.fused) {
                accepted = Some((staged, s));
                record.outcome = StepOutcome::Tangential;
            }
        }

        if let Some((next, s)) = accepted {
            if !offset.is_zero() && !next.is_zero() {
                trace.cosine_steps.push(cosine_between(&offset, &next)?);
            }
            offset = next;
            current = s;
            trace.iou_trajectory.push(s);
        }
        record.fused = current.fused;
        record.noise_l2 = offset.l2_norm();
        trace.iterations.push(record);

        if over_budget {
            stop = StopReason::NoiseBudgetExceeded;
            break;
        }
    }
    if stop == StopReason::IterationCap && current.fused < cfg.stop_iou {
        stop = StopReason::IouBelowThreshold;
    }
    trace.stop_reason = stop;
    Ok(offset)
}

/// Everything an attacked sequence produced. Index 0 of every per-frame list
/// is the untouched first frame; `traces[i]` belongs to frame `i + 1`.
#[derive(Debug, Default)]
pub struct SequenceAttack {
    pub adv_frames: Vec<ImageBuffer>,
    pub traces: Vec<FrameAttackTrace>,
    /// Clean-run trajectory, starting with the init box.
    pub orig_boxes: Vec<BoundingBox>,
    /// Trajectory of the attacked session, starting with the init box.
    pub adv_boxes: Vec<BoundingBox>,
}

/// A sequence attack that stopped early; `partial` holds the frames
/// completed so far (plus the failing frame's trace, when it got that far).
#[derive(Debug)]
pub struct AttackAborted {
    pub partial: SequenceAttack,
    pub frame_index: usize,
    pub source: AttackError,
}

impl fmt::Display for AttackAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "attack aborted at frame {}: {}", self.frame_index, self.source)
    }
}

impl std::error::Error for AttackAborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

/// The rng stream for sequence `index` of a run seeded with `seed`.
pub fn sequence_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Attacks frames `2..=M` of `seq`; the first frame only initializes.
pub fn attack_sequence<R: Rng>(
    seq: &Sequence,
    factory: &dyn TrackerFactory,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<SequenceAttack, AttackAborted> {
    let mut out = SequenceAttack::default();
    let abort = |partial, frame_index, source| Err(AttackAborted { partial, frame_index, source });
    if let Err(e) = cfg.validate() {
        return abort(out, 0, e.into());
    }
    let frames = seq.frames();
    let init = seq.init_box();

    let setup = |stage| {
        let mut s = factory.create().map_err(|source| AttackError::Oracle { stage, source })?;
        s.init(0, &frames[0], init).map_err(|source| AttackError::Oracle { stage, source })?;
        Ok::<_, AttackError>(s)
    };
    let mut clean_session = match setup("clean session init") {
        Ok(s) => s,
        Err(e) => return abort(out, 0, e),
    };
    let mut attack_session = match setup("attack session init") {
        Ok(s) => s,
        Err(e) => return abort(out, 0, e),
    };

    out.adv_frames.push(frames[0].clone());
    out.orig_boxes.push(init);
    out.adv_boxes.push(init);
    let mut history: VecDeque<PerturbationField> = VecDeque::with_capacity(cfg.transfer_horizon);

    for (t, frame) in frames.iter().enumerate().skip(1) {
        let started = Instant::now();
        let spatial = match clean_session.track(t, frame) {
            Ok(b) => b,
            Err(source) => return abort(out, t, AttackError::Oracle { stage: "clean track", source }),
        };
        let clean_ms = started.elapsed().as_secs_f64() * 1e3;
        let refs = FrameRefs { spatial, temporal: out.orig_boxes[t - 1] };

        let mut prior = PerturbationField::zeros(frame.shape());
        for p in &history {
            prior = prior.add(p).expect("same shape");
        }
        let FrameAttack { adversarial, mut trace, failure } =
            attack_frame(t, frame, &prior, attack_session.as_mut(), refs, cfg, rng);
        trace.query_wall_ms.insert(0, clean_ms);
        if let Some(source) = failure {
            out.traces.push(trace);
            return abort(out, t, source);
        }

        let started = Instant::now();
        let committed = attack_session.track(t, &adversarial);
        trace.query_wall_ms.push(started.elapsed().as_secs_f64() * 1e3);
        trace.queries.commit = 1;
        trace.queries_used = trace.queries.total();
        let adv_box = match committed {
            Ok(b) => b,
            Err(source) => {
                trace.error = Some(source.to_string());
                out.traces.push(trace);
                return abort(out, t, AttackError::Oracle { stage: "commit track", source });
            }
        };

        if cfg.transfer_horizon > 0 {
            if history.len() == cfg.transfer_horizon {
                history.pop_front();
            }
            history.push_back(trace.final_perturbation.clone().expect("set on success"));
        }
        out.orig_boxes.push(spatial);
        out.adv_boxes.push(adv_box);
        out.adv_frames.push(adversarial);
        out.traces.push(trace);
    }
    Ok(out)
}
