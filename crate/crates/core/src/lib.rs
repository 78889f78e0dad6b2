//! Decision-based black-box attack on single-object visual trackers.
//!
//! The attack observes nothing but the bounding box a tracker returns for each
//! frame. It perturbs frames so that the box predicted on the perturbed frame
//! overlaps as little as possible with the box the same tracker predicts on
//! the clean frame (spatial IoU) and on the previous clean frame (temporal
//! IoU), while keeping the injected noise small.
//!
//! Crate layout:
//! - [`image`], [`bbox`], [`sequence`], [`config`]: shared value types.
//! - [`geometry`]: IoU, the fused spatial/temporal score, center error.
//! - [`attack`]: the per-frame and per-sequence attack engine.
//! - [`trackers`]: the tracker oracle contract, built-in NCC and MOSSE
//!   trackers, and test doubles.
//! - [`bridge`]: a line-delimited JSON protocol that serves or consumes the
//!   tracker contract across a process or socket boundary.
//! - [`eval`]: OPE and VOT-style protocols, the matched random-noise
//!   baseline, and report writers.
//! - [`synth`]: synthetic sequences with exact ground truth plus an
//!   image-directory loader.

pub mod attack;
pub mod bbox;
pub mod bridge;
pub mod config;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod sequence;
pub mod synth;
pub mod trackers;

pub use crate::attack::{
    attack_frame, attack_sequence, FrameAttack, FrameAttackTrace, SequenceAttack, StopReason,
};
pub use crate::bbox::BoundingBox;
pub use crate::config::{AttackConfig, Magnitude};
pub use crate::geometry::{center_error, fused_score, iou, IoUScores};
pub use crate::image::{clamp_to_image, l2_distance, ContractError, ImageBuffer, PerturbationField, Shape};
pub use crate::sequence::Sequence;
pub use crate::trackers::{TrackerError, TrackerFactory, TrackerSession};
