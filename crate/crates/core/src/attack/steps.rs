//! Building blocks of one attack iteration.
//!
//! Points in image space are carried as offsets from the clean frame: a point
//! `X` is `clean + offset`. The noise level of `X` is then simply
//! `offset.l2_norm()`, and the iso-noise sphere is the sphere of radius
//! `offset.l2_norm()` around the origin. Offsets are not clamped; only the
//! images handed to a tracker are.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bbox::BoundingBox;
use crate::geometry::{fused_score, IoUScores};
use crate::image::{clamp_to_image, ImageBuffer, PerturbationField};
use crate::trackers::TrackerSession;

use super::AttackError;

/// Clean frame plus i.i.d. `U(-amplitude, amplitude)` noise, clamped.
pub fn make_heavy_noise_image<R: Rng>(original: &ImageBuffer, amplitude: f64, rng: &mut R) -> ImageBuffer {
    let data = original
        .data()
        .iter()
        .map(|v| v + rng.random_range(-amplitude..=amplitude))
        .collect();
    ImageBuffer::clamped(original.shape(), data).expect("shape taken from original")
}

/// Draws a perturbation `eta` with `|offset + eta| == |offset|`.
///
/// A Gaussian draw of total spread `tangent_scale * r` is added to the
/// current point and the result is projected back onto the sphere of radius
/// `r = |offset|`.
pub fn sample_tangential<R: Rng>(
    offset: &PerturbationField,
    tangent_scale: f64,
    rng: &mut R,
) -> Result<PerturbationField, AttackError> {
    let radius = offset.l2_norm();
    if radius == 0.0 {
        return Err(AttackError::ZeroRadius);
    }
    let n = offset.data().len();
    let draw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let sigma = tangent_scale * radius / (n as f64).sqrt();
    tangential_from_draw(offset, &draw, sigma)
}

/// Deterministic core of [`sample_tangential`] for a given unit-variance draw.
pub fn tangential_from_draw(
    offset: &PerturbationField,
    draw: &[f64],
    sigma: f64,
) -> Result<PerturbationField, AttackError> {
    let radius = offset.l2_norm();
    if radius == 0.0 {
        return Err(AttackError::ZeroRadius);
    }
    let moved = PerturbationField::from_vec(offset.shape(), draw.iter().map(|d| d * sigma).collect())?;
    let moved = offset.add(&moved)?;
    let norm = moved.l2_norm();
    if norm == 0.0 {
        return Ok(PerturbationField::zeros(offset.shape()));
    }
    Ok(moved.scaled(radius / norm).sub(offset)?)
}

/// Moves `staged` a distance `eps` toward the heavy-noise anchor.
pub fn normal_step(heavy: &PerturbationField, staged: &PerturbationField, eps: f64) -> PerturbationField {
    let gap = heavy.sub(staged).expect("offsets share the frame shape");
    let dist = gap.l2_norm();
    if dist == 0.0 || eps == 0.0 {
        return staged.clone();
    }
    staged.add(&gap.scaled(eps / dist)).expect("same shape")
}

/// Cosine similarity of two nonzero perturbations.
pub fn cosine_between(a: &PerturbationField, b: &PerturbationField) -> Result<f64, AttackError> {
    let (na, nb) = (a.l2_norm(), b.l2_norm());
    if na == 0.0 || nb == 0.0 {
        return Err(AttackError::ZeroNorm);
    }
    Ok((a.dot(b)? / (na * nb)).clamp(-1.0, 1.0))
}

/// Backtracking schedule for the normal step length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepController {
    eps: f64,
    growth: f64,
    shrink: f64,
    min_eps: f64,
    max_eps: f64,
}

impl StepController {
    /// Floor is `1e-3 * eps_init`; growth is capped at `eps_init * growth`.
    pub fn new(eps_init: f64, growth: f64, shrink: f64) -> Self {
        StepController { eps: eps_init, growth, shrink, min_eps: 1e-3 * eps_init, max_eps: eps_init * growth }
    }

    pub fn current(&self) -> f64 {
        self.eps
    }

    pub fn min_eps(&self) -> f64 {
        self.min_eps
    }

    pub fn grow(&mut self) {
        self.eps = (self.eps * self.growth).min(self.max_eps);
    }

    /// Returns false when already at the floor.
    pub fn shrink(&mut self) -> bool {
        if self.eps <= self.min_eps {
            return false;
        }
        self.eps = (self.eps * self.shrink).max(self.min_eps);
        true
    }
}

/// Boxes the fused score is measured against for one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRefs {
    /// Clean-run prediction on this frame.
    pub spatial: BoundingBox,
    /// Clean-run prediction on the previous frame.
    pub temporal: BoundingBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub scores: IoUScores,
    pub queries: usize,
    pub wall_ms: Vec<f64>,
}

/// Probes the tracker once per candidate on `clamp(clean + offset + eta)` and
/// returns the candidate with the lowest fused score (first wins ties).
#[allow(clippy::too_many_arguments)]
pub fn select_tangential(
    session: &mut dyn TrackerSession,
    frame_index: usize,
    clean: &ImageBuffer,
    offset: &PerturbationField,
    candidates: &[PerturbationField],
    refs: FrameRefs,
    lambda_fuse: f64,
) -> Result<Selection, AttackError> {
    if candidates.is_empty() {
        return Err(AttackError::NoCandidates);
    }
    let mut best: Option<(usize, IoUScores)> = None;
    let mut wall_ms = Vec::with_capacity(candidates.len());
    for (j, eta) in candidates.iter().enumerate() {
        let image = clamp_to_image(clean, &offset.add(eta)?)?;
        let started = Instant::now();
        let pred = session
            .probe(frame_index, &image)
            .map_err(|source| AttackError::Candidate { candidate: j, source })?;
        wall_ms.push(started.elapsed().as_secs_f64() * 1e3);
        let scores = fused_score(&pred, &refs.spatial, &refs.temporal, lambda_fuse)?;
        if best.is_none_or(|(_, b)| scores.fused < b.fused) {
            best = Some((j, scores));
        }
    }
    let (index, scores) = best.expect("at least one candidate");
    Ok(Selection { index, scores, queries: candidates.len(), wall_ms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Shape;
    use crate::trackers::{GroundTruthTracker, NccTracker, TrackerError};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(values: &[f64]) -> PerturbationField {
        PerturbationField::from_vec(Shape::new(values.len(), 1, 1).unwrap(), values.to_vec()).unwrap()
    }

    #[test]
    fn zero_draw_gives_zero_eta() {
        let offset = field(&[3.0, -4.0, 12.0]);
        let eta = tangential_from_draw(&offset, &[0.0; 3], 1.0).unwrap();
        assert!(eta.is_zero());
    }

    #[test]
    fn zero_radius_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_tangential(&field(&[0.0; 4]), 0.1, &mut rng), Err(AttackError::ZeroRadius)));
    }

    #[test]
    fn three_pixel_case_matches_hand_projection() {
        // original (10, 20, 30), current (13, 24, 30): offset (3, 4, 0), r = 5.
        // draw (1, -2, 2) with sigma 0.5 -> v = (3.5, 3, 1), |v| = sqrt(22.25).
        let offset = field(&[3.0, 4.0, 0.0]);
        let eta = tangential_from_draw(&offset, &[1.0, -2.0, 2.0], 0.5).unwrap();
        let norm_v = 22.25f64.sqrt();
        let expected = [3.5 * 5.0 / norm_v - 3.0, 3.0 * 5.0 / norm_v - 4.0, 5.0 / norm_v];
        for (got, want) in eta.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        let landed = [10.0 + 3.0 + eta.data()[0], 20.0 + 4.0 + eta.data()[1], 30.0 + eta.data()[2]];
        let d = ((landed[0] - 10.0f64).powi(2) + (landed[1] - 20.0f64).powi(2) + (landed[2] - 30.0f64).powi(2)).sqrt();
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn normal_step_cases() {
        let heavy = field(&[10.0, 0.0, 0.0, 0.0]);
        let staged = field(&[0.0, 2.0, 4.0, -2.0]);
        assert_eq!(normal_step(&heavy, &staged, 0.0), staged);
        let gap = heavy.sub(&staged).unwrap().l2_norm();
        let full = normal_step(&heavy, &staged, gap);
        for (a, b) in full.data().iter().zip(heavy.data()) {
            assert!((a - b).abs() <= 1e-9 * gap);
        }
        let half = normal_step(&heavy, &staged, gap / 2.0);
        for ((h, s), m) in heavy.data().iter().zip(staged.data()).zip(half.data()) {
            assert!((m - (h + s) / 2.0).abs() < 1e-12);
        }
        assert_eq!(normal_step(&heavy, &heavy, 3.0), heavy);
    }

    #[test]
    fn cosine_cases() {
        let p = field(&[1.0, -2.0, 0.5, 3.0]);
        assert!((cosine_between(&p, &p).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_between(&p, &p.scaled(-1.0)).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(cosine_between(&p, &field(&[0.0; 4])), Err(AttackError::ZeroNorm)));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((cosine_between(&field(&a), &field(&b)).unwrap() - dot / (na * nb)).abs() < 1e-12);
    }

    #[test]
    fn step_controller_bounds() {
        let mut c = StepController::new(10.0, 1.2, 0.5);
        c.grow();
        c.grow();
        assert!((c.current() - 12.0).abs() < 1e-12);
        for _ in 0..50 {
            c.shrink();
            assert!(c.current() >= c.min_eps());
        }
        assert!(!c.shrink());
        assert_eq!(c.current(), 0.01);
    }

    #[test]
    fn heavy_noise_is_bounded_and_seeded() {
        let img = ImageBuffer::filled(Shape::new(16, 16, 3).unwrap(), 128.0);
        let a = make_heavy_noise_image(&img, 0.01, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(a.data().iter().all(|v| (v - 128.0).abs() <= 0.01));
        let b = make_heavy_noise_image(&img, 40.0, &mut ChaCha8Rng::seed_from_u64(3));
        let c = make_heavy_noise_image(&img, 40.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(b, c);
    }

    #[test]
    fn heavy_noise_deltas_are_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let img = ImageBuffer::filled(Shape::new(100, 100, 1).unwrap(), 128.0);
        let noisy = make_heavy_noise_image(&img, 128.0, &mut ChaCha8Rng::seed_from_u64(21));
        // Mid-gray never clips on the low side; values above 255 clip, so
        // compare on [-128, 127) where both sides are unclipped.
        let bins = 16;
        let mut counts = vec![0usize; bins];
        let mut total = 0usize;
        for v in noisy.data() {
            let d = v - 128.0;
            if d < 127.0 {
                counts[(((d + 128.0) / 255.0) * bins as f64) as usize] += 1;
                total += 1;
            }
        }
        let expected = total as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi2 {chi2} p {p}");
        // About half a bin's worth of mass above 127 clips to 255.
        let saturated = noisy.data().iter().filter(|&&v| v == 255.0).count() as f64 / 10_000.0;
        assert!((saturated - 1.0 / 256.0).abs() < 0.01, "{saturated}");
    }

    proptest! {
        #[test]
        fn tangential_samples_stay_on_the_sphere(seed in 0u64..10_000, scale in 0.01f64..2.0,
                                                  values in prop::collection::vec(-300.0f64..300.0, 1..40)) {
            let offset = field(&values);
            prop_assume!(offset.l2_norm() > 1e-6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eta = sample_tangential(&offset, scale, &mut rng).unwrap();
            let r = offset.l2_norm();
            let landed = offset.add(&eta).unwrap().l2_norm();
            prop_assert!((landed - r).abs() <= 1e-6 * r);
        }

        #[test]
        fn normal_steps_do_not_reduce_noise_before_the_anchor(
            heavy in prop::collection::vec(-200.0f64..200.0, 6),
            staged in prop::collection::vec(-50.0f64..50.0, 6),
            eps in 0.0f64..100.0,
        ) {
            let heavy = field(&heavy);
            let staged = field(&staged);
            let toward = heavy.sub(&staged).unwrap();
            prop_assume!(staged.dot(&toward).unwrap() >= 0.0);
            let next = normal_step(&heavy, &staged, eps);
            prop_assert!(next.l2_norm() >= staged.l2_norm() - 1e-9);
        }
    }

    /// Reports a box shifted right by the mean intensity of the frame's
    /// first column divided by 10; pixel-sensitive and stateless.
    struct ShiftByBrightness(BoundingBox);

    impl TrackerSession for ShiftByBrightness {
        fn init(&mut self, _: usize, _: &ImageBuffer, _: BoundingBox) -> Result<(), TrackerError> {
            Ok(())
        }
        fn track(&mut self, i: usize, f: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
            self.probe(i, f)
        }
        fn probe(&mut self, _: usize, f: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
            Ok(self.0.translated(f.get(0, 0, 0) / 10.0, 0.0))
        }
        fn reset(&mut self) -> Result<(), TrackerError> {
            Ok(())
        }
    }

    #[test]
    fn single_candidate_is_selected_with_one_query() {
        let clean = ImageBuffer::filled(Shape::new(4, 4, 1).unwrap(), 50.0);
        let b = BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let mut gt = GroundTruthTracker::new(vec![b, b]);
        gt.init(0, &clean, b).unwrap();
        let offset = PerturbationField::zeros(clean.shape());
        let sel = select_tangential(&mut gt, 1, &clean, &offset, &[offset.clone()], FrameRefs { spatial: b, temporal: b }, 0.6)
            .unwrap();
        assert_eq!((sel.index, sel.queries), (0, 1));
        assert_eq!(sel.scores.fused, 1.0);
    }

    #[test]
    fn off_target_candidate_wins() {
        let shape = Shape::new(4, 4, 1).unwrap();
        let clean = ImageBuffer::filled(shape, 0.0);
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let mut t = ShiftByBrightness(b);
        let offset = PerturbationField::zeros(shape);
        let stay = PerturbationField::zeros(shape);
        let push = PerturbationField::from_vec(shape, vec![200.0; 16]).unwrap();
        let refs = FrameRefs { spatial: b, temporal: b };
        let sel = select_tangential(&mut t, 1, &clean, &offset, &[stay.clone(), push, stay], refs, 0.6).unwrap();
        assert_eq!(sel.index, 1);
        assert_eq!(sel.scores.fused, 0.0);
        assert_eq!(sel.queries, 3);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let shape = Shape::new(4, 4, 1).unwrap();
        let clean = ImageBuffer::filled(shape, 0.0);
        let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let mut t = ShiftByBrightness(b);
        let z = PerturbationField::zeros(shape);
        let sel = select_tangential(&mut t, 1, &clean, &z, &[z.clone(), z.clone(), z.clone()], FrameRefs { spatial: b, temporal: b }, 0.5)
            .unwrap();
        assert_eq!(sel.index, 0);
    }

    #[test]
    fn ncc_selection_matches_exhaustive_requery() {
        use crate::synth::{generate, SynthSpec};
        let seq = generate(&SynthSpec::easy(4)).unwrap();
        let clean0 = &seq.frames()[0];
        let clean1 = &seq.frames()[1];
        let mut session = NccTracker::default();
        session.init(0, clean0, seq.init_box()).unwrap();
        let spatial = session.probe(1, clean1).unwrap();
        let refs = FrameRefs { spatial, temporal: seq.init_box() };

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let heavy = PerturbationField::between(clean1, &make_heavy_noise_image(clean1, 128.0, &mut rng)).unwrap();
        let offset = heavy.scaled(0.4);
        let candidates: Vec<_> = (0..5).map(|_| sample_tangential(&offset, 1.0, &mut rng).unwrap()).collect();
        let sel = select_tangential(&mut session, 1, clean1, &offset, &candidates, refs, 0.6).unwrap();

        // Independent driver: fresh tracker, re-query every candidate.
        let mut fresh = NccTracker::default();
        fresh.init(0, clean0, seq.init_box()).unwrap();
        let mut scores = Vec::new();
        for eta in &candidates {
            let mut data = clean1.data().to_vec();
            for (d, (o, e)) in data.iter_mut().zip(offset.data().iter().zip(eta.data())) {
                *d = (*d + o + e).clamp(0.0, 255.0);
            }
            let img = ImageBuffer::new(clean1.shape(), data).unwrap();
            let pred = fresh.probe(1, &img).unwrap();
            scores.push(0.6 * crate::geometry::iou(&pred, &spatial) + 0.4 * crate::geometry::iou(&pred, &seq.init_box()));
        }
        let mut argmin = 0;
        for (j, s) in scores.iter().enumerate() {
            if *s < scores[argmin] {
                argmin = j;
            }
        }
        assert_eq!(sel.index, argmin);
        assert!((sel.scores.fused - scores[argmin]).abs() < 1e-12);
    }
}
