//! Synthetic sequences with exact ground truth, and an image-directory
//! dataset layout.
//!
//! Directory layout (both read by [`load_directory`] and written by
//! [`export_directory`]):
//!
//! ```text
//! my_sequence/
//!   00001.png
//!   00002.png
//!   ...
//!   groundtruth.txt      # one "x,y,w,h" line per frame
//! ```
//!
//! Frames are ordered by the number in their file stem. Annotation lines may
//! use commas, tabs or spaces; 8-number lines (four polygon corners, as in
//! VOT annotations) are reduced to their axis-aligned enclosing box.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BoundingBox;
use crate::image::{ContractError, ImageBuffer, ImageIoError, Shape};
use crate::sequence::Sequence;

pub const ANNOTATION_FILE: &str = "groundtruth.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    /// Constant velocity, px/frame.
    Linear { velocity: (f64, f64) },
    /// Oscillation around the start position.
    Sinusoidal { amplitude: (f64, f64), period: f64 },
    /// Gaussian steps of standard deviation `step_sigma` px on each axis.
    RandomWalk { step_sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub frame_width: usize,
    pub frame_height: usize,
    pub target_width: usize,
    pub target_height: usize,
    /// Top-left corner of the target on the first frame.
    pub start: (f64, f64),
    pub motion: Motion,
    pub texture_seed: u64,
    pub background_noise_sigma: f64,
    pub length: usize,
}

impl SynthSpec {
    /// 128x128 frames, a 32x32 target moving 2 px/frame to the right for 30
    /// frames over a background of sigma 5.
    pub fn easy(texture_seed: u64) -> Self {
        SynthSpec {
            frame_width: 128,
            frame_height: 128,
            target_width: 32,
            target_height: 32,
            start: (12.0, 48.0),
            motion: Motion::Linear { velocity: (2.0, 0.0) },
            texture_seed,
            background_noise_sigma: 5.0,
            length: 30,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("target leaves the {width}x{height} frame at frame {frame} (top-left {x}, {y})")]
    OutOfFrame { frame: usize, x: f64, y: f64, width: usize, height: usize },
    #[error(transparent)]
    Contract(#[from] ContractError),
}

/// Renders the sequence described by `spec`. A pure function of `spec`.
pub fn generate(spec: &SynthSpec) -> Result<Sequence, SynthError> {
    if spec.target_width == 0 || spec.target_height == 0 {
        return Err(ContractError::invalid("target size must be positive").into());
    }
    if spec.length < 2 {
        return Err(ContractError::invalid(format!("length must be at least 2, got {}", spec.length)).into());
    }
    let shape = Shape::new(spec.frame_width, spec.frame_height, 1)?;
    let (tw, th) = (spec.target_width, spec.target_height);

    let positions = trajectory(spec);
    for (frame, &(x, y)) in positions.iter().enumerate() {
        if x < 0.0 || y < 0.0 || x as usize + tw > spec.frame_width || y as usize + th > spec.frame_height {
            return Err(SynthError::OutOfFrame {
                frame,
                x,
                y,
                width: spec.frame_width,
                height: spec.frame_height,
            });
        }
    }

    let mut texture_rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let background: Vec<f64> = (0..shape.len())
        .map(|_| 110.0 + spec.background_noise_sigma * texture_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let target = target_texture(tw, th, &mut texture_rng);

    let mut frames = Vec::with_capacity(spec.length);
    let mut boxes = Vec::with_capacity(spec.length);
    for &(x, y) in &positions {
        let (px, py) = (x as usize, y as usize);
        frames.push(ImageBuffer::from_fn(shape, |i, j, _| {
            if (px..px + tw).contains(&i) && (py..py + th).contains(&j) {
                target[(j - py) * tw + (i - px)]
            } else {
                background[j * spec.frame_width + i]
            }
        }));
        boxes.push(BoundingBox::new(x, y, tw as f64, th as f64)?);
    }
    Ok(Sequence::with_ground_truth(format!("synth-{}", spec.texture_seed), frames, boxes)?)
}

/// Integer top-left positions per frame.
fn trajectory(spec: &SynthSpec) -> Vec<(f64, f64)> {
    let (sx, sy) = spec.start;
    match &spec.motion {
        Motion::Linear { velocity } => (0..spec.length)
            .map(|t| ((sx + velocity.0 * t as f64).round(), (sy + velocity.1 * t as f64).round()))
            .collect(),
        Motion::Sinusoidal { amplitude, period } => (0..spec.length)
            .map(|t| {
                let phase = (2.0 * std::f64::consts::PI * t as f64 / period).sin();
                ((sx + amplitude.0 * phase).round(), (sy + amplitude.1 * phase).round())
            })
            .collect(),
        Motion::RandomWalk { step_sigma } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
            rng.set_stream(1);
            let (mut x, mut y) = (sx, sy);
            let mut out = Vec::with_capacity(spec.length);
            for t in 0..spec.length {
                if t > 0 {
                    x += step_sigma * rng.sample::<f64, _>(StandardNormal);
                    y += step_sigma * rng.sample::<f64, _>(StandardNormal);
                }
                out.push((x.round(), y.round()));
            }
            out
        }
    }
}

/// High-contrast noise, box-blurred once, rescaled to mean 128 and std 55.
fn target_texture(tw: usize, th: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..tw * th).map(|_| rng.random_range(0.0..255.0)).collect();
    let mut smooth = vec![0.0; tw * th];
    for y in 0..th {
        for x in 0..tw {
            let (mut acc, mut n) = (0.0, 0.0);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    if xx >= 0 && yy >= 0 && (xx as usize) < tw && (yy as usize) < th {
                        acc += raw[yy as usize * tw + xx as usize];
                        n += 1.0;
                    }
                }
            }
            smooth[y * tw + x] = acc / n;
        }
    }
    let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
    let std = (smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / smooth.len() as f64).sqrt();
    let std = if std > 0.0 { std } else { 1.0 };
    smooth.iter().map(|v| (128.0 + (v - mean) / std * 55.0).clamp(0.0, 255.0)).collect()
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot decode {path}: {source}")]
    Image { path: PathBuf, source: ImageIoError },
    #[error("no PNG/JPEG frames in {0}")]
    NoFrames(PathBuf),
    #[error("annotation line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{frames} frames but {annotations} annotation lines")]
    CountMismatch { frames: usize, annotations: usize },
    #[error("frame {index} ({path}) has shape {got}, expected {expected}")]
    NonUniform { index: usize, path: PathBuf, got: Shape, expected: Shape },
    #[error(transparent)]
    Contract(#[from] ContractError),
}

/// Loads an image-directory sequence. `annotation` defaults to
/// `dir/groundtruth.txt`.
pub fn load_directory(dir: &Path, annotation: Option<&Path>) -> Result<Sequence, LoadError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| LoadError::Io { path, source }
    };
    let mut frame_paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                .unwrap_or(false)
        })
        .collect();
    if frame_paths.is_empty() {
        return Err(LoadError::NoFrames(dir.to_path_buf()));
    }
    frame_paths.sort_by(|a, b| frame_order_key(a).cmp(&frame_order_key(b)));

    let annotation_path = annotation.map(Path::to_path_buf).unwrap_or_else(|| dir.join(ANNOTATION_FILE));
    let text = fs::read_to_string(&annotation_path).map_err(io_err(&annotation_path))?;
    let boxes = parse_annotations(&text)?;
    if boxes.len() != frame_paths.len() {
        return Err(LoadError::CountMismatch { frames: frame_paths.len(), annotations: boxes.len() });
    }

    let mut frames = Vec::with_capacity(frame_paths.len());
    for (index, path) in frame_paths.iter().enumerate() {
        let img = ImageBuffer::load(path).map_err(|source| LoadError::Image { path: path.clone(), source })?;
        if let Some(first) = frames.first().map(ImageBuffer::shape) {
            if img.shape() != first {
                return Err(LoadError::NonUniform { index, path: path.clone(), got: img.shape(), expected: first });
            }
        }
        frames.push(img);
    }
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("sequence")
        .to_string();
    Ok(Sequence::with_ground_truth(name, frames, boxes)?)
}

fn frame_order_key(path: &Path) -> (u64, String) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let digits: String = stem.chars().filter(char::is_ascii_digit).collect();
    (digits.parse().unwrap_or(u64::MAX), stem.to_string())
}

/// Parses one box per non-empty line.
pub fn parse_annotations(text: &str) -> Result<Vec<BoundingBox>, LoadError> {
    let mut boxes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let values = raw
            .split(|c: char| c == ',' || c == '\t' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| LoadError::Parse { line, message: format!("not a number: {s:?}") }))
            .collect::<Result<Vec<_>, _>>()?;
        let parsed = match values.len() {
            4 => BoundingBox::new(values[0], values[1], values[2], values[3]),
            8 => {
                let corners: Vec<(f64, f64)> = values.chunks_exact(2).map(|c| (c[0], c[1])).collect();
                BoundingBox::enclosing(&corners)
            }
            n => {
                return Err(LoadError::Parse { line, message: format!("expected 4 or 8 numbers, got {n}") });
            }
        };
        boxes.push(parsed.map_err(|e| LoadError::Parse { line, message: e.to_string() })?);
    }
    Ok(boxes)
}

pub fn format_annotations(boxes: &[BoundingBox]) -> String {
    boxes.iter().map(|b| format!("{},{},{},{}\n", b.x(), b.y(), b.w(), b.h())).collect()
}

/// Writes `seq` in the directory layout above. Frames are quantized to 8 bits.
pub fn export_directory(seq: &Sequence, dir: &Path) -> Result<(), LoadError> {
    fs::create_dir_all(dir).map_err(|source| LoadError::Io { path: dir.to_path_buf(), source })?;
    for (i, frame) in seq.frames().iter().enumerate() {
        let path = dir.join(format!("{:05}.png", i + 1));
        frame.save_png(&path).map_err(|source| LoadError::Image { path: path.clone(), source })?;
    }
    let gt = seq
        .ground_truth()
        .ok_or_else(|| ContractError::invalid("cannot export a sequence without ground truth"))?;
    let path = dir.join(ANNOTATION_FILE);
    fs::write(&path, format_annotations(gt)).map_err(|source| LoadError::Io { path, source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_target_has_constant_ground_truth() {
        let spec = SynthSpec { motion: Motion::Linear { velocity: (0.0, 0.0) }, length: 5, ..SynthSpec::easy(1) };
        let seq = generate(&spec).unwrap();
        let gt = seq.ground_truth().unwrap();
        assert!(gt.iter().all(|b| *b == gt[0]));
    }

    #[test]
    fn linear_motion_is_an_arithmetic_progression() {
        let spec = SynthSpec {
            start: (5.0, 10.0),
            motion: Motion::Linear { velocity: (2.0, 0.0) },
            length: 10,
            ..SynthSpec::easy(2)
        };
        let xs: Vec<f64> = generate(&spec).unwrap().ground_truth().unwrap().iter().map(|b| b.x()).collect();
        assert_eq!(xs, vec![5.0, 7.0, 9.0, 11.0, 13.0, 15.0, 17.0, 19.0, 21.0, 23.0]);
    }

    #[test]
    fn generation_is_deterministic() {
        for motion in [
            Motion::Linear { velocity: (1.0, 1.0) },
            Motion::Sinusoidal { amplitude: (10.0, 5.0), period: 12.0 },
            Motion::RandomWalk { step_sigma: 1.5 },
        ] {
            let spec = SynthSpec { motion, ..SynthSpec::easy(3) };
            assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        }
        assert_ne!(generate(&SynthSpec::easy(3)).unwrap(), generate(&SynthSpec::easy(4)).unwrap());
    }

    #[test]
    fn escaping_trajectory_names_the_frame() {
        let spec = SynthSpec { start: (90.0, 0.0), motion: Motion::Linear { velocity: (3.0, 0.0) }, ..SynthSpec::easy(0) };
        // 90 + 3t + 32 > 128 first at t = 3.
        match generate(&spec) {
            Err(SynthError::OutOfFrame { frame, .. }) => assert_eq!(frame, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ground_truth_boxes_stay_in_frame() {
        let spec = SynthSpec { motion: Motion::RandomWalk { step_sigma: 1.0 }, start: (48.0, 48.0), ..SynthSpec::easy(9) };
        let seq = generate(&spec).unwrap();
        assert!(seq.ground_truth().unwrap().iter().all(|b| b.within(128, 128)));
    }

    #[test]
    fn annotation_formats() {
        let boxes = parse_annotations("1,2,3,4\n5\t6\t7\t8\n\n0,0, 10,0, 10,10, 0,10\n").unwrap();
        assert_eq!(boxes.len(), 3);
        assert_eq!(boxes[1], BoundingBox::new(5.0, 6.0, 7.0, 8.0).unwrap());
        assert_eq!(boxes[2], BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap());
        match parse_annotations("1,2,3,4\n1,2,x,4\n") {
            Err(LoadError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_annotations("1,2,3\n"), Err(LoadError::Parse { line: 1, .. })));
    }

    #[test]
    fn directory_round_trip_and_count_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = SynthSpec { length: 3, ..SynthSpec::easy(5) };
        let seq = generate(&spec).unwrap();
        let dir = tmp.path().join("seq");
        export_directory(&seq, &dir).unwrap();
        let loaded = load_directory(&dir, None).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded.ground_truth(), seq.ground_truth());
        for (a, b) in loaded.frames().iter().zip(seq.frames()) {
            assert_eq!(*a, b.quantized());
        }

        seq.frames()[0].save_png(dir.join("00004.png")).unwrap();
        assert!(matches!(
            load_directory(&dir, None),
            Err(LoadError::CountMismatch { frames: 4, annotations: 3 })
        ));
    }

    #[test]
    fn frames_sort_numerically() {
        let tmp = tempfile::tempdir().unwrap();
        let shape = Shape::new(8, 8, 1).unwrap();
        for (name, v) in [("frame10.png", 30.0), ("frame2.png", 20.0), ("frame1.png", 10.0)] {
            ImageBuffer::filled(shape, v).save_png(tmp.path().join(name)).unwrap();
        }
        fs::write(tmp.path().join(ANNOTATION_FILE), "0,0,4,4\n0,0,4,4\n0,0,4,4\n").unwrap();
        let seq = load_directory(tmp.path(), None).unwrap();
        let firsts: Vec<f64> = seq.frames().iter().map(|f| f.get(0, 0, 0)).collect();
        assert_eq!(firsts, vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn non_uniform_frames_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        ImageBuffer::filled(Shape::new(8, 8, 1).unwrap(), 0.0).save_png(tmp.path().join("1.png")).unwrap();
        ImageBuffer::filled(Shape::new(9, 8, 1).unwrap(), 0.0).save_png(tmp.path().join("2.png")).unwrap();
        fs::write(tmp.path().join(ANNOTATION_FILE), "0,0,4,4\n0,0,4,4\n").unwrap();
        assert!(matches!(load_directory(tmp.path(), None), Err(LoadError::NonUniform { index: 1, .. })));
    }
}
