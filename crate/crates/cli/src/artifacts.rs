//! On-disk layout of an attack run:
//!
//! ```text
//! <output_dir>/
//!   config.json             resolved manifest, enough to replay the run
//!   <sequence>/
//!     frames/00002.png ...  adversarial frames 2..M (frame 1 is never touched)
//!     traces.jsonl          one FrameAttackTrace per attacked frame
//!     timings.jsonl         wall time of every oracle query (not reproducible)
//!     boxes.csv             clean-run and attacked-run boxes per frame
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use iouattack::attack::{FrameAttackTrace, SequenceAttack};
use iouattack::{ImageBuffer, Sequence};

pub const CONFIG_FILE: &str = "config.json";
pub const FRAMES_DIR: &str = "frames";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const BOXES_FILE: &str = "boxes.csv";

/// File name of 0-based frame `index`; files are numbered from 1.
pub fn frame_file_name(index: usize) -> String {
    format!("{:05}.png", index + 1)
}

#[derive(Serialize, Deserialize)]
struct TimingLine {
    frame_index: usize,
    query_wall_ms: Vec<f64>,
}

pub fn write_sequence_attack(dir: &Path, attack: &SequenceAttack) -> Result<()> {
    let frames_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).with_context(|| format!("cannot create {}", frames_dir.display()))?;
    for (t, frame) in attack.adv_frames.iter().enumerate().skip(1) {
        let path = frames_dir.join(frame_file_name(t));
        frame.save_png(&path).with_context(|| format!("cannot write {}", path.display()))?;
    }

    let mut traces = String::new();
    let mut timings = String::new();
    for trace in &attack.traces {
        traces.push_str(&serde_json::to_string(trace)?);
        traces.push('\n');
        let line = TimingLine { frame_index: trace.frame_index, query_wall_ms: trace.query_wall_ms.clone() };
        timings.push_str(&serde_json::to_string(&line)?);
        timings.push('\n');
    }
    fs::write(dir.join(TRACES_FILE), traces)?;
    fs::write(dir.join(TIMINGS_FILE), timings)?;

    let mut boxes = fs::File::create(dir.join(BOXES_FILE))?;
    writeln!(boxes, "frame,orig_x,orig_y,orig_w,orig_h,adv_x,adv_y,adv_w,adv_h")?;
    for (t, (o, a)) in attack.orig_boxes.iter().zip(&attack.adv_boxes).enumerate() {
        writeln!(boxes, "{},{},{},{},{},{},{},{},{}", t + 1, o.x(), o.y(), o.w(), o.h(), a.x(), a.y(), a.w(), a.h())?;
    }
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<FrameAttackTrace>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

/// Reloads the frames and traces a previous attack run wrote for `seq`.
/// Frame 0 comes from `seq` itself.
pub fn load_cached_attack(dir: &Path, seq: &Sequence) -> Result<(Vec<ImageBuffer>, Vec<FrameAttackTrace>)> {
    let traces = read_traces(&dir.join(TRACES_FILE))?;
    if traces.len() + 1 != seq.len() || traces.iter().any(|t| t.error.is_some()) {
        bail!(
            "{} does not hold a complete attack of {} ({} traces for {} frames)",
            dir.display(),
            seq.name(),
            traces.len(),
            seq.len()
        );
    }
    let mut frames = vec![seq.frames()[0].clone()];
    for t in 1..seq.len() {
        let path = dir.join(FRAMES_DIR).join(frame_file_name(t));
        let frame = ImageBuffer::load(&path).with_context(|| format!("cannot load {}", path.display()))?;
        if frame.shape() != seq.shape() {
            bail!("{} has shape {}, expected {}", path.display(), frame.shape(), seq.shape());
        }
        frames.push(frame);
    }
    Ok((frames, traces))
}
