use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use iouattack::attack::{attack_sequence, sequence_rng, FrameAttackTrace, SequenceAttack};
use iouattack::bridge::{serve, serve_tcp};
use iouattack::eval::{
    evaluate_sequence, matched_random_baseline, one_pass, write_report, Condition, EvalReport, SequenceMetrics,
};
use iouattack::synth::{export_directory, generate, SynthSpec};
use iouattack::{iou, AttackConfig, ImageBuffer, Magnitude, Sequence};

use crate::artifacts::{load_cached_attack, write_sequence_attack, CONFIG_FILE, TIMINGS_FILE};
use crate::manifest::{easy_name, load_dataset, RunManifest, TrackerSpec};

/// Random-baseline streams live above every attack stream.
const RANDOM_STREAM_BASE: u64 = 1 << 32;

fn run_parallel<T: Send>(workers: usize, n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if workers <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

fn prepare_output(manifest: &RunManifest) -> Result<PathBuf> {
    let dir = manifest.output_dir()?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    fs::write(dir.join(CONFIG_FILE), manifest.snapshot())
        .with_context(|| format!("cannot write to output directory {}", dir.display()))?;
    Ok(dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub sequence: String,
    pub frames: usize,
    /// Mean IoU between the attacked and the clean trajectory over frames 2..M.
    pub mean_spatial_iou: f64,
    pub mean_queries_per_frame: f64,
    pub mean_noise_l2: f64,
}

impl AttackSummary {
    pub fn of(name: &str, attack: &SequenceAttack) -> Self {
        let m = attack.adv_boxes.len();
        let n = (m - 1).max(1) as f64;
        let spatial = (1..m).map(|t| iou(&attack.adv_boxes[t], &attack.orig_boxes[t])).sum::<f64>() / n;
        AttackSummary {
            sequence: name.to_string(),
            frames: m,
            mean_spatial_iou: spatial,
            mean_queries_per_frame: attack.traces.iter().map(|t| t.queries_used as f64).sum::<f64>() / n,
            mean_noise_l2: attack.traces.iter().map(|t| t.final_noise_l2).sum::<f64>() / n,
        }
    }
}

fn run_attack(manifest: &RunManifest, cfg: &AttackConfig, seq: &Sequence, index: usize) -> Result<SequenceAttack> {
    let factory = manifest.tracker_spec()?.factory(seq, manifest.timeout())?;
    let mut rng = sequence_rng(cfg.rng_seed, index as u64);
    attack_sequence(seq, factory.as_ref(), cfg, &mut rng).map_err(|e| anyhow!("sequence {}: {e}", seq.name()))
}

/// Attacks every sequence and writes the per-sequence artifacts.
pub fn cmd_attack(manifest: &RunManifest) -> Result<Vec<AttackSummary>> {
    let out = prepare_output(manifest)?;
    let seqs = load_dataset(&manifest.dataset)?;
    let spec = manifest.tracker_spec()?;
    run_parallel(manifest.workers.unwrap_or(1), seqs.len(), |i| {
        let seq = &seqs[i];
        let factory = spec.factory(seq, manifest.timeout())?;
        let mut rng = sequence_rng(manifest.config.rng_seed, i as u64);
        let dir = out.join(seq.name());
        match attack_sequence(seq, factory.as_ref(), &manifest.config, &mut rng) {
            Ok(attack) => {
                write_sequence_attack(&dir, &attack)?;
                Ok(AttackSummary::of(seq.name(), &attack))
            }
            Err(aborted) => {
                write_sequence_attack(&dir, &aborted.partial)?;
                Err(anyhow!("sequence {}: {aborted}", seq.name()))
            }
        }
    })
}

/// Which conditions to compute, in report order.
pub fn parse_conditions(s: &str) -> Result<Vec<Condition>> {
    let mut set = BTreeSet::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        set.insert(match part {
            "original" => 0,
            "random" | "random_noise" => 1,
            "attack" => 2,
            other => return Err(anyhow!("unknown condition {other:?} (expected original, random, attack)")),
        });
    }
    if set.is_empty() {
        return Err(anyhow!("no conditions given"));
    }
    let all = [Condition::Original, Condition::RandomNoise, Condition::Attack];
    Ok(set.into_iter().map(|i| all[i]).collect())
}

fn quantized(frames: &[ImageBuffer]) -> Vec<ImageBuffer> {
    frames.iter().map(ImageBuffer::quantized).collect()
}

/// Runs the requested conditions on every sequence and writes the reports.
/// With `traces_from`, the attack condition replays a previous attack run
/// instead of attacking again.
pub fn cmd_evaluate(
    manifest: &RunManifest,
    conditions: &[Condition],
    traces_from: Option<&Path>,
) -> Result<Vec<EvalReport>> {
    let out = prepare_output(manifest)?;
    let seqs = load_dataset(&manifest.dataset)?;
    let spec = manifest.tracker_spec()?;
    let rows: Vec<Vec<(Condition, SequenceMetrics)>> = run_parallel(manifest.workers.unwrap_or(1), seqs.len(), |i| {
        let seq = &seqs[i];
        let factory = spec.factory(seq, manifest.timeout())?;
        let clean = one_pass(factory.as_ref(), seq.frames(), seq.init_box())?;
        let needs_attack = conditions.iter().any(|c| *c != Condition::Original);
        let attacked: Option<(Vec<ImageBuffer>, Vec<FrameAttackTrace>)> = if !needs_attack {
            None
        } else if let Some(cache) = traces_from {
            Some(load_cached_attack(&cache.join(seq.name()), seq)?)
        } else {
            let attack = run_attack(manifest, &manifest.config, seq, i)?;
            Some((quantized(&attack.adv_frames), attack.traces))
        };
        let mut rows = Vec::new();
        for &condition in conditions {
            let metrics = match condition {
                Condition::Original => evaluate_sequence(seq, factory.as_ref(), None, Some(&clean), None)?,
                Condition::Attack => {
                    let (frames, traces) = attacked.as_ref().expect("attack ran");
                    evaluate_sequence(seq, factory.as_ref(), Some(frames), Some(&clean), Some(traces))?
                }
                Condition::RandomNoise => {
                    let (_, traces) = attacked.as_ref().expect("attack ran");
                    let mut rng = sequence_rng(manifest.config.rng_seed, RANDOM_STREAM_BASE + i as u64);
                    let frames = quantized(&matched_random_baseline(seq, traces, &mut rng)?);
                    evaluate_sequence(seq, factory.as_ref(), Some(&frames), Some(&clean), None)?
                }
            };
            rows.push((condition, metrics));
        }
        Ok(rows)
    })?;
    let reports: Vec<EvalReport> = conditions
        .iter()
        .map(|&c| {
            let per_sequence = rows.iter().flatten().filter(|(rc, _)| *rc == c).map(|(_, m)| m.clone()).collect();
            EvalReport::new(c, per_sequence)
        })
        .collect();
    write_report(&reports, &out).with_context(|| format!("cannot write report to {}", out.display()))?;
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: Magnitude,
    /// Sequence name, or `aggregate` for the mean over sequences.
    pub sequence: String,
    pub mean_noise_l2: f64,
    pub mean_iou: f64,
    pub mean_spatial_iou: f64,
    pub failure_rate: f64,
}

pub const SWEEP_HEADER: &str = "budget,sequence,mean_noise_l2,mean_iou,mean_spatial_iou,failure_rate";

/// Attacks at every budget and tabulates noise actually used against the
/// resulting accuracy. Writes `budget_sweep.csv` and `budget_sweep.json`.
pub fn cmd_budget_sweep(manifest: &RunManifest, budgets: &[Magnitude]) -> Result<Vec<SweepRow>> {
    let out = prepare_output(manifest)?;
    let seqs = load_dataset(&manifest.dataset)?;
    let spec = manifest.tracker_spec()?;
    let mut rows = Vec::new();
    for &budget in budgets {
        let cfg = AttackConfig { max_noise_l2: budget, ..manifest.config.clone() };
        cfg.validate()?;
        let per_seq: Vec<SweepRow> = run_parallel(manifest.workers.unwrap_or(1), seqs.len(), |i| {
            let seq = &seqs[i];
            let factory = spec.factory(seq, manifest.timeout())?;
            let clean = one_pass(factory.as_ref(), seq.frames(), seq.init_box())?;
            let attack = run_attack(manifest, &cfg, seq, i)?;
            let frames = quantized(&attack.adv_frames);
            let m = evaluate_sequence(seq, factory.as_ref(), Some(&frames), Some(&clean), Some(&attack.traces))?;
            Ok(SweepRow {
                budget,
                sequence: seq.name().to_string(),
                mean_noise_l2: m.mean_noise_l2,
                mean_iou: m.mean_iou,
                mean_spatial_iou: m.mean_spatial_iou.unwrap_or(0.0),
                failure_rate: m.failure_rate,
            })
        })?;
        let n = per_seq.len() as f64;
        let agg = SweepRow {
            budget,
            sequence: "aggregate".into(),
            mean_noise_l2: per_seq.iter().map(|r| r.mean_noise_l2).sum::<f64>() / n,
            mean_iou: per_seq.iter().map(|r| r.mean_iou).sum::<f64>() / n,
            mean_spatial_iou: per_seq.iter().map(|r| r.mean_spatial_iou).sum::<f64>() / n,
            failure_rate: per_seq.iter().map(|r| r.failure_rate).sum::<f64>() / n,
        };
        rows.extend(per_seq);
        rows.push(agg);
    }
    let mut csv = format!("{SWEEP_HEADER}\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.budget, r.sequence, r.mean_noise_l2, r.mean_iou, r.mean_spatial_iou, r.failure_rate
        ));
    }
    fs::write(out.join("budget_sweep.csv"), csv)?;
    fs::write(out.join("budget_sweep.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
    Ok(rows)
}

/// Writes one directory per spec. Easy-preset seeds are named as the
/// `easy:` dataset names them, so a directory dataset and an inline one match.
pub fn cmd_synth(specs: &[(String, SynthSpec)], out: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for (name, spec) in specs {
        let seq = generate(spec).with_context(|| format!("cannot generate {name}"))?;
        let dir = out.join(name);
        export_directory(&seq, &dir).with_context(|| format!("cannot export to {}", dir.display()))?;
        dirs.push(dir);
    }
    Ok(dirs)
}

pub fn easy_specs(seeds: &[u64]) -> Vec<(String, SynthSpec)> {
    seeds.iter().map(|&s| (easy_name(s), SynthSpec::easy(s))).collect()
}

pub enum Transport {
    Stdio,
    Listen(String),
}

/// Serves until stdin closes (stdio) or forever (TCP).
pub fn cmd_serve(spec: &TrackerSpec, transport: &Transport) -> Result<()> {
    let factory = spec.standalone_factory()?;
    match transport {
        Transport::Stdio => {
            let stdin = io::stdin();
            let stdout = io::stdout();
            serve(factory.as_ref(), BufReader::new(stdin.lock()), stdout.lock())?;
            Ok(())
        }
        Transport::Listen(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("transport error: cannot listen on {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            serve_tcp(factory, listener)?;
            Ok(())
        }
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeSet<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.insert(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

pub const DEFAULT_IGNORED: &[&str] = &[TIMINGS_FILE];

/// Byte-for-byte comparison of two output trees. Files whose name is in
/// `ignore` are skipped. Returns one line per difference.
pub fn cmd_compare(a: &Path, b: &Path, ignore: &[String]) -> Result<Vec<String>> {
    let (mut fa, mut fb) = (BTreeSet::new(), BTreeSet::new());
    collect_files(a, a, &mut fa)?;
    collect_files(b, b, &mut fb)?;
    let skip = |p: &PathBuf| {
        p.file_name().and_then(|n| n.to_str()).map(|n| ignore.iter().any(|i| i == n)).unwrap_or(false)
    };
    let mut diffs = Vec::new();
    for p in fa.union(&fb).filter(|p| !skip(p)) {
        match (fa.contains(p), fb.contains(p)) {
            (true, false) => diffs.push(format!("only in {}: {}", a.display(), p.display())),
            (false, true) => diffs.push(format!("only in {}: {}", b.display(), p.display())),
            _ => {
                if fs::read(a.join(p))? != fs::read(b.join(p))? {
                    diffs.push(format!("differs: {}", p.display()));
                }
            }
        }
    }
    Ok(diffs)
}
