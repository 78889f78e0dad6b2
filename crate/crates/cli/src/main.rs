use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use iouattack::synth::SynthSpec;
use iouattack::Magnitude;
use iouattack_cli::commands::{
    cmd_attack, cmd_budget_sweep, cmd_compare, cmd_evaluate, cmd_serve, cmd_synth, easy_specs, parse_conditions,
    Transport, DEFAULT_IGNORED,
};
use iouattack_cli::manifest::{parse_seed_list, DatasetSpec, RunManifest, TrackerSpec};

#[derive(Parser)]
#[command(name = "iouattack", version, about = "Decision-based black-box attacks on visual object trackers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attack every sequence of a dataset and write the adversarial frames.
    Attack(RunArgs),
    /// Compare tracker accuracy on clean, randomly perturbed and attacked frames.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated subset of original, random, attack.
        #[arg(long, default_value = "original,random,attack")]
        conditions: String,
        /// Reuse the output directory of a previous `attack` run.
        #[arg(long)]
        traces_from: Option<PathBuf>,
        /// Instead of the report, sweep these budgets (e.g. 0.125x,0.25x,1500).
        #[arg(long, value_delimiter = ',')]
        budget_sweep: Option<Vec<Magnitude>>,
    },
    /// Write synthetic sequences as image directories with annotations.
    Synth {
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// Texture seeds for the preset, e.g. 0-19.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// JSON file holding one SynthSpec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expose a built-in tracker over the oracle wire protocol.
    Serve {
        #[arg(long)]
        tracker: String,
        #[arg(long, conflicts_with = "listen")]
        stdio: bool,
        /// TCP address to listen on, e.g. 127.0.0.1:7000.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Byte-compare two output directories; exits 1 if they differ.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Extra file names to skip; timings.jsonl is always skipped.
        #[arg(long, value_delimiter = ',')]
        ignore: Option<Vec<String>>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// builtin:ncc, builtin:mosse, builtin:gt or bridge:<endpoint>.
    #[arg(long)]
    tracker: Option<String>,
    /// easy:<seeds> or a directory of sequences.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    oracle_timeout: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    lambda_fuse: Option<f64>,
    #[arg(long)]
    n_candidates: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    eps_init: Option<Magnitude>,
    #[arg(long)]
    eps_growth: Option<f64>,
    #[arg(long)]
    eps_shrink: Option<f64>,
    #[arg(long)]
    max_retries: Option<usize>,
    #[arg(long)]
    tangent_scale: Option<f64>,
    #[arg(long)]
    alpha_transfer: Option<f64>,
    #[arg(long)]
    transfer_horizon: Option<usize>,
    #[arg(long)]
    heavy_noise_amplitude: Option<f64>,
    #[arg(long)]
    stop_iou: Option<f64>,
    #[arg(long)]
    max_noise_l2: Option<Magnitude>,
    #[arg(long)]
    rng_seed: Option<u64>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),*) => {
        $(if let Some(v) = $src.$field { $dst.$field = v; })*
    };
}

impl RunArgs {
    fn manifest(self) -> Result<RunManifest> {
        let mut m = match &self.manifest {
            Some(path) => RunManifest::load(path)?,
            None => {
                let tracker = self.tracker.clone().context("--tracker is required without --manifest")?;
                let dataset = self.dataset.clone().context("--dataset is required without --manifest")?;
                serde_json::from_value(serde_json::json!({ "tracker": tracker, "dataset": dataset }))?
            }
        };
        if let Some(t) = self.tracker {
            m.tracker = t;
        }
        if let Some(d) = self.dataset {
            m.dataset = DatasetSpec::Named(d);
        }
        let c = self.config;
        if c.rng_seed.is_some() {
            m.seed = None;
        }
        overlay!(
            m.config,
            c,
            lambda_fuse,
            n_candidates,
            max_iters,
            eps_init,
            eps_growth,
            eps_shrink,
            max_retries,
            tangent_scale,
            alpha_transfer,
            transfer_horizon,
            heavy_noise_amplitude,
            stop_iou,
            max_noise_l2,
            rng_seed
        );
        if self.seed.is_some() {
            m.seed = self.seed;
        }
        if self.output.is_some() {
            m.output_dir = self.output;
        }
        if self.workers.is_some() {
            m.workers = self.workers;
        }
        if let Some(t) = self.oracle_timeout {
            m.oracle_timeout_secs = t;
        }
        m.resolve()
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Attack(args) => {
            let manifest = args.manifest()?;
            for s in cmd_attack(&manifest)? {
                println!(
                    "{}: {} frames, spatial IoU {:.4}, {:.1} queries/frame, noise {:.1}",
                    s.sequence, s.frames, s.mean_spatial_iou, s.mean_queries_per_frame, s.mean_noise_l2
                );
            }
        }
        Command::Evaluate { run, conditions, traces_from, budget_sweep } => {
            let manifest = run.manifest()?;
            if let Some(budgets) = budget_sweep {
                for r in cmd_budget_sweep(&manifest, &budgets)?.iter().filter(|r| r.sequence == "aggregate") {
                    println!(
                        "budget {}: noise {:.1}, mean IoU {:.4}, spatial IoU {:.4}",
                        r.budget, r.mean_noise_l2, r.mean_iou, r.mean_spatial_iou
                    );
                }
            } else {
                let conditions = parse_conditions(&conditions)?;
                for report in cmd_evaluate(&manifest, &conditions, traces_from.as_deref())? {
                    let a = &report.aggregate;
                    println!(
                        "{}: mean IoU {:.4}, failures {}, AUC {:.4}, P@20 {:.4}",
                        report.condition.as_str(),
                        a.mean_iou,
                        a.failures,
                        a.success_auc,
                        a.precision_at_20px
                    );
                }
            }
        }
        Command::Synth { preset, seeds, spec, out } => {
            let specs = match (preset.as_deref(), spec) {
                (Some("easy"), None) => easy_specs(&parse_seed_list(&seeds)?),
                (Some(other), _) => bail!("unknown preset {other:?} (expected easy)"),
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
                    let spec: SynthSpec =
                        serde_json::from_str(&text).with_context(|| format!("invalid synth spec {}", path.display()))?;
                    vec![(String::new(), spec)]
                }
                (None, None) => bail!("give --preset or --spec"),
            };
            for dir in cmd_synth(&specs, &out)? {
                println!("{}", dir.display());
            }
        }
        Command::Serve { tracker, stdio, listen } => {
            let spec: TrackerSpec = tracker.parse()?;
            let transport = match (stdio, listen) {
                (true, _) => Transport::Stdio,
                (false, Some(addr)) => Transport::Listen(addr),
                (false, None) => bail!("give --stdio or --listen ADDR"),
            };
            cmd_serve(&spec, &transport)?;
        }
        Command::Compare { a, b, ignore } => {
            let mut ignore = ignore.unwrap_or_default();
            ignore.extend(DEFAULT_IGNORED.iter().map(|s| s.to_string()));
            let diffs = cmd_compare(&a, &b, &ignore)?;
            for d in &diffs {
                println!("{d}");
            }
            if !diffs.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
            println!("identical");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
