use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use iouattack::bridge::{connect, ConnectOptions, Endpoint};
use iouattack::synth::{generate, load_directory, SynthSpec, ANNOTATION_FILE};
use iouattack::trackers::{
    GroundTruthTracker, MosseTracker, NccTracker, Quantized, TrackerError, TrackerFactory, TrackerSession,
};
use iouattack::{AttackConfig, Sequence};

/// Everything a run needs. Written back as `config.json` with the seed
/// resolved; `output_dir` and `workers` are left out of the snapshot since
/// they do not influence results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default)]
    pub config: AttackConfig,
    pub tracker: String,
    pub dataset: DatasetSpec,
    /// Overrides `config.rng_seed` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
    /// Per-request deadline for bridged trackers.
    #[serde(default = "default_timeout")]
    pub oracle_timeout_secs: f64,
}

fn default_timeout() -> f64 {
    30.0
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))
    }

    /// Folds `seed` into the config and checks everything that can be
    /// checked without running.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(seed) = self.seed {
            self.config.rng_seed = seed;
        }
        self.seed = Some(self.config.rng_seed);
        self.config.validate().context("invalid attack config")?;
        TrackerSpec::from_str(&self.tracker)?;
        if !(self.oracle_timeout_secs > 0.0) {
            bail!("oracle_timeout_secs must be positive");
        }
        if self.workers == Some(0) {
            bail!("workers must be at least 1");
        }
        Ok(self)
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output_dir.as_deref().ok_or_else(|| anyhow!("no output directory given (--output)"))
    }

    pub fn tracker_spec(&self) -> Result<TrackerSpec> {
        self.tracker.parse()
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.oracle_timeout_secs)
    }

    pub fn snapshot(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

/// `"easy:0-19"` (easy preset, listed texture seeds), a directory path, or an
/// explicit list of synthetic specs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    Synth { synth: Vec<SynthSpec> },
    Named(String),
}

/// Parses `"3"`, `"0-4"`, `"1,5,9-11"`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if b < a {
                    bail!("empty seed range {part:?}");
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().with_context(|| format!("invalid seed {part:?}"))?),
        }
    }
    if out.is_empty() {
        bail!("no seeds in {s:?}");
    }
    Ok(out)
}

pub fn easy_name(seed: u64) -> String {
    format!("easy-{seed:03}")
}

/// Frames are rounded to 8 bits on load so that synthetic, exported and
/// reloaded datasets are indistinguishable downstream.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<Sequence>> {
    let raw: Vec<Sequence> = match spec {
        DatasetSpec::Synth { synth } => synth
            .iter()
            .enumerate()
            .map(|(i, s)| Ok(rename(generate(s)?, format!("synth-{i:03}"))?))
            .collect::<Result<_>>()?,
        DatasetSpec::Named(name) => match name.strip_prefix("easy:") {
            Some(seeds) => parse_seed_list(seeds)?
                .into_iter()
                .map(|seed| Ok(rename(generate(&SynthSpec::easy(seed))?, easy_name(seed))?))
                .collect::<Result<_>>()?,
            None => load_path(Path::new(name))?,
        },
    };
    if raw.is_empty() {
        bail!("dataset contains no sequences");
    }
    let mut names: Vec<&str> = raw.iter().map(Sequence::name).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        bail!("duplicate sequence name {:?}", w[0]);
    }
    raw.into_iter().map(quantize).collect()
}

fn load_path(path: &Path) -> Result<Vec<Sequence>> {
    if path.join(ANNOTATION_FILE).is_file() {
        return Ok(vec![load_directory(path, None).with_context(|| format!("loading {}", path.display()))?]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("cannot read dataset directory {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(ANNOTATION_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("{} holds no sequence directories (none contain {ANNOTATION_FILE})", path.display());
    }
    dirs.iter()
        .map(|d| load_directory(d, None).with_context(|| format!("loading {}", d.display())))
        .collect()
}

fn rename(seq: Sequence, name: String) -> Result<Sequence> {
    Ok(Sequence::new(name, seq.frames().to_vec(), seq.ground_truth().map(<[_]>::to_vec), seq.init_box())?)
}

fn quantize(seq: Sequence) -> Result<Sequence> {
    let frames = seq.frames().iter().map(|f| f.quantized()).collect();
    Ok(Sequence::new(seq.name(), frames, seq.ground_truth().map(<[_]>::to_vec), seq.init_box())?)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrackerSpec {
    Ncc,
    Mosse,
    /// Replays the sequence's ground truth; only meaningful with a dataset.
    GroundTruth,
    Bridge(Endpoint),
}

impl FromStr for TrackerSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "builtin:ncc" => Ok(TrackerSpec::Ncc),
            "builtin:mosse" => Ok(TrackerSpec::Mosse),
            "builtin:gt" => Ok(TrackerSpec::GroundTruth),
            _ => match s.strip_prefix("bridge:") {
                Some(rest) => Ok(TrackerSpec::Bridge(
                    rest.parse().map_err(|e| anyhow!("invalid bridge endpoint in tracker spec {s:?}: {e}"))?,
                )),
                None => bail!(
                    "unknown tracker spec {s:?} (expected builtin:ncc, builtin:mosse, builtin:gt or bridge:<endpoint>)"
                ),
            },
        }
    }
}

type Factory = Arc<dyn TrackerFactory>;

impl TrackerSpec {
    /// Builds the factory used for `seq`. Every session is 8-bit quantized.
    pub fn factory(&self, seq: &Sequence, timeout: Duration) -> Result<Factory> {
        Ok(match self {
            TrackerSpec::Ncc => Arc::new(|| -> Result<Box<dyn TrackerSession>, TrackerError> {
                Ok(Box::new(Quantized::new(NccTracker::default())))
            }),
            TrackerSpec::Mosse => Arc::new(|| -> Result<Box<dyn TrackerSession>, TrackerError> {
                Ok(Box::new(Quantized::new(MosseTracker::default())))
            }),
            TrackerSpec::GroundTruth => {
                let gt = seq
                    .ground_truth()
                    .ok_or_else(|| anyhow!("builtin:gt needs ground truth for sequence {}", seq.name()))?
                    .to_vec();
                Arc::new(move || -> Result<Box<dyn TrackerSession>, TrackerError> {
                    Ok(Box::new(Quantized::new(GroundTruthTracker::new(gt.clone()))))
                })
            }
            TrackerSpec::Bridge(endpoint) => {
                let endpoint = endpoint.clone();
                Arc::new(move || -> Result<Box<dyn TrackerSession>, TrackerError> {
                    let session = connect(&endpoint, ConnectOptions { timeout })?;
                    Ok(Box::new(Quantized::new(session)))
                })
            }
        })
    }

    /// Factory for serving without a dataset.
    pub fn standalone_factory(&self) -> Result<Factory> {
        match self {
            TrackerSpec::Ncc | TrackerSpec::Mosse => {
                let dummy = generate(&SynthSpec { length: 2, ..SynthSpec::easy(0) })?;
                self.factory(&dummy, Duration::from_secs(1))
            }
            TrackerSpec::GroundTruth => bail!("builtin:gt cannot be served; it needs a dataset"),
            TrackerSpec::Bridge(_) => bail!("a bridged tracker cannot be served again"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seed_list("3").unwrap(), vec![3]);
        assert_eq!(parse_seed_list("0-2,7").unwrap(), vec![0, 1, 2, 7]);
        assert!(parse_seed_list("5-1").is_err());
        assert!(parse_seed_list("").is_err());
    }

    #[test]
    fn tracker_specs() {
        assert_eq!("builtin:ncc".parse::<TrackerSpec>().unwrap(), TrackerSpec::Ncc);
        assert_eq!(
            "bridge:tcp://127.0.0.1:9".parse::<TrackerSpec>().unwrap(),
            TrackerSpec::Bridge(Endpoint::Tcp("127.0.0.1:9".into()))
        );
        let err = "builtin:siamrpn".parse::<TrackerSpec>().unwrap_err().to_string();
        assert!(err.contains("builtin:siamrpn"));
    }

    #[test]
    fn manifest_round_trip_and_seed_resolution() {
        let text = r#"{"tracker":"builtin:ncc","dataset":"easy:1-2","seed":9,"config":{"max_iters":3}}"#;
        let m: RunManifest = serde_json::from_str(text).unwrap();
        let m = m.resolve().unwrap();
        assert_eq!(m.config.rng_seed, 9);
        assert_eq!(m.config.max_iters, 3);
        let back: RunManifest = serde_json::from_str(&m.snapshot()).unwrap();
        assert_eq!(back.resolve().unwrap(), m);
        let synth = r#"{"tracker":"builtin:ncc","dataset":{"synth":[]}}"#;
        assert!(matches!(serde_json::from_str::<RunManifest>(synth).unwrap().dataset, DatasetSpec::Synth { .. }));
        assert!(serde_json::from_str::<RunManifest>(r#"{"tracker":"x","dataset":"y","bogus":1}"#).is_err());
    }

    #[test]
    fn easy_datasets_are_named_and_quantized() {
        let seqs = load_dataset(&DatasetSpec::Named("easy:4,2".into())).unwrap();
        assert_eq!(seqs.iter().map(Sequence::name).collect::<Vec<_>>(), vec!["easy-004", "easy-002"]);
        assert!(seqs[0].frames().iter().all(|f| f.data().iter().all(|v| v.fract() == 0.0)));
        assert!(load_dataset(&DatasetSpec::Named("easy:1,1".into())).is_err());
    }
}
