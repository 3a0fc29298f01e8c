//! Flat key-value experiment configuration.
//!
//! A config file is `key = value` per line with `#` comments; every key has
//! a same-named command-line flag that overrides it. Commands that consume
//! randomness require an explicit seed — there is no wall-clock default
//! anywhere, so a recorded config file replays a run exactly.

use crate::error::{Error, Result};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Which protocol a command runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMode {
    /// Fully labeled training; biased-sweep evaluation.
    OwCzsl,
    /// Partially labeled training; unbiased evaluation.
    PCzsl,
}

impl FromStr for TaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "owczsl" => Ok(TaskMode::OwCzsl),
            "pczsl" => Ok(TaskMode::PCzsl),
            other => Err(Error::Config(format!(
                "mode must be owczsl or pczsl, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoKind {
    Off,
    Vanilla,
    Kg,
}

impl FromStr for PseudoKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(PseudoKind::Off),
            "vanilla" => Ok(PseudoKind::Vanilla),
            "kg" => Ok(PseudoKind::Kg),
            other => Err(Error::Config(format!(
                "pseudo must be off, vanilla or kg, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeasibilityMethod {
    Knowledge,
    Compcos,
}

impl FromStr for FeasibilityMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knowledge" => Ok(FeasibilityMethod::Knowledge),
            "compcos" => Ok(FeasibilityMethod::Compcos),
            other => Err(Error::Config(format!(
                "method must be knowledge or compcos, got {other:?}"
            ))),
        }
    }
}

/// Every tunable of the pipeline; all optional so config files and flags
/// can each fill in any subset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub manifest: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub feasibility: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: Option<TaskMode>,
    pub pseudo: Option<PseudoKind>,
    pub method: Option<FeasibilityMethod>,
    pub mask: Option<bool>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub warmup_epochs: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub entropy_weight: Option<f64>,
    pub vanilla_threshold: Option<f64>,
    pub dropout: Option<f64>,
    pub hidden_dims: Option<Vec<usize>>,
    // Synthetic-data keys.
    pub states: Option<usize>,
    pub objects: Option<usize>,
    pub pad_objects: Option<usize>,
    pub state_dim: Option<usize>,
    pub object_dim: Option<usize>,
    pub noise: Option<f64>,
    pub seen: Option<usize>,
    pub train_per_comp: Option<usize>,
    pub test_per_comp: Option<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    /// Assigns one key; used by both the file parser and flag handling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for key {key}")))
        }
        match key {
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "features" => self.features = Some(PathBuf::from(value)),
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "feasibility" => self.feasibility = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "mode" => self.mode = Some(value.parse()?),
            "pseudo" => self.pseudo = Some(value.parse()?),
            "method" => self.method = Some(value.parse()?),
            "mask" => {
                self.mask = Some(match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(Error::Config(format!(
                            "mask must be true or false, got {other:?}"
                        )))
                    }
                })
            }
            "seed" => self.seed = Some(num(key, value)?),
            "epochs" => self.epochs = Some(num(key, value)?),
            "batch_size" => self.batch_size = Some(num(key, value)?),
            "warmup_epochs" => self.warmup_epochs = Some(num(key, value)?),
            "lr" => self.lr = Some(num(key, value)?),
            "weight_decay" => self.weight_decay = Some(num(key, value)?),
            "entropy_weight" => self.entropy_weight = Some(num(key, value)?),
            "vanilla_threshold" => self.vanilla_threshold = Some(num(key, value)?),
            "dropout" => self.dropout = Some(num(key, value)?),
            "hidden_dims" => {
                let dims: Result<Vec<usize>> = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num("hidden_dims", s))
                    .collect();
                self.hidden_dims = Some(dims?);
            }
            "states" => self.states = Some(num(key, value)?),
            "objects" => self.objects = Some(num(key, value)?),
            "pad_objects" => self.pad_objects = Some(num(key, value)?),
            "state_dim" => self.state_dim = Some(num(key, value)?),
            "object_dim" => self.object_dim = Some(num(key, value)?),
            "noise" => self.noise = Some(num(key, value)?),
            "seen" => self.seen = Some(num(key, value)?),
            "train_per_comp" => self.train_per_comp = Some(num(key, value)?),
            "test_per_comp" => self.test_per_comp = Some(num(key, value)?),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Overlays `overrides` on `self`: any key set there wins.
    pub fn merge(mut self, overrides: ExperimentConfig) -> ExperimentConfig {
        macro_rules! take {
            ($($field:ident),+ $(,)?) => {
                $(if overrides.$field.is_some() { self.$field = overrides.$field; })+
            };
        }
        take!(
            manifest, features, embeddings, feasibility, checkpoint, out, mode, pseudo, method,
            mask, seed, epochs, batch_size, warmup_epochs, lr, weight_decay, entropy_weight,
            vanilla_threshold, dropout, hidden_dims, states, objects, pad_objects, state_dim,
            object_dim, noise, seen, train_per_comp, test_per_comp,
        );
        self
    }

    pub fn require_manifest(&self) -> Result<&Path> {
        self.manifest.as_deref().ok_or_else(|| missing("manifest"))
    }

    pub fn require_features(&self) -> Result<&Path> {
        self.features.as_deref().ok_or_else(|| missing("features"))
    }

    pub fn require_embeddings(&self) -> Result<&Path> {
        self.embeddings.as_deref().ok_or_else(|| missing("embeddings"))
    }

    pub fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint.as_deref().ok_or_else(|| missing("checkpoint"))
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| missing("out"))
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| missing("seed"))
    }
}

fn missing(key: &str) -> Error {
    Error::Config(format!(
        "missing required key `{key}` (set it in the config file or pass --{})",
        key.replace('_', "-")
    ))
}
