//! Experiment configuration: one JSON document, optionally patched with
//! `key.path=value` overrides before validation.

use std::path::{Path, PathBuf};

use aidim::compression::codes::{GLOBAL_R_GRID, LOCAL_R_GRID, TASK_R_GRID};
use aidim::compression::HyperGrids;
use aidim::linalg::{Activation, NetworkSpec, RngStream};
use aidim::tasks::{Provenance, SplitPolicy};
use aidim::training::{Optimizer, SearchConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// Environment variable prefixed to relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "AIDIM_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; θ₀, projectors, initializations and minibatch orders
    /// derive from it. Datasets carry their own seed in `dataset`.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: Provenance,
    #[serde(default)]
    pub split: SplitPolicy,
    pub model: ModelBlock,
    #[serde(default)]
    pub mode: ModeBlock,
    #[serde(default)]
    pub training: TrainingBlock,
    #[serde(default)]
    pub search: SearchBlock,
    #[serde(default)]
    pub compression: CompressionBlock,
    #[serde(default)]
    pub certificate: CertificateBlock,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_jobs() -> usize {
    1
}

/// Hidden layers of an MLP; input and output widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl ModelBlock {
    pub fn spec(&self, input_dim: usize, classes: usize) -> NetworkSpec {
        NetworkSpec::mlp(input_dim, &self.hidden, classes, self.activation)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModeBlock {
    #[default]
    Direct,
    Single {
        d: usize,
    },
    Shared {
        l: usize,
        k: usize,
    },
    Transfer {
        k_prime: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub eval_every: usize,
}

fn default_epochs() -> usize {
    TrainConfig::default().epochs
}

fn default_lr() -> f64 {
    0.01
}

fn default_batch() -> usize {
    TrainConfig::default().batch_size
}

impl Default for TrainingBlock {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            lr: default_lr(),
            batch_size: default_batch(),
            eval_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBlock {
    #[serde(default = "default_grid")]
    pub d_grid: Vec<usize>,
    #[serde(default = "default_grid")]
    pub l_grid: Vec<usize>,
    #[serde(default = "default_grid")]
    pub k_grid: Vec<usize>,
    /// Learning rates tried at every grid point.
    #[serde(default = "default_lrs")]
    pub lrs: Vec<f64>,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Task counts for the AID-versus-n curve.
    #[serde(default)]
    pub n_sweep: Vec<usize>,
}

fn default_grid() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32, 64, 128]
}

fn default_lrs() -> Vec<f64> {
    vec![0.01]
}

fn default_fraction() -> f64 {
    0.9
}

impl Default for SearchBlock {
    fn default() -> Self {
        Self {
            d_grid: default_grid(),
            l_grid: default_grid(),
            k_grid: default_grid(),
            lrs: default_lrs(),
            fraction: default_fraction(),
            n_sweep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionBlock {
    /// Global codebook sizes tried; a subset of the encodable grid.
    #[serde(default = "default_global_r")]
    pub global_r: Vec<usize>,
    #[serde(default = "default_local_r")]
    pub local_r: Vec<usize>,
    #[serde(default = "default_task_r")]
    pub task_r: Vec<usize>,
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: usize,
    #[serde(default = "default_finetune_lr")]
    pub finetune_lr: f64,
}

fn default_global_r() -> Vec<usize> {
    GLOBAL_R_GRID.to_vec()
}

fn default_local_r() -> Vec<usize> {
    LOCAL_R_GRID.to_vec()
}

fn default_task_r() -> Vec<usize> {
    TASK_R_GRID.to_vec()
}

fn default_finetune_epochs() -> usize {
    TrainConfig::finetune().epochs
}

fn default_finetune_lr() -> f64 {
    TrainConfig::finetune().optimizer.lr()
}

impl Default for CompressionBlock {
    fn default() -> Self {
        Self {
            global_r: default_global_r(),
            local_r: default_local_r(),
            task_r: default_task_r(),
            finetune_epochs: default_finetune_epochs(),
            finetune_lr: default_finetune_lr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateBlock {
    #[serde(default = "aidim::certificates::default_delta")]
    pub delta: f64,
}

impl Default for CertificateBlock {
    fn default() -> Self {
        Self {
            delta: aidim::certificates::default_delta(),
        }
    }
}

impl ExperimentConfig {
    /// Read `path`, apply `key=value` overrides, then deserialize and validate.
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut doc: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_value(doc)
    }

    pub fn from_value(doc: Value) -> CliResult<Self> {
        let cfg: Self = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.model.hidden.contains(&0) {
            return bad("model.hidden: layer widths must be >= 1".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be >= 1".into());
        }
        if !(self.certificate.delta > 0.0 && self.certificate.delta <= 1.0) {
            return bad(format!("certificate.delta {} outside (0, 1]", self.certificate.delta));
        }
        for (name, grid) in [
            ("search.d_grid", &self.search.d_grid),
            ("search.l_grid", &self.search.l_grid),
            ("search.k_grid", &self.search.k_grid),
        ] {
            if grid.is_empty() || grid.contains(&0) {
                return bad(format!("{name} must be nonempty and positive"));
            }
        }
        for (name, chosen, allowed) in [
            ("compression.global_r", &self.compression.global_r, &GLOBAL_R_GRID[..]),
            ("compression.local_r", &self.compression.local_r, &LOCAL_R_GRID[..]),
            ("compression.task_r", &self.compression.task_r, &TASK_R_GRID[..]),
        ] {
            if chosen.is_empty() || chosen.iter().any(|r| !allowed.contains(r)) {
                return bad(format!("{name} must be a nonempty subset of {allowed:?}"));
            }
        }
        if !self.search.lrs.iter().any(|&lr| lr == self.training.lr) {
            return bad(format!(
                "training.lr {} must be one of search.lrs {:?}",
                self.training.lr, self.search.lrs
            ));
        }
        self.train_config().validate()?;
        self.search_config().validate()?;
        Ok(())
    }

    pub fn root_stream(&self) -> RngStream {
        RngStream::new(self.seed)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            optimizer: Optimizer::adam(self.training.lr),
            batch_size: self.training.batch_size,
            seed: self.root_stream().derive("minibatch").seed,
            eval_every: self.training.eval_every,
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.compression.finetune_epochs,
            optimizer: Optimizer::Sgd {
                lr: self.compression.finetune_lr,
            },
            batch_size: self.training.batch_size,
            seed: self.root_stream().derive("finetune").seed,
            eval_every: 0,
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            train: self.train_config(),
            lrs: self.search.lrs.clone(),
            fraction: self.search.fraction,
            seed: self.seed,
            jobs: self.jobs,
        }
    }

    pub fn hyper_grids(&self) -> HyperGrids {
        HyperGrids {
            l: self.search.l_grid.clone(),
            k: self.search.k_grid.clone(),
            lr: self.search.lrs.clone(),
        }
    }

    /// Position of the training learning rate in `search.lrs`.
    pub fn lr_index(&self) -> usize {
        self.search.lrs.iter().position(|&lr| lr == self.training.lr).unwrap_or(0)
    }

    /// `output_dir`, placed under `$AIDIM_OUTPUT_ROOT` when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

pub fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Set `a.b.c=value` in a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise; missing objects are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    if key.is_empty() {
        return Err(CliError::Config(format!("override `{assignment}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::Config(format!("`{key}`: `{part}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::Config(format!("`{key}`: index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::Config(format!("`{key}`: `{part}` is inside a non-object value"))),
        };
    }
    unreachable!("loop returns on the last key part")
}
