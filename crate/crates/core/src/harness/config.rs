use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::output_head::HeadConfig;
use crate::rep_learning::{Activation, LayerConfig, TweakBias};
use crate::sparse_solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Projected head updates.
    If2net,
    /// Projected updates plus a Fisher-weighted penalty around the last anchor.
    If2netEwc,
    /// Plain SGD on each new task, no projector.
    None,
    /// Plain SGD on all data seen so far.
    Joint,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::If2net, Variant::If2netEwc, Variant::None, Variant::Joint];

    pub fn name(self) -> &'static str {
        match self {
            Variant::If2net => "if2net",
            Variant::If2netEwc => "if2net-ewc",
            Variant::None => "none",
            Variant::Joint => "joint",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// IDX image/label pairs, pixels scaled to `[0, 1]`.
    #[default]
    Idx,
    /// Little-endian feature/label files.
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub dir: PathBuf,
    pub train_inputs: String,
    pub train_labels: String,
    /// Separate test pool; when absent, `test_fraction` of each task is held out.
    pub test_inputs: Option<String>,
    pub test_labels: Option<String>,
    pub test_fraction: f64,
    /// Keep at most this many training samples per class (first in file order).
    pub train_per_class: Option<usize>,
    /// Keep at most this many test samples per class.
    pub test_per_class: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Idx,
            dir: PathBuf::from("data/mnist"),
            train_inputs: "train-images-idx3-ubyte.gz".into(),
            train_labels: "train-labels-idx1-ubyte.gz".into(),
            test_inputs: Some("t10k-images-idx3-ubyte.gz".into()),
            test_labels: Some("t10k-labels-idx1-ubyte.gz".into()),
            test_fraction: 0.2,
            train_per_class: None,
            test_per_class: None,
        }
    }
}

fn cap_per_class(data: Dataset, cap: Option<usize>) -> Dataset {
    let Some(cap) = cap else { return data };
    let mut seen = vec![0usize; data.class_count];
    let rows: Vec<usize> = (0..data.len())
        .filter(|&i| {
            let c = &mut seen[data.labels[i]];
            *c += 1;
            *c <= cap
        })
        .collect();
    data.select(&rows)
}

impl DatasetConfig {
    fn load_pair(&self, inputs: &str, labels: &str) -> Result<Dataset> {
        let ip = self.dir.join(inputs);
        let lp = self.dir.join(labels);
        match self.kind {
            DatasetKind::Idx => data::load_idx(ip, lp),
            DatasetKind::Features => data::load_features(ip, lp),
        }
    }

    /// Training pool and, if configured, the separate test pool.
    pub fn load(&self) -> Result<(Dataset, Option<Dataset>)> {
        let mut train = self.load_pair(&self.train_inputs, &self.train_labels)?;
        let mut test = match (&self.test_inputs, &self.test_labels) {
            (Some(i), Some(l)) => Some(self.load_pair(i, l)?),
            (None, None) => None,
            _ => {
                return Err(Error::Argument(
                    "test_inputs and test_labels must be given together".into(),
                ))
            }
        };
        // feature files infer the class count from the labels they hold
        if let Some(t) = test.as_mut() {
            let classes = train.class_count.max(t.class_count);
            train.class_count = classes;
            t.class_count = classes;
        }
        let train = cap_per_class(train, self.train_per_class);
        let test = test.map(|t| cap_per_class(t, self.test_per_class));
        Ok((train, test))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub weight_seed: u64,
    pub ordering_seed: u64,
    pub shuffle_seed: u64,
    pub label_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub num_tasks: usize,
    pub layers: Vec<LayerSpec>,
    pub activation: Activation,
    pub solver: SolverConfig,
    pub tweak_bias: TweakBias,
    /// Rows presented to the stack at once; 0 presents each split whole.
    pub tweak_batch: usize,
    pub head: HeadConfig,
    pub variant: Variant,
    pub seeds: Seeds,
    pub runs: usize,
    /// Train a fresh single-task model per task to score forward transfer.
    pub independent_models: bool,
    pub rademacher_draws: usize,
}

/// Node-block layout of one hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub n_blocks: usize,
    pub block_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            num_tasks: 5,
            layers: vec![
                LayerSpec {
                    n_blocks: 25,
                    block_size: 4,
                };
                3
            ],
            activation: Activation::Tanh,
            solver: SolverConfig::default(),
            tweak_bias: TweakBias::default(),
            tweak_batch: 0,
            head: HeadConfig::default(),
            variant: Variant::If2net,
            seeds: Seeds::default(),
            runs: 1,
            independent_models: true,
            rademacher_draws: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file; a relative `dataset.dir` is resolved against the
    /// file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| e.context(format!("reading {}", path.display())))?;
        if cfg.dataset.dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.dataset.dir = parent.join(&cfg.dataset.dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn layer_configs(&self) -> Vec<LayerConfig> {
        self.layers
            .iter()
            .map(|l| LayerConfig {
                n_blocks: l.n_blocks,
                block_size: l.block_size,
                activation: self.activation,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 {
            return Err(Error::Argument("num_tasks must be positive".into()));
        }
        if self.runs == 0 {
            return Err(Error::Argument("runs must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Argument("at least one hidden layer is required".into()));
        }
        if let Some(l) = self.layers.iter().find(|l| l.n_blocks == 0 || l.block_size == 0) {
            return Err(Error::Argument(format!(
                "layer with {} blocks of {} nodes has zero width",
                l.n_blocks, l.block_size
            )));
        }
        if self.rademacher_draws == 0 {
            return Err(Error::Argument("rademacher_draws must be positive".into()));
        }
        self.solver.validate()?;
        self.head.validate()?;
        Ok(())
    }
}
