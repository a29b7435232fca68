//! Pipeline configuration and its flat `section.key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! paths.features = data/episode.ccl
//! pipeline.partition_index = 2
//! mining.use_nvid = false
//! train.lr = 1e-4
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CclError, Result};
use crate::mining::MiningConfig;
use crate::siamese::{DistanceMode, ModelConfig, TrainConfig};

/// Whether clustering and scoring run on faces or on mean-pooled tracks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalLevel {
    #[default]
    Frame,
    Track,
}

impl FromStr for EvalLevel {
    type Err = CclError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(EvalLevel::Frame),
            "track" => Ok(EvalLevel::Track),
            _ => Err(CclError::Config(format!("unknown eval level `{s}` (frame|track)"))),
        }
    }
}

impl EvalLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalLevel::Frame => "frame",
            EvalLevel::Track => "track",
        }
    }
}

/// Source of the weak-label partition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Finch,
    /// Mini-batch K-means with `k` set to the FINCH cluster count of the
    /// selected partition.
    Kmeans,
}

impl FromStr for Backend {
    type Err = CclError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finch" => Ok(Backend::Finch),
            "kmeans" => Ok(Backend::Kmeans),
            _ => Err(CclError::Config(format!("unknown backend `{s}` (finch|kmeans)"))),
        }
    }
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Finch => "finch",
            Backend::Kmeans => "kmeans",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub batch_size: usize,
    pub max_iters: usize,
    pub init_oversample: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            batch_size: 1024,
            max_iters: 100,
            init_oversample: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub features: Option<PathBuf>,
    /// Artifacts are written here when set.
    pub output_dir: Option<PathBuf>,
    /// 1-based FINCH level used for weak labels.
    pub partition_index: usize,
    pub backend: Backend,
    /// Final cluster count; `None` uses the number of ground-truth classes.
    pub num_clusters: Option<usize>,
    pub eval_level: EvalLevel,
    /// Seeds mining, model init, training and K-means.
    pub seed: u64,
    pub mining: MiningConfig,
    pub train: TrainConfig,
    /// `input_dim` is taken from the data.
    pub model: ModelConfig,
    pub kmeans: KMeansParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            features: None,
            output_dir: None,
            partition_index: 2,
            backend: Backend::Finch,
            num_clusters: None,
            eval_level: EvalLevel::Frame,
            seed: 0,
            mining: MiningConfig::default(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            kmeans: KMeansParams::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CclError::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CclError::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl PipelineConfig {
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_text(&text).map_err(|e| match e {
            CclError::Config(m) => CclError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Apply every `key = value` line of `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CclError::Config(format!("line {}: expected `key = value`", no + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CclError::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CclError::Config(format!("override `{kv}` is not `key=value`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.mining;
        let t = &mut self.train;
        let md = &mut self.model;
        let km = &mut self.kmeans;
        match key {
            "paths.features" => self.features = Some(PathBuf::from(value)),
            "paths.output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "pipeline.partition_index" => self.partition_index = parse(key, value)?,
            "pipeline.backend" => self.backend = value.parse()?,
            "pipeline.num_clusters" => {
                self.num_clusters = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "pipeline.eval_level" => self.eval_level = value.parse()?,
            "pipeline.seed" => self.seed = parse(key, value)?,
            "mining.z_near" => m.z_near = parse(key, value)?,
            "mining.z_far" => m.z_far = parse(key, value)?,
            "mining.small_cluster_threshold" => m.small_cluster_threshold = parse(key, value)?,
            "mining.clusters_per_batch" => m.clusters_per_batch = parse(key, value)?,
            "mining.pos_per_cluster" => m.pos_per_cluster = parse(key, value)?,
            "mining.neg_per_cluster" => m.neg_per_cluster = parse(key, value)?,
            "mining.use_pos_c" => m.use_pos_c = parse_bool(key, value)?,
            "mining.use_neg_c" => m.use_neg_c = parse_bool(key, value)?,
            "mining.use_nvid" => m.use_nvid = parse_bool(key, value)?,
            "mining.near_for_all_clusters" => m.near_for_all_clusters = parse_bool(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.lr_drop_epoch" => t.lr_drop_epoch = parse(key, value)?,
            "train.lr_drop_factor" => t.lr_drop_factor = parse(key, value)?,
            "train.beta1" => t.beta1 = parse(key, value)?,
            "train.beta2" => t.beta2 = parse(key, value)?,
            "train.adam_eps" => t.adam_eps = parse(key, value)?,
            "model.hidden_dim" => md.hidden_dim = parse(key, value)?,
            "model.proj_dim" => md.proj_dim = parse(key, value)?,
            "model.margin" => md.margin = parse(key, value)?,
            "model.batch_norm" => md.batch_norm = parse_bool(key, value)?,
            "model.bn_eps" => md.bn_eps = parse(key, value)?,
            "model.bn_momentum" => md.bn_momentum = parse(key, value)?,
            "model.distance" => {
                md.distance = match value {
                    "euclidean" => DistanceMode::Euclidean,
                    "squared" => DistanceMode::Squared,
                    _ => return Err(CclError::Config(format!("unknown distance `{value}` (euclidean|squared)"))),
                }
            }
            "kmeans.batch_size" => km.batch_size = parse(key, value)?,
            "kmeans.max_iters" => km.max_iters = parse(key, value)?,
            "kmeans.init_oversample" => km.init_oversample = parse(key, value)?,
            _ => return Err(CclError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a stable order. Feeding the
    /// output back through [`PipelineConfig::parse_text`] reproduces `self`.
    pub fn to_text(&self) -> String {
        let m = &self.mining;
        let t = &self.train;
        let md = &self.model;
        let km = &self.kmeans;
        let mut lines: Vec<String> = Vec::new();
        if let Some(p) = &self.features {
            lines.push(format!("paths.features = {}", p.display()));
        }
        if let Some(p) = &self.output_dir {
            lines.push(format!("paths.output_dir = {}", p.display()));
        }
        let distance = match md.distance {
            DistanceMode::Euclidean => "euclidean",
            DistanceMode::Squared => "squared",
        };
        let entries: Vec<(&str, String)> = vec![
            ("pipeline.partition_index", self.partition_index.to_string()),
            ("pipeline.backend", self.backend.as_str().into()),
            (
                "pipeline.num_clusters",
                self.num_clusters.map_or("auto".into(), |c| c.to_string()),
            ),
            ("pipeline.eval_level", self.eval_level.as_str().into()),
            ("pipeline.seed", self.seed.to_string()),
            ("mining.z_near", m.z_near.to_string()),
            ("mining.z_far", m.z_far.to_string()),
            ("mining.small_cluster_threshold", m.small_cluster_threshold.to_string()),
            ("mining.clusters_per_batch", m.clusters_per_batch.to_string()),
            ("mining.pos_per_cluster", m.pos_per_cluster.to_string()),
            ("mining.neg_per_cluster", m.neg_per_cluster.to_string()),
            ("mining.use_pos_c", m.use_pos_c.to_string()),
            ("mining.use_neg_c", m.use_neg_c.to_string()),
            ("mining.use_nvid", m.use_nvid.to_string()),
            ("mining.near_for_all_clusters", m.near_for_all_clusters.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.lr", format!("{:e}", t.lr)),
            ("train.lr_drop_epoch", t.lr_drop_epoch.to_string()),
            ("train.lr_drop_factor", t.lr_drop_factor.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.adam_eps", format!("{:e}", t.adam_eps)),
            ("model.hidden_dim", md.hidden_dim.to_string()),
            ("model.proj_dim", md.proj_dim.to_string()),
            ("model.margin", md.margin.to_string()),
            ("model.batch_norm", md.batch_norm.to_string()),
            ("model.bn_eps", format!("{:e}", md.bn_eps)),
            ("model.bn_momentum", md.bn_momentum.to_string()),
            ("model.distance", distance.into()),
            ("kmeans.batch_size", km.batch_size.to_string()),
            ("kmeans.max_iters", km.max_iters.to_string()),
            ("kmeans.init_oversample", km.init_oversample.to_string()),
        ];
        lines.extend(entries.into_iter().map(|(k, v)| format!("{k} = {v}")));
        lines.join("\n") + "\n"
    }

    /// Check cross-field invariants and push the master seed into the
    /// sub-configs.
    pub fn resolve(&mut self) -> Result<()> {
        if self.partition_index == 0 {
            return Err(CclError::Config("pipeline.partition_index must be >= 1".into()));
        }
        if self.num_clusters == Some(0) {
            return Err(CclError::Config("pipeline.num_clusters must be >= 1".into()));
        }
        let m = &self.mining;
        if !(m.use_pos_c || m.use_neg_c || m.use_nvid) {
            return Err(CclError::Config("at least one pair source must be enabled".into()));
        }
        if self.kmeans.batch_size == 0 || self.kmeans.init_oversample == 0 {
            return Err(CclError::Config("kmeans batch size and oversampling must be >= 1".into()));
        }
        self.mining.validate().map_err(|e| CclError::Config(e.to_string()))?;
        self.train.validate()?;
        self.mining.seed = self.seed;
        self.train.seed = self.seed;
        Ok(())
    }
}
