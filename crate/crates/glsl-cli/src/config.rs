//! Run configuration: one TOML file covering dataset, topology, model,
//! training, evaluation and injection. Every field has a default so the
//! pipeline runs with zero config; command line flags override file values.
//! The resolved config is written next to every run's outputs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random consumer derives its own stream from it.
    pub seed: u64,
    /// Not echoed into the resolved config: the file already sits in this
    /// directory, and omitting it keeps the echo location-independent.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub topology: TopologyConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub inject: InjectSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            topology: TopologyConfig::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            inject: InjectSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// "synthetic", "raw" (whitespace sensor log) or "grid" (binary cache).
    pub source: String,
    pub path: Option<PathBuf>,
    /// Optional `node_id x y` coordinate file; synthetic runs draw random
    /// coordinates and raw/grid runs fall back to a unit circle without it.
    pub layout_path: Option<PathBuf>,
    pub nodes: usize,
    pub modes: usize,
    pub ticks: usize,
    /// Synthetic Gaussian noise level.
    pub noise: f64,
    /// Resampling period in seconds for raw logs.
    pub period: f64,
    /// Raw-log mote ids to keep; empty means 1..=nodes.
    pub node_ids: Vec<u64>,
    /// Raw-log modes to extract; empty means the first `modes` of
    /// temperature/humidity/light/voltage.
    pub mode_names: Vec<String>,
    /// Fraction of ticks used for fitting and training; the rest is test.
    pub train_frac: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: "synthetic".into(),
            path: None,
            layout_path: None,
            nodes: 10,
            modes: 3,
            ticks: 2000,
            noise: 0.05,
            period: 31.0,
            node_ids: Vec::new(),
            mode_names: Vec::new(),
            train_frac: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    /// "complete", "coverage" or "topk".
    pub kind: String,
    pub coverage: f64,
    pub k: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig { kind: "complete".into(), coverage: 30.0, k: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub window: usize,
    pub embed: usize,
    pub latent: usize,
    /// "gat" or "gcn".
    pub kernel: String,
    pub heads: usize,
    pub leaky_slope: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            window: 20,
            embed: 32,
            latent: 16,
            kernel: "gat".into(),
            heads: 2,
            leaky_slope: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub negative_quota: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { epochs: 100, lr: 5e-4, negative_quota: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Checkpoint count T.
    pub samples: usize,
    pub tau: usize,
    /// Detection delay allowance; None means the window width.
    pub delay: Option<usize>,
    pub threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { samples: 100, tau: 10, delay: None, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectSection {
    /// Trend step divisor: walk steps are span/p plus excitation.
    pub p: f64,
    /// Neighbor count scanned by the internode injector.
    pub neighbors: usize,
    /// Anomaly kinds enabled for random injection; empty means all five.
    pub kinds: Vec<String>,
}

impl Default for InjectSection {
    fn default() -> Self {
        InjectSection { p: 40.0, neighbors: 3, kinds: Vec::new() }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Cross-field sanity; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.model.embed < 2 || self.model.embed % 2 != 0 {
            bail!("model.embed must be even and >= 2 (got {})", self.model.embed);
        }
        if self.model.kernel == "gat" && (self.model.embed / 2) % self.model.heads.max(1) != 0 {
            bail!(
                "model.heads ({}) must divide model.embed/2 ({})",
                self.model.heads,
                self.model.embed / 2
            );
        }
        if !matches!(self.model.kernel.as_str(), "gat" | "gcn") {
            bail!("model.kernel must be 'gat' or 'gcn' (got '{}')", self.model.kernel);
        }
        if !matches!(self.topology.kind.as_str(), "complete" | "coverage" | "topk") {
            bail!("topology.kind must be complete, coverage or topk (got '{}')", self.topology.kind);
        }
        if !(self.dataset.train_frac > 0.0 && self.dataset.train_frac < 1.0) {
            bail!("dataset.train_frac must lie in (0, 1) (got {})", self.dataset.train_frac);
        }
        if self.inject.p <= 0.0 {
            bail!("inject.p must be positive (got {})", self.inject.p);
        }
        if self.eval.threshold < 0.0 || self.eval.threshold > 1.0 {
            bail!("eval.threshold must lie in [0, 1] (got {})", self.eval.threshold);
        }
        if matches!(self.dataset.source.as_str(), "raw" | "grid") && self.dataset.path.is_none() {
            bail!("dataset.path is required when dataset.source = '{}'", self.dataset.source);
        }
        if !matches!(self.dataset.source.as_str(), "synthetic" | "raw" | "grid") {
            bail!("dataset.source must be synthetic, raw or grid (got '{}')", self.dataset.source);
        }
        Ok(())
    }

    /// Serialize the fully resolved config next to the run's outputs.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = toml::to_string_pretty(self).context("serializing resolved config")?;
        std::fs::write(dir.join("config.toml"), text)?;
        Ok(())
    }
}
