//! Run configuration file.
//!
//! Every section and key is optional; missing keys take the engine defaults
//! and unknown keys are rejected. `configs/example.toml` documents each key.

use std::path::{Path, PathBuf};

use fairseg::losses::{ConsConfig, LossWeights};
use fairseg::proto::ClusterConfig;
use fairseg::segmodel::ModelConfig;
use fairseg::synthdata::{BenchmarkSpec, TaskSplit};
use fairseg::trainer::{Ablation, BackgroundPolicy, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: BenchmarkSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub losses: LossesSection,
    pub cluster: ClusterSection,
    pub cons: ConsSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    /// Only `shapes-8` is built in; it fixes the class count and palette.
    pub preset: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub noise_sigma: f64,
    /// Explicit per-class sampling weights; overrides `frequency_exponent`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_frequencies: Option<Vec<f64>>,
    /// Weights proportional to `rank^-exponent`.
    pub frequency_exponent: f64,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let spec = BenchmarkSpec::shapes8(7);
        Self {
            preset: "shapes-8".into(),
            seed: spec.seed,
            height: spec.height,
            width: spec.width,
            train_count: spec.train_count,
            test_count: spec.test_count,
            noise_sigma: spec.noise_sigma,
            class_frequencies: None,
            frequency_exponent: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub pattern: String,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { pattern: "5-3".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub patch_size: usize,
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            patch_size: m.patch_size,
            feature_dim: m.feature_dim,
            hidden: m.hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub ablation: String,
    pub epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub continual_epochs: Option<usize>,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_continual: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub background: String,
    pub pseudo_ce: bool,
    pub bank_per_image: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = defaults();
        Self {
            ablation: Ablation::Full.name().into(),
            epochs: t.epochs,
            continual_epochs: t.continual_epochs,
            batch_size: t.batch_size,
            lr_initial: t.lr_initial,
            lr_continual: t.lr_continual,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            background: t.background.name().into(),
            pseudo_ce: t.pseudo_ce,
            bank_per_image: t.bank_per_image,
            seed: t.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossesSection {
    pub lambda_cluster: f64,
    pub lambda_cons: f64,
    pub lambda_distill: f64,
    /// `[min, max]` bounds of the class weights.
    pub weight_clamp: [f64; 2],
}

impl Default for LossesSection {
    fn default() -> Self {
        let w = LossWeights::default();
        let (lo, hi) = defaults().weight_clamp;
        Self {
            lambda_cluster: w.lambda_cluster,
            lambda_cons: w.lambda_cons,
            lambda_distill: w.lambda_distill,
            weight_clamp: [lo, hi],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub margin: f64,
    pub momentum: f64,
    pub update_period: usize,
    pub capacity: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        let c = ClusterConfig::default();
        Self {
            margin: c.margin,
            momentum: c.momentum,
            update_period: c.update_period,
            capacity: c.capacity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsSection {
    pub sigma1: f64,
    pub sigma2: f64,
    pub window: usize,
    pub literal: bool,
}

impl Default for ConsSection {
    fn default() -> Self {
        let c = ConsConfig::default();
        Self {
            sigma1: c.sigma1,
            sigma2: c.sigma2,
            window: c.window,
            literal: c.literal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

fn defaults() -> TrainConfig {
    TrainConfig::new(TaskSplit::parse("1", 1).expect("trivial split"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn benchmark_spec(&self) -> Result<BenchmarkSpec, CliError> {
        let b = &self.benchmark;
        if b.preset != "shapes-8" {
            return Err(CliError::Config(format!(
                "benchmark.preset: unknown preset `{}` (expected shapes-8)",
                b.preset
            )));
        }
        let mut spec = BenchmarkSpec::shapes8(b.seed);
        spec.height = b.height;
        spec.width = b.width;
        spec.train_count = b.train_count;
        spec.test_count = b.test_count;
        spec.noise_sigma = b.noise_sigma;
        spec.class_frequencies = match &b.class_frequencies {
            Some(f) => f.clone(),
            None => fairseg::synthdata::power_law_frequencies(spec.num_classes, b.frequency_exponent),
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    /// Engine configuration for a dataset with `num_classes` foreground
    /// classes.
    pub fn train_config(&self, num_classes: usize) -> Result<TrainConfig, CliError> {
        let split = TaskSplit::parse(&self.split.pattern, num_classes).map_err(config_err)?;
        let t = &self.train;
        let ablation = Ablation::parse(&t.ablation).map_err(config_err)?;
        let mut cfg = TrainConfig::new(split).with_ablation(ablation);
        cfg.model = ModelConfig {
            patch_size: self.model.patch_size,
            feature_dim: self.model.feature_dim,
            hidden: self.model.hidden.clone(),
        };
        cfg.epochs = t.epochs;
        cfg.continual_epochs = t.continual_epochs;
        cfg.batch_size = t.batch_size;
        cfg.lr_initial = t.lr_initial;
        cfg.lr_continual = t.lr_continual;
        cfg.momentum = t.momentum;
        cfg.weight_decay = t.weight_decay;
        cfg.background = BackgroundPolicy::parse(&t.background).map_err(config_err)?;
        cfg.pseudo_ce = t.pseudo_ce;
        cfg.bank_per_image = t.bank_per_image;
        cfg.seed = t.seed;
        cfg.weights = LossWeights {
            lambda_cluster: self.losses.lambda_cluster,
            lambda_cons: self.losses.lambda_cons,
            lambda_distill: self.losses.lambda_distill,
        };
        cfg.weight_clamp = (self.losses.weight_clamp[0], self.losses.weight_clamp[1]);
        cfg.cluster = ClusterConfig {
            margin: self.cluster.margin,
            momentum: self.cluster.momentum,
            update_period: self.cluster.update_period,
            capacity: self.cluster.capacity,
        };
        cfg.cons = ConsConfig {
            sigma1: self.cons.sigma1,
            sigma2: self.cons.sigma2,
            window: self.cons.window,
            literal: self.cons.literal,
        };
        cfg.validate().map_err(config_err)?;
        Ok(cfg)
    }
}

fn config_err(e: fairseg::Error) -> CliError {
    CliError::Config(e.to_string())
}
