use crate::error::{Error, Result};
use crate::losses::{ConsConfig, LossWeights};
use crate::proto::ClusterConfig;
use crate::segmodel::ModelConfig;
use crate::synthdata::TaskSplit;

/// Which loss terms are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Toggles {
    pub cluster: bool,
    pub class_weighting: bool,
    pub cons: bool,
    pub distill: bool,
}

/// Named rows of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    FineTune,
    Cluster,
    ClusterClass,
    Full,
    Distill,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::FineTune,
        Ablation::Cluster,
        Ablation::ClusterClass,
        Ablation::Full,
        Ablation::Distill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::FineTune => "fine-tune",
            Ablation::Cluster => "cluster",
            Ablation::ClusterClass => "cluster-class",
            Ablation::Full => "full",
            Ablation::Distill => "distill",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation `{s}` (expected one of fine-tune, cluster, cluster-class, full, distill)"
                ))
            })
    }

    pub fn toggles(self) -> Toggles {
        let t = |cluster, class_weighting, cons, distill| Toggles {
            cluster,
            class_weighting,
            cons,
            distill,
        };
        match self {
            Ablation::FineTune => t(false, false, false, false),
            Ablation::Cluster => t(true, false, false, false),
            Ablation::ClusterClass => t(true, true, false, false),
            Ablation::Full => t(true, true, true, false),
            Ablation::Distill => t(false, false, false, true),
        }
    }
}

/// Treatment of background pixels from step 2 on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackgroundPolicy {
    /// `Pseudo` when the cluster loss is on, `Supervise` otherwise.
    Auto,
    /// Route background through nearest-prototype pseudo-labels.
    Pseudo,
    /// Keep background as a CE target (plain fine-tuning).
    Supervise,
}

impl BackgroundPolicy {
    pub fn name(self) -> &'static str {
        match self {
            BackgroundPolicy::Auto => "auto",
            BackgroundPolicy::Pseudo => "pseudo",
            BackgroundPolicy::Supervise => "supervise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "pseudo" => Ok(Self::Pseudo),
            "supervise" => Ok(Self::Supervise),
            _ => Err(Error::Config(format!(
                "train.background must be auto, pseudo or supervise, got `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub split: TaskSplit,
    pub model: ModelConfig,
    /// Epochs of step 1.
    pub epochs: usize,
    /// Epochs of later steps; `None` reuses `epochs`.
    pub continual_epochs: Option<usize>,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_continual: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub toggles: Toggles,
    pub weights: LossWeights,
    /// Bounds applied to class weights.
    pub weight_clamp: (f64, f64),
    pub cluster: ClusterConfig,
    pub cons: ConsConfig,
    pub background: BackgroundPolicy,
    /// Also apply CE to pseudo-labelled pixels.
    pub pseudo_ce: bool,
    /// Features deposited per class per image.
    pub bank_per_image: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(split: TaskSplit) -> Self {
        Self {
            split,
            model: ModelConfig::default(),
            epochs: 10,
            continual_epochs: None,
            batch_size: 6,
            lr_initial: 0.05,
            lr_continual: 0.005,
            momentum: 0.9,
            weight_decay: 1e-4,
            toggles: Toggles::default(),
            weight_clamp: (0.1, 10.0),
            weights: LossWeights::default(),
            cluster: ClusterConfig::default(),
            cons: ConsConfig::default(),
            background: BackgroundPolicy::Auto,
            pseudo_ce: false,
            bank_per_image: 32,
            seed: 0,
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.toggles = ablation.toggles();
        self
    }

    pub fn epochs_for(&self, t: usize) -> usize {
        if t <= 1 {
            self.epochs
        } else {
            self.continual_epochs.unwrap_or(self.epochs)
        }
    }

    pub fn lr_for(&self, t: usize) -> f64 {
        if t <= 1 {
            self.lr_initial
        } else {
            self.lr_continual
        }
    }

    /// Effective policy after resolving `Auto`.
    pub fn background_policy(&self) -> BackgroundPolicy {
        match self.background {
            BackgroundPolicy::Auto if self.toggles.cluster => BackgroundPolicy::Pseudo,
            BackgroundPolicy::Auto => BackgroundPolicy::Supervise,
            p => p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        self.cluster.validate()?;
        self.cons.validate()?;
        for (k, v) in [("train.lr_initial", self.lr_initial), ("train.lr_continual", self.lr_continual)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{k} must be > 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "train.momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "train.weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.continual_epochs == Some(0) {
            return Err(Error::Config("train: batch_size and epochs must be positive".into()));
        }
        let (lo, hi) = self.weight_clamp;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "losses.weight_clamp must satisfy 0 < min <= max, got ({lo}, {hi})"
            )));
        }
        if self.bank_per_image == 0 {
            return Err(Error::Config("train.bank_per_image must be positive".into()));
        }
        // Head rows are indexed by class id, so ids must be introduced in
        // order 1, 2, 3, ...
        let mut expected = 1u16;
        for step in self.split.steps() {
            let mut ids = step.clone();
            ids.sort_unstable();
            for id in ids {
                if id != expected {
                    return Err(Error::Config(format!(
                        "split: class ids must be consecutive in step order, found {id} where {expected} was expected"
                    )));
                }
                expected += 1;
            }
        }
        Ok(())
    }
}
