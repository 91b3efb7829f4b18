use crate::error::{Error, Result};
use crate::metrics::{grouped_report, MetricsReport};
use crate::numerics::{derive_seed, Pcg32, PCG32_ALGORITHM_ID};
use crate::proto::{FeatureBank, Prototype, PrototypeBank};
use crate::segmodel::{grow_head, Checkpoint, ModelParams, NamedBlock};
use crate::synthdata::{select_step_images, SegSample};

use super::{evaluate, run_step, AccessTracker, Evaluation, StepOutcome, TrainConfig};

/// Everything that persists across iterations of a continual run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub model: ModelParams<f64>,
    pub protos: PrototypeBank<f64>,
    pub bank: FeatureBank<f64>,
    /// Frozen copy of the previous step's model (distillation only).
    pub prev: Option<ModelParams<f64>>,
    pub rng: Pcg32,
    /// Number of completed steps.
    pub completed: usize,
    /// Test mIoU over known classes measured at the end of each step.
    pub step_mious: Vec<f64>,
}

impl TrainerState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let first = cfg.split.classes(1)?.len();
        let model = ModelParams::init(cfg.model.clone(), first, derive_seed(cfg.seed, "model"))?;
        let d = model.feature_dim();
        Ok(Self {
            model,
            protos: PrototypeBank::new(d),
            bank: FeatureBank::new(cfg.cluster.capacity, d),
            prev: None,
            rng: Pcg32::stream(cfg.seed, "run"),
            completed: 0,
            step_mious: Vec::new(),
        })
    }

    /// Persists model, prototypes, generator and per-step metrics.
    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Result<Checkpoint> {
        let mut blocks = vec![NamedBlock::scalar("model/patch_size", self.model.config.patch_size as f64)];
        for (name, b) in self.model.to_param_set() {
            blocks.push(NamedBlock::new(format!("model/{name}"), b.shape, b.data)?);
        }
        for (c, p) in self.protos.entries() {
            blocks.push(NamedBlock::new(format!("proto/{c}/vector"), vec![p.vector.len()], p.vector.clone())?);
            let flags = vec![p.frozen as u8 as f64, p.initialized as u8 as f64];
            blocks.push(NamedBlock::new(format!("proto/{c}/state"), vec![2], flags)?);
        }
        blocks.push(NamedBlock::new(
            "metrics/step_miou",
            vec![self.step_mious.len()],
            self.step_mious.clone(),
        )?);
        Ok(Checkpoint {
            rng_algorithm: PCG32_ALGORITHM_ID,
            rng: self.rng.clone(),
            step: self.completed as u32,
            registry: cfg.split.steps()[..self.completed].to_vec(),
            blocks,
        })
    }

    /// Restores a state saved by [`TrainerState::to_checkpoint`]. The
    /// checkpoint's class registry must be a prefix of `cfg.split`.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: &TrainConfig) -> Result<Self> {
        if ckpt.rng_algorithm != PCG32_ALGORITHM_ID {
            return Err(Error::State(format!(
                "checkpoint generator id {:#x} is not PCG32",
                ckpt.rng_algorithm
            )));
        }
        let completed = ckpt.step as usize;
        if completed > cfg.split.num_steps() || ckpt.registry.as_slice() != &cfg.split.steps()[..completed] {
            return Err(Error::State(format!(
                "checkpoint registry {:?} does not match split {}",
                ckpt.registry,
                cfg.split.pattern()
            )));
        }
        let model = model_from_checkpoint(ckpt)?;
        let d = model.feature_dim();
        let mut protos = PrototypeBank::new(d);
        for b in ckpt.blocks_with_prefix("proto/") {
            let Some(rest) = b.name.strip_prefix("proto/").and_then(|r| r.strip_suffix("/vector")) else {
                continue;
            };
            let class: u16 = rest
                .parse()
                .map_err(|_| Error::State(format!("bad prototype block name `{}`", b.name)))?;
            let state = ckpt
                .block(&format!("proto/{class}/state"))
                .ok_or_else(|| Error::State(format!("prototype {class} has no state block")))?;
            if state.data.len() != 2 {
                return Err(Error::State(format!("prototype {class} state must hold 2 flags")));
            }
            protos.restore(
                class,
                Prototype {
                    vector: b.data.clone(),
                    frozen: state.data[0] != 0.0,
                    initialized: state.data[1] != 0.0,
                },
            )?;
        }
        let step_mious = ckpt.block("metrics/step_miou").map(|b| b.data.clone()).unwrap_or_default();
        Ok(Self {
            model,
            protos,
            bank: FeatureBank::new(cfg.cluster.capacity, d),
            prev: None,
            rng: ckpt.rng.clone(),
            completed,
            step_mious,
        })
    }
}

/// Model parameters stored in a checkpoint.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<ModelParams<f64>> {
    let patch = ckpt
        .block("model/patch_size")
        .and_then(|b| b.data.first().copied())
        .ok_or_else(|| Error::State("checkpoint has no model/patch_size".into()))?;
    let set = ckpt
        .blocks_with_prefix("model/")
        .filter(|b| b.name != "model/patch_size")
        .map(|b| {
            let name = b.name.trim_start_matches("model/").to_string();
            crate::numerics::Block::new(b.shape.clone(), b.data.clone()).map(|blk| (name, blk))
        })
        .collect::<Result<_>>()?;
    ModelParams::from_param_set(patch as usize, &set)
}

/// Resume point and early stop for [`run_continual`].
#[derive(Clone, Debug, Default)]
pub struct RunControl {
    pub resume: Option<Checkpoint>,
    /// Stop after this step even if the split has more.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct ContinualOutcome {
    pub state: TrainerState,
    pub steps: Vec<StepOutcome>,
    /// One checkpoint per step trained in this call.
    pub checkpoints: Vec<Checkpoint>,
    /// `(step, reads)` of samples owned only by earlier steps.
    pub prior_step_reads: Vec<(usize, u64)>,
    pub refused_reads: u64,
}

/// Runs the steps of `cfg.split` in order.
///
/// At every boundary `t > 1` the head grows by `|C^t|` rows, prototypes of
/// earlier classes are frozen, the feature bank is emptied and the learning
/// rate switches to `lr_continual`. All training reads go through an
/// [`AccessTracker`], so a step can only see its own samples. With `test`,
/// the model is scored after every step on labels collapsed to the classes
/// known so far.
pub fn run_continual(
    cfg: &TrainConfig,
    train: &[SegSample<f64>],
    test: Option<&[SegSample<f64>]>,
    control: RunControl,
) -> Result<ContinualOutcome> {
    cfg.validate()?;
    let split = &cfg.split;
    let selection = (1..=split.num_steps())
        .map(|t| select_step_images(train, split, t))
        .collect::<Result<Vec<_>>>()?;
    let tracker = AccessTracker::new(train, &selection);
    let mut state = match &control.resume {
        Some(ckpt) => TrainerState::from_checkpoint(ckpt, cfg)?,
        None => TrainerState::new(cfg)?,
    };
    let last = control.stop_after.unwrap_or(split.num_steps()).min(split.num_steps());
    let mut steps = Vec::new();
    let mut checkpoints = Vec::new();
    let mut prior_step_reads = Vec::new();
    for t in state.completed + 1..=last {
        if t > 1 {
            state.prev = cfg.toggles.distill.then(|| state.model.clone());
            state.model = grow_head(&state.model, split.classes(t)?.len(), cfg.seed, t);
            if cfg.toggles.cluster {
                let old: Vec<u16> = split
                    .known_through(t - 1)?
                    .into_iter()
                    .filter(|&c| state.protos.get(c).is_some_and(|p| p.initialized))
                    .collect();
                state.protos.freeze_previous(&old)?;
            }
            state.bank.reset();
        }
        let outcome = run_step(&mut state, &tracker, cfg, t).map_err(|e| match e {
            Error::Protocol(m) => Error::Protocol(format!("step {t}: {m}")),
            other => other,
        })?;
        prior_step_reads.push((t, tracker.prior_step_reads(t)));
        if let Some(test) = test {
            let known = split.known_through(t)?;
            let eval = evaluate(&state.model, test, Some(&known))?;
            state.step_mious.push(eval.confusion.mean_iou(&known).unwrap_or(0.0));
        }
        state.completed = t;
        checkpoints.push(state.to_checkpoint(cfg)?);
        steps.push(outcome);
    }
    Ok(ContinualOutcome {
        state,
        steps,
        checkpoints,
        prior_step_reads,
        refused_reads: tracker.refused(),
    })
}

/// Scores the final model on full test labels and builds the grouped
/// report, including the island count.
pub fn final_report(
    cfg: &TrainConfig,
    state: &TrainerState,
    test: &[SegSample<f64>],
) -> Result<(MetricsReport, Evaluation)> {
    let eval = evaluate(&state.model, test, None)?;
    let mut report = grouped_report(&eval.confusion, &cfg.split, &state.step_mious, Some(&eval.errors), None);
    report.islands = Some(eval.islands);
    Ok((report, eval))
}
