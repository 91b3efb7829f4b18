use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses::{cluster_loss, cons_loss_logits, distill_loss, weighted_ce, ClassDistribution};
use crate::numerics::{Block, Grid, ParamSet, Pcg32};
use crate::proto::{update_prototypes, Prototype};
use crate::segmodel::{backward, forward, forward_pass, ModelParams};
use crate::synthdata::{collapse_map, BACKGROUND, IGNORE};

use super::labels::{build_effective_labels, LabelPolicy};
use super::{AccessTracker, BackgroundPolicy, Sgd, TrainConfig, TrainerState};

/// Batch-mean loss terms of one iteration (unweighted).
#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub epoch: usize,
    pub iteration: usize,
    pub ce: f64,
    pub cluster: f64,
    pub cons: f64,
    pub distill: f64,
    /// Weighted objective that was differentiated.
    pub total: f64,
    pub lr: f64,
}

/// Per-epoch means of the iteration logs.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    pub ce: f64,
    pub cluster: f64,
    pub cons: f64,
    pub distill: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub step: usize,
    pub params: ModelParams<f64>,
    pub iterations: usize,
    pub epochs: Vec<EpochTrace>,
    pub log: Vec<IterationLog>,
    pub prototypes: Vec<(u16, Prototype<f64>)>,
    /// Pixels the cluster loss skipped for lack of an initialized prototype.
    pub cluster_skipped: usize,
    pub pseudo_labeled: usize,
    /// Class weights of the last epoch, indexed by head row.
    pub class_weights: Option<Vec<f64>>,
}

struct ImageResult {
    grads: ParamSet<f64>,
    terms: [f64; 4],
    total: f64,
    features: Grid<f64>,
    labels: Vec<u16>,
    skipped: usize,
    pseudo: usize,
}

struct StepContext<'a> {
    cfg: &'a TrainConfig,
    model: &'a ModelParams<f64>,
    prev: Option<&'a ModelParams<f64>>,
    protos: &'a crate::proto::PrototypeBank<f64>,
    policy: LabelPolicy,
    weights: Option<&'a [f64]>,
    t: usize,
    current: &'a [u16],
}

fn add_scaled(dst: &mut Grid<f64>, src: &Block<f64>, k: f64) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(&src.data) {
        *d += k * s;
    }
}

fn image_terms(ctx: &StepContext, image: &Grid<f64>, labels: &[u16]) -> Result<ImageResult> {
    let cfg = ctx.cfg;
    let w = &cfg.weights;
    let pass = forward_pass(ctx.model, image)?;
    let pred = &pass.prediction;
    let eff = build_effective_labels(labels, &pred.features, ctx.protos, ctx.t, ctx.current, ctx.policy);

    let ce = weighted_ce(&pred.logits, &eff.labels, Some(&eff.ce_mask), ctx.weights)?;
    let mut grad_logits = Grid::try_from(ce.grads["logits"].clone())?;
    let mut grad_features = Grid::zeros(pred.features.height(), pred.features.width(), pred.features.channels());
    let mut terms = [ce.value, 0.0, 0.0, 0.0];
    let mut total = ce.value;
    let mut skipped = 0;

    if cfg.toggles.cluster {
        let out = cluster_loss(&pred.features, &eff.labels, ctx.protos, cfg.cluster.margin)?;
        add_scaled(&mut grad_features, &out.slot.grads["features"], w.lambda_cluster);
        terms[1] = out.slot.value;
        total += w.lambda_cluster * out.slot.value;
        skipped = out.skipped;
    }
    if cfg.toggles.cons {
        let out = cons_loss_logits(image, &pred.logits, &cfg.cons)?;
        add_scaled(&mut grad_logits, &out.grads["logits"], w.lambda_cons);
        terms[2] = out.value;
        total += w.lambda_cons * out.value;
    }
    if cfg.toggles.distill {
        if let Some(prev) = ctx.prev {
            let old = forward(prev, image)?.features;
            let out = distill_loss(&pred.features, &old)?;
            add_scaled(&mut grad_features, &out.grads["features"], w.lambda_distill);
            terms[3] = out.value;
            total += w.lambda_distill * out.value;
        }
    }
    let grads = backward(ctx.model, &pass, Some(&grad_features), Some(&grad_logits))?.grads;
    Ok(ImageResult {
        grads,
        terms,
        total,
        features: pass.prediction.features,
        labels: eff.labels,
        skipped,
        pseudo: eff.pseudo_labeled,
    })
}

/// Classes whose pixels can be CE targets at step `t`.
fn supervised_classes(cfg: &TrainConfig, t: usize) -> Result<Vec<u16>> {
    if t > 1 && cfg.background_policy() == BackgroundPolicy::Pseudo && cfg.pseudo_ce {
        let mut classes = cfg.split.known_through(t)?;
        classes.insert(0, BACKGROUND);
        return Ok(classes);
    }
    let mut classes = cfg.split.classes(t)?.to_vec();
    if t == 1 || cfg.background_policy() == BackgroundPolicy::Supervise {
        classes.insert(0, BACKGROUND);
    }
    Ok(classes)
}

/// Empirical distribution of the CE targets the current model would produce
/// over the step's images, pseudo labels included.
fn target_distribution(
    state: &TrainerState,
    data: &AccessTracker,
    ids: &[usize],
    supervised: &[u16],
    step_classes: &[u16],
    policy: LabelPolicy,
    clamp: (f64, f64),
    t: usize,
) -> Result<ClassDistribution> {
    let routed = t > 1 && policy.background != BackgroundPolicy::Supervise;
    let samples = ids.iter().map(|&i| data.read(i)).collect::<Result<Vec<_>>>()?;
    let targets = samples
        .par_iter()
        .map(|s| {
            let labels = collapse_map(&s.labels, step_classes);
            if !routed {
                return Ok((labels.as_slice().to_vec(), None));
            }
            let features = forward(&state.model, &s.image)?.features;
            let eff = build_effective_labels(labels.as_slice(), &features, &state.protos, t, step_classes, policy);
            Ok((eff.labels, Some(eff.ce_mask)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dist = ClassDistribution::new(supervised);
    dist.clamp = clamp;
    for (labels, mask) in &targets {
        dist.observe(labels, mask.as_deref());
    }
    Ok(dist)
}

/// Trains step `t` on the samples the tracker assigns to it.
///
/// Per iteration: forward every image of the batch (in parallel), build
/// effective labels, evaluate the enabled losses, reduce gradients in batch
/// order, take an SGD step, deposit features into the bank and tick the
/// prototype schedule with the step-local iteration counter.
pub fn run_step(
    state: &mut TrainerState,
    data: &AccessTracker,
    cfg: &TrainConfig,
    t: usize,
) -> Result<StepOutcome> {
    cfg.validate()?;
    let step_classes = cfg.split.classes(t)?.to_vec();
    let ids = data.selected(t);
    if ids.is_empty() {
        return Err(Error::Protocol(format!("step {t} has no training images")));
    }
    data.begin_step(t);
    let epochs = cfg.epochs_for(t);
    let per_epoch = ids.len().div_ceil(cfg.batch_size);
    let total_iterations = epochs * per_epoch;
    if cfg.toggles.cluster && total_iterations < cfg.cluster.update_period {
        return Err(Error::Config(format!(
            "cluster.update_period {} exceeds the {total_iterations} iterations of step {t}",
            cfg.cluster.update_period
        )));
    }
    let step_key = state.rng.next_u64();
    let lr = cfg.lr_for(t);
    let mut opt = Sgd::new(lr, cfg.momentum, cfg.weight_decay);
    let policy = LabelPolicy {
        background: cfg.background_policy(),
        pseudo_ce: cfg.pseudo_ce,
    };
    let supervised = supervised_classes(cfg, t)?;

    let mut log = Vec::with_capacity(total_iterations);
    let mut epoch_traces = Vec::with_capacity(epochs);
    let mut iteration = 0;
    let mut cluster_skipped = 0;
    let mut pseudo_labeled = 0;
    let mut class_weights = None;

    for epoch in 1..=epochs {
        let weights = if cfg.toggles.class_weighting {
            let dist = target_distribution(state, data, &ids, &supervised, &step_classes, policy, cfg.weight_clamp, t)?;
            Some(dist.weight_table(state.model.num_outputs()))
        } else {
            None
        };

        let mut order = ids.clone();
        order.shuffle(&mut Pcg32::stream(step_key, &format!("shuffle/{epoch}")));
        let first_log = log.len();
        for batch in order.chunks(cfg.batch_size) {
            iteration += 1;
            let samples = batch
                .iter()
                .map(|&i| data.read(i).map(|s| (i, s)))
                .collect::<Result<Vec<_>>>()?;
            let ctx = StepContext {
                cfg,
                model: &state.model,
                prev: state.prev.as_ref(),
                protos: &state.protos,
                policy,
                weights: weights.as_deref(),
                t,
                current: &step_classes,
            };
            let results = samples
                .par_iter()
                .map(|(_, s)| image_terms(&ctx, &s.image, collapse_map(&s.labels, &step_classes).as_slice()))
                .collect::<Result<Vec<_>>>()?;

            // Fixed-order reduction.
            let inv = 1.0 / results.len() as f64;
            let mut grads: ParamSet<f64> = results[0]
                .grads
                .iter()
                .map(|(k, b)| (k.clone(), Block::zeros_like(b)))
                .collect();
            let mut terms = [0.0; 4];
            let mut total = 0.0;
            for r in &results {
                for (name, g) in &r.grads {
                    for (a, b) in grads.get_mut(name).unwrap().data.iter_mut().zip(&g.data) {
                        *a += b * inv;
                    }
                }
                for (a, b) in terms.iter_mut().zip(r.terms) {
                    *a += b * inv;
                }
                total += r.total * inv;
                cluster_skipped += r.skipped;
                pseudo_labeled += r.pseudo;
            }
            opt.step(&mut state.model, &grads)?;
            if !state.model.is_finite() {
                return Err(Error::Protocol(format!(
                    "parameters became non-finite at step {t}, iteration {iteration}"
                )));
            }

            if cfg.toggles.cluster {
                let frozen = state.protos.frozen_classes();
                for ((id, _), r) in samples.iter().zip(&results) {
                    let mut rng = Pcg32::stream(step_key, &format!("bank/{iteration}/{id}"));
                    deposit(state, r, &frozen, cfg.bank_per_image, &mut rng)?;
                }
                update_prototypes(&mut state.protos, &state.bank, &cfg.cluster, iteration);
            }

            log.push(IterationLog {
                epoch,
                iteration,
                ce: terms[0],
                cluster: terms[1],
                cons: terms[2],
                distill: terms[3],
                total,
                lr,
            });
        }
        let rows = &log[first_log..];
        let mean = |f: fn(&IterationLog) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
        epoch_traces.push(EpochTrace {
            epoch,
            ce: mean(|r| r.ce),
            cluster: mean(|r| r.cluster),
            cons: mean(|r| r.cons),
            distill: mean(|r| r.distill),
            total: mean(|r| r.total),
        });
        class_weights = weights;
    }

    Ok(StepOutcome {
        step: t,
        params: state.model.clone(),
        iterations: iteration,
        epochs: epoch_traces,
        log,
        prototypes: state.protos.entries().map(|(c, p)| (c, p.clone())).collect(),
        cluster_skipped,
        pseudo_labeled,
        class_weights,
    })
}

/// Deposits up to `per_class` randomly chosen pixel features per effective
/// class of one image.
fn deposit(
    state: &mut TrainerState,
    r: &ImageResult,
    frozen: &std::collections::BTreeSet<u16>,
    per_class: usize,
    rng: &mut Pcg32,
) -> Result<()> {
    let mut by_class: std::collections::BTreeMap<u16, Vec<usize>> = Default::default();
    for (i, &l) in r.labels.iter().enumerate() {
        if l != IGNORE && !frozen.contains(&l) {
            by_class.entry(l).or_default().push(i);
        }
    }
    for (class, mut pixels) in by_class {
        if pixels.len() > per_class {
            let (chosen, _) = pixels.partial_shuffle(rng, per_class);
            let mut chosen = chosen.to_vec();
            chosen.sort_unstable();
            pixels = chosen;
        }
        for i in pixels {
            state.bank.deposit(class, r.features.pixel_at(i))?;
        }
    }
    Ok(())
}
