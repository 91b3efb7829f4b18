//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.
//!
//! The ablation criteria train 4 configurations × 3 seeds from
//! `configs/ablation.toml`; expect a few minutes on one core.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fairseg::losses::{gradcheck_suite, proposition1_trials, verify_proposition1};
use fairseg::metrics::{fairness_gap, grouped_report, normalized_entropy, population_std, ConfusionMatrix};
use fairseg::numerics::{Grid, Pcg32};
use fairseg::proto::{pseudo_label, update_prototypes, ClusterConfig, FeatureBank, Prototype, PrototypeBank};
use fairseg::segmodel::{forward, Checkpoint};
use fairseg::synthdata::{generate, Benchmark, TaskSplit};
use fairseg::trainer::{final_report, run_continual, Ablation, ContinualOutcome, RunControl, TrainConfig};
use fairseg_cli::RunConfig;
use rand::Rng;

const SEEDS: [u64; 3] = [1, 2, 3];
const ABLATIONS: [Ablation; 4] = [Ablation::FineTune, Ablation::Cluster, Ablation::ClusterClass, Ablation::Full];

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1. Gradients

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let checks = gradcheck_suite(0, 20).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let mut seen = BTreeSet::new();
    let mut worst = 0.0f64;
    for c in &checks {
        ensure(c.instances == 20, || format!("{}: {} instances", c.name, c.instances))?;
        if c.expect_failure {
            // The mutant must be caught or the checker proves nothing.
            ensure(c.max_rel_error > 1e-5, || format!("mutant {} not detected", c.name))?;
            continue;
        }
        ensure(c.max_rel_error <= 1e-5, || format!("{}: rel error {:.3e}", c.name, c.max_rel_error))?;
        seen.insert(c.name);
        worst = worst.max(c.max_rel_error);
    }
    for required in ["weighted_ce", "cluster_loss", "cons_loss", "distill_loss"] {
        ensure(seen.contains(required), || format!("{required} missing from the suite"))?;
    }
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{} losses, worst rel error {worst:.2e}, {:.1}s", seen.len(), elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 2. Distillation bound

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn distillation_bound() -> Outcome {
    let t0 = Instant::now();
    let dims = [4usize, 16, 32];
    let classes = [2usize, 8, 20];
    let summary = proposition1_trials(11, 1000, &dims, &classes).map_err(|e| e.to_string())?;
    ensure(summary.trials == 1000 && summary.held == 1000, || {
        format!("engine trials held {}/{}", summary.held, summary.trials)
    })?;

    // Independent trials with a plain recomputation of both sides.
    let mut rng = Pcg32::stream(12, "acceptance/prop1");
    let mut held = 0;
    let mut min_slack = f64::INFINITY;
    for i in 0..1000 {
        let d = dims[i % 3];
        let c = classes[(i / 3) % 3];
        let (h, w) = (3, 3);
        let scale = rng.random_range(0.1..10.0);
        let mut draw = |n: usize| (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let now = draw(h * w * d);
        let prev = if i % 10 == 0 { now.clone() } else { draw(h * w * d) };
        let protos: Vec<Vec<f64>> = (0..c).map(|_| draw(d)).collect();
        let report = verify_proposition1(
            &Grid::from_vec(h, w, d, now.clone()).unwrap(),
            &Grid::from_vec(h, w, d, prev.clone()).unwrap(),
            &protos,
        )
        .map_err(|e| e.to_string())?;
        let mut ok = true;
        for px in 0..h * w {
            let (a, b) = (&now[px * d..(px + 1) * d], &prev[px * d..(px + 1) * d]);
            let lhs = dist(a, b);
            let rhs = protos.iter().map(|p| dist(a, p) + dist(p, b)).sum::<f64>() / c as f64;
            ensure((report.lhs[px] - lhs).abs() <= 1e-9 * (1.0 + lhs), || format!("trial {i}: lhs mismatch"))?;
            ensure((report.rhs[px] - rhs).abs() <= 1e-9 * (1.0 + rhs), || format!("trial {i}: rhs mismatch"))?;
            min_slack = min_slack.min(rhs - lhs);
            ok &= lhs <= rhs + 1e-9;
        }
        ensure(report.holds == ok, || format!("trial {i}: verdict disagrees"))?;
        held += ok as usize;
    }
    let elapsed = t0.elapsed();
    ensure(held == 1000, || format!("independent trials held {held}/1000"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "2×1000 trials held, min slack {:.3e} / {min_slack:.3e}, {:.1}s",
        summary.min_slack,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 3. Prototype schedule

/// Brute-force model of the schedule: every deposit is kept, the mean is
/// taken over the newest `capacity` of them and the recurrence is replayed.
struct ScheduleOracle {
    capacity: usize,
    period: usize,
    eta: f64,
    history: BTreeMap<u16, Vec<Vec<f64>>>,
    protos: BTreeMap<u16, (Vec<f64>, bool)>,
}

impl ScheduleOracle {
    fn mean(&self, class: u16) -> Option<Vec<f64>> {
        let h = self.history.get(&class)?;
        let kept = &h[h.len().saturating_sub(self.capacity)..];
        let d = kept.first()?.len();
        let mut m = vec![0.0; d];
        for f in kept {
            for (s, v) in m.iter_mut().zip(f) {
                *s += v;
            }
        }
        Some(m.into_iter().map(|s| s / kept.len() as f64).collect())
    }

    fn tick(&mut self, iteration: usize) {
        let first = iteration == self.period;
        if !first && !(iteration > self.period && iteration % self.period == 0) {
            return;
        }
        let classes: Vec<u16> = self.history.keys().copied().collect();
        for c in classes {
            let Some(mean) = self.mean(c) else { continue };
            match self.protos.get_mut(&c) {
                Some((_, true)) => {}
                Some((p, false)) if !first => {
                    for (v, m) in p.iter_mut().zip(&mean) {
                        *v = self.eta * *v + (1.0 - self.eta) * m;
                    }
                }
                _ => {
                    self.protos.insert(c, (mean, false));
                }
            }
        }
    }
}

fn prototype_schedule() -> Outcome {
    let mut rng = Pcg32::stream(3, "acceptance/schedule");
    let mut first_branch = 0;
    let mut frozen_skips = 0;
    let mut comparisons = 0;
    for run in 0..40 {
        let dim = 1 + run % 5;
        let cfg = ClusterConfig {
            margin: 1.0,
            momentum: rng.random_range(0.0..1.0),
            update_period: 1 + run % 4,
            capacity: 1 + run % 7,
        };
        let mut protos = PrototypeBank::<f64>::new(dim);
        let mut oracle = ScheduleOracle {
            capacity: cfg.capacity,
            period: cfg.update_period,
            eta: cfg.momentum,
            history: BTreeMap::new(),
            protos: BTreeMap::new(),
        };
        // Two steps: classes 0..3 first, then 3..6 with step-1 classes frozen.
        for step in 0..2u16 {
            let mut bank = FeatureBank::<f64>::new(cfg.capacity, dim);
            oracle.history.clear();
            if step == 1 {
                let done: Vec<u16> = protos.initialized().map(|(c, _)| c).filter(|&c| c != 0).collect();
                protos.freeze_previous(&done).map_err(|e| e.to_string())?;
                for c in &done {
                    oracle.protos.get_mut(c).unwrap().1 = true;
                }
            }
            let step_classes: Vec<u16> = (0..3).map(|k| if k == 0 { 0 } else { 3 * step + k }).collect();
            let old_classes: Vec<u16> = protos.frozen_classes().into_iter().collect();
            for iteration in 1..=25 {
                for _ in 0..rng.random_range(0..4) {
                    // Deposits into frozen classes must not move them.
                    let class = if !old_classes.is_empty() && rng.random_bool(0.2) {
                        old_classes[rng.random_range(0..old_classes.len())]
                    } else {
                        step_classes[rng.random_range(0..step_classes.len())]
                    };
                    let f: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
                    bank.deposit(class, &f).map_err(|e| e.to_string())?;
                    oracle.history.entry(class).or_default().push(f);
                }
                let before = protos.clone();
                update_prototypes(&mut protos, &bank, &cfg, iteration);
                oracle.tick(iteration);
                if iteration == cfg.update_period && oracle.history.values().any(|h| !h.is_empty()) {
                    first_branch += 1;
                }
                for (c, p) in protos.entries() {
                    if p.frozen && oracle.history.contains_key(&c) && iteration % cfg.update_period == 0 {
                        ensure(before.get(c).unwrap().vector == p.vector, || format!("frozen class {c} moved"))?;
                        frozen_skips += 1;
                    }
                }
                for (c, (v, frozen)) in &oracle.protos {
                    let p = protos.get(*c).ok_or_else(|| format!("run {run}: class {c} missing"))?;
                    ensure(p.initialized && p.frozen == *frozen, || format!("run {run}: class {c} flags"))?;
                    for (a, b) in p.vector.iter().zip(v) {
                        ensure((a - b).abs() <= 1e-12, || {
                            format!("run {run} step {step} it {iteration} class {c}: {a} vs {b}")
                        })?;
                    }
                    comparisons += 1;
                }
                let engine: usize = protos.initialized().count();
                ensure(engine == oracle.protos.len(), || format!("run {run}: {engine} initialized"))?;
            }
        }
    }
    ensure(first_branch > 0 && frozen_skips > 0, || {
        format!("coverage: first-update {first_branch}, frozen {frozen_skips}")
    })?;
    Ok(format!(
        "{comparisons} prototype comparisons, {first_branch} first updates, {frozen_skips} frozen no-ops"
    ))
}

// ---------------------------------------------------------------------------
// 4. Pseudo-labels

fn pseudo_labels() -> Outcome {
    let mut rng = Pcg32::stream(4, "acceptance/pseudo");
    let mut agree = 0;
    let mut ties = 0;
    let total = 10_000;
    let mut bank_rng = Pcg32::stream(4, "acceptance/pseudo/banks");
    let mut i = 0;
    while i < total {
        let dim = bank_rng.random_range(1..6);
        let mut protos = PrototypeBank::<f64>::new(dim);
        let mut live: Vec<(u16, Vec<f64>)> = Vec::new();
        for c in 0..bank_rng.random_range(2u16..9) {
            // Small integers make distances exact, so ties are real ties.
            let v: Vec<f64> = (0..dim).map(|_| bank_rng.random_range(-3i32..=3) as f64).collect();
            let initialized = c == 0 || bank_rng.random_bool(0.8);
            let frozen = bank_rng.random_bool(0.3);
            protos
                .restore(c, Prototype { vector: v.clone(), frozen: frozen && initialized, initialized })
                .map_err(|e| e.to_string())?;
            if initialized {
                live.push((c, v));
            }
        }
        for _ in 0..100 {
            let f: Vec<f64> = if rng.random_bool(0.5) {
                (0..dim).map(|_| rng.random_range(-3i32..=3) as f64).collect()
            } else {
                (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect()
            };
            let mut best: Option<(u16, f64)> = None;
            let mut tie = false;
            for (c, v) in &live {
                let d2: f64 = f.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                match best {
                    Some((_, b)) if d2 == b => tie = true,
                    Some((_, b)) if d2 > b => {}
                    _ => {
                        tie = false;
                        best = Some((*c, d2));
                    }
                }
            }
            let expected = best.unwrap().0;
            let got = pseudo_label(&protos, &f).map_err(|e| e.to_string())?;
            agree += (got == expected) as usize;
            ties += tie as usize;
            i += 1;
        }
    }
    ensure(agree == total, || format!("{agree}/{total} agree"))?;
    ensure(ties > 0, || "no tie cases were exercised".into())?;
    Ok(format!("{agree}/{total} agree, {ties} ties"))
}

// ---------------------------------------------------------------------------
// Ablation runs shared by 5-9

struct Run {
    ablation: Ablation,
    seed: u64,
    old_miou: f64,
    all_miou: f64,
    std_iou: f64,
    islands: u64,
    summary: String,
    elapsed: Duration,
    outcome: ContinualOutcome,
}

fn config_path() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ablation.toml")
}

fn train_config(run: &RunConfig, bench: &Benchmark<f64>, ablation: Ablation, seed: u64) -> TrainConfig {
    let mut run = run.clone();
    run.train.ablation = ablation.name().into();
    run.train.seed = seed;
    run.train_config(bench.num_classes).expect("committed config is valid")
}

/// mIoU over foreground classes with at least one true or predicted pixel,
/// plus single-pixel islands, recomputed from raw predictions.
fn recount(cfg: &TrainConfig, outcome: &ContinualOutcome, bench: &Benchmark<f64>) -> (f64, u64) {
    let k = bench.num_classes + 1;
    let (mut tp, mut fp, mut fneg) = (vec![0u64; k], vec![0u64; k], vec![0u64; k]);
    let mut islands = 0;
    for s in &bench.test {
        let pred = forward(&outcome.state.model, &s.image).unwrap().argmax();
        let (h, w) = (s.labels.height(), s.labels.width());
        for (i, (&p, &t)) in pred.iter().zip(s.labels.as_slice()).enumerate() {
            if p == t {
                tp[t as usize] += 1;
            } else {
                fp[p as usize] += 1;
                fneg[t as usize] += 1;
            }
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            let neighbours = (-1..=1)
                .flat_map(|dr| (-1..=1).map(move |dc| (r + dr, c + dc)))
                .filter(|&(nr, nc)| (nr, nc) != (r, c) && nr >= 0 && nc >= 0 && nr < h as isize && nc < w as isize);
            islands += neighbours.clone().all(|(nr, nc)| pred[nr as usize * w + nc as usize] != p) as u64;
        }
    }
    let ious: Vec<f64> = cfg
        .split
        .all_classes()
        .iter()
        .map(|&c| c as usize)
        .filter(|&c| tp[c] + fp[c] + fneg[c] > 0)
        .map(|c| tp[c] as f64 / (tp[c] + fp[c] + fneg[c]) as f64)
        .collect();
    (ious.iter().sum::<f64>() / ious.len() as f64, islands)
}

fn train_all(run_cfg: &RunConfig, bench: &Benchmark<f64>) -> Result<Vec<Run>, String> {
    let mut runs = Vec::new();
    for ablation in ABLATIONS {
        for seed in SEEDS {
            let cfg = train_config(run_cfg, bench, ablation, seed);
            let t0 = Instant::now();
            let outcome = run_continual(&cfg, &bench.train, Some(&bench.test), RunControl::default())
                .map_err(|e| format!("{} seed {seed}: {e}", ablation.name()))?;
            let (report, _) = final_report(&cfg, &outcome.state, &bench.test).map_err(|e| e.to_string())?;
            let elapsed = t0.elapsed();
            let (all, islands) = recount(&cfg, &outcome, bench);
            let reported = report.all.miou.unwrap_or(f64::NAN);
            ensure((all - reported).abs() <= 1e-12, || {
                format!("{} seed {seed}: reported mIoU {reported} vs recount {all}", ablation.name())
            })?;
            ensure(report.islands == Some(islands), || {
                format!("{} seed {seed}: islands {:?} vs recount {islands}", ablation.name(), report.islands)
            })?;
            println!(
                "  {:<14} seed {seed}: old {:.3}  all {:.3}  std {:.3}  islands {islands}  ({:.1}s)",
                ablation.name(),
                report.initial.miou.unwrap_or(0.0),
                all,
                report.std_iou,
                elapsed.as_secs_f64()
            );
            runs.push(Run {
                ablation,
                seed,
                old_miou: report.initial.miou.unwrap_or(0.0),
                all_miou: all,
                std_iou: report.std_iou,
                islands,
                summary: report.summary(),
                elapsed,
                outcome,
            });
        }
    }
    Ok(runs)
}

fn mean_of(runs: &[Run], ablation: Ablation, f: impl Fn(&Run) -> f64) -> f64 {
    let v: Vec<f64> = runs.iter().filter(|r| r.ablation == ablation).map(f).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// 5-7. Ablation directions

fn forgetting(runs: &[Run]) -> Outcome {
    let base = mean_of(runs, Ablation::FineTune, |r| r.old_miou);
    let cluster = mean_of(runs, Ablation::Cluster, |r| r.old_miou);
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap();
    ensure(slowest < Duration::from_secs(600), || format!("slowest run {slowest:?}"))?;
    ensure(cluster >= base + 0.15, || format!("old mIoU cluster {cluster:.4} vs fine-tune {base:.4}"))?;
    Ok(format!(
        "old-class mIoU cluster {cluster:.3} vs fine-tune {base:.3} (+{:.3}), slowest run {:.1}s",
        cluster - base,
        slowest.as_secs_f64()
    ))
}

fn fairness(runs: &[Run]) -> Outcome {
    let (s0, s1) = (
        mean_of(runs, Ablation::Cluster, |r| r.std_iou),
        mean_of(runs, Ablation::ClusterClass, |r| r.std_iou),
    );
    let (m0, m1) = (
        mean_of(runs, Ablation::Cluster, |r| r.all_miou),
        mean_of(runs, Ablation::ClusterClass, |r| r.all_miou),
    );
    ensure(s1 < s0, || format!("STD {s1:.4} not below {s0:.4}"))?;
    ensure(m1 >= m0 - 0.02, || format!("all mIoU fell from {m0:.4} to {m1:.4}"))?;
    Ok(format!("STD {s0:.3} -> {s1:.3}, all mIoU {m0:.3} -> {m1:.3}"))
}

fn consistency(runs: &[Run]) -> Outcome {
    let (m0, m1) = (
        mean_of(runs, Ablation::ClusterClass, |r| r.all_miou),
        mean_of(runs, Ablation::Full, |r| r.all_miou),
    );
    let (i0, i1) = (
        mean_of(runs, Ablation::ClusterClass, |r| r.islands as f64),
        mean_of(runs, Ablation::Full, |r| r.islands as f64),
    );
    ensure(m1 >= m0, || format!("all mIoU fell from {m0:.4} to {m1:.4}"))?;
    ensure(i1 <= 0.9 * i0, || format!("islands {i0:.1} -> {i1:.1}"))?;
    Ok(format!(
        "all mIoU {m0:.3} -> {m1:.3}, islands {i0:.1} -> {i1:.1} (-{:.0}%)",
        100.0 * (1.0 - i1 / i0)
    ))
}

// ---------------------------------------------------------------------------
// 8. No rehearsal

fn rehearsal_free(runs: &[Run]) -> Outcome {
    let mut steps = 0;
    for r in runs {
        let reads = &r.outcome.prior_step_reads;
        ensure(reads.iter().any(|&(t, _)| t == 2), || {
            format!("{} seed {}: step 2 not tracked", r.ablation.name(), r.seed)
        })?;
        for &(t, n) in reads {
            ensure(n == 0, || format!("{} seed {}: {n} reads in step {t}", r.ablation.name(), r.seed))?;
            steps += 1;
        }
    }
    Ok(format!("0 earlier-step reads over {} runs ({steps} tracked steps)", runs.len()))
}

// ---------------------------------------------------------------------------
// 9. Determinism and persistence

fn determinism(runs: &[Run], run_cfg: &RunConfig, bench: &Benchmark<f64>) -> Outcome {
    let reference = runs
        .iter()
        .find(|r| r.ablation == Ablation::Full && r.seed == 1)
        .ok_or("no full run")?;
    let cfg = train_config(run_cfg, bench, Ablation::Full, 1);

    let again = run_continual(&cfg, &bench.train, Some(&bench.test), RunControl::default()).map_err(|e| e.to_string())?;
    for (a, b) in again.checkpoints.iter().zip(&reference.outcome.checkpoints) {
        ensure(a.encode() == b.encode(), || format!("step {} checkpoint differs on rerun", a.step))?;
    }
    let (report, _) = final_report(&cfg, &again.state, &bench.test).map_err(|e| e.to_string())?;
    ensure(report.summary() == reference.summary, || "report differs on rerun".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for ckpt in &reference.outcome.checkpoints {
        let path = dir.path().join(format!("step{}.ckpt", ckpt.step));
        ckpt.save(&path).map_err(|e| e.to_string())?;
        let loaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
        ensure(&loaded == ckpt, || format!("step {} round trip changed the checkpoint", ckpt.step))?;
        ensure(std::fs::read(&path).unwrap() == ckpt.encode(), || "file bytes differ from encoding".into())?;
    }

    let saved = Checkpoint::load(&dir.path().join("step1.ckpt")).map_err(|e| e.to_string())?;
    let resumed = run_continual(
        &cfg,
        &bench.train,
        Some(&bench.test),
        RunControl {
            resume: Some(saved),
            stop_after: None,
        },
    )
    .map_err(|e| e.to_string())?;
    let last = reference.outcome.checkpoints.last().unwrap();
    ensure(resumed.checkpoints.last().map(Checkpoint::encode) == Some(last.encode()), || {
        "resumed final checkpoint differs".into()
    })?;
    let (report, _) = final_report(&cfg, &resumed.state, &bench.test).map_err(|e| e.to_string())?;
    ensure(report.summary() == reference.summary, || "resumed report differs".into())?;
    Ok(format!(
        "rerun bit-identical ({} checkpoints, {} bytes), round trip exact, resume from step 1 identical",
        again.checkpoints.len(),
        last.encode().len()
    ))
}

// ---------------------------------------------------------------------------
// 10. Metric examples

fn metric_examples() -> Outcome {
    let mut cases = 0;
    let mut check = |cond: bool, what: &str| -> Result<(), String> {
        cases += 1;
        ensure(cond, || what.to_string())
    };

    let truth = [0u16, 1, 1, 2, 2, 2, 0, 1];
    let mut cm = ConfusionMatrix::new(3);
    cm.accumulate(&truth, &truth).unwrap();
    check((0..3).all(|c| cm.iou(c) == Some(1.0)), "perfect prediction gives IoU 1")?;
    check(
        (0..3u16).all(|t| (0..3u16).all(|p| t == p || cm.get(t, p) == 0)),
        "perfect prediction is diagonal",
    )?;

    let mut cm = ConfusionMatrix::new(3);
    cm.accumulate(&[2, 2, 0, 0], &[1, 1, 2, 2]).unwrap();
    check(cm.iou(1) == Some(0.0), "disjoint prediction gives IoU 0")?;

    let mut cm = ConfusionMatrix::new(2);
    let pred: Vec<u16> = [vec![1; 50], vec![1; 25], vec![0; 25], vec![0; 10]].concat();
    let truth: Vec<u16> = [vec![1; 50], vec![0; 25], vec![1; 25], vec![0; 10]].concat();
    cm.accumulate(&pred, &truth).unwrap();
    check(cm.iou(1) == Some(0.5), "tp 50, fp 25, fn 25 gives 0.5")?;

    let ignore = fairseg::synthdata::IGNORE;
    let (pa, ta) = ([0u16, 1, 2, 1], [0u16, ignore, 2, 2]);
    let (pb, tb) = ([2u16, 2, 0], [1u16, 2, ignore]);
    let mut split = ConfusionMatrix::new(3);
    split.accumulate(&pa, &ta).unwrap();
    split.accumulate(&pb, &tb).unwrap();
    let mut joined = ConfusionMatrix::new(3);
    joined
        .accumulate(&[pa.as_slice(), &pb].concat(), &[ta.as_slice(), &tb].concat())
        .unwrap();
    check(split == joined, "accumulation is additive")?;
    check(joined.total() == 5, "total counts non-ignore pixels")?;
    check(ConfusionMatrix::new(3).iou(1).is_none(), "absent class has no IoU")?;

    check(fairness_gap(&[0.25; 4]).ok() == Some(0.0), "identical rates give gap 0")?;
    check(fairness_gap(&[0.1, 0.4, 0.2]).ok() == Some(0.4 - 0.1), "rates 0.1, 0.4, 0.2 give 0.3")?;
    check(
        fairness_gap(&[0.2, 0.1, 0.4]).ok() == fairness_gap(&[0.1, 0.4, 0.2]).ok(),
        "gap ignores class order",
    )?;
    check(fairness_gap(&[0.3]).is_err(), "one class has no gap")?;

    check(normalized_entropy(&[7, 7, 7, 7, 7]).ok() == Some(1.0), "uniform entropy is 1")?;
    check(normalized_entropy(&[0, 12, 0]).ok() == Some(0.0), "single-class entropy is 0")?;
    let half = normalized_entropy(&[5, 5, 0, 0]).unwrap();
    check(
        (half - 2f64.ln() / 4f64.ln()).abs() <= f64::EPSILON && (half - 0.5).abs() <= f64::EPSILON,
        "(0.5, 0.5, 0, 0) gives 0.5",
    )?;
    check(normalized_entropy(&[0, 0]).is_err(), "all-zero counts are rejected")?;

    // Two-step fixture with hand-set IoUs: class 1 → 1, class 2 → 1/2,
    // class 3 → 1/3, class 4 → 0.
    let split_fixture = TaskSplit::parse("2-2", 4).unwrap();
    let mut cm = ConfusionMatrix::new(5);
    cm.accumulate(&[1, 1, 2, 0, 3, 0, 0, 0], &[1, 1, 2, 2, 3, 3, 3, 4]).unwrap();
    let report = grouped_report(&cm, &split_fixture, &[0.8, 0.6], None, None);
    check(report.initial.miou == Some((1.0 + 0.5) / 2.0), "initial-group mean")?;
    check(report.later.miou == Some((1.0 / 3.0 + 0.0) / 2.0), "later-group mean")?;
    check(report.all.miou == Some((1.0 + 0.5 + 1.0 / 3.0) / 4.0), "all-class mean")?;
    check(report.avg == Some((0.8 + 0.6) / 2.0), "avg is the mean of per-step mIoUs")?;
    let ious = [1.0, 0.5, 1.0 / 3.0, 0.0];
    let m = ious.iter().sum::<f64>() / 4.0;
    let sd = (ious.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 4.0).sqrt();
    check((report.std_iou - sd).abs() <= 1e-15, "std_iou is the population STD")?;
    check(population_std(&[0.4; 6]) == 0.0, "identical IoUs have STD 0")?;

    Ok(format!("{cases} examples exact"))
}

// ---------------------------------------------------------------------------

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

const RUN_CRITERIA: [(usize, &str); 5] = [
    (5, "forgetting ablation"),
    (6, "fairness ablation"),
    (7, "consistency ablation"),
    (8, "rehearsal-free protocol"),
    (9, "determinism and persistence"),
];

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient check", guarded(gradients)),
        (2, "distillation bound", guarded(distillation_bound)),
        (3, "prototype schedule oracle", guarded(prototype_schedule)),
        (4, "pseudo-label oracle", guarded(pseudo_labels)),
    ];

    let run_cfg = RunConfig::load(&config_path()).expect("configs/ablation.toml");
    let bench = generate::<f64>(&run_cfg.benchmark_spec().expect("benchmark")).expect("benchmark generation");
    println!("training {} runs from {}", ABLATIONS.len() * SEEDS.len(), config_path().display());
    match guarded(|| train_all(&run_cfg, &bench)) {
        Ok(runs) => {
            let outcomes = [
                guarded(|| forgetting(&runs)),
                guarded(|| fairness(&runs)),
                guarded(|| consistency(&runs)),
                guarded(|| rehearsal_free(&runs)),
                guarded(|| determinism(&runs, &run_cfg, &bench)),
            ];
            for ((n, name), outcome) in RUN_CRITERIA.into_iter().zip(outcomes) {
                results.push((n, name, outcome));
            }
        }
        Err(e) => {
            for (n, name) in RUN_CRITERIA {
                results.push((n, name, Err(format!("training failed: {e}"))));
            }
        }
    }
    results.push((10, "metric examples", guarded(metric_examples)));

    println!();
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail}");
            }
        }
    }
    println!("\n{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
