use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use fairseg::losses::{gradcheck_suite, proposition1_trials, GRADCHECK_TOLERANCE};
use fairseg::metrics::{grouped_report, normalized_entropy, parse_summary, MetricsReport};
use fairseg::segmodel::Checkpoint;
use fairseg::synthdata::{generate, pixel_class_counts, read_dataset, write_dataset, write_manifest, SegSample, TaskSplit};
use fairseg::trainer::{evaluate, final_report, model_from_checkpoint, run_continual, RunControl, StepOutcome};

use crate::{CliError, RunConfig};

pub const TRAIN_FILE: &str = "train.fcls";
pub const TEST_FILE: &str = "test.fcls";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const REPORT_FILE: &str = "report.csv";
pub const LOSSES_FILE: &str = "losses.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// Text for stdout plus an optional verification failure (exit code 4).
#[derive(Debug, Default)]
pub struct CommandOutput {
    pub text: String,
    pub failure: Option<String>,
}

impl From<String> for CommandOutput {
    fn from(text: String) -> Self {
        Self { text, failure: None }
    }
}

pub fn checkpoint_path(dir: &Path, step: u32) -> PathBuf {
    dir.join(format!("step{step}.ckpt"))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Generates the configured benchmark into `out`.
pub fn gen(cfg: &RunConfig, out: &Path) -> Result<CommandOutput, CliError> {
    let spec = cfg.benchmark_spec()?;
    let bench = generate::<f64>(&spec)?;
    create_dir(out)?;
    let n = bench.num_classes as u16;
    for (file, samples) in [(TRAIN_FILE, &bench.train), (TEST_FILE, &bench.test)] {
        let path = out.join(file);
        write_dataset(&path, n, samples).map_err(|e| CliError::at(&path, e))?;
    }
    let counts = pixel_class_counts(&bench.train, bench.num_classes);
    let entropy = normalized_entropy(&counts)?;
    let entropy_fg = normalized_entropy(&counts[1..])?;
    let path = out.join(MANIFEST_FILE);
    write_manifest(
        &path,
        &spec,
        &[
            ("train_entropy", format!("{entropy:.6}")),
            ("train_entropy_foreground", format!("{entropy_fg:.6}")),
        ],
    )
    .map_err(|e| CliError::at(&path, e))?;

    let total: u64 = counts.iter().sum();
    let mut text = format!(
        "wrote {} train / {} test images ({}x{}, {} classes) to {}\n",
        bench.train.len(),
        bench.test.len(),
        spec.height,
        spec.width,
        spec.num_classes,
        out.display()
    );
    text.push_str("class    pixels   share\n");
    for (c, &k) in counts.iter().enumerate() {
        let _ = writeln!(text, "{c:>5}  {k:>8}  {:6.4}", k as f64 / total as f64);
    }
    let _ = writeln!(text, "normalized entropy {entropy:.4} (foreground only {entropy_fg:.4})");
    Ok(text.into())
}

pub struct Data {
    pub num_classes: usize,
    pub train: Vec<SegSample<f64>>,
    pub test: Vec<SegSample<f64>>,
}

/// Reads `train.fcls` and `test.fcls` from a directory written by [`gen`].
pub fn load_data(dir: &Path) -> Result<Data, CliError> {
    let read = |file: &str| {
        let path = dir.join(file);
        read_dataset::<f64>(&path).map_err(|e| CliError::at(&path, e))
    };
    let train = read(TRAIN_FILE)?;
    let test = read(TEST_FILE)?;
    if train.num_classes != test.num_classes {
        return Err(CliError::Data(format!(
            "{}: train has {} classes but test has {}",
            dir.display(),
            train.num_classes,
            test.num_classes
        )));
    }
    Ok(Data {
        num_classes: train.num_classes as usize,
        train: train.samples,
        test: test.samples,
    })
}

fn generated_data(cfg: &RunConfig) -> Result<Data, CliError> {
    let bench = generate::<f64>(&cfg.benchmark_spec()?)?;
    Ok(Data {
        num_classes: bench.num_classes,
        train: bench.train,
        test: bench.test,
    })
}

fn loss_rows(steps: &[StepOutcome]) -> String {
    let mut out = String::new();
    for s in steps {
        for l in &s.log {
            let _ = writeln!(
                out,
                "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:e}",
                s.step, l.epoch, l.iteration, l.ce, l.cluster, l.cons, l.distill, l.total, l.lr
            );
        }
    }
    out
}

/// Summary file of a run: identification keys followed by the metrics.
pub fn run_summary(cfg: &RunConfig, report: &MetricsReport) -> String {
    format!(
        "config={}\nsplit={}\nseed={}\n{}",
        cfg.train.ablation,
        cfg.split.pattern,
        cfg.train.seed,
        report.summary()
    )
}

/// Runs (or resumes) the continual protocol and writes checkpoints, the
/// loss log, the resolved config and the final report to
/// `cfg.output.dir`. Without `data` the benchmark is generated in memory.
pub fn train(cfg: &RunConfig, data: Option<&Path>, resume: Option<&Path>) -> Result<CommandOutput, CliError> {
    let data = match data {
        Some(dir) => load_data(dir)?,
        None => generated_data(cfg)?,
    };
    let tcfg = cfg.train_config(data.num_classes)?;
    let out = &cfg.output.dir;
    create_dir(out)?;
    write(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    let resume = match resume {
        Some(path) => Some(Checkpoint::load(path).map_err(|e| CliError::at(path, e))?),
        None => None,
    };
    let resumed = resume.is_some();
    let run = run_continual(
        &tcfg,
        &data.train,
        Some(&data.test),
        RunControl {
            resume,
            stop_after: None,
        },
    )?;

    for ckpt in &run.checkpoints {
        let path = checkpoint_path(out, ckpt.step);
        ckpt.save(&path).map_err(|e| CliError::at(&path, e))?;
    }
    let losses = out.join(LOSSES_FILE);
    let rows = loss_rows(&run.steps);
    if resumed && losses.exists() {
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&losses)
            .map_err(|e| CliError::io(&losses, e))?;
        f.write_all(rows.as_bytes()).map_err(|e| CliError::io(&losses, e))?;
    } else {
        write(&losses, &format!("step,epoch,iteration,ce,cluster,cons,distill,total,lr\n{rows}"))?;
    }

    let mut text = String::new();
    for s in &run.steps {
        let (first, last) = (s.epochs.first(), s.epochs.last());
        let _ = writeln!(
            text,
            "step {}: classes {:?}, head {} outputs, {} iterations, ce {:.4} -> {:.4}, known-class mIoU {}",
            s.step,
            tcfg.split.classes(s.step)?,
            s.params.num_outputs(),
            s.iterations,
            first.map_or(f64::NAN, |e| e.ce),
            last.map_or(f64::NAN, |e| e.ce),
            run.state
                .step_mious
                .get(s.step - 1)
                .map_or("n/a".into(), |v| format!("{:.4}", v)),
        );
    }
    let prior: u64 = run.prior_step_reads.iter().map(|(_, n)| n).sum();
    let _ = writeln!(text, "reads of earlier-step samples: {prior}");

    let (report, _) = final_report(&tcfg, &run.state, &data.test)?;
    write(&out.join(REPORT_FILE), &report.to_csv())?;
    write(&out.join(SUMMARY_FILE), &run_summary(cfg, &report))?;
    text.push_str(&report.pretty());
    let _ = writeln!(text, "outputs in {}", out.display());
    let failure = (prior > 0 || run.refused_reads > 0)
        .then(|| format!("{prior} reads of earlier-step training samples ({} refused)", run.refused_reads));
    Ok(CommandOutput { text, failure })
}

/// Scores a checkpoint on the test split of `data`.
pub fn eval(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<CommandOutput, CliError> {
    let ckpt = Checkpoint::load(checkpoint).map_err(|e| CliError::at(checkpoint, e))?;
    let model = model_from_checkpoint(&ckpt).map_err(|e| CliError::at(checkpoint, e))?;
    let data = load_data(data)?;
    let mismatch = |why: String| {
        CliError::Data(format!(
            "{}: class registry {:?} does not match the dataset ({} classes): {why}",
            checkpoint.display(),
            ckpt.registry,
            data.num_classes
        ))
    };
    let split = TaskSplit::new(ckpt.registry.clone(), data.num_classes).map_err(|e| mismatch(e.to_string()))?;
    let known = split.all_classes();
    if model.num_outputs() != known.len() + 1 {
        return Err(mismatch(format!("model has {} outputs", model.num_outputs())));
    }
    let keep = (known.len() < data.num_classes).then_some(known.as_slice());
    let ev = evaluate(&model, &data.test, keep)?;
    let step_mious = ckpt.block("metrics/step_miou").map(|b| b.data.clone()).unwrap_or_default();
    let mut report = grouped_report(&ev.confusion, &split, &step_mious, Some(&ev.errors), None);
    report.islands = Some(ev.islands);

    let mut text = format!("{} test images, classes {:?}\n", ev.images, known);
    text.push_str(&report.pretty());
    let _ = writeln!(
        text,
        "std_iou {:.4}  fairness_gap {}  islands {}",
        report.std_iou,
        report.fairness_gap.map_or("n/a".into(), |v| format!("{v:.4}")),
        ev.islands
    );
    if let Some(out) = out {
        create_dir(out)?;
        write(&out.join(REPORT_FILE), &report.to_csv())?;
        write(&out.join(SUMMARY_FILE), &report.summary())?;
    }
    Ok(text.into())
}

/// Finite-difference check of every registered loss.
pub fn gradcheck(seed: u64, instances: usize) -> Result<CommandOutput, CliError> {
    let checks = gradcheck_suite(seed, instances)?;
    let mut text = format!("tolerance {GRADCHECK_TOLERANCE:e}, {instances} instances of 8x8x4\n");
    let _ = writeln!(text, "{:<20} {:>14}  {:<9} status", "loss", "max rel err", "expected");
    let mut failed = Vec::new();
    for c in &checks {
        let expected = if c.expect_failure { "mismatch" } else { "match" };
        let status = if c.passed() { "ok" } else { "FAIL" };
        let _ = writeln!(text, "{:<20} {:>14.3e}  {:<9} {status}", c.name, c.max_rel_error, expected);
        if !c.passed() {
            failed.push(c.name);
        }
    }
    let failure = (!failed.is_empty()).then(|| format!("gradient check failed for {}", failed.join(", ")));
    Ok(CommandOutput { text, failure })
}

/// Random trials of the distillation upper bound.
pub fn prop1(seed: u64, trials: usize, dims: &[usize], classes: &[usize]) -> Result<CommandOutput, CliError> {
    let r = proposition1_trials(seed, trials, dims, classes)?;
    let mut text = format!("dims {dims:?}, prototype counts {classes:?}\n");
    let _ = writeln!(text, "trials {}  held {}  min slack {:.6e}", r.trials, r.held, r.min_slack);
    let _ = writeln!(text, "{:<4} {:>12} {:>12} {:>12}", "", "min", "mean", "max");
    for (name, s) in [("lhs", r.lhs), ("rhs", r.rhs)] {
        let _ = writeln!(text, "{name:<4} {:>12.6} {:>12.6} {:>12.6}", s.min, s.mean, s.max);
    }
    let failure = (r.held < r.trials).then(|| format!("bound violated in {} of {} trials", r.trials - r.held, r.trials));
    Ok(CommandOutput { text, failure })
}

const REPORT_COLUMNS: [&str; 8] = [
    "miou_initial",
    "std_initial",
    "miou_later",
    "std_later",
    "miou_all",
    "std_iou",
    "background_iou",
    "islands",
];

/// Ablation table over run directories. Writes CSV to `csv` when given.
pub fn report(dirs: &[PathBuf], csv: Option<&Path>) -> Result<CommandOutput, CliError> {
    if dirs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let mut rows: Vec<(String, Vec<Option<f64>>)> = Vec::new();
    for dir in dirs {
        let path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let kv = parse_summary(&text);
        let label = kv
            .get("config")
            .cloned()
            .unwrap_or_else(|| dir.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned()));
        rows.push((label, values(&kv)));
    }
    let find = |name: &str| rows.iter().find(|(l, _)| l == name).map(|(_, v)| v.clone());
    if let (Some(full), Some(base)) = (find("full"), find("fine-tune")) {
        let delta = full
            .iter()
            .zip(&base)
            .map(|(a, b)| Some((*a)? - (*b)?))
            .collect();
        rows.push(("full - fine-tune".into(), delta));
    }

    let mut table = format!("config,{}\n", REPORT_COLUMNS.join(","));
    for (label, vals) in &rows {
        let cells: Vec<String> = vals.iter().map(|v| v.map_or(String::new(), |x| format!("{x}"))).collect();
        let _ = writeln!(table, "{label},{}", cells.join(","));
    }
    if let Some(path) = csv {
        write(path, &table)?;
    }

    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(6).max(6);
    let mut text = format!("{:<width$}", "config");
    for c in REPORT_COLUMNS {
        let _ = write!(text, " {c:>14}");
    }
    text.push('\n');
    for (label, vals) in &rows {
        let _ = write!(text, "{label:<width$}");
        for (c, v) in REPORT_COLUMNS.iter().zip(vals) {
            let cell = match v {
                None => "n/a".to_string(),
                Some(x) if *c == "islands" => format!("{x:.0}"),
                Some(x) => format!("{:.2}", 100.0 * x),
            };
            let _ = write!(text, " {cell:>14}");
        }
        text.push('\n');
    }
    Ok(text.into())
}

fn values(kv: &BTreeMap<String, String>) -> Vec<Option<f64>> {
    REPORT_COLUMNS
        .iter()
        .map(|k| kv.get(*k).and_then(|v| v.parse::<f64>().ok()))
        .collect()
}
