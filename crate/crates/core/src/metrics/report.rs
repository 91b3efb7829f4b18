use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::synthdata::TaskSplit;

use super::{fairness_gap, normalized_entropy, population_std, ClassErrors, ConfusionMatrix};

/// One CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassRow {
    pub class: u16,
    pub pixels: u64,
    pub iou: Option<f64>,
    pub ce_error: Option<f64>,
}

/// Mean and population STD of the present IoUs of a class group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupStats {
    pub classes: Vec<u16>,
    pub miou: Option<f64>,
    pub std: Option<f64>,
}

impl GroupStats {
    fn of(cm: &ConfusionMatrix, classes: Vec<u16>) -> Self {
        let ious: Vec<f64> = classes.iter().filter_map(|&c| cm.iou(c)).collect();
        let (miou, std) = if ious.is_empty() {
            (None, None)
        } else {
            (
                Some(ious.iter().sum::<f64>() / ious.len() as f64),
                Some(population_std(&ious)),
            )
        };
        Self { classes, miou, std }
    }
}

/// Final evaluation summary. Group statistics cover foreground classes;
/// background is reported on its own.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ClassRow>,
    pub background_iou: Option<f64>,
    pub initial: GroupStats,
    pub later: GroupStats,
    pub all: GroupStats,
    /// Mean of the per-step mIoUs.
    pub avg: Option<f64>,
    pub step_mious: Vec<f64>,
    pub std_iou: f64,
    /// Max pairwise gap of per-class mean cross-entropy.
    pub fairness_gap: Option<f64>,
    /// Max pairwise gap of `1 − IoU`.
    pub fairness_gap_iou: Option<f64>,
    /// Normalized entropy of the foreground ground-truth pixel counts.
    pub entropy: Option<f64>,
    pub major: GroupStats,
    pub minor: GroupStats,
    /// Single-pixel prediction islands, when the evaluator counted them.
    pub islands: Option<u64>,
}

/// Builds the grouped report from a full-label confusion matrix.
///
/// Initial classes are those of step 1, later classes the rest. The major
/// group holds classes whose pixel share exceeds `share_threshold`
/// (default: the median share).
pub fn grouped_report(
    cm: &ConfusionMatrix,
    split: &TaskSplit,
    step_mious: &[f64],
    errors: Option<&ClassErrors>,
    share_threshold: Option<f64>,
) -> MetricsReport {
    let foreground = split.all_classes();
    let rows: Vec<ClassRow> = (0..cm.num_classes() as u16)
        .map(|c| ClassRow {
            class: c,
            pixels: cm.support(c),
            iou: cm.iou(c),
            ce_error: errors.and_then(|e| e.rate(c)),
        })
        .collect();
    let initial = split.steps()[0].clone();
    let later: Vec<u16> = split.steps()[1..].iter().flatten().copied().collect();
    let all = GroupStats::of(cm, foreground.clone());

    let fg_pixels: u64 = foreground.iter().map(|&c| cm.support(c)).sum();
    let share = |c: u16| {
        if fg_pixels == 0 {
            0.0
        } else {
            cm.support(c) as f64 / fg_pixels as f64
        }
    };
    let threshold = share_threshold.unwrap_or_else(|| {
        let mut s: Vec<f64> = foreground.iter().map(|&c| share(c)).collect();
        s.sort_by(f64::total_cmp);
        match s.len() {
            0 => 0.0,
            n if n % 2 == 1 => s[n / 2],
            n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
        }
    });
    let (major, minor): (Vec<u16>, Vec<u16>) = foreground.iter().partition(|&&c| share(c) > threshold);

    let ce_rates: Vec<f64> = foreground
        .iter()
        .filter_map(|&c| errors.and_then(|e| e.rate(c)))
        .collect();
    let iou_errors: Vec<f64> = foreground.iter().filter_map(|&c| cm.iou(c)).map(|v| 1.0 - v).collect();
    let counts: Vec<u64> = foreground.iter().map(|&c| cm.support(c)).collect();

    MetricsReport {
        background_iou: cm.iou(0),
        initial: GroupStats::of(cm, initial),
        later: GroupStats::of(cm, later),
        std_iou: all.std.unwrap_or(0.0),
        all,
        avg: (!step_mious.is_empty()).then(|| step_mious.iter().sum::<f64>() / step_mious.len() as f64),
        step_mious: step_mious.to_vec(),
        fairness_gap: fairness_gap(&ce_rates).ok(),
        fairness_gap_iou: fairness_gap(&iou_errors).ok(),
        entropy: normalized_entropy(&counts).ok(),
        major: GroupStats::of(cm, major),
        minor: GroupStats::of(cm, minor),
        islands: None,
        rows,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| format!("{x:.17e}"))
}

fn classes(v: &[u16]) -> String {
    v.iter().map(u16::to_string).collect::<Vec<_>>().join(";")
}

impl MetricsReport {
    /// `class,pixels,iou,ce_error` with empty cells for absent values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,pixels,iou,ce_error\n");
        for r in &self.rows {
            let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
            let _ = writeln!(out, "{},{},{},{}", r.class, r.pixels, cell(r.iou), cell(r.ce_error));
        }
        out
    }

    /// `key=value` lines; round-trips through [`parse_summary`].
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        put("miou_initial", opt(self.initial.miou));
        put("std_initial", opt(self.initial.std));
        put("miou_later", opt(self.later.miou));
        put("std_later", opt(self.later.std));
        put("miou_all", opt(self.all.miou));
        put("std_iou", format!("{:.17e}", self.std_iou));
        put("miou_avg", opt(self.avg));
        put(
            "step_mious",
            self.step_mious.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(";"),
        );
        put("background_iou", opt(self.background_iou));
        put("fairness_gap", opt(self.fairness_gap));
        put("fairness_gap_iou", opt(self.fairness_gap_iou));
        put("entropy", opt(self.entropy));
        put("major_classes", classes(&self.major.classes));
        put("major_miou", opt(self.major.miou));
        put("major_std", opt(self.major.std));
        put("minor_classes", classes(&self.minor.classes));
        put("minor_miou", opt(self.minor.miou));
        put("minor_std", opt(self.minor.std));
        put("islands", self.islands.map_or("na".into(), |v| v.to_string()));
        out
    }

    /// Human-readable block printed after evaluation.
    pub fn pretty(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("   n/a".to_string(), |x| format!("{:6.2}", 100.0 * x));
        let mut out = String::new();
        let _ = writeln!(out, "class  pixels      IoU");
        for r in &self.rows {
            let _ = writeln!(out, "{:>5}  {:>8}  {}", r.class, r.pixels, pct(r.iou));
        }
        let _ = writeln!(out, "initial mIoU {} STD {}", pct(self.initial.miou), pct(self.initial.std));
        let _ = writeln!(out, "later   mIoU {} STD {}", pct(self.later.miou), pct(self.later.std));
        let _ = writeln!(out, "all     mIoU {} STD {}", pct(self.all.miou), pct(Some(self.std_iou)));
        let _ = writeln!(out, "avg     mIoU {}", pct(self.avg));
        let _ = writeln!(out, "major   mIoU {} STD {}", pct(self.major.miou), pct(self.major.std));
        let _ = writeln!(out, "minor   mIoU {} STD {}", pct(self.minor.miou), pct(self.minor.std));
        let _ = writeln!(
            out,
            "fairness gap (CE) {}  entropy {}",
            self.fairness_gap.map_or("n/a".into(), |v| format!("{v:.4}")),
            self.entropy.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
        out
    }
}

/// Reads `key=value` lines, ignoring blanks and `#` comments.
pub fn parse_summary(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}
