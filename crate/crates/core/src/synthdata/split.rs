use std::collections::BTreeSet;

use super::sample::{LabelMap, SegSample, BACKGROUND, IGNORE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordered, pairwise disjoint class subsets, one per continual step, under
/// the overlapped protocol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSplit {
    steps: Vec<Vec<u16>>,
}

impl TaskSplit {
    pub fn new(steps: Vec<Vec<u16>>, num_classes: usize) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Config("split: at least one step required".into()));
        }
        let mut seen = BTreeSet::new();
        for (i, step) in steps.iter().enumerate() {
            if step.is_empty() {
                return Err(Error::Config(format!("split: step {} has no classes", i + 1)));
            }
            for &c in step {
                if c == BACKGROUND || c as usize > num_classes {
                    return Err(Error::Config(format!(
                        "split: class {c} outside 1..={num_classes}"
                    )));
                }
                if !seen.insert(c) {
                    return Err(Error::Config(format!("split: class {c} appears in two steps")));
                }
            }
        }
        Ok(Self { steps })
    }

    /// Parses the `"5-3"` / `"4-2-2"` notation: consecutive class ids
    /// starting at 1, one group per step.
    pub fn parse(pattern: &str, num_classes: usize) -> Result<Self> {
        let mut next = 1u16;
        let mut steps = Vec::new();
        for part in pattern.split('-') {
            let n: u16 = part
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("split: cannot parse `{pattern}`")))?;
            steps.push((next..next + n).collect());
            next += n;
        }
        Self::new(steps, num_classes)
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[Vec<u16>] {
        &self.steps
    }

    /// Classes introduced at 1-based step `t`.
    pub fn classes(&self, t: usize) -> Result<&[u16]> {
        self.check_step(t)?;
        Ok(&self.steps[t - 1])
    }

    /// Classes introduced at steps `1..=t`.
    pub fn known_through(&self, t: usize) -> Result<Vec<u16>> {
        self.check_step(t)?;
        Ok(self.steps[..t].iter().flatten().copied().collect())
    }

    pub fn all_classes(&self) -> Vec<u16> {
        self.steps.iter().flatten().copied().collect()
    }

    /// 1-based step that introduces `class`, if any.
    pub fn step_of(&self, class: u16) -> Option<usize> {
        self.steps.iter().position(|s| s.contains(&class)).map(|i| i + 1)
    }

    pub fn pattern(&self) -> String {
        self.steps
            .iter()
            .map(|s| s.len().to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps.len() {
            return Err(Error::StepOutOfRange {
                step: t,
                max: self.steps.len(),
            });
        }
        Ok(())
    }
}

/// Keeps labels in `keep`, maps every other non-ignore label to background.
pub fn collapse_map(labels: &LabelMap, keep: &[u16]) -> LabelMap {
    let mut out = labels.clone();
    for l in out.as_mut_slice() {
        if *l != IGNORE && !keep.contains(l) {
            *l = BACKGROUND;
        }
    }
    out
}

/// Relabels a sample for step `t`: classes of `C^t` keep their id, all
/// other non-ignore pixels become background. The image is untouched.
pub fn collapse_labels<S: Scalar>(
    sample: &SegSample<S>,
    split: &TaskSplit,
    t: usize,
) -> Result<SegSample<S>> {
    let keep = split.classes(t)?;
    Ok(SegSample {
        image: sample.image.clone(),
        labels: collapse_map(&sample.labels, keep),
    })
}

/// Indices of training samples with at least one pixel of a step-`t`
/// class. Samples can be selected at several steps.
pub fn select_step_images<S>(train: &[SegSample<S>], split: &TaskSplit, t: usize) -> Result<Vec<usize>> {
    let classes = split.classes(t)?;
    Ok(train
        .iter()
        .enumerate()
        .filter(|(_, s)| s.labels.as_slice().iter().any(|l| classes.contains(l)))
        .map(|(i, _)| i)
        .collect())
}
