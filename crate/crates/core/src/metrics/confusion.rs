use crate::error::{Error, Result};
use crate::synthdata::IGNORE;

/// `counts[truth][pred]` over classes `0..num_classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: u16, pred: u16) -> u64 {
        self.counts[truth as usize * self.num_classes + pred as usize]
    }

    /// Adds one count per pixel; pixels whose truth is [`IGNORE`] are skipped.
    pub fn accumulate(&mut self, pred: &[u16], truth: &[u16]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        let k = self.num_classes;
        for (&p, &t) in pred.iter().zip(truth) {
            if t == IGNORE {
                continue;
            }
            if t as usize >= k || p as usize >= k {
                return Err(Error::Label(format!(
                    "class pair (truth {t}, pred {p}) outside registry 0..{k}"
                )));
            }
        }
        for (&p, &t) in pred.iter().zip(truth) {
            if t != IGNORE {
                self.counts[t as usize * k + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Dimension(format!(
                "cannot merge {}-class and {}-class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Ground-truth pixels of `class`.
    pub fn support(&self, class: u16) -> u64 {
        let k = self.num_classes;
        let c = class as usize;
        self.counts[c * k..(c + 1) * k].iter().sum()
    }

    /// `tp / (tp + fp + fn)`, or `None` when the class never occurs in
    /// either truth or prediction.
    pub fn iou(&self, class: u16) -> Option<f64> {
        let c = class as usize;
        let k = self.num_classes;
        if c >= k {
            return None;
        }
        let tp = self.counts[c * k + c];
        let row: u64 = self.support(class);
        let col: u64 = (0..k).map(|t| self.counts[t * k + c]).sum();
        let denom = row + col - tp;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    /// Mean IoU over `classes`, skipping absent ones.
    pub fn mean_iou(&self, classes: &[u16]) -> Option<f64> {
        let v: Vec<f64> = classes.iter().filter_map(|&c| self.iou(c)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}
