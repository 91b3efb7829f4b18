use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{softmax_in_place, Block, CompensatedSum, GradSlot, Grid};
use crate::scalar::Scalar;
use crate::synthdata::IGNORE;

/// Empirical pixel distribution over the supervised classes of a step,
/// turned into importance weights `q(c)/p̂(c)` with `q` uniform.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassDistribution {
    pub counts: BTreeMap<u16, u64>,
    /// Add-`k` smoothing applied to every count.
    pub smoothing: f64,
    /// `(w_min, w_max)`.
    pub clamp: (f64, f64),
}

impl ClassDistribution {
    /// Zero counts over `classes` with add-one smoothing and `[0.1, 10]`
    /// clamping.
    pub fn new(classes: &[u16]) -> Self {
        Self {
            counts: classes.iter().map(|&c| (c, 0)).collect(),
            smoothing: 1.0,
            clamp: (0.1, 10.0),
        }
    }

    pub fn from_counts(counts: impl IntoIterator<Item = (u16, u64)>) -> Self {
        Self {
            counts: counts.into_iter().collect(),
            smoothing: 1.0,
            clamp: (0.1, 10.0),
        }
    }

    /// Adds one to the count of every tracked class present in `labels`
    /// where `mask` (if given) is set.
    pub fn observe(&mut self, labels: &[u16], mask: Option<&[bool]>) {
        for (i, l) in labels.iter().enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            if let Some(n) = self.counts.get_mut(l) {
                *n += 1;
            }
        }
    }

    pub fn classes(&self) -> impl Iterator<Item = u16> + '_ {
        self.counts.keys().copied()
    }

    /// Smoothed probability `p̂(c)`; zero for untracked classes.
    pub fn probability(&self, class: u16) -> f64 {
        let Some(&n) = self.counts.get(&class) else {
            return 0.0;
        };
        let total: f64 = self
            .counts
            .values()
            .map(|&v| v as f64 + self.smoothing)
            .sum();
        if total <= 0.0 {
            return 0.0;
        }
        (n as f64 + self.smoothing) / total
    }

    /// Unclamped `q(c)/p̂(c)`.
    pub fn raw_weight(&self, class: u16) -> f64 {
        let p = self.probability(class);
        if p <= 0.0 {
            return f64::INFINITY;
        }
        (1.0 / self.counts.len() as f64) / p
    }

    /// Clamped weight; classes outside the distribution get weight 1.
    pub fn weight(&self, class: u16) -> f64 {
        if !self.counts.contains_key(&class) {
            return 1.0;
        }
        self.raw_weight(class).clamp(self.clamp.0, self.clamp.1)
    }

    /// Dense weight table for head rows `0..num_outputs`.
    pub fn weight_table(&self, num_outputs: usize) -> Vec<f64> {
        (0..num_outputs).map(|c| self.weight(c as u16)).collect()
    }
}

/// Weighted cross-entropy on logits.
///
/// `loss = (1/n) Σ w(y)·(−log softmax(z)_y)` over the `n` pixels whose label
/// is not [`IGNORE`] and whose `mask` entry (if given) is set. `weights` is
/// indexed by class id; `None` means unit weights. The gradient is reported
/// under `"logits"`.
pub fn weighted_ce<S: Scalar>(
    logits: &Grid<S>,
    labels: &[u16],
    mask: Option<&[bool]>,
    weights: Option<&[f64]>,
) -> Result<GradSlot<S>> {
    let k = logits.channels();
    let n_pix = logits.pixels();
    if labels.len() != n_pix || mask.is_some_and(|m| m.len() != n_pix) {
        return Err(Error::Shape(format!(
            "weighted_ce: {} labels for {} pixels",
            labels.len(),
            n_pix
        )));
    }
    let mut grad = vec![S::zero(); n_pix * k];
    let mut total = CompensatedSum::new();
    let mut count = 0usize;
    let mut probs = vec![S::zero(); k];
    let mut active = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        if label == IGNORE || mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if label as usize >= k {
            return Err(Error::Label(format!(
                "label {label} outside head range 0..{k}"
            )));
        }
        count += 1;
        active.push((i, label as usize));
    }
    if count == 0 {
        return Ok(GradSlot::new(S::zero()).with_grad("logits", Block::new(vec![logits.height(), logits.width(), k], grad)?));
    }
    let inv_n = S::one() / S::of(count as f64);
    for (i, label) in active {
        let w = S::of(weights.map_or(1.0, |w| w.get(label).copied().unwrap_or(1.0)));
        let z = logits.pixel_at(i);
        // log-softmax via max subtraction.
        let max = z.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = z.iter().fold(S::zero(), |a, &v| a + (v - max).exp()).ln() + max;
        total.add(w * (lse - z[label]));
        probs.copy_from_slice(z);
        softmax_in_place(&mut probs);
        let g = &mut grad[i * k..(i + 1) * k];
        for (c, gv) in g.iter_mut().enumerate() {
            let target = if c == label { S::one() } else { S::zero() };
            *gv = w * (probs[c] - target) * inv_n;
        }
    }
    Ok(GradSlot::from_sum(&total, inv_n)
        .with_grad("logits", Block::new(vec![logits.height(), logits.width(), k], grad)?))
}
