use crate::error::{Error, Result};

/// Running per-class sums of pixel cross-entropy.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassErrors {
    sum: Vec<f64>,
    count: Vec<u64>,
}

impl ClassErrors {
    pub fn new(num_classes: usize) -> Self {
        Self {
            sum: vec![0.0; num_classes],
            count: vec![0; num_classes],
        }
    }

    pub fn add(&mut self, class: u16, ce: f64) {
        let c = class as usize;
        if c >= self.sum.len() {
            self.sum.resize(c + 1, 0.0);
            self.count.resize(c + 1, 0);
        }
        self.sum[c] += ce;
        self.count[c] += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        for (c, (&s, &n)) in other.sum.iter().zip(&other.count).enumerate() {
            if c >= self.sum.len() {
                self.sum.resize(c + 1, 0.0);
                self.count.resize(c + 1, 0);
            }
            self.sum[c] += s;
            self.count[c] += n;
        }
    }

    /// Mean cross-entropy of `class`, `None` without pixels.
    pub fn rate(&self, class: u16) -> Option<f64> {
        let c = class as usize;
        (c < self.count.len() && self.count[c] > 0).then(|| self.sum[c] / self.count[c] as f64)
    }
}

/// Largest pairwise difference between per-class error rates.
pub fn fairness_gap(rates: &[f64]) -> Result<f64> {
    if rates.len() < 2 {
        return Err(Error::Unavailable(format!(
            "fairness gap needs at least 2 classes, got {}",
            rates.len()
        )));
    }
    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(hi - lo)
}

/// `−Σ p log p / log C` over the `C = counts.len()` classes.
pub fn normalized_entropy(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Unavailable("entropy of an all-zero distribution".into()));
    }
    if counts.len() < 2 {
        return Ok(0.0);
    }
    let h: f64 = counts
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    Ok((h / (counts.len() as f64).ln()).clamp(0.0, 1.0))
}

/// Population standard deviation; zero for fewer than two values.
pub fn population_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    // Deviations from the first value, so constant input gives exactly 0.
    let shift = values[0];
    let offset = values.iter().map(|v| v - shift).sum::<f64>() / n;
    (values.iter().map(|v| (v - shift - offset).powi(2)).sum::<f64>() / n).sqrt()
}
