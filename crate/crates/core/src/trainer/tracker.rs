use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::synthdata::SegSample;

/// Read-only view of the training set that records every access and
/// refuses reads of samples not selected for the current step.
#[derive(Debug)]
pub struct AccessTracker<'a> {
    samples: &'a [SegSample<f64>],
    /// Steps at which each sample is selected.
    owners: Vec<Vec<usize>>,
    current: AtomicUsize,
    reads: Mutex<BTreeMap<(usize, usize), u64>>,
    refused: Mutex<BTreeMap<(usize, usize), u64>>,
}

impl<'a> AccessTracker<'a> {
    /// `selection[t - 1]` lists the sample indices of step `t`.
    pub fn new(samples: &'a [SegSample<f64>], selection: &[Vec<usize>]) -> Self {
        let mut owners = vec![Vec::new(); samples.len()];
        for (t, ids) in selection.iter().enumerate() {
            for &i in ids {
                if i < owners.len() {
                    owners[i].push(t + 1);
                }
            }
        }
        Self {
            samples,
            owners,
            current: AtomicUsize::new(0),
            reads: Mutex::new(BTreeMap::new()),
            refused: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn begin_step(&self, t: usize) {
        self.current.store(t, Ordering::SeqCst);
    }

    pub fn current_step(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn selected(&self, t: usize) -> Vec<usize> {
        (0..self.owners.len()).filter(|&i| self.owners[i].contains(&t)).collect()
    }

    /// Returns sample `idx` if it belongs to the current step.
    pub fn read(&self, idx: usize) -> Result<&'a SegSample<f64>> {
        let t = self.current_step();
        let owned = self.owners.get(idx).is_some_and(|o| o.contains(&t));
        if !owned {
            *self.refused.lock().unwrap().entry((t, idx)).or_insert(0) += 1;
            return Err(Error::Protocol(format!(
                "step {t} attempted to read training sample {idx}, which is not part of its data"
            )));
        }
        *self.reads.lock().unwrap().entry((t, idx)).or_insert(0) += 1;
        Ok(&self.samples[idx])
    }

    /// Reads made during step `t`.
    pub fn reads_during(&self, t: usize) -> u64 {
        self.reads.lock().unwrap().range((t, 0)..(t + 1, 0)).map(|(_, n)| n).sum()
    }

    /// Attempts during step `t`, granted or refused, to read samples that
    /// belong to an earlier step but not to `t`.
    pub fn prior_step_reads(&self, t: usize) -> u64 {
        let prior = |i: usize| {
            let o = &self.owners[i];
            !o.contains(&t) && o.iter().any(|&s| s < t)
        };
        let count = |m: &BTreeMap<(usize, usize), u64>| -> u64 {
            m.range((t, 0)..(t + 1, 0))
                .filter(|((_, i), _)| *i < self.owners.len() && prior(*i))
                .map(|(_, n)| n)
                .sum()
        };
        count(&self.reads.lock().unwrap()) + count(&self.refused.lock().unwrap())
    }

    /// Total refused reads.
    pub fn refused(&self) -> u64 {
        self.refused.lock().unwrap().values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Grid;
    use crate::synthdata::LabelMap;

    fn samples(n: usize) -> Vec<SegSample<f64>> {
        (0..n)
            .map(|_| SegSample::new(Grid::zeros(2, 2, 3), LabelMap::filled(2, 2, 0)).unwrap())
            .collect()
    }

    #[test]
    fn only_current_step_samples_are_readable() {
        let data = samples(4);
        let t = AccessTracker::new(&data, &[vec![0, 1], vec![1, 2]]);
        t.begin_step(1);
        t.read(0).unwrap();
        t.read(1).unwrap();
        t.begin_step(2);
        t.read(1).unwrap();
        t.read(2).unwrap();
        assert_eq!(t.prior_step_reads(2), 0);
        assert!(matches!(t.read(0), Err(Error::Protocol(_))));
        assert_eq!(t.prior_step_reads(2), 1);
        assert_eq!(t.reads_during(1), 2);
        assert_eq!(t.reads_during(2), 2);
        assert!(t.read(3).is_err());
        assert_eq!(t.selected(2), vec![1, 2]);
    }
}
