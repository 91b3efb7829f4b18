use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-class FIFO queues of feature vectors with a shared capacity `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank<S> {
    capacity: usize,
    dim: usize,
    queues: BTreeMap<u16, VecDeque<Vec<S>>>,
}

impl<S: Scalar> FeatureBank<S> {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            dim,
            queues: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Appends `feature` to the queue of `class`, evicting the oldest entry
    /// once the queue exceeds capacity.
    pub fn deposit(&mut self, class: u16, feature: &[S]) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::Dimension(format!(
                "feature of length {} deposited into bank of dim {}",
                feature.len(),
                self.dim
            )));
        }
        let q = self.queues.entry(class).or_default();
        q.push_back(feature.to_vec());
        while q.len() > self.capacity {
            q.pop_front();
        }
        Ok(())
    }

    pub fn queue(&self, class: u16) -> Option<&VecDeque<Vec<S>>> {
        self.queues.get(&class)
    }

    pub fn classes(&self) -> impl Iterator<Item = u16> + '_ {
        self.queues.keys().copied()
    }

    pub fn len(&self, class: u16) -> usize {
        self.queues.get(&class).map_or(0, VecDeque::len)
    }

    /// Mean of the retained features of `class`; `None` for an empty queue.
    pub fn mean(&self, class: u16) -> Option<Vec<S>> {
        let q = self.queues.get(&class).filter(|q| !q.is_empty())?;
        let mut acc = vec![S::zero(); self.dim];
        for f in q {
            for (a, &v) in acc.iter_mut().zip(f) {
                *a = *a + v;
            }
        }
        let n = S::of(q.len() as f64);
        Some(acc.into_iter().map(|v| v / n).collect())
    }

    pub fn reset(&mut self) {
        self.queues.clear();
    }

    /// Restores a queue verbatim (oldest first); used when loading state.
    pub fn restore_queue(&mut self, class: u16, features: Vec<Vec<S>>) -> Result<()> {
        if features.iter().any(|f| f.len() != self.dim) {
            return Err(Error::Dimension("restored feature has wrong length".into()));
        }
        if features.len() > self.capacity {
            return Err(Error::State(format!(
                "restored queue for class {class} exceeds capacity"
            )));
        }
        self.queues.insert(class, features.into());
        Ok(())
    }
}
