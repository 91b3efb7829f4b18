use std::collections::{BTreeMap, BTreeSet};

use super::bank::FeatureBank;
use crate::error::{Error, Result};
use crate::numerics::euclidean;
use crate::scalar::Scalar;

/// Id of the cluster that gathers pixels of no currently known class.
pub const UNKNOWN: u16 = 0;

/// Hyper-parameters of the clustering objective and the prototype schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterConfig {
    /// Margin `Δ` that features of other classes are pushed beyond.
    pub margin: f64,
    /// Momentum `η` of the prototype update.
    pub momentum: f64,
    /// Update period `M` in iterations.
    pub update_period: usize,
    /// Bank capacity `L` per class.
    pub capacity: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            margin: 10.0,
            momentum: 0.99,
            update_period: 50,
            capacity: 500,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("cluster.margin must be > 0, got {}", self.margin)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "cluster.momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.update_period == 0 {
            return Err(Error::Config("cluster.update_period must be >= 1".into()));
        }
        if self.capacity == 0 {
            return Err(Error::Config("cluster.capacity must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prototype<S> {
    pub vector: Vec<S>,
    pub frozen: bool,
    pub initialized: bool,
}

/// One prototype per known class plus the unknown cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank<S> {
    dim: usize,
    entries: BTreeMap<u16, Prototype<S>>,
}

impl<S: Scalar> PrototypeBank<S> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds an uninitialized, active entry for `class` if none exists.
    pub fn register(&mut self, class: u16) {
        self.entries.entry(class).or_insert_with(|| Prototype {
            vector: vec![S::zero(); self.dim],
            frozen: false,
            initialized: false,
        });
    }

    pub fn get(&self, class: u16) -> Option<&Prototype<S>> {
        self.entries.get(&class)
    }

    pub fn entries(&self) -> impl Iterator<Item = (u16, &Prototype<S>)> {
        self.entries.iter().map(|(&c, p)| (c, p))
    }

    /// Initialized prototypes in ascending class order.
    pub fn initialized(&self) -> impl Iterator<Item = (u16, &[S])> {
        self.entries
            .iter()
            .filter(|(_, p)| p.initialized)
            .map(|(&c, p)| (c, p.vector.as_slice()))
    }

    pub fn any_initialized(&self) -> bool {
        self.entries.values().any(|p| p.initialized)
    }

    pub fn frozen_classes(&self) -> BTreeSet<u16> {
        self.entries
            .iter()
            .filter(|(_, p)| p.frozen)
            .map(|(&c, _)| c)
            .collect()
    }

    /// Marks `classes` frozen. The unknown cluster is never frozen.
    pub fn freeze_previous(&mut self, classes: &[u16]) -> Result<()> {
        for &c in classes {
            if c == UNKNOWN {
                continue;
            }
            match self.entries.get(&c) {
                Some(p) if p.initialized => {}
                _ => {
                    return Err(Error::State(format!(
                        "cannot freeze uninitialized prototype of class {c}"
                    )))
                }
            }
        }
        for &c in classes {
            if c != UNKNOWN {
                self.entries.get_mut(&c).unwrap().frozen = true;
            }
        }
        Ok(())
    }

    /// Overwrites an entry verbatim; used when restoring persisted state.
    pub fn restore(&mut self, class: u16, proto: Prototype<S>) -> Result<()> {
        if proto.vector.len() != self.dim {
            return Err(Error::Dimension(format!(
                "prototype of class {class} has length {}, expected {}",
                proto.vector.len(),
                self.dim
            )));
        }
        self.entries.insert(class, proto);
        Ok(())
    }
}

/// One tick of the prototype schedule at step-local iteration `iteration`
/// (1-based):
///
/// * `iteration == M`: every active prototype with a non-empty bank is set to
///   the bank mean;
/// * `iteration > M` and `iteration % M == 0`:
///   `p ← η·p + (1−η)·mean`;
/// * otherwise nothing happens.
///
/// Frozen prototypes and empty queues are skipped. A class first seen after
/// the initial update is initialized directly from its bank mean.
/// Returns the number of prototypes that changed.
pub fn update_prototypes<S: Scalar>(
    protos: &mut PrototypeBank<S>,
    bank: &FeatureBank<S>,
    cfg: &ClusterConfig,
    iteration: usize,
) -> usize {
    let m = cfg.update_period.max(1);
    let first = iteration == m;
    let periodic = iteration > m && iteration % m == 0;
    if !first && !periodic {
        return 0;
    }
    let eta = S::of(cfg.momentum);
    let one_minus = S::one() - eta;
    let mut updated = 0;
    let classes: Vec<u16> = bank.classes().collect();
    for class in classes {
        let Some(mean) = bank.mean(class) else { continue };
        protos.register(class);
        let p = protos.entries.get_mut(&class).unwrap();
        if p.frozen {
            continue;
        }
        if first || !p.initialized {
            p.vector = mean;
            p.initialized = true;
        } else {
            for (v, m) in p.vector.iter_mut().zip(mean) {
                *v = eta * *v + one_minus * m;
            }
        }
        updated += 1;
    }
    updated
}

/// Nearest initialized prototype by Euclidean distance; ties go to the
/// smallest class id.
pub fn pseudo_label<S: Scalar>(protos: &PrototypeBank<S>, feature: &[S]) -> Result<u16> {
    pseudo_label_among(protos, feature, |_| true)
}

/// [`pseudo_label`] restricted to classes accepted by `allow`.
pub fn pseudo_label_among<S: Scalar>(
    protos: &PrototypeBank<S>,
    feature: &[S],
    allow: impl Fn(u16) -> bool,
) -> Result<u16> {
    let mut best: Option<(u16, S)> = None;
    for (class, vector) in protos.initialized().filter(|(c, _)| allow(*c)) {
        let d = euclidean(feature, vector)?;
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((class, d)),
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::Unavailable("no initialized prototype".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(m: usize) -> ClusterConfig {
        ClusterConfig {
            update_period: m,
            ..ClusterConfig::default()
        }
    }

    #[test]
    fn first_update_takes_the_mean() {
        let mut bank = FeatureBank::new(10, 2);
        bank.deposit(1, &[1.0, 1.0]).unwrap();
        bank.deposit(1, &[3.0, 3.0]).unwrap();
        let mut protos = PrototypeBank::<f64>::new(2);
        assert_eq!(update_prototypes(&mut protos, &bank, &cfg(5), 4), 0);
        assert!(!protos.any_initialized());
        update_prototypes(&mut protos, &bank, &cfg(5), 5);
        assert_eq!(protos.get(1).unwrap().vector, vec![2.0, 2.0]);
        assert!(protos.get(1).unwrap().initialized);
    }

    #[test]
    fn momentum_update() {
        let mut protos = PrototypeBank::<f64>::new(2);
        protos
            .restore(1, Prototype { vector: vec![2.0, 2.0], frozen: false, initialized: true })
            .unwrap();
        let mut bank = FeatureBank::new(10, 2);
        bank.deposit(1, &[4.0, 4.0]).unwrap();
        update_prototypes(&mut protos, &bank, &cfg(5), 10);
        for v in &protos.get(1).unwrap().vector {
            assert!((v - 2.02).abs() < 1e-12);
        }
        // Off-period iterations do nothing.
        let before = protos.clone();
        update_prototypes(&mut protos, &bank, &cfg(5), 11);
        assert_eq!(protos, before);
    }

    #[test]
    fn frozen_prototypes_do_not_move() {
        let mut protos = PrototypeBank::<f64>::new(1);
        protos
            .restore(3, Prototype { vector: vec![1.0], frozen: false, initialized: true })
            .unwrap();
        protos.freeze_previous(&[3]).unwrap();
        protos.freeze_previous(&[3]).unwrap();
        let mut bank = FeatureBank::new(10, 1);
        bank.deposit(3, &[100.0]).unwrap();
        for i in 1..=20 {
            update_prototypes(&mut protos, &bank, &cfg(2), i);
        }
        assert_eq!(protos.get(3).unwrap().vector, vec![1.0]);
        assert_eq!(protos.frozen_classes().into_iter().collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn freezing_uninitialized_is_a_state_error() {
        let mut protos = PrototypeBank::<f64>::new(1);
        protos.register(2);
        assert!(matches!(protos.freeze_previous(&[2]), Err(Error::State(_))));
        assert!(matches!(protos.freeze_previous(&[5]), Err(Error::State(_))));
    }

    #[test]
    fn unknown_cluster_is_never_frozen() {
        let mut protos = PrototypeBank::<f64>::new(1);
        protos
            .restore(UNKNOWN, Prototype { vector: vec![0.0], frozen: false, initialized: true })
            .unwrap();
        protos.freeze_previous(&[UNKNOWN]).unwrap();
        assert!(!protos.get(UNKNOWN).unwrap().frozen);
    }

    #[test]
    fn pseudo_label_cases() {
        let mut protos = PrototypeBank::<f64>::new(2);
        assert!(matches!(pseudo_label(&protos, &[0.0, 0.0]), Err(Error::Unavailable(_))));
        for (c, v) in [(0u16, [0.0, 0.0]), (2, [2.0, 0.0]), (3, [5.0, 5.0])] {
            protos
                .restore(c, Prototype { vector: v.to_vec(), frozen: false, initialized: true })
                .unwrap();
        }
        protos.register(7);
        assert_eq!(pseudo_label(&protos, &[5.0, 5.0]).unwrap(), 3);
        assert_eq!(pseudo_label(&protos, &[1.0, 0.0]).unwrap(), 0);
        assert_eq!(pseudo_label(&protos, &[1.9, 0.0]).unwrap(), 2);
    }

    #[test]
    fn contraction_toward_stationary_mean() {
        let m = [3.0f64, -1.0];
        let mut protos = PrototypeBank::<f64>::new(2);
        protos
            .restore(1, Prototype { vector: vec![-5.0, 7.0], frozen: false, initialized: true })
            .unwrap();
        let mut bank = FeatureBank::new(4, 2);
        bank.deposit(1, &m).unwrap();
        let c = ClusterConfig { momentum: 0.9, update_period: 1, ..ClusterConfig::default() };
        let d0 = euclidean(&protos.get(1).unwrap().vector, &m).unwrap();
        for n in 1..=30usize {
            update_prototypes(&mut protos, &bank, &c, n + 1);
            let d = euclidean(&protos.get(1).unwrap().vector, &m).unwrap();
            assert!(d <= 0.9f64.powi(n as i32) * d0 + 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(ClusterConfig::default().validate().is_ok());
        assert!(ClusterConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(ClusterConfig { margin: 0.0, ..Default::default() }.validate().is_err());
        assert!(ClusterConfig { update_period: 0, ..Default::default() }.validate().is_err());
    }
}
