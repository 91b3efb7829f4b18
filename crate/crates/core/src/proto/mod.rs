//! Class prototypes, bounded feature banks and their momentum update
//! schedule, plus nearest-prototype pseudo-labeling.

mod bank;
mod prototypes;

pub use bank::FeatureBank;
pub use prototypes::{pseudo_label, pseudo_label_among, update_prototypes, ClusterConfig, Prototype, PrototypeBank, UNKNOWN};
