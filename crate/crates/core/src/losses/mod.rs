//! Training objectives with exact gradients.

mod cluster;
mod consistency;
mod distill;
mod fairness;
mod suite;

pub use cluster::{cluster_loss, ClusterLoss};
pub use consistency::{cons_loss, cons_loss_logits, ConsConfig};
pub use distill::{distill_loss, proposition1_trials, verify_proposition1, Prop1Report, Prop1Trials, Spread};
pub use fairness::{weighted_ce, ClassDistribution};
pub use suite::{gradcheck_suite, LossCheck, GRADCHECK_EPSILON, GRADCHECK_TOLERANCE};

/// Multipliers of the auxiliary terms in the combined objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_cluster: f64,
    pub lambda_cons: f64,
    pub lambda_distill: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cluster: 1e-3,
            lambda_cons: 1e-2,
            lambda_distill: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> crate::Result<()> {
        for (k, v) in [
            ("lambda_cluster", self.lambda_cluster),
            ("lambda_cons", self.lambda_cons),
            ("lambda_distill", self.lambda_distill),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(crate::Error::Config(format!("losses.{k} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}
