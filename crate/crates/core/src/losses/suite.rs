use rand::Rng;

use crate::error::Result;
use crate::numerics::{finite_diff_check, Block, GradSlot, Grid, ParamSet, Pcg32};
use crate::proto::{Prototype, PrototypeBank};
use crate::synthdata::IGNORE;

use super::{cluster_loss, cons_loss, cons_loss_logits, distill_loss, weighted_ce, ConsConfig};

/// Central-difference step used by the suite.
pub const GRADCHECK_EPSILON: f64 = 1e-6;
/// Largest accepted relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

const H: usize = 8;
const W: usize = 8;
const D: usize = 4;

/// Result of checking one registered loss over several random instances.
#[derive(Clone, Debug, PartialEq)]
pub struct LossCheck {
    pub name: &'static str,
    pub instances: usize,
    /// Worst relative error over all instances.
    pub max_rel_error: f64,
    /// The entry carries a deliberately wrong gradient.
    pub expect_failure: bool,
}

impl LossCheck {
    pub fn within_tolerance(&self) -> bool {
        self.max_rel_error <= GRADCHECK_TOLERANCE
    }

    /// Within tolerance for real losses, outside it for the mutant.
    pub fn passed(&self) -> bool {
        self.within_tolerance() != self.expect_failure
    }
}

type Instance = (Box<dyn Fn(&ParamSet<f64>) -> Result<GradSlot<f64>>>, ParamSet<f64>);

fn uniform(rng: &mut Pcg32, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn grid_param(name: &str, data: Vec<f64>, channels: usize) -> ParamSet<f64> {
    let mut set = ParamSet::new();
    set.insert(name.to_string(), Block::new(vec![H, W, channels], data).unwrap());
    set
}

fn as_grid(set: &ParamSet<f64>, name: &str) -> Result<Grid<f64>> {
    Grid::try_from(set[name].clone())
}

fn weighted_ce_instance(rng: &mut Pcg32) -> Instance {
    let logits = uniform(rng, H * W * D, -2.0, 2.0);
    let labels: Vec<u16> = (0..H * W)
        .map(|_| if rng.random_bool(0.1) { IGNORE } else { rng.random_range(0..D as u16) })
        .collect();
    let mask: Vec<bool> = (0..H * W).map(|_| rng.random_bool(0.85)).collect();
    let weights = uniform(rng, D, 0.1, 10.0);
    let op = move |p: &ParamSet<f64>| weighted_ce(&as_grid(p, "logits")?, &labels, Some(&mask), Some(&weights));
    (Box::new(op), grid_param("logits", logits, D))
}

fn corrupted_ce_instance(rng: &mut Pcg32) -> Instance {
    let (inner, params) = weighted_ce_instance(rng);
    let op = move |p: &ParamSet<f64>| {
        let mut slot = inner(p)?;
        for g in &mut slot.grads.get_mut("logits").unwrap().data {
            *g *= 1.5;
        }
        Ok(slot)
    };
    (Box::new(op), params)
}

fn cluster_instance(rng: &mut Pcg32) -> Instance {
    let features = uniform(rng, H * W * D, -1.0, 1.0);
    let mut bank = PrototypeBank::new(D);
    let classes = [0u16, 1, 2, 3];
    for &c in &classes {
        bank.restore(
            c,
            Prototype {
                vector: uniform(rng, D, -1.0, 1.0),
                frozen: c == 1,
                initialized: true,
            },
        )
        .unwrap();
    }
    let labels: Vec<u16> = (0..H * W)
        .map(|_| if rng.random_bool(0.05) { IGNORE } else { classes[rng.random_range(0..classes.len())] })
        .collect();
    let margin = rng.random_range(1.0..2.0);
    let op = move |p: &ParamSet<f64>| Ok(cluster_loss(&as_grid(p, "features")?, &labels, &bank, margin)?.slot);
    (Box::new(op), grid_param("features", features, D))
}

fn cons_probs_instance(rng: &mut Pcg32) -> Instance {
    let image = Grid::from_vec(H, W, 3, uniform(rng, H * W * 3, 0.0, 1.0)).unwrap();
    let probs = uniform(rng, H * W * D, 0.0, 1.0);
    let cfg = ConsConfig::default();
    let op = move |p: &ParamSet<f64>| cons_loss(&image, &as_grid(p, "probs")?, &cfg);
    (Box::new(op), grid_param("probs", probs, D))
}

fn cons_logits_instance(rng: &mut Pcg32) -> Instance {
    let image = Grid::from_vec(H, W, 3, uniform(rng, H * W * 3, 0.0, 1.0)).unwrap();
    let logits = uniform(rng, H * W * D, -2.0, 2.0);
    let cfg = ConsConfig::default();
    let op = move |p: &ParamSet<f64>| cons_loss_logits(&image, &as_grid(p, "logits")?, &cfg);
    (Box::new(op), grid_param("logits", logits, D))
}

fn distill_instance(rng: &mut Pcg32) -> Instance {
    let now = uniform(rng, H * W * D, -1.0, 1.0);
    let prev = Grid::from_vec(H, W, D, uniform(rng, H * W * D, -1.0, 1.0)).unwrap();
    let op = move |p: &ParamSet<f64>| distill_loss(&as_grid(p, "features")?, &prev);
    (Box::new(op), grid_param("features", now, D))
}

type Maker = fn(&mut Pcg32) -> Instance;

fn registry() -> Vec<(&'static str, Maker, bool)> {
    vec![
        ("weighted_ce", weighted_ce_instance, false),
        ("cluster_loss", cluster_instance, false),
        ("cons_loss", cons_probs_instance, false),
        ("cons_loss_logits", cons_logits_instance, false),
        ("distill_loss", distill_instance, false),
        ("corrupted_ce", corrupted_ce_instance, true),
    ]
}

/// Runs the finite-difference checker on `instances` random 8×8×4 problems
/// for every registered loss, including a mutant with a scaled gradient.
pub fn gradcheck_suite(seed: u64, instances: usize) -> Result<Vec<LossCheck>> {
    let mut out = Vec::new();
    for (name, make, expect_failure) in registry() {
        let mut worst = 0.0f64;
        for i in 0..instances {
            let mut rng = Pcg32::stream(seed, &format!("gradcheck/{name}/{i}"));
            let (op, params) = make(&mut rng);
            let check = finite_diff_check(&op, &params, GRADCHECK_EPSILON)?;
            worst = worst.max(check.max_rel_error);
        }
        out.push(LossCheck {
            name,
            instances,
            max_rel_error: worst,
            expect_failure,
        });
    }
    Ok(out)
}
