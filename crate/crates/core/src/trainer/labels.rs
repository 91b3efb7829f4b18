use crate::numerics::Grid;
use crate::proto::{pseudo_label_among, PrototypeBank};
use crate::synthdata::{BACKGROUND, IGNORE};

use super::BackgroundPolicy;

/// How background pixels are treated at steps after the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelPolicy {
    pub background: BackgroundPolicy,
    /// Apply CE to pseudo-labelled pixels as well.
    pub pseudo_ce: bool,
}

/// Per-pixel targets for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveLabels {
    /// Ground truth where supervised, pseudo label elsewhere, [`IGNORE`]
    /// where nothing is known.
    pub labels: Vec<u16>,
    /// Pixels that receive the CE term.
    pub ce_mask: Vec<bool>,
    pub pseudo_labeled: usize,
}

/// Targets for step `t` given labels collapsed for that step.
///
/// At `t == 1` every non-ignore pixel, background included, is a CE target.
/// Later, background pixels are pseudo-labelled with the nearest prototype
/// outside `current` (the classes annotated at this step), or left
/// unlabelled while no such prototype exists, unless the policy supervises
/// them directly as background.
pub fn build_effective_labels(
    labels: &[u16],
    features: &Grid<f64>,
    protos: &PrototypeBank<f64>,
    t: usize,
    current: &[u16],
    policy: LabelPolicy,
) -> EffectiveLabels {
    let mut out = labels.to_vec();
    let mut mask: Vec<bool> = labels.iter().map(|&l| l != IGNORE).collect();
    let mut pseudo = 0;
    let route = t > 1 && policy.background != BackgroundPolicy::Supervise;
    if route {
        let allow = |c: u16| !current.contains(&c);
        let available = protos.initialized().any(|(c, _)| allow(c));
        for (i, l) in out.iter_mut().enumerate() {
            if *l != BACKGROUND {
                continue;
            }
            mask[i] = false;
            if !available {
                *l = IGNORE;
                continue;
            }
            let p = pseudo_label_among(protos, features.pixel_at(i), allow).unwrap_or(IGNORE);
            *l = p;
            pseudo += 1;
            if policy.pseudo_ce && p != IGNORE {
                mask[i] = true;
            }
        }
    }
    EffectiveLabels {
        labels: out,
        ce_mask: mask,
        pseudo_labeled: pseudo,
    }
}
