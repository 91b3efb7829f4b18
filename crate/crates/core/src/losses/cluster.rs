use crate::error::{Error, Result};
use crate::numerics::{euclidean, Block, CompensatedSum, GradSlot, Grid};
use crate::proto::PrototypeBank;
use crate::scalar::Scalar;
use crate::synthdata::IGNORE;

/// Output of [`cluster_loss`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterLoss<S> {
    /// Loss value and gradient under `"features"`.
    pub slot: GradSlot<S>,
    /// Pixels that contributed to the mean.
    pub contributing: usize,
    /// Pixels whose label has no initialized prototype yet.
    pub skipped: usize,
}

/// Prototypical contrastive clustering loss.
///
/// For each pixel with effective label `y`, sums `‖f − p_y‖` for the matching
/// prototype and `max(0, margin − ‖f − p_c‖)` for every other initialized
/// prototype, then averages over contributing pixels. Prototypes are
/// constants; only `"features"` receives a gradient.
pub fn cluster_loss<S: Scalar>(
    features: &Grid<S>,
    labels: &[u16],
    protos: &PrototypeBank<S>,
    margin: f64,
) -> Result<ClusterLoss<S>> {
    let d = features.channels();
    if labels.len() != features.pixels() {
        return Err(Error::Shape(format!(
            "cluster_loss: {} labels for {} pixels",
            labels.len(),
            features.pixels()
        )));
    }
    if d != protos.dim() {
        return Err(Error::Dimension(format!(
            "feature dim {d} != prototype dim {}",
            protos.dim()
        )));
    }
    let centers: Vec<(u16, &[S])> = protos.initialized().collect();
    let margin = S::of(margin);
    let shape = vec![features.height(), features.width(), d];
    let mut grad = vec![S::zero(); features.as_slice().len()];
    let mut total = CompensatedSum::new();
    let mut contributing = Vec::new();
    let mut skipped = 0;
    for (i, &label) in labels.iter().enumerate() {
        if label == IGNORE {
            continue;
        }
        if !centers.iter().any(|(c, _)| *c == label) {
            skipped += 1;
            continue;
        }
        contributing.push(i);
    }
    if contributing.is_empty() {
        return Ok(ClusterLoss {
            slot: GradSlot::new(S::zero()).with_grad("features", Block::new(shape, grad)?),
            contributing: 0,
            skipped,
        });
    }
    let inv_n = S::one() / S::of(contributing.len() as f64);
    for &i in &contributing {
        let f = features.pixel_at(i);
        let g = &mut grad[i * d..(i + 1) * d];
        for &(c, p) in &centers {
            let dist = euclidean(f, p)?;
            let sign = if c == labels[i] {
                total.add(dist);
                S::one()
            } else if dist < margin {
                total.add(margin - dist);
                -S::one()
            } else {
                continue;
            };
            if dist > S::zero() {
                let k = sign * inv_n / dist;
                for ((gv, &fv), &pv) in g.iter_mut().zip(f).zip(p) {
                    *gv = *gv + k * (fv - pv);
                }
            }
        }
    }
    Ok(ClusterLoss {
        slot: GradSlot::from_sum(&total, inv_n).with_grad("features", Block::new(shape, grad)?),
        contributing: contributing.len(),
        skipped,
    })
}
