use rayon::prelude::*;

use crate::error::Result;
use crate::metrics::{isolated_pixels, ClassErrors, ConfusionMatrix};
use crate::segmodel::{forward, ModelParams};
use crate::synthdata::{collapse_map, SegSample, IGNORE};

/// Accumulated test-set statistics of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub errors: ClassErrors,
    /// Single-pixel prediction islands summed over images.
    pub islands: u64,
    pub images: usize,
}

/// Predicts every sample and accumulates confusion, per-class CE and
/// island counts. With `keep`, labels outside it are collapsed to
/// background first.
pub fn evaluate(
    params: &ModelParams<f64>,
    samples: &[SegSample<f64>],
    keep: Option<&[u16]>,
) -> Result<Evaluation> {
    let k = params.num_outputs();
    let parts = samples
        .par_iter()
        .map(|s| {
            let labels = match keep {
                Some(keep) => collapse_map(&s.labels, keep),
                None => s.labels.clone(),
            };
            let pred = forward(params, &s.image)?;
            let argmax = pred.argmax();
            let mut cm = ConfusionMatrix::new(k);
            cm.accumulate(&argmax, labels.as_slice())?;
            let mut errors = ClassErrors::new(k);
            for (i, &l) in labels.as_slice().iter().enumerate() {
                if l != IGNORE {
                    let p = pred.probs.pixel_at(i)[l as usize];
                    errors.add(l, -p.max(f64::MIN_POSITIVE).ln());
                }
            }
            let islands = isolated_pixels(&argmax, s.height(), s.width());
            Ok((cm, errors, islands))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Evaluation {
        confusion: ConfusionMatrix::new(k),
        errors: ClassErrors::new(k),
        islands: 0,
        images: samples.len(),
    };
    for (cm, errors, islands) in parts {
        out.confusion.merge(&cm)?;
        out.errors.merge(&errors);
        out.islands += islands;
    }
    Ok(out)
}
