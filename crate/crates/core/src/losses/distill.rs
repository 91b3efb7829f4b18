use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{euclidean, Block, CompensatedSum, GradSlot, Grid, Pcg32};
use crate::scalar::Scalar;

/// Mean per-pixel Euclidean distance between current and frozen features.
/// Gradient under `"features"`; zero where the two coincide.
pub fn distill_loss<S: Scalar>(now: &Grid<S>, prev: &Grid<S>) -> Result<GradSlot<S>> {
    if !now.same_shape(prev) {
        return Err(Error::Shape(format!(
            "distill_loss: {:?} vs {:?}",
            now.shape(),
            prev.shape()
        )));
    }
    let d = now.channels();
    let n = now.pixels();
    let mut grad = vec![S::zero(); n * d];
    let mut total = CompensatedSum::new();
    let inv_n = if n == 0 { S::zero() } else { S::one() / S::of(n as f64) };
    for i in 0..n {
        let (a, b) = (now.pixel_at(i), prev.pixel_at(i));
        let dist = euclidean(a, b)?;
        total.add(dist);
        if dist > S::zero() {
            let k = inv_n / dist;
            for (g, (&x, &y)) in grad[i * d..(i + 1) * d].iter_mut().zip(a.iter().zip(b)) {
                *g = k * (x - y);
            }
        }
    }
    Ok(GradSlot::from_sum(&total, inv_n)
        .with_grad("features", Block::new(vec![now.height(), now.width(), d], grad)?))
}

/// Per-pixel comparison of the distillation distance against the
/// prototype-mediated bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Prop1Report {
    /// `‖f_now − f_prev‖` per pixel.
    pub lhs: Vec<f64>,
    /// `(1/|C|) Σ_c (‖f_now − p_c‖ + ‖p_c − f_prev‖)` per pixel.
    pub rhs: Vec<f64>,
    /// Smallest `rhs − lhs`.
    pub min_slack: f64,
    /// `lhs ≤ rhs + 1e-9` at every pixel.
    pub holds: bool,
}

/// Checks that the averaged prototype detour bounds the direct feature
/// distance at every pixel.
pub fn verify_proposition1<S: Scalar>(
    now: &Grid<S>,
    prev: &Grid<S>,
    protos: &[Vec<S>],
) -> Result<Prop1Report> {
    if !now.same_shape(prev) {
        return Err(Error::Shape(format!(
            "verify_proposition1: {:?} vs {:?}",
            now.shape(),
            prev.shape()
        )));
    }
    if protos.is_empty() {
        return Err(Error::Unavailable("at least one prototype is required".into()));
    }
    let mut lhs = Vec::with_capacity(now.pixels());
    let mut rhs = Vec::with_capacity(now.pixels());
    let mut min_slack = f64::INFINITY;
    for i in 0..now.pixels() {
        let (a, b) = (now.pixel_at(i), prev.pixel_at(i));
        let l = euclidean(a, b)?.to_f64_lossless();
        let mut sum = CompensatedSum::new();
        for p in protos {
            sum.add(euclidean(a, p)?.to_f64_lossless() + euclidean(p, b)?.to_f64_lossless());
        }
        let r = sum.total() / protos.len() as f64;
        min_slack = min_slack.min(r - l);
        lhs.push(l);
        rhs.push(r);
    }
    let holds = lhs.iter().zip(&rhs).all(|(l, r)| *l <= r + 1e-9);
    Ok(Prop1Report {
        lhs,
        rhs,
        min_slack,
        holds,
    })
}

/// Min, mean and max of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spread {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Self {
        let mut sum = CompensatedSum::new();
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            sum.add(v);
            min = min.min(v);
            max = max.max(v);
        }
        Self {
            min,
            mean: sum.total() / values.len().max(1) as f64,
            max,
        }
    }
}

/// Outcome of a batch of random bound checks.
#[derive(Clone, Debug, PartialEq)]
pub struct Prop1Trials {
    pub trials: usize,
    pub held: usize,
    pub min_slack: f64,
    pub lhs: Spread,
    pub rhs: Spread,
}

/// Runs `trials` random checks of [`verify_proposition1`] on 4×4 feature
/// maps, cycling through every `(dim, classes)` pair. Trial `i` draws from
/// its own stream, so results do not depend on the trial count.
pub fn proposition1_trials(seed: u64, trials: usize, dims: &[usize], classes: &[usize]) -> Result<Prop1Trials> {
    if dims.is_empty() || classes.is_empty() || dims.contains(&0) || classes.contains(&0) {
        return Err(Error::Config("prop1: dims and class counts must be non-empty and positive".into()));
    }
    let mut held = 0;
    let mut min_slack = f64::INFINITY;
    let (mut lhs, mut rhs) = (Vec::new(), Vec::new());
    for i in 0..trials {
        let d = dims[i % dims.len()];
        let c = classes[(i / dims.len()) % classes.len()];
        let mut rng = Pcg32::stream(seed, &format!("prop1/{i}"));
        let scale: f64 = rng.random_range(0.1..10.0);
        let mut draw = |n: usize| (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let now = Grid::from_vec(4, 4, d, draw(16 * d))?;
        let prev = Grid::from_vec(4, 4, d, draw(16 * d))?;
        let protos: Vec<Vec<f64>> = (0..c).map(|_| draw(d)).collect();
        let rep = verify_proposition1(&now, &prev, &protos)?;
        held += rep.holds as usize;
        min_slack = min_slack.min(rep.min_slack);
        lhs.extend(rep.lhs);
        rhs.extend(rep.rhs);
    }
    Ok(Prop1Trials {
        trials,
        held,
        min_slack,
        lhs: Spread::of(&lhs),
        rhs: Spread::of(&rhs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_features() {
        let f = Grid::filled(2, 2, 3, 1.5);
        let slot = distill_loss(&f, &f).unwrap();
        assert_eq!(slot.value, 0.0);
        assert!(slot.grads["features"].data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn three_four_five() {
        let now = Grid::from_vec(2, 1, 2, vec![3.0f64, 4.0, 3.0, 4.0]).unwrap();
        let prev = Grid::zeros(2, 1, 2);
        assert!((distill_loss(&now, &prev).unwrap().value - 5.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let a = Grid::<f64>::zeros(2, 2, 2);
        let b = Grid::<f64>::zeros(2, 2, 3);
        assert!(matches!(distill_loss(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn equal_features_hold_trivially() {
        let f = Grid::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let rep = verify_proposition1(&f, &f, &[vec![0.0, 0.0]]).unwrap();
        assert!(rep.holds);
        assert_eq!(rep.lhs, vec![0.0, 0.0]);
        assert!(rep.min_slack >= 0.0);
    }

    #[test]
    fn collinear_prototype_is_tight() {
        let now = Grid::from_vec(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let prev = Grid::from_vec(1, 1, 2, vec![4.0, 0.0]).unwrap();
        let rep = verify_proposition1(&now, &prev, &[vec![1.0, 0.0]]).unwrap();
        assert_eq!(rep.min_slack, 0.0);
        assert!(rep.holds);
    }

    #[test]
    fn random_trials_hold() {
        let mut rng = Pcg32::seed_from_u64(11);
        for _ in 0..200 {
            let d = rng.random_range(1..=32);
            let c = rng.random_range(1..=20);
            let mut draw = |n| (0..n).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
            let now = Grid::from_vec(2, 2, d, draw(4 * d)).unwrap();
            let prev = Grid::from_vec(2, 2, d, draw(4 * d)).unwrap();
            let protos: Vec<Vec<f64>> = (0..c).map(|_| draw(d)).collect();
            assert!(verify_proposition1(&now, &prev, &protos).unwrap().holds);
        }
    }

    #[test]
    fn needs_a_prototype() {
        let f = Grid::<f64>::zeros(1, 1, 2);
        assert!(matches!(verify_proposition1(&f, &f, &[]), Err(Error::Unavailable(_))));
    }

    #[test]
    fn trial_batches_cover_every_pair() {
        let out = proposition1_trials(3, 9, &[2, 5, 7], &[1, 4, 9]).unwrap();
        assert_eq!(out.trials, 9);
        assert_eq!(out.held, 9);
        assert!(out.min_slack >= -1e-9);
        assert!(out.lhs.min <= out.lhs.mean && out.lhs.mean <= out.lhs.max);
        assert!(out.rhs.mean >= out.lhs.mean);
        assert!(proposition1_trials(3, 1, &[], &[2]).is_err());
    }
}
