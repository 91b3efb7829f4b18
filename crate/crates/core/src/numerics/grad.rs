use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{CompensatedSum, Grid};
use crate::scalar::Scalar;

/// A named parameter or gradient array of arbitrary rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Block<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "block shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![S::zero(); n],
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(other.shape.clone())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<S: Scalar> From<Grid<S>> for Block<S> {
    fn from(grid: Grid<S>) -> Self {
        let (h, w, c) = grid.shape();
        Self {
            shape: vec![h, w, c],
            data: grid.into_vec(),
        }
    }
}

impl<S: Scalar> TryFrom<Block<S>> for Grid<S> {
    type Error = Error;

    fn try_from(block: Block<S>) -> Result<Self> {
        match block.shape.as_slice() {
            &[h, w, c] => Grid::from_vec(h, w, c, block.data),
            other => Err(Error::Shape(format!("expected rank-3 block, got {other:?}"))),
        }
    }
}

pub type ParamSet<S> = BTreeMap<String, Block<S>>;

/// Scalar loss value plus its gradient with respect to each named input.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSlot<S> {
    pub value: S,
    /// Low-order part of the value left over after rounding; zero when the
    /// loss does not track it.
    pub residual: S,
    pub grads: ParamSet<S>,
}

impl<S: Scalar> GradSlot<S> {
    pub fn new(value: S) -> Self {
        Self {
            value,
            residual: S::zero(),
            grads: BTreeMap::new(),
        }
    }

    /// Value `sum · scale` carried as a `(value, residual)` pair.
    pub fn from_sum(sum: &CompensatedSum<S>, scale: S) -> Self {
        let (value, residual) = sum.scaled(scale);
        Self {
            value,
            residual,
            grads: BTreeMap::new(),
        }
    }

    pub fn with_grad(mut self, name: impl Into<String>, grad: Block<S>) -> Self {
        self.grads.insert(name.into(), grad);
        self
    }

    pub fn grad(&self, name: &str) -> Option<&Block<S>> {
        self.grads.get(name)
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grads.values().all(Block::is_finite)
    }
}

/// A deterministic scalar function of named parameter blocks that also
/// reports its analytic gradient.
pub trait DifferentiableOp<S: Scalar> {
    fn evaluate(&self, params: &ParamSet<S>) -> Result<GradSlot<S>>;
}

impl<S, F> DifferentiableOp<S> for F
where
    S: Scalar,
    F: Fn(&ParamSet<S>) -> Result<GradSlot<S>>,
{
    fn evaluate(&self, params: &ParamSet<S>) -> Result<GradSlot<S>> {
        self(params)
    }
}

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_block: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compare the analytic gradient of `op` against central differences on
/// every coordinate of every block.
///
/// The per-coordinate error is `|g_a − g_fd| / max(1e-12, |g_a| + |g_fd|)`;
/// the maximum is returned.
pub fn finite_diff_check<S, Op>(op: &Op, params: &ParamSet<S>, epsilon: f64) -> Result<GradCheck>
where
    S: Scalar,
    Op: DifferentiableOp<S> + ?Sized,
{
    if !(1e-8..=1e-4).contains(&epsilon) {
        return Err(Error::Config(format!(
            "finite-difference epsilon {epsilon} outside [1e-8, 1e-4]"
        )));
    }
    let base = op.evaluate(params)?;
    let again = op.evaluate(params)?;
    if base != again {
        return Err(Error::Determinism(
            "two evaluations at identical parameters differ".into(),
        ));
    }

    let eps = S::of(epsilon);
    let mut work = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_block: String::new(),
        worst_index: 0,
        coordinates: 0,
    };

    for (name, block) in params {
        let analytic = base.grads.get(name).ok_or_else(|| {
            Error::Shape(format!("loss reported no gradient for block `{name}`"))
        })?;
        if analytic.shape != block.shape {
            return Err(Error::Shape(format!(
                "gradient for `{name}` has shape {:?}, block has {:?}",
                analytic.shape, block.shape
            )));
        }
        for idx in 0..block.data.len() {
            let orig = block.data[idx];
            work.get_mut(name).unwrap().data[idx] = orig + eps;
            let plus = op.evaluate(&work)?;
            work.get_mut(name).unwrap().data[idx] = orig - eps;
            let minus = op.evaluate(&work)?;
            work.get_mut(name).unwrap().data[idx] = orig;

            let diff = (plus.value - minus.value) + (plus.residual - minus.residual);
            let fd = diff.to_f64_lossless() / (2.0 * epsilon);
            let ga = analytic.data[idx].to_f64_lossless();
            let rel = (ga - fd).abs() / ((ga.abs() + fd.abs()).max(1e-12));
            report.coordinates += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst_block = name.clone();
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn quadratic(params: &ParamSet<f64>) -> Result<GradSlot<f64>> {
        let w = &params["w"];
        let value = w.data.iter().map(|x| x * x).sum();
        let grad = Block::new(w.shape.clone(), w.data.iter().map(|x| 2.0 * x).collect())?;
        Ok(GradSlot::new(value).with_grad("w", grad))
    }

    fn params(values: &[f64]) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w".into(), Block::new(vec![values.len()], values.to_vec()).unwrap());
        p
    }

    #[test]
    fn quadratic_is_exact() {
        let report = finite_diff_check(&quadratic, &params(&[0.3, -1.7, 2.5, 4.0]), 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.coordinates, 4);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mutant = |p: &ParamSet<f64>| -> Result<GradSlot<f64>> {
            let mut slot = quadratic(p)?;
            slot.grads.get_mut("w").unwrap().data[1] *= 1.1;
            Ok(slot)
        };
        let report = finite_diff_check(&mutant, &params(&[0.3, -1.7, 2.5]), 1e-6).unwrap();
        assert!(report.max_rel_error > 1e-2);
        assert_eq!(report.worst_index, 1);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let calls = Cell::new(0u32);
        let flaky = |p: &ParamSet<f64>| -> Result<GradSlot<f64>> {
            calls.set(calls.get() + 1);
            let mut slot = quadratic(p)?;
            slot.value += calls.get() as f64 * 1e-3;
            Ok(slot)
        };
        assert!(matches!(
            finite_diff_check(&flaky, &params(&[1.0]), 1e-6),
            Err(Error::Determinism(_))
        ));
    }

    #[test]
    fn epsilon_range_enforced() {
        assert!(finite_diff_check(&quadratic, &params(&[1.0]), 1e-3).is_err());
        assert!(finite_diff_check(&quadratic, &params(&[1.0]), 1e-9).is_err());
    }
}
