use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Euclidean distance `‖a − b‖₂`.
pub fn euclidean<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "euclidean: lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(sq_dist(a, b).sqrt())
}

#[inline]
pub(crate) fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// Max-subtracted softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Result<Vec<S>> {
    if logits.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// In-place softmax; `values` must be non-empty.
pub fn softmax_in_place<S: Scalar>(values: &mut [S]) {
    let max = values.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in values.iter_mut() {
        *v = *v / total;
    }
}

/// Pull a gradient on softmax outputs back to the logits:
/// `∂L/∂z = p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward<S: Scalar>(probs: &[S], grad_probs: &[S], grad_logits: &mut [S]) {
    let dot = probs
        .iter()
        .zip(grad_probs)
        .fold(S::zero(), |acc, (&p, &g)| acc + p * g);
    for ((out, &p), &g) in grad_logits.iter_mut().zip(probs).zip(grad_probs) {
        *out = p * (g - dot);
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum<S> {
    sum: S,
    carry: S,
}

impl<S: Scalar> CompensatedSum<S> {
    pub fn new() -> Self {
        Self {
            sum: S::zero(),
            carry: S::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, v: S) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry = self.carry + ((self.sum - t) + v);
        } else {
            self.carry = self.carry + ((v - t) + self.sum);
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> S {
        self.sum + self.carry
    }

    /// `total · k` as an unevaluated pair `(hi, lo)` with `hi` the rounded
    /// product and `lo` the bulk of its rounding error.
    pub fn scaled(&self, k: S) -> (S, S) {
        let t = self.sum + self.carry;
        let bv = t - self.sum;
        let err = (self.sum - (t - bv)) + (self.carry - bv);
        let hi = t * k;
        let lo = t.mul_add(k, -hi) + err * k;
        (hi, lo)
    }
}
