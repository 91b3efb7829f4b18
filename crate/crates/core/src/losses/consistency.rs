use crate::error::{Error, Result};
use crate::numerics::{softmax_backward, softmax_in_place, Block, CompensatedSum, GradSlot, Grid};
use crate::scalar::Scalar;

/// Kernel scales and neighbourhood of the structural consistency loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsConfig {
    /// Colour kernel scale.
    pub sigma1: f64,
    /// Prediction kernel scale; only used by the literal form.
    pub sigma2: f64,
    /// Side of the square neighbourhood window.
    pub window: usize,
    /// Evaluate `exp(−Δx²/2σ₁² − Δy²/2σ₂²)` instead of the smoothness form.
    pub literal: bool,
}

impl Default for ConsConfig {
    fn default() -> Self {
        Self {
            sigma1: 0.2,
            sigma2: 1.0,
            window: 3,
            literal: false,
        }
    }
}

impl ConsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0) || !(self.sigma2 > 0.0) {
            return Err(Error::Config(format!(
                "cons.sigma1 and cons.sigma2 must be > 0, got {} and {}",
                self.sigma1, self.sigma2
            )));
        }
        if self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "cons.window must be odd, got {}",
                self.window
            )));
        }
        Ok(())
    }
}

/// Conditional structural consistency loss on probability maps.
///
/// Default form: mean over ordered neighbour pairs of
/// `exp(−‖x−x'‖²/(2σ₁²)) · ‖y−y'‖²`. With `cfg.literal` the pair term is
/// `exp(−‖x−x'‖²/(2σ₁²) − ‖y−y'‖²/(2σ₂²))`. Gradient under `"probs"`.
pub fn cons_loss<S: Scalar>(image: &Grid<S>, probs: &Grid<S>, cfg: &ConsConfig) -> Result<GradSlot<S>> {
    cfg.validate()?;
    let (h, w, k) = probs.shape();
    if image.height() != h || image.width() != w {
        return Err(Error::Shape(format!(
            "cons_loss: image {}x{} vs probs {h}x{w}",
            image.height(),
            image.width()
        )));
    }
    let r = (cfg.window / 2) as isize;
    let color_scale = S::of(1.0 / (2.0 * cfg.sigma1 * cfg.sigma1));
    let pred_scale = S::of(1.0 / (2.0 * cfg.sigma2 * cfg.sigma2));
    let two = S::of(2.0);
    let mut grad = vec![S::zero(); h * w * k];
    let mut total = CompensatedSum::new();
    let mut pairs = 0usize;
    for row in 0..h {
        for col in 0..w {
            let a = row * w + col;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nr, nc) = (row as isize + dy, col as isize + dx);
                    if (dy == 0 && dx == 0) || nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    pairs += 1;
                    let b = nr as usize * w + nc as usize;
                    let color = crate::numerics::sq_dist(image.pixel_at(a), image.pixel_at(b));
                    let kernel = (-color * color_scale).exp();
                    let (ya, yb) = (probs.pixel_at(a), probs.pixel_at(b));
                    let pred = crate::numerics::sq_dist(ya, yb);
                    // d(term)/d(ya) = coef · (ya − yb), and the negative for yb.
                    let (term, coef) = if cfg.literal {
                        let t = (-color * color_scale - pred * pred_scale).exp();
                        (t, -two * pred_scale * t)
                    } else {
                        (kernel * pred, two * kernel)
                    };
                    total.add(term);
                    if coef == S::zero() {
                        continue;
                    }
                    for c in 0..k {
                        let d = coef * (ya[c] - yb[c]);
                        grad[a * k + c] = grad[a * k + c] + d;
                        grad[b * k + c] = grad[b * k + c] - d;
                    }
                }
            }
        }
    }
    let shape = vec![h, w, k];
    if pairs == 0 {
        return Ok(GradSlot::new(S::zero()).with_grad("probs", Block::new(shape, grad)?));
    }
    let inv = S::one() / S::of(pairs as f64);
    for g in &mut grad {
        *g = *g * inv;
    }
    Ok(GradSlot::from_sum(&total, inv).with_grad("probs", Block::new(shape, grad)?))
}

/// [`cons_loss`] composed with a per-pixel softmax; gradient under `"logits"`.
pub fn cons_loss_logits<S: Scalar>(
    image: &Grid<S>,
    logits: &Grid<S>,
    cfg: &ConsConfig,
) -> Result<GradSlot<S>> {
    let k = logits.channels();
    let mut probs = logits.clone();
    for p in probs.as_mut_slice().chunks_mut(k) {
        softmax_in_place(p);
    }
    let inner = cons_loss(image, &probs, cfg)?;
    let gp = &inner.grads["probs"].data;
    let mut gl = vec![S::zero(); gp.len()];
    for ((p, g), out) in probs
        .as_slice()
        .chunks(k)
        .zip(gp.chunks(k))
        .zip(gl.chunks_mut(k))
    {
        softmax_backward(p, g, out);
    }
    let mut slot = GradSlot::new(inner.value);
    slot.residual = inner.residual;
    Ok(slot.with_grad("logits", Block::new(vec![logits.height(), logits.width(), k], gl)?))
}
