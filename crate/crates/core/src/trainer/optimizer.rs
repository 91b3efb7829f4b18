use crate::error::{Error, Result};
use crate::numerics::{Block, ParamSet};
use crate::segmodel::ModelParams;

/// SGD with momentum and decoupled-into-the-gradient weight decay:
/// `v ← μ·v − lr·(g + wd·θ)`, `θ ← θ + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: ParamSet<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: ParamSet::new(),
        }
    }

    pub fn velocity(&self) -> &ParamSet<f64> {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut ModelParams<f64>, grads: &ParamSet<f64>) -> Result<()> {
        for name in params.block_names() {
            let g = grads
                .get(&name)
                .ok_or_else(|| Error::Shape(format!("no gradient for block `{name}`")))?;
            let theta = params.block_slice_mut(&name).unwrap();
            if g.data.len() != theta.len() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has {} values, block has {}",
                    g.data.len(),
                    theta.len()
                )));
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Block::zeros(g.shape.clone()));
            if v.data.len() != theta.len() {
                *v = Block::zeros(g.shape.clone());
            }
            for ((t, v), &g) in theta.iter_mut().zip(v.data.iter_mut()).zip(&g.data) {
                *v = self.momentum * *v - self.lr * (g + self.weight_decay * *t);
                *t += *v;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmodel::ModelConfig;

    fn small() -> ModelParams<f64> {
        let cfg = ModelConfig {
            patch_size: 3,
            feature_dim: 4,
            hidden: vec![5],
        };
        ModelParams::init(cfg, 2, 1).unwrap()
    }

    fn zero_grads(p: &ModelParams<f64>) -> ParamSet<f64> {
        p.to_param_set().into_iter().map(|(k, b)| (k, Block::zeros_like(&b))).collect()
    }

    fn norm(p: &ModelParams<f64>) -> f64 {
        p.to_param_set().values().flat_map(|b| b.data.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn decay_contracts_by_closed_form() {
        let mut p = small();
        let g = zero_grads(&p);
        let mut opt = Sgd::new(0.1, 0.0, 1e-2);
        for _ in 0..5 {
            let before = norm(&p);
            opt.step(&mut p, &g).unwrap();
            let after = norm(&p);
            assert!(after < before);
            assert!((after - before * (1.0 - 0.1 * 1e-2)).abs() < 1e-12);
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = small();
        let mut g = zero_grads(&p);
        g.get_mut("head.bias").unwrap().data[0] = 1.0;
        let start = p.head.bias[0];
        let mut opt = Sgd::new(0.1, 0.9, 0.0);
        opt.step(&mut p, &g).unwrap();
        opt.step(&mut p, &g).unwrap();
        // v1 = -0.1, v2 = -0.09 - 0.1
        assert!((p.head.bias[0] - (start - 0.1 - 0.19)).abs() < 1e-12);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = small();
        let mut opt = Sgd::new(0.1, 0.9, 0.0);
        assert!(opt.step(&mut p, &ParamSet::new()).is_err());
    }
}
