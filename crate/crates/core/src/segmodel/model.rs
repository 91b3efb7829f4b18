use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{softmax_in_place, Block, GradSlot, Grid, ParamSet, Pcg32};
use crate::scalar::Scalar;

/// Architecture of the patch encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Odd side length `k` of the square input patch.
    pub patch_size: usize,
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 5,
            feature_dim: 16,
            hidden: vec![64, 32],
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return Err(Error::Config(format!(
                "model.patch_size must be odd, got {}",
                self.patch_size
            )));
        }
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("model: layer widths must be positive".into()));
        }
        Ok(())
    }

    fn check_image(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        if self.patch_size > height.min(width) {
            return Err(Error::Config(format!(
                "model.patch_size {} exceeds image side {}",
                self.patch_size,
                height.min(width)
            )));
        }
        Ok(())
    }
}

/// Affine layer `y = W x + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<S> {
    pub weight: Array2<S>,
    pub bias: Array1<S>,
}

impl<S: Scalar> Dense<S> {
    fn glorot(out_dim: usize, in_dim: usize, rng: &mut Pcg32) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| {
            S::of(rng.random_range(-bound..=bound))
        });
        Self {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Encoder layers (hidden ReLU layers followed by the linear feature layer)
/// and the classifier head. Head row 0 is background/unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub encoder: Vec<Dense<S>>,
    pub head: Dense<S>,
}

impl<S: Scalar> ModelParams<S> {
    /// Glorot-uniform initialization with zero biases; the head starts with
    /// `num_classes + 1` rows.
    pub fn init(config: ModelConfig, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut widths = vec![config.input_dim()];
        widths.extend_from_slice(&config.hidden);
        widths.push(config.feature_dim);
        let encoder = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let mut rng = Pcg32::stream(seed, &format!("init/enc.{i}"));
                Dense::glorot(w[1], w[0], &mut rng)
            })
            .collect();
        let mut rng = Pcg32::stream(seed, "init/head");
        let head = Dense::glorot(num_classes + 1, config.feature_dim, &mut rng);
        Ok(Self {
            config,
            encoder,
            head,
        })
    }

    /// Number of head rows `K`.
    pub fn num_outputs(&self) -> usize {
        self.head.out_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(2 * self.encoder.len() + 2);
        for i in 0..self.encoder.len() {
            names.push(format!("enc.{i}.weight"));
            names.push(format!("enc.{i}.bias"));
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    fn layer(&self, name: &str) -> Option<(&Dense<S>, bool)> {
        let (layer, part) = name.rsplit_once('.')?;
        let is_weight = match part {
            "weight" => true,
            "bias" => false,
            _ => return None,
        };
        let dense = if layer == "head" {
            &self.head
        } else {
            self.encoder.get(layer.strip_prefix("enc.")?.parse::<usize>().ok()?)?
        };
        Some((dense, is_weight))
    }

    fn layer_mut(&mut self, name: &str) -> Option<(&mut Dense<S>, bool)> {
        let (layer, part) = name.rsplit_once('.')?;
        let is_weight = match part {
            "weight" => true,
            "bias" => false,
            _ => return None,
        };
        let dense = if layer == "head" {
            &mut self.head
        } else {
            let idx = layer.strip_prefix("enc.")?.parse::<usize>().ok()?;
            self.encoder.get_mut(idx)?
        };
        Some((dense, is_weight))
    }

    /// Parameter values of block `name` in row-major order.
    pub fn block(&self, name: &str) -> Option<Block<S>> {
        let (dense, is_weight) = self.layer(name)?;
        Some(if is_weight {
            Block {
                shape: vec![dense.out_dim(), dense.in_dim()],
                data: dense.weight.iter().copied().collect(),
            }
        } else {
            Block {
                shape: vec![dense.out_dim()],
                data: dense.bias.to_vec(),
            }
        })
    }

    /// Mutable row-major view of block `name`.
    pub fn block_slice_mut(&mut self, name: &str) -> Option<&mut [S]> {
        let (dense, is_weight) = self.layer_mut(name)?;
        if is_weight {
            dense.weight.as_slice_mut()
        } else {
            dense.bias.as_slice_mut()
        }
    }

    pub fn to_param_set(&self) -> ParamSet<S> {
        self.block_names()
            .into_iter()
            .map(|n| {
                let b = self.block(&n).unwrap();
                (n, b)
            })
            .collect()
    }

    /// Replaces every block from `set`; shapes must match.
    pub fn load_param_set(&mut self, set: &ParamSet<S>) -> Result<()> {
        for name in self.block_names() {
            let src = set
                .get(&name)
                .ok_or_else(|| Error::Shape(format!("missing block `{name}`")))?;
            let expected = self.block(&name).unwrap().shape;
            if src.shape != expected {
                return Err(Error::Shape(format!(
                    "block `{name}` has shape {:?}, expected {expected:?}",
                    src.shape
                )));
            }
            self.block_slice_mut(&name).unwrap().copy_from_slice(&src.data);
        }
        Ok(())
    }

    /// Rebuilds parameters from named blocks, inferring the architecture
    /// from their shapes.
    pub fn from_param_set(patch_size: usize, set: &ParamSet<S>) -> Result<Self> {
        let mut encoder = Vec::new();
        loop {
            let (w, b) = (format!("enc.{}.weight", encoder.len()), format!("enc.{}.bias", encoder.len()));
            match (set.get(&w), set.get(&b)) {
                (Some(w), Some(b)) => encoder.push(dense_from_blocks(w, b)?),
                _ => break,
            }
        }
        let head = match (set.get("head.weight"), set.get("head.bias")) {
            (Some(w), Some(b)) => dense_from_blocks(w, b)?,
            _ => return Err(Error::Shape("missing head blocks".into())),
        };
        if encoder.is_empty() {
            return Err(Error::Shape("missing encoder blocks".into()));
        }
        let config = ModelConfig {
            patch_size,
            feature_dim: encoder.last().unwrap().out_dim(),
            hidden: encoder[..encoder.len() - 1].iter().map(Dense::out_dim).collect(),
        };
        config.validate()?;
        if encoder[0].in_dim() != config.input_dim() {
            return Err(Error::Shape(format!(
                "first layer expects {} inputs, patch size {patch_size} gives {}",
                encoder[0].in_dim(),
                config.input_dim()
            )));
        }
        for pair in encoder.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape("encoder layer widths do not chain".into()));
            }
        }
        if head.in_dim() != config.feature_dim {
            return Err(Error::Shape("head width does not match feature dim".into()));
        }
        Ok(Self {
            config,
            encoder,
            head,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.head))
            .all(|d| d.weight.iter().chain(d.bias.iter()).all(|v| v.is_finite()))
    }
}

fn dense_from_blocks<S: Scalar>(w: &Block<S>, b: &Block<S>) -> Result<Dense<S>> {
    match (w.shape.as_slice(), b.shape.as_slice()) {
        (&[out, inp], &[bout]) if out == bout => Ok(Dense {
            weight: Array2::from_shape_vec((out, inp), w.data.clone())
                .map_err(|e| Error::Shape(e.to_string()))?,
            bias: Array1::from_vec(b.data.clone()),
        }),
        _ => Err(Error::Shape(format!(
            "incompatible layer blocks {:?} / {:?}",
            w.shape, b.shape
        ))),
    }
}

/// Appends `new_classes` Glorot-initialized rows to the head. Existing rows
/// are copied unchanged; the new rows come from a stream keyed by
/// `(seed, step)`.
pub fn grow_head<S: Scalar>(params: &ModelParams<S>, new_classes: usize, seed: u64, step: usize) -> ModelParams<S> {
    let old_k = params.num_outputs();
    let k = old_k + new_classes;
    let d = params.feature_dim();
    let bound = (6.0 / (d + k) as f64).sqrt();
    let mut rng = Pcg32::stream(seed, &format!("init/head/step{step}"));

    let mut weight = Array2::zeros((k, d));
    weight.slice_mut(s![..old_k, ..]).assign(&params.head.weight);
    for v in weight.slice_mut(s![old_k.., ..]).iter_mut() {
        *v = S::of(rng.random_range(-bound..=bound));
    }
    let mut bias = Array1::zeros(k);
    bias.slice_mut(s![..old_k]).assign(&params.head.bias);

    let mut out = params.clone();
    out.head = Dense { weight, bias };
    out
}

/// Per-pixel outputs of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<S> {
    pub features: Grid<S>,
    pub logits: Grid<S>,
    pub probs: Grid<S>,
}

impl<S: Scalar> Prediction<S> {
    /// Arg-max class per pixel (lowest id wins ties).
    pub fn argmax(&self) -> Vec<u16> {
        (0..self.probs.pixels())
            .map(|i| {
                let p = self.probs.pixel_at(i);
                let mut best = 0;
                for (k, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = k;
                    }
                }
                best as u16
            })
            .collect()
    }
}

/// Forward activations retained for [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardPass<S> {
    pub prediction: Prediction<S>,
    patches: Array2<S>,
    /// Post-activation output of every encoder layer (the last entry is the
    /// feature matrix).
    activations: Vec<Array2<S>>,
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

fn extract_patches<S: Scalar>(image: &Grid<S>, k: usize) -> Array2<S> {
    let (h, w, c) = image.shape();
    let half = (k / 2) as isize;
    let mut patches = Array2::zeros((h * w, k * k * c));
    for r in 0..h {
        for col in 0..w {
            let mut row = patches.row_mut(r * w + col);
            let out = row.as_slice_mut().unwrap();
            let mut o = 0;
            for dy in -half..=half {
                let rr = reflect(r as isize + dy, h);
                for dx in -half..=half {
                    let cc = reflect(col as isize + dx, w);
                    out[o..o + c].copy_from_slice(image.pixel(rr, cc));
                    o += c;
                }
            }
        }
    }
    patches
}

pub fn forward_pass<S: Scalar>(params: &ModelParams<S>, image: &Grid<S>) -> Result<ForwardPass<S>> {
    if image.channels() != 3 {
        return Err(Error::Dimension(format!(
            "image must have 3 channels, has {}",
            image.channels()
        )));
    }
    let (h, w) = (image.height(), image.width());
    params.config.check_image(h, w)?;

    let patches = extract_patches(image, params.config.patch_size);
    let mut activations: Vec<Array2<S>> = Vec::with_capacity(params.encoder.len());
    let last = params.encoder.len() - 1;
    for (i, layer) in params.encoder.iter().enumerate() {
        let input = if i == 0 { &patches } else { &activations[i - 1] };
        let mut z = input.dot(&layer.weight.t());
        z += &layer.bias;
        if i != last {
            z.mapv_inplace(|v| v.max(S::zero()));
        }
        activations.push(z);
    }
    let features = activations.last().unwrap();
    let mut logits = features.dot(&params.head.weight.t());
    logits += &params.head.bias;
    // `dot` may hand back column-major results for degenerate shapes.
    if !logits.is_standard_layout() {
        logits = logits.as_standard_layout().into_owned();
    }
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        softmax_in_place(row.as_slice_mut().unwrap());
    }

    let d = params.feature_dim();
    let k = params.num_outputs();
    let prediction = Prediction {
        features: Grid::from_vec(h, w, d, features.iter().copied().collect())?,
        logits: Grid::from_vec(h, w, k, logits.into_raw_vec_and_offset().0)?,
        probs: Grid::from_vec(h, w, k, probs.into_raw_vec_and_offset().0)?,
    };
    Ok(ForwardPass {
        prediction,
        patches,
        activations,
    })
}

pub fn forward<S: Scalar>(params: &ModelParams<S>, image: &Grid<S>) -> Result<Prediction<S>> {
    Ok(forward_pass(params, image)?.prediction)
}

fn grid_matrix<S: Scalar>(grid: &Grid<S>, channels: usize, what: &str) -> Result<Array2<S>> {
    if grid.channels() != channels {
        return Err(Error::Shape(format!(
            "{what} gradient has {} channels, expected {channels}",
            grid.channels()
        )));
    }
    Array2::from_shape_vec((grid.pixels(), channels), grid.as_slice().to_vec())
        .map_err(|e| Error::Shape(e.to_string()))
}

/// Exact parameter gradients given upstream gradients on the features and
/// on the logits. The returned slot carries value zero; callers set it.
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    pass: &ForwardPass<S>,
    grad_features: Option<&Grid<S>>,
    grad_logits: Option<&Grid<S>>,
) -> Result<GradSlot<S>> {
    let pred = &pass.prediction;
    let n = pred.features.pixels();
    let d = params.feature_dim();
    let k = params.num_outputs();
    if pred.logits.channels() != k || pass.activations.len() != params.encoder.len() {
        return Err(Error::Shape("forward pass does not match parameters".into()));
    }
    for g in [grad_features, grad_logits].into_iter().flatten() {
        if (g.height(), g.width()) != (pred.features.height(), pred.features.width()) {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, prediction is {}x{}",
                g.height(),
                g.width(),
                pred.features.height(),
                pred.features.width()
            )));
        }
    }

    let mut slot = GradSlot::new(S::zero());
    let features = pass.activations.last().unwrap();

    let mut d_features = match grad_features {
        Some(g) => grid_matrix(g, d, "feature")?,
        None => Array2::zeros((n, d)),
    };
    match grad_logits {
        Some(g) => {
            let dz = grid_matrix(g, k, "logit")?;
            let dw = dz.t().dot(features);
            let db = dz.sum_axis(Axis(0));
            d_features += &dz.dot(&params.head.weight);
            slot.grads.insert("head.weight".into(), block2(dw));
            slot.grads.insert("head.bias".into(), block1(db));
        }
        None => {
            slot.grads.insert("head.weight".into(), Block::zeros(vec![k, d]));
            slot.grads.insert("head.bias".into(), Block::zeros(vec![k]));
        }
    }

    let mut dz = d_features;
    for i in (0..params.encoder.len()).rev() {
        let layer = &params.encoder[i];
        let input = if i == 0 { &pass.patches } else { &pass.activations[i - 1] };
        let dw = dz.t().dot(input);
        let db = dz.sum_axis(Axis(0));
        slot.grads.insert(format!("enc.{i}.weight"), block2(dw));
        slot.grads.insert(format!("enc.{i}.bias"), block1(db));
        if i > 0 {
            let mut da = dz.dot(&layer.weight);
            // ReLU mask from the previous layer's output.
            ndarray::Zip::from(&mut da)
                .and(&pass.activations[i - 1])
                .for_each(|g, &a| {
                    if a <= S::zero() {
                        *g = S::zero();
                    }
                });
            dz = da;
        }
    }
    Ok(slot)
}

fn block2<S: Scalar>(a: Array2<S>) -> Block<S> {
    let shape = vec![a.nrows(), a.ncols()];
    Block {
        shape,
        data: a.iter().copied().collect(),
    }
}

fn block1<S: Scalar>(a: Array1<S>) -> Block<S> {
    Block {
        shape: vec![a.len()],
        data: a.to_vec(),
    }
}
