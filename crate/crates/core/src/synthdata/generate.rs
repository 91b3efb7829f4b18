use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::sample::{LabelMap, SegSample, BACKGROUND, IGNORE};
use crate::error::{Error, Result};
use crate::numerics::{Grid, Pcg32};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Rectangle,
    Circle,
    RightTriangle,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Rectangle => "rect",
            ShapeKind::Circle => "circle",
            ShapeKind::RightTriangle => "triangle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rect" | "rectangle" => Some(ShapeKind::Rectangle),
            "circle" => Some(ShapeKind::Circle),
            "triangle" | "right-triangle" => Some(ShapeKind::RightTriangle),
            _ => None,
        }
    }
}

/// Shape and base colour identifying one class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassStyle {
    pub kind: ShapeKind,
    pub color: [f64; 3],
}

/// Parameters of a procedural benchmark. Generation is a pure function of
/// this value.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    /// Probability of drawing class `c + 1` for each painted shape.
    pub class_frequencies: Vec<f64>,
    pub palette: Vec<ClassStyle>,
    pub noise_sigma: f64,
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

const BACKGROUND_COLOR: [f64; 3] = [0.45, 0.45, 0.45];
const BACKGROUND_JITTER: f64 = 0.05;
const COLOR_JITTER: f64 = 0.1;
const MAX_SHAPES: usize = 4;

impl BenchmarkSpec {
    /// The default desk benchmark: 8 classes on 32×32 images with pixel
    /// frequencies proportional to `rank^-1.5`.
    pub fn shapes8(seed: u64) -> Self {
        use ShapeKind::*;
        let palette = vec![
            ClassStyle { kind: Rectangle, color: [0.85, 0.20, 0.20] },
            ClassStyle { kind: Circle, color: [0.20, 0.75, 0.25] },
            ClassStyle { kind: RightTriangle, color: [0.20, 0.30, 0.85] },
            ClassStyle { kind: Circle, color: [0.85, 0.80, 0.20] },
            ClassStyle { kind: Rectangle, color: [0.75, 0.25, 0.80] },
            ClassStyle { kind: RightTriangle, color: [0.90, 0.55, 0.15] },
            ClassStyle { kind: Rectangle, color: [0.20, 0.75, 0.80] },
            ClassStyle { kind: Circle, color: [0.10, 0.10, 0.15] },
        ];
        Self {
            num_classes: 8,
            height: 32,
            width: 32,
            class_frequencies: power_law_frequencies(8, 1.5),
            palette,
            noise_sigma: 0.08,
            train_count: 200,
            test_count: 50,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Spec(format!(
                "image_size: zero-area image {}x{}",
                self.height, self.width
            )));
        }
        if self.num_classes == 0 || self.num_classes >= IGNORE as usize {
            return Err(Error::Spec(format!(
                "num_classes: {} not in 1..{}",
                self.num_classes, IGNORE
            )));
        }
        if self.class_frequencies.len() != self.num_classes {
            return Err(Error::Spec(format!(
                "class_frequencies: expected {} entries, got {}",
                self.num_classes,
                self.class_frequencies.len()
            )));
        }
        if self.class_frequencies.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
            return Err(Error::Spec("class_frequencies: every entry must be > 0".into()));
        }
        let total: f64 = self.class_frequencies.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Spec(format!(
                "class_frequencies: entries sum to {total}, expected 1"
            )));
        }
        if self.palette.len() != self.num_classes {
            return Err(Error::Spec(format!(
                "palette: expected {} entries, got {}",
                self.num_classes,
                self.palette.len()
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Spec(format!("noise_sigma: {} is invalid", self.noise_sigma)));
        }
        Ok(())
    }
}

/// `rank^-exponent` over ranks `1..=n`, normalized to sum to one.
pub fn power_law_frequencies(n: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Generated train and test sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark<S> {
    pub num_classes: usize,
    pub train: Vec<SegSample<S>>,
    pub test: Vec<SegSample<S>>,
}

pub fn generate<S: Scalar>(spec: &BenchmarkSpec) -> Result<Benchmark<S>> {
    spec.validate()?;
    let train = (0..spec.train_count)
        .map(|i| render(spec, "train", i))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..spec.test_count)
        .map(|i| render(spec, "test", i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Benchmark {
        num_classes: spec.num_classes,
        train,
        test,
    })
}

fn sample_class(rng: &mut Pcg32, cumulative: &[f64]) -> usize {
    let u: f64 = rng.random();
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

fn render<S: Scalar>(spec: &BenchmarkSpec, split: &str, index: usize) -> Result<SegSample<S>> {
    let (h, w) = (spec.height, spec.width);
    let mut rng = Pcg32::stream(spec.seed, &format!("{split}/{index}"));

    let mut color = vec![0.0f64; h * w * 3];
    let mut labels = LabelMap::filled(h, w, BACKGROUND);
    for (ch, base) in BACKGROUND_COLOR.iter().enumerate() {
        let v = base + rng.random_range(-BACKGROUND_JITTER..=BACKGROUND_JITTER);
        for px in 0..h * w {
            color[px * 3 + ch] = v;
        }
    }

    let cumulative: Vec<f64> = spec
        .class_frequencies
        .iter()
        .scan(0.0, |acc, f| {
            *acc += f;
            Some(*acc)
        })
        .collect();

    let small = h.min(w);
    let side_lo = (small / 5).max(1);
    let side_hi = (small / 2).max(side_lo);

    let shapes = rng.random_range(1..=MAX_SHAPES);
    for _ in 0..shapes {
        let class_idx = sample_class(&mut rng, &cumulative);
        let style = spec.palette[class_idx];
        let mut tint = [0.0; 3];
        for (ch, t) in tint.iter_mut().enumerate() {
            *t = (style.color[ch] + rng.random_range(-COLOR_JITTER..=COLOR_JITTER)).clamp(0.0, 1.0);
        }
        let mask = shape_mask(style.kind, h, w, side_lo, side_hi, &mut rng);
        let class_id = (class_idx + 1) as u16;
        for (px, inside) in mask.into_iter().enumerate() {
            if inside {
                labels.as_mut_slice()[px] = class_id;
                color[px * 3..px * 3 + 3].copy_from_slice(&tint);
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::Spec(format!("noise_sigma: {e}")))?;
        for v in color.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    // Values pass through f32 so the on-disk encoding is lossless.
    let data = color
        .into_iter()
        .map(|v| S::from_stored(v.clamp(0.0, 1.0) as f32))
        .collect();
    SegSample::new(Grid::from_vec(h, w, 3, data)?, labels)
}

fn shape_mask(
    kind: ShapeKind,
    h: usize,
    w: usize,
    side_lo: usize,
    side_hi: usize,
    rng: &mut Pcg32,
) -> Vec<bool> {
    let mut mask = vec![false; h * w];
    match kind {
        ShapeKind::Rectangle => {
            let rh = rng.random_range(side_lo..=side_hi).min(h);
            let rw = rng.random_range(side_lo..=side_hi).min(w);
            let top = rng.random_range(0..=h - rh);
            let left = rng.random_range(0..=w - rw);
            for r in top..top + rh {
                for c in left..left + rw {
                    mask[r * w + c] = true;
                }
            }
        }
        ShapeKind::Circle => {
            let radius = rng.random_range(side_lo as f64 / 2.0..=side_hi as f64 / 2.0);
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            for r in 0..h {
                for c in 0..w {
                    let dy = r as f64 + 0.5 - cy;
                    let dx = c as f64 + 0.5 - cx;
                    if dy * dy + dx * dx <= radius * radius {
                        mask[r * w + c] = true;
                    }
                }
            }
        }
        ShapeKind::RightTriangle => {
            let legs_h = rng.random_range(side_lo..=side_hi).min(h);
            let legs_w = rng.random_range(side_lo..=side_hi).min(w);
            let top = rng.random_range(0..=h - legs_h);
            let left = rng.random_range(0..=w - legs_w);
            let flip_v: bool = rng.random();
            let flip_h: bool = rng.random();
            for dr in 0..legs_h {
                for dc in 0..legs_w {
                    // Right angle at the local origin.
                    let u = (dr as f64 + 0.5) / legs_h as f64;
                    let v = (dc as f64 + 0.5) / legs_w as f64;
                    if u + v <= 1.0 {
                        let r = if flip_v { legs_h - 1 - dr } else { dr };
                        let c = if flip_h { legs_w - 1 - dc } else { dc };
                        mask[(top + r) * w + left + c] = true;
                    }
                }
            }
        }
    }
    mask
}

/// Pixel counts per class id `0..=num_classes` (index 0 is background).
/// Ignore pixels are skipped.
pub fn pixel_class_counts<S>(samples: &[SegSample<S>], num_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_classes + 1];
    for s in samples {
        for &l in s.labels.as_slice() {
            if (l as usize) <= num_classes {
                counts[l as usize] += 1;
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::normalized_entropy;

    fn small_spec(freqs: Vec<f64>, count: usize) -> BenchmarkSpec {
        let mut spec = BenchmarkSpec::shapes8(11);
        spec.num_classes = freqs.len();
        spec.palette.truncate(freqs.len());
        spec.class_frequencies = freqs;
        spec.train_count = count;
        spec.test_count = 0;
        spec
    }

    #[test]
    fn majority_class_dominates_pixels() {
        let spec = small_spec(vec![0.7, 0.1, 0.1, 0.1], 500);
        let bench = generate::<f64>(&spec).unwrap();
        let counts = pixel_class_counts(&bench.train, 4);
        for c in 2..=4 {
            assert!(counts[1] > counts[c], "{counts:?}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec(vec![0.7, 0.1, 0.1, 0.1], 20);
        let a = generate::<f64>(&spec).unwrap();
        let b = generate::<f64>(&spec).unwrap();
        assert_eq!(a, b);
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(a, generate::<f64>(&other).unwrap());
    }

    #[test]
    fn uniform_frequencies_give_high_entropy() {
        let spec = small_spec(vec![1.0 / 8.0; 8], 500);
        let bench = generate::<f64>(&spec).unwrap();
        let counts = pixel_class_counts(&bench.train, 8);
        let h = normalized_entropy(&counts[1..]).unwrap();
        assert!(h >= 0.95, "entropy {h}");
    }

    #[test]
    fn default_benchmark_is_skewed() {
        let bench = generate::<f64>(&BenchmarkSpec::shapes8(3)).unwrap();
        let counts = pixel_class_counts(&bench.train, 8);
        let fg = &counts[1..];
        let max = *fg.iter().max().unwrap() as f64;
        let min = *fg.iter().min().unwrap() as f64;
        assert!(min > 0.0 && max / min >= 5.0, "{counts:?}");
    }

    #[test]
    fn images_are_clamped_and_labels_valid() {
        let bench = generate::<f32>(&BenchmarkSpec::shapes8(5)).unwrap();
        for s in bench.train.iter().chain(&bench.test) {
            assert!(s.image.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.labels.as_slice().iter().all(|&l| l <= 8));
        }
    }

    #[test]
    fn invalid_specs_name_the_key() {
        let mut spec = BenchmarkSpec::shapes8(1);
        spec.class_frequencies[0] += 0.1;
        let err = generate::<f64>(&spec).unwrap_err().to_string();
        assert!(err.contains("class_frequencies"), "{err}");

        let mut spec = BenchmarkSpec::shapes8(1);
        spec.class_frequencies[2] = 0.0;
        assert!(spec.validate().is_err());

        let mut spec = BenchmarkSpec::shapes8(1);
        spec.height = 0;
        let err = spec.validate().unwrap_err().to_string();
        assert!(err.contains("zero-area"), "{err}");
    }

    #[test]
    fn power_law_is_normalized_and_decreasing() {
        let f = power_law_frequencies(8, 1.5);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f.windows(2).all(|w| w[0] > w[1]));
        assert!((f[0] / f[7] - 8f64.powf(1.5)).abs() < 1e-9);
    }
}
