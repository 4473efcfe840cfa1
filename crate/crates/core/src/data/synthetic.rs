//! Deterministic synthetic fine-grained dataset.
//!
//! Every image shows the same ellipse on a flat background. Inside the
//! ellipse a striped texture is drawn whose frequency, orientation and edge
//! sharpness depend on the class; everything else (stripe phase, small
//! position and brightness jitter, pixel noise) is class independent.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image_io::{byte_to_unit, unit_to_byte};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Class-specific texture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureParams {
    /// Stripe cycles across the image width.
    pub frequency: f64,
    /// Stripe normal direction in radians.
    pub orientation: f64,
    /// 0 gives a pure sinusoid, 1 a square wave with hard micro-edges.
    pub micro_edge: f64,
}

/// Ellipse shared by every class, in fractions of the image size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseMask {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Default for EllipseMask {
    fn default() -> Self {
        EllipseMask {
            cx: 0.5,
            cy: 0.5,
            rx: 0.38,
            ry: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub val_per_class: usize,
    pub image_size: usize,
    pub textures: Vec<TextureParams>,
    pub ellipse: EllipseMask,
    /// Stripe amplitude around the ellipse base colour.
    pub contrast: f64,
    /// Maximum per-sample shift of the ellipse, fraction of the image size.
    pub position_jitter: f64,
    /// Maximum per-sample orientation perturbation in radians.
    pub orientation_jitter: f64,
    /// Maximum per-sample additive brightness offset.
    pub brightness_jitter: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Recipe for per-class textures: class `c` gets frequency
/// `base_frequency + c * frequency_step`, orientation `c * orientation_step`
/// and micro-edge amplitude `micro_edge[c % 2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureLayout {
    pub base_frequency: f64,
    pub frequency_step: f64,
    pub orientation_step: f64,
    pub micro_edge: [f64; 2],
}

impl Default for TextureLayout {
    fn default() -> Self {
        TextureLayout {
            base_frequency: 5.0,
            frequency_step: 1.5,
            orientation_step: 0.15,
            micro_edge: [0.0, 0.6],
        }
    }
}

impl TextureLayout {
    pub fn textures(&self, num_classes: usize) -> Vec<TextureParams> {
        (0..num_classes)
            .map(|c| TextureParams {
                frequency: self.base_frequency + self.frequency_step * c as f64,
                orientation: self.orientation_step * c as f64,
                micro_edge: self.micro_edge[c % 2],
            })
            .collect()
    }
}

impl SyntheticSpec {
    pub fn default_textures(num_classes: usize) -> Vec<TextureParams> {
        TextureLayout::default().textures(num_classes)
    }

    pub fn with_classes(num_classes: usize) -> Self {
        SyntheticSpec {
            num_classes,
            textures: Self::default_textures(num_classes),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "need at least two classes"));
        }
        if self.textures.len() != self.num_classes {
            return Err(Error::config(
                "num_classes",
                format!("{} texture entries for {} classes", self.textures.len(), self.num_classes),
            ));
        }
        if self.image_size < 4 {
            return Err(Error::config("image_size", "must be at least 4"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("samples_per_class", "must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma", "must be non-negative"));
        }
        if self.textures.iter().any(|t| !(0.0..=1.0).contains(&t.micro_edge)) {
            return Err(Error::config("num_classes", "micro-edge amplitude outside [0, 1]"));
        }
        Ok(())
    }

    /// Textures differ pairwise by at least one cycle in frequency.
    pub fn frequencies_distinct(&self) -> bool {
        let f: Vec<f64> = self.textures.iter().map(|t| t.frequency).collect();
        f.iter()
            .enumerate()
            .all(|(i, a)| f[i + 1..].iter().all(|b| (a - b).abs() >= 1.0))
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 8,
            samples_per_class: 64,
            val_per_class: 32,
            image_size: 64,
            textures: Self::default_textures(8),
            ellipse: EllipseMask::default(),
            contrast: 0.15,
            position_jitter: 0.06,
            orientation_jitter: 0.1,
            brightness_jitter: 0.1,
            noise_sigma: 0.1,
            seed: 0,
        }
    }
}

/// Images `(1, 3, S, S)` in `[0, 1]` with class labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, image: Tensor<f32>, label: usize) {
        self.images.push(image);
        self.labels.push(label);
    }

    /// Stacked images and labels for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let images: Vec<Tensor<f32>> = indices.iter().map(|&i| self.images[i].clone()).collect();
        Ok((Tensor::stack(&images)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

fn sample_rng(seed: u64, class: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class as u64) << 32) | index as u64);
    rng
}

/// Renders sample `index` of `class`. Values are quantized to 8-bit levels
/// so that a PPM round trip is lossless.
pub fn render_sample(spec: &SyntheticSpec, class: usize, index: usize) -> Tensor<f32> {
    let mut rng = sample_rng(spec.seed, class, index);
    let tex = spec.textures[class];
    let s = spec.image_size as f64;
    let phase = rng.gen_range(0.0..2.0 * PI);
    let jitter = |rng: &mut ChaCha8Rng, a: f64| if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 };
    let dx = jitter(&mut rng, spec.position_jitter);
    let dy = jitter(&mut rng, spec.position_jitter);
    let theta = tex.orientation + jitter(&mut rng, spec.orientation_jitter);
    let brightness = jitter(&mut rng, spec.brightness_jitter);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let e = spec.ellipse;
    let (cos, sin) = (theta.cos(), theta.sin());
    let base = [0.55, 0.5, 0.42];

    let mut img = Tensor::zeros(Shape::new(1, 3, spec.image_size, spec.image_size));
    for y in 0..spec.image_size {
        for x in 0..spec.image_size {
            let u = (x as f64 + 0.5) / s;
            let v = (y as f64 + 0.5) / s;
            let ex = (u - e.cx - dx) / e.rx;
            let ey = (v - e.cy - dy) / e.ry;
            let inside = ex * ex + ey * ey <= 1.0;
            let wave = if inside {
                let arg = 2.0 * PI * tex.frequency * (u * cos + v * sin) + phase;
                let sinus = arg.sin();
                let square = if sinus >= 0.0 { 1.0 } else { -1.0 };
                (1.0 - tex.micro_edge) * sinus + tex.micro_edge * square
            } else {
                0.0
            };
            for (c, b) in base.iter().enumerate() {
                let level = if inside { b + spec.contrast * wave } else { 0.2 };
                let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let value = (level + brightness + n) as f32;
                img.set(0, c, y, x, byte_to_unit(unit_to_byte(value)));
            }
        }
    }
    img
}

/// Balanced train and validation sets. Train uses per-class indices
/// `0..samples_per_class`, validation the following `val_per_class`.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut train = Dataset::default();
    let mut val = Dataset::default();
    for i in 0..spec.samples_per_class {
        for c in 0..spec.num_classes {
            train.push(render_sample(spec, c, i), c);
        }
    }
    for i in spec.samples_per_class..spec.samples_per_class + spec.val_per_class {
        for c in 0..spec.num_classes {
            val.push(render_sample(spec, c, i), c);
        }
    }
    Ok((train, val))
}

/// Mean absolute difference between horizontally adjacent pixels.
pub fn mean_abs_horizontal_diff(img: &Tensor<f32>) -> f64 {
    let s = img.shape();
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 1..s.w {
                    total += (img.get(n, c, y, x) - img.get(n, c, y, x - 1)).abs() as f64;
                    count += 1;
                }
            }
        }
    }
    total / count.max(1) as f64
}
